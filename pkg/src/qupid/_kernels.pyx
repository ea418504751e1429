"""Compiled kernels for divided differences and batched propagation.

Mirrors ``qupid._kernels_py`` function by function.
"""

import numpy as np

from libc.math cimport cos, sin, fabs, ceil

ctypedef double complex cplx


cdef inline cplx _phase(double e, double dt) noexcept nogil:
    return cos(e * dt) - 1j * sin(e * dt)


cdef inline cplx _dd1(double eh, double ek, double dt, double thr) noexcept nogil:
    cdef double gap = eh - ek
    cdef double x
    if fabs(gap) * dt < thr:
        return -1j * dt * _phase(0.5 * (eh + ek), dt)
    x = 0.5 * gap * dt
    return -1j * dt * _phase(0.5 * (eh + ek), dt) * (sin(x) / x)


cdef double SERIES_CUTOFF = 0.5
cdef int SERIES_TERMS = 24


cdef inline cplx _dd2(double a, double b, double c, double dt, double thr) noexcept nogil:
    cdef double t, m
    cdef cplx ha, hab, habc, coef, total, z
    cdef int k
    # sort a <= b <= c
    if a > b:
        t = a; a = b; b = t
    if b > c:
        t = b; b = c; c = t
    if a > b:
        t = a; a = b; b = t
    if (c - a) * dt >= SERIES_CUTOFF:
        return (_dd1(c, b, dt, thr) - _dd1(b, a, dt, thr)) / (c - a)
    # centred series in complete homogeneous symmetric polynomials
    m = (a + b + c) / 3.0
    a -= m; b -= m; c -= m
    z = -1j * dt
    ha = 1.0; hab = 1.0; habc = 1.0
    coef = z * z / 2.0
    total = coef
    for k in range(3, SERIES_TERMS + 2):
        ha = ha * a
        hab = hab * b + ha
        habc = habc * c + hab
        coef = coef * z / k
        total = total + coef * habc
    return _phase(m, dt) * total


def first_divided_differences(energies, double dt, double threshold):
    cdef const double[::1] e = np.ascontiguousarray(energies, dtype=np.float64)
    cdef Py_ssize_t d = e.shape[0]
    out = np.empty((d, d), dtype=np.complex128)
    cdef cplx[:, ::1] o = out
    cdef Py_ssize_t h, k
    with nogil:
        for h in range(d):
            for k in range(d):
                o[h, k] = _dd1(e[h], e[k], dt, threshold)
    return out


def second_divided_differences(energies, double dt, double threshold):
    cdef const double[::1] e = np.ascontiguousarray(energies, dtype=np.float64)
    cdef Py_ssize_t d = e.shape[0]
    out = np.empty((d, d, d), dtype=np.complex128)
    cdef cplx[:, :, ::1] o = out
    cdef Py_ssize_t h, l, k
    with nogil:
        for h in range(d):
            for l in range(d):
                for k in range(d):
                    if k < h:
                        o[h, l, k] = o[k, l, h]
                    else:
                        o[h, l, k] = _dd2(e[h], e[l], e[k], dt, threshold)
    return out


def contract_second(vi, vj, g):
    cdef const cplx[:, ::1] a = np.ascontiguousarray(vi, dtype=np.complex128)
    cdef const cplx[:, ::1] b = np.ascontiguousarray(vj, dtype=np.complex128)
    cdef const cplx[:, :, ::1] gg = np.ascontiguousarray(g, dtype=np.complex128)
    cdef Py_ssize_t d = a.shape[0]
    out = np.zeros((d, d), dtype=np.complex128)
    cdef cplx[:, ::1] o = out
    cdef Py_ssize_t h, l, k
    cdef cplx ahl, bhl
    with nogil:
        for h in range(d):
            for l in range(d):
                ahl = a[h, l]
                bhl = b[h, l]
                for k in range(d):
                    o[h, k] = o[h, k] + (ahl * b[l, k] + bhl * a[l, k]) * gg[h, l, k]
    return out


def expm_action(b, psi, double tol=1e-16, int max_terms=80):
    cdef const cplx[:, :, ::1] bb = np.ascontiguousarray(b, dtype=np.complex128)
    out = np.array(psi, dtype=np.complex128, order="C", copy=True)
    cdef cplx[:, :, ::1] o = out
    cdef Py_ssize_t n = bb.shape[0], d = bb.shape[1], c = o.shape[2]
    term_arr = np.empty((d, c), dtype=np.complex128)
    next_arr = np.empty((d, c), dtype=np.complex128)
    acc_arr = np.empty((d, c), dtype=np.complex128)
    cdef cplx[:, ::1] term = term_arr
    cdef cplx[:, ::1] nxt = next_arr
    cdef cplx[:, ::1] acc = acc_arr
    cdef Py_ssize_t s, i, j, q, col, steps, m
    cdef double colsum, norm, tmax, amax, scale, v
    cdef cplx z
    with nogil:
        for s in range(n):
            norm = 0.0
            for j in range(d):
                colsum = 0.0
                for i in range(d):
                    colsum = colsum + abs(bb[s, i, j])
                if colsum > norm:
                    norm = colsum
            steps = <Py_ssize_t> ceil(norm)
            if steps < 1:
                steps = 1
            scale = 1.0 / steps
            for q in range(steps):
                for i in range(d):
                    for col in range(c):
                        term[i, col] = o[s, i, col]
                        acc[i, col] = o[s, i, col]
                for m in range(1, max_terms + 1):
                    tmax = 0.0
                    amax = 0.0
                    for i in range(d):
                        for col in range(c):
                            z = 0.0
                            for j in range(d):
                                z = z + bb[s, i, j] * term[j, col]
                            nxt[i, col] = z * (scale / m)
                    for i in range(d):
                        for col in range(c):
                            term[i, col] = nxt[i, col]
                            acc[i, col] = acc[i, col] + nxt[i, col]
                            v = abs(nxt[i, col])
                            if v > tmax:
                                tmax = v
                            v = abs(acc[i, col])
                            if v > amax:
                                amax = v
                    if tmax <= tol * amax:
                        break
                for i in range(d):
                    for col in range(c):
                        o[s, i, col] = acc[i, col]
    return out
