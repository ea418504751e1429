"""Pure numpy implementation of the hot kernels.

Used when the compiled ``qupid._kernels`` extension is not available or
when ``QUPID_PURE_PYTHON`` is set. Every function here has a compiled
counterpart with an identical signature.
"""

import numpy as np


def _phase(energies, dt):
    return np.exp(-1j * energies * dt)


def _first_dd(eh, ek, dt, threshold):
    gap = eh - ek
    x = 0.5 * gap * dt
    # (e^{-i a dt} - e^{-i b dt}) / (a - b) rewritten as a sinc, exact for all gaps
    quotient = -1j * dt * _phase(0.5 * (eh + ek), dt) * np.sinc(x / np.pi)
    limit = -1j * dt * _phase(0.5 * (eh + ek), dt)
    return np.where(np.abs(gap) * dt < threshold, limit, quotient)


def first_divided_differences(energies, dt, threshold):
    """Matrix ``I[h, k]`` of first divided differences of ``exp(-i E dt)``."""
    e = np.asarray(energies, dtype=float)
    return _first_dd(e[:, None], e[None, :], dt, threshold)


#: below this ``spread * dt`` the second divided difference is summed as a series
SERIES_CUTOFF = 0.5
SERIES_TERMS = 24


def _second_dd_series(lo, mid, hi, dt):
    # f[a,b,c] = e^{z m} sum_k z^k / k! h_{k-2}(a-m, b-m, c-m), z = -i dt,
    # with h_j the complete homogeneous symmetric polynomials
    m = (lo + mid + hi) / 3.0
    a, b, c = lo - m, mid - m, hi - m
    z = -1j * dt
    ha = np.ones_like(a)
    hab = np.ones_like(a)
    habc = np.ones_like(a)
    coef = z * z / 2.0
    total = coef * habc
    for k in range(3, SERIES_TERMS + 2):
        ha = ha * a
        hab = hab * b + ha
        habc = habc * c + hab
        coef = coef * z / k
        total = total + coef * habc
    return _phase(m, dt) * total


def second_divided_differences(energies, dt, threshold):
    """Tensor ``G[h, l, k]`` of second divided differences of ``exp(-i E dt)``.

    Near-coincident triples use a centred series, so there is no
    cancellation anywhere; ``threshold`` is accepted for signature parity.
    """
    e = np.asarray(energies, dtype=float)
    d = e.size
    trip = np.stack(np.broadcast_arrays(e[:, None, None], e[None, :, None], e[None, None, :]))
    trip = np.sort(trip.reshape(3, d, d, d), axis=0)
    lo, mid, hi = trip
    spread = hi - lo
    close = spread * dt < SERIES_CUTOFF
    safe = np.where(close, 1.0, spread)
    general = (_first_dd(hi, mid, dt, threshold) - _first_dd(mid, lo, dt, threshold)) / safe
    return np.where(close, _second_dd_series(lo, mid, hi, dt), general)


def contract_second(vi, vj, g):
    """``W[h,k] = sum_l (Vi[h,l] Vj[l,k] + Vj[h,l] Vi[l,k]) G[h,l,k]``."""
    return np.einsum("hl,lk,hlk->hk", vi, vj, g) + np.einsum("hl,lk,hlk->hk", vj, vi, g)


def expm_action(b, psi, tol=1e-16, max_terms=80):
    """Apply ``exp(B_k)`` to ``psi_k`` for a batch of matrices.

    Truncated Taylor series with substeps chosen so that every scaled
    matrix has 1-norm at most one. ``b`` has shape (K, d, d) and ``psi``
    shape (K, d, c).
    """
    b = np.asarray(b, dtype=complex)
    out = np.array(psi, dtype=complex, copy=True)
    if b.shape[0] == 0:
        return out
    norms = np.abs(b).sum(axis=1).max(axis=1)
    steps = max(1, int(np.ceil(norms.max())))
    bs = b / steps
    for _ in range(steps):
        term = out
        acc = out.copy()
        for m in range(1, max_terms + 1):
            term = np.matmul(bs, term) / m
            acc += term
            if np.abs(term).max() <= tol * np.abs(acc).max():
                break
        out = acc
    return out
