"""Single-step propagators and their exact parameter derivatives.

For a step generated by a Hermitian ``H`` over a duration ``dt`` the
propagator is ``U = exp(-i H dt)``. Its derivatives with respect to
parameters entering ``H`` are assembled in the eigenbasis of ``H`` from
first and second divided differences of ``f(E) = exp(-i E dt)``.
"""

from dataclasses import dataclass

import numpy as np

from qupid import kernels

#: ``|E_h - E_k| * dt`` below which the coincident-eigenvalue limit is used
DEGENERACY_THRESHOLD = 1e-7
HERMITIAN_TOL = 1e-12


class HermiticityError(ValueError):
    """Raised when an operator that must be Hermitian is not."""


def hermiticity_violation(h):
    """Relative Frobenius norm of the anti-Hermitian part of ``h``."""
    h = np.asarray(h)
    scale = max(np.linalg.norm(h), 1.0)
    return np.linalg.norm(h - h.conj().T) / scale


def check_hermitian(h, tol=HERMITIAN_TOL, what="operator"):
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"{what} must be a square matrix, got shape {h.shape}")
    if h.shape[0] < 2:
        raise ValueError(f"{what} must have dimension >= 2")
    violation = hermiticity_violation(h)
    if violation > tol:
        raise HermiticityError(
            f"{what} is not Hermitian: ||H - H^dag||_F / ||H||_F = {violation:.3e} > {tol:.1e}"
        )


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian operator."""

    energies: np.ndarray
    basis: np.ndarray

    @property
    def dim(self):
        return self.energies.size

    def to_eigenbasis(self, op):
        return self.basis.conj().T @ op @ self.basis

    def from_eigenbasis(self, op):
        return self.basis @ op @ self.basis.conj().T


@dataclass(frozen=True)
class StepPropagatorJet:
    """One step's propagator with first and upper-triangular second derivatives.

    ``ddu`` maps an ordered pair ``(i, j)`` with ``i <= j`` to the mixed
    derivative; use :meth:`second` to read it symmetrically.
    """

    u: np.ndarray
    du: tuple
    ddu: dict
    dt: float

    @property
    def n_params(self):
        return len(self.du)

    def second(self, i, j):
        return self.ddu[(i, j) if i <= j else (j, i)]


def eigendecompose(h, tol=HERMITIAN_TOL):
    """Diagonalize a Hermitian matrix with a reproducible phase convention.

    Eigenvalues are ascending; each eigenvector is rotated so that its first
    non-negligible component is real and positive.
    """
    h = np.asarray(h, dtype=complex)
    check_hermitian(h, tol)
    energies, basis = np.linalg.eigh(0.5 * (h + h.conj().T))
    idx = np.argmax(np.abs(basis) > 1e-10, axis=0)
    lead = basis[idx, np.arange(basis.shape[1])]
    basis = basis * (np.abs(lead) / lead)[None, :]
    energies.setflags(write=False)
    basis.setflags(write=False)
    return Spectrum(energies, basis)


def step_unitary(spectrum, dt):
    if dt <= 0:
        raise ValueError("dt must be positive")
    phases = np.exp(-1j * spectrum.energies * dt)
    return (spectrum.basis * phases[None, :]) @ spectrum.basis.conj().T


def divided_difference_first(eh, ek, dt):
    """First divided difference of ``exp(-i E dt)`` at ``(eh, ek)``.

    Falls back to the derivative ``-i dt exp(-i eh dt)`` when the gap is
    below :data:`DEGENERACY_THRESHOLD`.
    """
    return complex(kernels.first_divided_differences(np.array([eh, ek]), dt, DEGENERACY_THRESHOLD)[0, 1])


def divided_difference_second(eh, el, ek, dt):
    """Second divided difference of ``exp(-i E dt)`` (symmetric in its arguments)."""
    g = kernels.second_divided_differences(np.array([eh, el, ek]), dt, DEGENERACY_THRESHOLD)
    return complex(g[0, 1, 2])


def _check_dims(spectrum, *ops):
    for op in ops:
        if op is not None and np.shape(op) != (spectrum.dim, spectrum.dim):
            raise ValueError(
                f"operator shape {np.shape(op)} does not match spectrum dimension {spectrum.dim}"
            )


def step_derivative_first(spectrum, dh, dt, first_dd=None):
    """Derivative of ``exp(-i H dt)`` along the Hermitian direction ``dh``."""
    _check_dims(spectrum, dh)
    if first_dd is None:
        first_dd = kernels.first_divided_differences(spectrum.energies, dt, DEGENERACY_THRESHOLD)
    return spectrum.from_eigenbasis(spectrum.to_eigenbasis(dh) * first_dd)


def step_derivative_second(spectrum, dhi, dhj, dt, ddh=None, first_dd=None, second_dd=None):
    """Mixed second derivative of ``exp(-i H dt)`` along ``dhi`` and ``dhj``.

    ``ddh`` is the (optional) second derivative of ``H`` itself, which
    enters through the first divided differences.
    """
    _check_dims(spectrum, dhi, dhj, ddh)
    if second_dd is None:
        second_dd = kernels.second_divided_differences(spectrum.energies, dt, DEGENERACY_THRESHOLD)
    w = kernels.contract_second(spectrum.to_eigenbasis(dhi), spectrum.to_eigenbasis(dhj), second_dd)
    if ddh is not None:
        if first_dd is None:
            first_dd = kernels.first_divided_differences(spectrum.energies, dt, DEGENERACY_THRESHOLD)
        w = w + spectrum.to_eigenbasis(ddh) * first_dd
    return spectrum.from_eigenbasis(w)


def step_jet(spectrum, dt, dh, ddh=None, pairs=None):
    """Build a :class:`StepPropagatorJet` from generator derivatives.

    Parameters
    ----------
    spectrum : Spectrum
        Eigen-decomposition of the midpoint Hamiltonian.
    dt : float
        Step duration.
    dh : sequence of ndarray
        ``dH/dtheta_j`` for every parameter.
    ddh : dict, optional
        ``{(i, j): d2H/dtheta_i dtheta_j}`` for pairs with non-zero second
        derivative (upper triangle).
    pairs : iterable of (int, int), optional
        Which second derivatives to compute. Defaults to the full upper
        triangle.
    """
    m = len(dh)
    if pairs is None:
        pairs = [(i, j) for i in range(m) for j in range(i, m)]
    ddh = ddh or {}
    first_dd = kernels.first_divided_differences(spectrum.energies, dt, DEGENERACY_THRESHOLD)
    basis, basis_h = spectrum.basis, spectrum.basis.conj().T
    dh_eig = [basis_h @ d @ basis for d in dh]
    du = tuple(basis @ (d * first_dd) @ basis_h for d in dh_eig)
    ddu = {}
    if pairs:
        second_dd = kernels.second_divided_differences(spectrum.energies, dt, DEGENERACY_THRESHOLD)
        for i, j in pairs:
            w = kernels.contract_second(dh_eig[i], dh_eig[j], second_dd)
            extra = ddh.get((i, j))
            if extra is not None:
                w = w + (basis_h @ extra @ basis) * first_dd
            ddu[(i, j)] = basis @ w @ basis_h
    u = step_unitary(spectrum, dt)
    return StepPropagatorJet(u=u, du=du, ddu=ddu, dt=dt)
