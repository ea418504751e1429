"""Observables of a jet state with their parameter gradients and Hessians."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from qupid.evolution import COLLECTION, DENSITY, STATE, UNITARY
from qupid.propagator import hermiticity_violation

EXPECTATION = "hermitian-expectation"
PROJECTOR = "projector-fidelity"
GATE = "gate-fidelity"

#: imaginary residue tolerated in a quantity that must be real
IMAG_TOL = 1e-8


class ObservableError(ValueError):
    pass


@dataclass(frozen=True)
class ObservableSpec:
    """What to measure.

    For ``hermitian-expectation`` give ``operator`` and optionally its
    parameter derivatives ``d_operator`` (list, one per parameter) and
    ``dd_operator`` (dict ``{(i, j): matrix}``). Fidelities need ``target``
    (a state, a collection of states as columns, or a unitary).
    """

    kind: str
    label: str
    operator: Optional[np.ndarray] = None
    d_operator: Optional[tuple] = None
    dd_operator: Optional[dict] = None
    target: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == EXPECTATION:
            if self.operator is None:
                raise ObservableError("expectation observable needs an operator")
            if hermiticity_violation(self.operator) > 1e-12:
                raise ObservableError(f"observable {self.label!r} is not Hermitian")
        elif self.kind == PROJECTOR:
            t = np.asarray(self.target)
            norms = np.linalg.norm(t.reshape(t.shape[0], -1), axis=0)
            if not np.allclose(norms, 1.0, atol=1e-10):
                raise ObservableError("projector target must be normalized")
        elif self.kind == GATE:
            t = np.asarray(self.target)
            if np.linalg.norm(t.conj().T @ t - np.eye(t.shape[0])) > 1e-10:
                raise ObservableError("gate target must be unitary")
        else:
            raise ObservableError(f"unknown observable kind {self.kind!r}")

    @property
    def bounds(self):
        """Physical range used to clamp confidence bands."""
        if self.kind in (PROJECTOR, GATE):
            return (0.0, 1.0)
        ev = np.linalg.eigvalsh(self.operator)
        return (float(ev[0]), float(ev[-1]))


def expectation(operator, label=None, d_operator=None, dd_operator=None):
    op = np.asarray(operator, dtype=complex)
    d_op = None if d_operator is None else tuple(np.asarray(d, dtype=complex) for d in d_operator)
    return ObservableSpec(EXPECTATION, label or "expectation", op, d_op, dd_operator)


def projector_fidelity(target, label="fidelity"):
    t = np.asarray(target, dtype=complex)
    return ObservableSpec(PROJECTOR, label, target=t)


def gate_fidelity(target, label="gate_fidelity"):
    return ObservableSpec(GATE, label, target=np.asarray(target, dtype=complex))


@dataclass(frozen=True)
class ObservableJet:
    value: float
    grad: np.ndarray
    hess: np.ndarray

    @property
    def n_params(self):
        return self.grad.size


def _real(z, what):
    z = complex(z)
    if abs(z.imag) > IMAG_TOL * max(1.0, abs(z.real)):
        raise ObservableError(f"{what} has imaginary residue {z.imag:.3e}")
    return z.real


def _hess_matrix(state, entries):
    m = state.n_params
    hess = np.full((m, m), np.nan)
    for (i, j), v in zip(state.pairs, entries):
        hess[i, j] = hess[j, i] = v
    return hess


def _op_deriv(spec, j):
    if spec.d_operator is None:
        return None
    return spec.d_operator[j]


def _op_second(spec, i, j):
    if not spec.dd_operator:
        return None
    return spec.dd_operator.get((i, j) if i <= j else (j, i))


def expectation_jet(state, spec):
    """``<A>`` with gradient and Hessian, including explicit ``theta``-dependence of ``A``."""
    if spec.kind != EXPECTATION:
        raise ObservableError("expectation_jet needs a hermitian-expectation spec")
    if state.kind == DENSITY:
        return _density_expectation_jet(state, spec)
    if state.kind != STATE:
        raise ObservableError(f"expectation_jet does not support kind {state.kind!r}")
    a = spec.operator
    if a.shape[0] != state.chi.shape[0]:
        raise ObservableError(f"operator dimension {a.shape[0]} != state dimension {state.chi.shape[0]}")
    psi = state.chi[:, 0]
    dpsi = state.dchi[:, :, 0]
    a_psi = a @ psi
    m = state.n_params
    value = _real(np.vdot(psi, a_psi), spec.label)
    # <psi|A|d_j psi>
    a_dpsi = dpsi @ a.T  # rows: A |d_j psi>
    grad = 2 * np.real(a_dpsi @ psi.conj())
    dops = [_op_deriv(spec, j) for j in range(m)]
    for j, dop in enumerate(dops):
        if dop is not None:
            grad[j] += _real(np.vdot(psi, dop @ psi), spec.label)
    entries = []
    for p, (i, j) in enumerate(state.pairs):
        ddpsi = state.ddchi[p, :, 0]
        z = np.vdot(dpsi[i], a_dpsi[j]) + np.vdot(a_psi, ddpsi)
        if dops[i] is not None:
            z += np.vdot(psi, dops[i] @ dpsi[j])
        if dops[j] is not None:
            z += np.vdot(psi, dops[j] @ dpsi[i])
        h = 2 * z.real
        ddop = _op_second(spec, i, j)
        if ddop is not None:
            h += _real(np.vdot(psi, ddop @ psi), spec.label)
        entries.append(h)
    return ObservableJet(value, grad, _hess_matrix(state, entries))


def _density_expectation_jet(state, spec):
    # Tr(A rho) = vec(A^T) . vec(rho)
    d = state.dim
    a = spec.operator
    if a.shape[0] != d:
        raise ObservableError(f"operator dimension {a.shape[0]} != state dimension {d}")

    def tr(op, vec):
        return np.sum(op.T.reshape(-1, order="F") * vec[:, 0])

    value = _real(tr(a, state.chi), spec.label)
    m = state.n_params
    dops = [_op_deriv(spec, j) for j in range(m)]
    grad = np.array([_real(tr(a, state.dchi[j]), spec.label) for j in range(m)])
    for j, dop in enumerate(dops):
        if dop is not None:
            grad[j] += _real(tr(dop, state.chi), spec.label)
    entries = []
    for p, (i, j) in enumerate(state.pairs):
        z = tr(a, state.ddchi[p])
        if dops[i] is not None:
            z += tr(dops[i], state.dchi[j])
        if dops[j] is not None:
            z += tr(dops[j], state.dchi[i])
        ddop = _op_second(spec, i, j)
        if ddop is not None:
            z += tr(ddop, state.chi)
        entries.append(_real(z, spec.label))
    return ObservableJet(value, grad, _hess_matrix(state, entries))


def projector_fidelity_jet(state, spec):
    """``F = mean_k |<target_k|psi_k>|^2`` without forming the projector."""
    if spec.kind != PROJECTOR:
        raise ObservableError("projector_fidelity_jet needs a projector-fidelity spec")
    if state.kind not in (STATE, COLLECTION):
        raise ObservableError(f"projector fidelity does not support kind {state.kind!r}")
    target = spec.target.reshape(spec.target.shape[0], -1)
    if target.shape != state.chi.shape:
        raise ObservableError(f"target shape {target.shape} != state shape {state.chi.shape}")
    k = target.shape[1]
    tc = target.conj()
    c = np.sum(tc * state.chi, axis=0)  # overlaps per column
    dc = np.sum(tc[None] * state.dchi, axis=1)  # (m, k)
    value = float(np.sum(np.abs(c) ** 2)) / k
    grad = 2 * np.real(dc @ c.conj()) / k
    entries = []
    for p, (i, j) in enumerate(state.pairs):
        ddc = np.sum(tc * state.ddchi[p], axis=0)
        entries.append(2 * np.real(np.sum(dc[i].conj() * dc[j] + c.conj() * ddc)) / k)
    return ObservableJet(value, grad, _hess_matrix(state, entries))


def gate_fidelity_jet(state, spec):
    """Haar-averaged gate fidelity ``(|Tr(V^dag U)|^2 + d) / (d (d + 1))``."""
    if spec.kind != GATE:
        raise ObservableError("gate_fidelity_jet needs a gate-fidelity spec")
    if state.kind != UNITARY:
        raise ObservableError(f"gate fidelity needs a unitary jet, got {state.kind!r}")
    v = spec.target
    d = v.shape[0]
    if state.chi.shape != v.shape:
        raise ObservableError(f"target shape {v.shape} != unitary shape {state.chi.shape}")
    vc = v.conj()
    norm = d * (d + 1)
    g = np.sum(vc * state.chi)
    dg = np.sum(vc[None] * state.dchi, axis=(1, 2))
    value = (abs(g) ** 2 + d) / norm
    grad = 2 * np.real(g.conj() * dg) / norm
    entries = []
    for p, (i, j) in enumerate(state.pairs):
        ddg = np.sum(vc * state.ddchi[p])
        entries.append(2 * np.real(dg[i].conj() * dg[j] + g.conj() * ddg) / norm)
    return ObservableJet(float(value), grad, _hess_matrix(state, entries))


def observable_jet(state, spec):
    if spec.kind == EXPECTATION:
        return expectation_jet(state, spec)
    if spec.kind == PROJECTOR:
        return projector_fidelity_jet(state, spec)
    return gate_fidelity_jet(state, spec)


def observable_value(chi, kind, spec):
    """Observable of a plain (derivative-free) state ``chi``; batched over a leading axis."""
    chi = np.asarray(chi)
    single = chi.ndim == 2
    if single:
        chi = chi[None]
    if spec.kind == EXPECTATION:
        a = spec.operator
        if kind == DENSITY:
            d = a.shape[0]
            vals = np.einsum("i,ki->k", a.T.reshape(-1, order="F"), chi[:, :, 0])
        elif kind == STATE:
            psi = chi[:, :, 0]
            vals = np.einsum("ki,ij,kj->k", psi.conj(), a, psi)
        else:
            raise ObservableError(f"expectation of kind {kind!r} is not defined")
        out = vals.real
    elif spec.kind == PROJECTOR:
        target = spec.target.reshape(spec.target.shape[0], -1)
        c = np.einsum("ic,kic->kc", target.conj(), chi)
        out = np.mean(np.abs(c) ** 2, axis=1)
    else:
        d = spec.target.shape[0]
        g = np.einsum("ij,kij->k", spec.target.conj(), chi)
        out = (np.abs(g) ** 2 + d) / (d * (d + 1))
    return float(out[0]) if single else out
