"""Time stepping of a state together with its parameter derivatives.

A :class:`DynamicGenerator` describes ``H(t; theta) = H_0(t) + sum_n u_n(theta) A_n(t)``
(optionally plus Lindblad dissipators). :func:`evolve` samples it at the
midpoint of every step, builds the step propagator with its first and second
derivatives, and pushes a :class:`JetState` through the chain-rule recursions.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import expm

from qupid.propagator import (
    HermiticityError,
    StepPropagatorJet,
    eigendecompose,
    hermiticity_violation,
    step_jet as _propagator_step_jet,
)

STATE = "state-vector"
UNITARY = "unitary"
COLLECTION = "state-collection"
DENSITY = "vectorized-density-matrix"
KINDS = (STATE, UNITARY, COLLECTION, DENSITY)

GENERATOR_HERMITIAN_TOL = 1e-10


class PropagationError(RuntimeError):
    """A step produced non-finite values or an invalid generator."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


# --------------------------------------------------------------------------
# parameter maps


class ParameterMap:
    """Scalar coefficient ``u(theta)`` with its gradient and Hessian."""

    def __call__(self, theta):
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(ParameterMap):
    value: float

    def __call__(self, theta):
        m = len(theta)
        return float(self.value), np.zeros(m), np.zeros((m, m))


@dataclass(frozen=True)
class Linear(ParameterMap):
    """``u = offset + scale * theta[index]``."""

    index: int
    scale: float = 1.0
    offset: float = 0.0

    def __call__(self, theta):
        m = len(theta)
        grad = np.zeros(m)
        grad[self.index] = self.scale
        return self.offset + self.scale * float(theta[self.index]), grad, np.zeros((m, m))


@dataclass(frozen=True)
class Function(ParameterMap):
    """Arbitrary map given as a callable returning ``(value, grad, hess)``."""

    fn: Callable

    def __call__(self, theta):
        value, grad, hess = self.fn(np.asarray(theta, dtype=float))
        return float(value), np.asarray(grad, dtype=float), np.asarray(hess, dtype=float)


def _as_map(coefficient):
    if isinstance(coefficient, ParameterMap):
        return coefficient
    if callable(coefficient):
        return Function(coefficient)
    return Constant(float(coefficient))


OperatorLike = Union[np.ndarray, Callable[[float], np.ndarray]]


@dataclass(frozen=True)
class Coupling:
    """A term ``u(theta) * A(t)``; ``operator`` is a matrix or a callable of ``t``."""

    operator: OperatorLike
    coefficient: ParameterMap

    @property
    def is_static(self):
        return not callable(self.operator)

    def at(self, t):
        return self.operator(t) if callable(self.operator) else self.operator


def coupling(operator, coefficient=1.0):
    op = operator if callable(operator) else np.asarray(operator, dtype=complex)
    return Coupling(op, _as_map(coefficient))


@dataclass
class DynamicGenerator:
    """Parameterized generator of the dynamics.

    ``couplings`` are Hermitian Hamiltonian terms. ``dissipators`` are jump
    operators ``L`` whose coefficient is the rate ``gamma`` of
    ``gamma (L rho L^dag - {L^dag L, rho}/2)``; they only act on the
    vectorized-density-matrix kind.
    """

    dim: int
    n_params: int
    couplings: list = field(default_factory=list)
    drift: Optional[OperatorLike] = None
    dissipators: list = field(default_factory=list)

    def __post_init__(self):
        for c in list(self.couplings) + list(self.dissipators):
            if c.is_static and c.operator.shape != (self.dim, self.dim):
                raise ValueError(f"coupling operator shape {c.operator.shape} != ({self.dim}, {self.dim})")
        for c in self.couplings:
            if c.is_static and hermiticity_violation(c.operator) > GENERATOR_HERMITIAN_TOL:
                raise HermiticityError("static coupling operator is not Hermitian")

    def drift_at(self, t):
        if self.drift is None:
            return np.zeros((self.dim, self.dim), dtype=complex)
        return np.asarray(self.drift(t) if callable(self.drift) else self.drift, dtype=complex)

    def coefficients(self, theta):
        """Values, gradients and Hessians of every coupling coefficient."""
        return [c.coefficient(theta) for c in self.couplings]

    def hamiltonian(self, t, theta):
        h = self.drift_at(t).copy()
        for c in self.couplings:
            value = c.coefficient(theta)[0]
            if value != 0.0:
                h += value * c.at(t)
        return h

    def jet_terms(self, t, theta, coeffs=None):
        """``H``, ``[dH/dtheta_j]`` and ``{(i, j): d2H}`` at time ``t``."""
        m = self.n_params
        coeffs = coeffs if coeffs is not None else self.coefficients(theta)
        h = self.drift_at(t).copy()
        dh = [np.zeros((self.dim, self.dim), dtype=complex) for _ in range(m)]
        ddh = {}
        for c, (value, grad, hess) in zip(self.couplings, coeffs):
            op = c.at(t)
            if value != 0.0:
                h += value * op
            for j in np.flatnonzero(grad):
                dh[j] += grad[j] * op
            for i, j in zip(*np.nonzero(np.triu(hess))):
                key = (int(i), int(j))
                ddh[key] = ddh.get(key, 0.0) + hess[i, j] * op
        return h, dh, ddh

    def liouvillian(self, t, theta):
        """Column-stacked Liouvillian acting on ``vec(rho)``."""
        lv = -1j * commutator_superoperator(self.hamiltonian(t, theta))
        for c in self.dissipators:
            lv = lv + c.coefficient(theta)[0] * _dissipator_superoperator(np.asarray(c.at(t), dtype=complex))
        return lv


def commutator_superoperator(h):
    """``S`` with ``S vec(rho) = vec(H rho - rho H)`` for column stacking."""
    d = h.shape[0]
    eye = np.eye(d)
    return np.kron(eye, h) - np.kron(h.T, eye)


def vectorize(rho):
    return np.asarray(rho).reshape(-1, order="F")


def unvectorize(vec, dim):
    return np.asarray(vec).reshape((dim, dim), order="F")


# --------------------------------------------------------------------------
# time grid and jet state


@dataclass(frozen=True)
class TimeGrid:
    """``N`` equidistant steps covering ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("total duration must be positive")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("number of steps must be a positive integer")

    @property
    def dt(self):
        return self.T / self.N

    @property
    def times(self):
        return np.arange(self.N + 1) * self.dt

    def midpoint(self, n):
        return (n + 0.5) * self.dt

    def index_of(self, t):
        n = int(round(t / self.dt))
        if n < 0 or n > self.N or abs(n * self.dt - t) > 1e-9 * self.T:
            raise ValueError(f"time {t} is not a grid point")
        return n

    def refined(self, factor):
        return TimeGrid(self.T, self.N * factor)


def hessian_pairs(m, hessian="full"):
    if hessian == "full":
        return tuple((i, j) for i in range(m) for j in range(i, m))
    if hessian == "diagonal":
        return tuple((j, j) for j in range(m))
    if hessian == "none":
        return ()
    raise ValueError(f"unknown hessian mode {hessian!r}")


@dataclass(frozen=True)
class JetState:
    """System state with its first and second parameter derivatives.

    ``chi`` is always two-dimensional (a column for state vectors and
    vectorized density matrices). ``ddchi[p]`` is the derivative for the
    parameter pair ``pairs[p]`` with ``i <= j``.
    """

    kind: str
    chi: np.ndarray
    dchi: np.ndarray
    ddchi: np.ndarray
    pairs: tuple
    time: float = 0.0

    @property
    def n_params(self):
        return self.dchi.shape[0]

    @property
    def dim(self):
        """Hilbert-space dimension."""
        rows = self.chi.shape[0]
        return int(round(np.sqrt(rows))) if self.kind == DENSITY else rows

    def second(self, i, j):
        key = (i, j) if i <= j else (j, i)
        try:
            return self.ddchi[self.pairs.index(key)]
        except ValueError:
            raise KeyError(f"second derivative {key} was not propagated") from None

    def density_matrix(self):
        if self.kind != DENSITY:
            raise ValueError("not a density-matrix jet")
        return unvectorize(self.chi[:, 0], self.dim)


def _as_chi(chi0, kind):
    chi = np.asarray(chi0, dtype=complex)
    if kind == STATE:
        if chi.ndim == 1:
            chi = chi[:, None]
        if chi.ndim != 2 or chi.shape[1] != 1:
            raise ValueError(f"state vector must be 1-D, got shape {np.shape(chi0)}")
    elif kind == UNITARY:
        if chi.ndim != 2 or chi.shape[0] != chi.shape[1]:
            raise ValueError(f"unitary must be square, got shape {chi.shape}")
    elif kind == COLLECTION:
        if chi.ndim != 2:
            raise ValueError(f"state collection must be 2-D, got shape {chi.shape}")
    elif kind == DENSITY:
        if chi.ndim == 2 and chi.shape[0] == chi.shape[1] and chi.shape[0] > 1:
            chi = vectorize(chi)
        chi = chi.reshape(-1)
        d = int(round(np.sqrt(chi.size)))
        if d * d != chi.size:
            raise ValueError("vectorized density matrix length must be a square")
        chi = chi[:, None]
    else:
        raise ValueError(f"unknown state kind {kind!r}; expected one of {KINDS}")
    return chi


def init_jet(chi0, kind=STATE, n_params=0, initial_derivs=None, initial_second=None, hessian="full"):
    """Start a jet at ``t = 0`` with zero derivative stacks unless given.

    ``initial_derivs`` (one array per parameter, same shape as ``chi0``)
    models uncertainty in the prepared state; ``initial_second`` is a dict
    ``{(i, j): array}``.
    """
    chi = _as_chi(chi0, kind)
    pairs = hessian_pairs(n_params, hessian)
    dchi = np.zeros((n_params,) + chi.shape, dtype=complex)
    ddchi = np.zeros((len(pairs),) + chi.shape, dtype=complex)
    if initial_derivs is not None:
        if len(initial_derivs) != n_params:
            raise ValueError(f"expected {n_params} initial derivatives, got {len(initial_derivs)}")
        for j, d in enumerate(initial_derivs):
            dj = _as_chi(d, kind)
            if dj.shape != chi.shape:
                raise ValueError(f"initial derivative {j} has shape {dj.shape}, expected {chi.shape}")
            dchi[j] = dj
    for key, d in (initial_second or {}).items():
        i, j = sorted(key)
        if (i, j) not in pairs:
            raise ValueError(f"initial second derivative {key} not tracked in hessian mode {hessian!r}")
        ddchi[pairs.index((i, j))] = _as_chi(d, kind)
    return JetState(kind, chi, dchi, ddchi, pairs, 0.0)


def step_jet(state, pj):
    """Advance ``state`` by one step with propagator jet ``pj``."""
    if pj.u.shape[1] != state.chi.shape[0]:
        raise ValueError(f"propagator dimension {pj.u.shape} does not match state {state.chi.shape}")
    if pj.n_params != state.n_params:
        raise ValueError(f"propagator has {pj.n_params} parameters, state has {state.n_params}")
    u, du, chi, dchi = pj.u, pj.du, state.chi, state.dchi
    new_dchi = np.empty_like(dchi)
    for j in range(state.n_params):
        new_dchi[j] = du[j] @ chi + u @ dchi[j]
    new_ddchi = np.empty_like(state.ddchi)
    for p, (i, j) in enumerate(state.pairs):
        new_ddchi[p] = pj.second(i, j) @ chi + du[j] @ dchi[i] + du[i] @ dchi[j] + u @ state.ddchi[p]
    return JetState(state.kind, u @ chi, new_dchi, new_ddchi, state.pairs, state.time + pj.dt)


# --------------------------------------------------------------------------
# per-step propagator jets


def _dissipator_superoperator(op):
    d = op.shape[0]
    eye = np.eye(d)
    lhl = op.conj().T @ op
    return np.kron(op.conj(), op) - 0.5 * np.kron(eye, lhl) - 0.5 * np.kron(lhl.T, eye)


def liouvillian_jet(gen, t, theta, pairs):
    """Liouvillian with its first and second parameter derivatives."""
    h, dh, ddh = gen.jet_terms(t, theta)
    lv = -1j * commutator_superoperator(h)
    dlv = [-1j * commutator_superoperator(d) for d in dh]
    ddlv = {k: -1j * commutator_superoperator(v) for k, v in ddh.items()}
    for c in gen.dissipators:
        rate, grad, hess = c.coefficient(theta)
        sup = _dissipator_superoperator(np.asarray(c.at(t), dtype=complex))
        lv = lv + rate * sup
        for j in np.flatnonzero(grad):
            dlv[j] = dlv[j] + grad[j] * sup
        for i, j in pairs:
            if hess[i, j] != 0:
                ddlv[(i, j)] = ddlv.get((i, j), 0) + hess[i, j] * sup
    return lv, dlv, ddlv


def _block_expm(blocks):
    """Upper-right block of ``expm`` of a block upper-triangular matrix.

    ``blocks`` is a square list of lists; ``None`` entries are zero.
    """
    n = len(blocks)
    d = next(b for row in blocks for b in row if b is not None).shape[0]
    big = np.zeros((n * d, n * d), dtype=complex)
    for r, row in enumerate(blocks):
        for c, b in enumerate(row):
            if b is not None:
                big[r * d:(r + 1) * d, c * d:(c + 1) * d] = b
    return expm(big)[:d, (n - 1) * d:]


def _dissipative_step_jet(gen, theta, t, dt, pairs):
    """Step jet for a non-Hermitian Liouvillian.

    Derivatives of ``expm(L dt)`` come from exponentials of block
    upper-triangular matrices (Van Loan's construction), which is exact up
    to the accuracy of ``expm``.
    """
    theta = np.asarray(theta, dtype=float)
    lv, dlv, ddlv = liouvillian_jet(gen, t, theta, pairs)
    a = lv * dt
    da = [d * dt for d in dlv]
    u = expm(a)
    du = tuple(_block_expm([[a, d], [None, a]]) for d in da)
    ddu = {}
    for i, j in pairs:
        extra = ddlv.get((i, j))
        c = None if extra is None or np.isscalar(extra) else extra * dt
        first = _block_expm([[a, da[i], c], [None, a, da[j]], [None, None, a]])
        second = _block_expm([[a, da[j], None], [None, a, da[i]], [None, None, a]])
        ddu[(i, j)] = first + second
    return StepPropagatorJet(u=u, du=du, ddu=ddu, dt=dt)


def build_step_jet(gen, theta, grid, n, kind, pairs, coeffs=None):
    """Propagator jet for step ``n`` (generator sampled at the step midpoint)."""
    t = grid.midpoint(n)
    dt = grid.dt
    if kind == DENSITY and gen.dissipators:
        return _dissipative_step_jet(gen, theta, t, dt, pairs)
    h, dh, ddh = gen.jet_terms(t, theta, coeffs)
    for op in [h] + dh:
        if hermiticity_violation(op) > GENERATOR_HERMITIAN_TOL:
            raise PropagationError("assembled generator is not Hermitian", n)
    if not np.all(np.isfinite(h)):
        raise PropagationError("generator contains non-finite entries", n)
    if kind == DENSITY:
        h = commutator_superoperator(h)
        dh = [commutator_superoperator(d) for d in dh]
        ddh = {k: commutator_superoperator(v) for k, v in ddh.items()}
    spectrum = eigendecompose(h, tol=GENERATOR_HERMITIAN_TOL)
    return _propagator_step_jet(spectrum, dt, dh, ddh, pairs)


@dataclass(frozen=True)
class Trajectory:
    """Jet snapshots at the requested sample times (always starting at 0)."""

    states: tuple

    def __post_init__(self):
        times = [s.time for s in self.states]
        if not times or times[0] != 0.0:
            raise ValueError("trajectory must start at t = 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("sample times must be strictly increasing")

    @property
    def times(self):
        return np.array([s.time for s in self.states])

    @property
    def final(self):
        return self.states[-1]

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, k):
        return self.states[k]


def _sample_indices(grid, sample_times):
    if sample_times is None:
        return set(range(grid.N + 1))
    idx = {grid.index_of(t) for t in sample_times}
    idx.add(0)
    return idx


def evolve(gen, theta_bar, grid, init, sample_times=None):
    """Propagate ``init`` over ``grid`` at the parameter point ``theta_bar``.

    Returns a :class:`Trajectory` with snapshots at ``sample_times`` (all
    grid points by default; ``t = 0`` is always included).
    """
    theta_bar = np.asarray(theta_bar, dtype=float)
    if theta_bar.size != gen.n_params:
        raise ValueError(f"theta_bar has {theta_bar.size} entries, generator expects {gen.n_params}")
    if init.n_params != gen.n_params:
        raise ValueError(f"initial jet tracks {init.n_params} parameters, generator has {gen.n_params}")
    expected_rows = gen.dim**2 if init.kind == DENSITY else gen.dim
    if init.chi.shape[0] != expected_rows:
        raise ValueError(f"initial state has {init.chi.shape[0]} rows, expected {expected_rows}")
    if gen.dissipators and init.kind != DENSITY:
        raise ValueError("dissipative generators require the vectorized-density-matrix kind")
    wanted = _sample_indices(grid, sample_times)
    coeffs = gen.coefficients(theta_bar)
    state = JetState(init.kind, init.chi, init.dchi, init.ddchi, init.pairs, 0.0)
    snapshots = [state]
    for n in range(grid.N):
        pj = build_step_jet(gen, theta_bar, grid, n, state.kind, state.pairs, coeffs)
        state = step_jet(state, pj)
        state = JetState(state.kind, state.chi, state.dchi, state.ddchi, state.pairs, (n + 1) * grid.dt)
        if not (np.all(np.isfinite(state.chi)) and np.all(np.isfinite(state.dchi))
                and np.all(np.isfinite(state.ddchi))):
            raise PropagationError("non-finite state or derivative", n)
        if n + 1 in wanted:
            snapshots.append(state)
    return Trajectory(tuple(snapshots))


def propagate(gen, theta, grid, chi0, kind=STATE, sample_times=None):
    """Plain propagation without derivatives; returns ``(times, [chi])``."""
    init = init_jet(chi0, kind, 0)
    theta = np.asarray(theta, dtype=float)
    wanted = _sample_indices(grid, sample_times)
    chi = init.chi
    out_t, out_chi = [0.0], [chi]
    for n in range(grid.N):
        t = grid.midpoint(n)
        if kind == DENSITY:
            u = expm(gen.liouvillian(t, theta) * grid.dt)
        else:
            spectrum = eigendecompose(gen.hamiltonian(t, theta), tol=GENERATOR_HERMITIAN_TOL)
            phases = np.exp(-1j * spectrum.energies * grid.dt)
            u = (spectrum.basis * phases[None, :]) @ spectrum.basis.conj().T
        chi = u @ chi
        if not np.all(np.isfinite(chi)):
            raise PropagationError("non-finite state", n)
        if n + 1 in wanted:
            out_t.append((n + 1) * grid.dt)
            out_chi.append(chi)
    return np.array(out_t), out_chi
