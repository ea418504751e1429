"""Pulse shapes and model Hamiltonians.

Two systems are provided:

* a driven two-level system ``H = Delta Z + Omega_max u(t) (cos(phi) X + sin(phi) Y)``
  with Gaussian, BB1 or tabulated pulses;
* a five-qubit spin star with XX/YY/ZZ couplings on the ring (nearest) and
  chord (next-nearest) edges and a global ``u(t) sum_j X_j`` control.

Rotation angles refer to the Bloch sphere, so a pulse of rotation ``Theta``
satisfies ``2 Omega_max * int u dt = Theta``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from qupid.evolution import Constant, DynamicGenerator, Linear, coupling
from qupid.uncertainty import ParameterDistribution

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


class CalibrationError(ValueError):
    """The requested rotation needs ``|u| > 1`` at the given drive strength."""


def pauli_string(label):
    """Kronecker product of single-qubit Paulis, e.g. ``"XZI"`` (qubit 0 leftmost)."""
    out = np.array([[1.0 + 0j]])
    for ch in label.upper():
        out = np.kron(out, PAULI[ch])
    return out


def embed(op, site, n_qubits):
    out = np.array([[1.0 + 0j]])
    for k in range(n_qubits):
        out = np.kron(out, op if k == site else I2)
    return out


# --------------------------------------------------------------------------
# pulses


@dataclass(frozen=True)
class GaussianSegment:
    """Gaussian envelope truncated at ``+- truncation * sigma`` around its centre."""

    sigma: float
    truncation: float
    rotation: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.truncation > 0:
            raise ValueError("truncation must be positive")
        if not 0 < self.rotation <= 2 * math.pi + 1e-12:
            raise ValueError("rotation must lie in (0, 2 pi]")

    @property
    def duration(self):
        return 2 * self.truncation * self.sigma

    @property
    def unit_area(self):
        """Integral of the unit-height envelope over its window."""
        return self.sigma * math.sqrt(2 * math.pi) * math.erf(self.truncation / math.sqrt(2))

    def amplitude(self, omega_max):
        a = self.rotation / (2 * omega_max * self.unit_area)
        if a > 1 + 1e-12:
            raise CalibrationError(
                f"rotation {self.rotation:.6g} needs peak amplitude {a:.4f} > 1 at omega_max={omega_max:g}"
            )
        return a

    def shape(self, t):
        """Unit-height envelope at times ``t`` relative to the segment start."""
        t = np.asarray(t, dtype=float)
        centre = self.truncation * self.sigma
        inside = (t >= 0) & (t <= self.duration)
        return np.where(inside, np.exp(-((t - centre) ** 2) / (2 * self.sigma**2)), 0.0)


@dataclass(frozen=True)
class PulseShape:
    """Sequence of segments played back to back (or a sampled table).

    ``kind`` is one of ``gaussian``, ``bb1``, ``composite`` or ``custom``.
    For ``custom`` pulses ``table`` holds ``(times, values, phases)``
    interpolated linearly; values are used as given.
    """

    kind: str
    segments: tuple = ()
    table: Optional[tuple] = None

    @property
    def duration(self):
        if self.kind == "custom":
            return float(self.table[0][-1])
        return float(sum(s.duration for s in self.segments))

    @property
    def boundaries(self):
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    def check(self, omega_max):
        """Raise :class:`CalibrationError` if any segment exceeds ``|u| <= 1``."""
        if self.kind == "custom":
            if np.max(np.abs(self.table[1])) > 1 + 1e-12:
                raise CalibrationError("custom pulse exceeds |u| <= 1")
            return
        for s in self.segments:
            s.amplitude(omega_max)

    def envelope(self, t, omega_max):
        """``(u(t), phi(t))`` for the pulse calibrated at ``omega_max``."""
        t = np.asarray(t, dtype=float)
        if self.kind == "custom":
            times, values, phases = self.table
            return np.interp(t, times, values, 0.0, 0.0), np.interp(t, times, phases)
        u = np.zeros_like(t)
        phi = np.zeros_like(t)
        edges = self.boundaries
        for k, s in enumerate(self.segments):
            last = k == len(self.segments) - 1
            sel = (t >= edges[k]) & ((t <= edges[k + 1]) if last else (t < edges[k + 1]))
            u = np.where(sel, s.amplitude(omega_max) * s.shape(t - edges[k]), u)
            phi = np.where(sel, s.phase, phi)
        return u, phi

    def rotation_on_grid(self, omega_max, grid):
        """Bloch rotation ``2 Omega_max sum_n u(t_n + dt/2) dt`` on a time grid."""
        mids = (np.arange(grid.N) + 0.5) * grid.dt
        u, _ = self.envelope(mids, omega_max)
        return 2 * omega_max * float(np.sum(u)) * grid.dt


def gaussian_pulse(sigma, truncation, rotation, phase=0.0):
    if not 0 < rotation <= 2 * math.pi + 1e-12:
        raise ValueError("rotation must lie in (0, 2 pi]")
    return PulseShape("gaussian", (GaussianSegment(sigma, truncation, rotation, phase),))


def full_amplitude_gaussian(rotation, omega_max, duration):
    """Gaussian filling ``[0, duration]`` whose peak is exactly ``u = 1``.

    The width is chosen so that the truncated pulse still performs
    ``rotation``; ``omega_max`` is then literally the peak drive strength.
    """
    from scipy.optimize import brentq

    def excess(sigma):
        seg = GaussianSegment(sigma, duration / (2 * sigma), rotation)
        return 2 * omega_max * seg.unit_area - rotation

    hi = duration
    if excess(hi) < 0:
        raise CalibrationError(f"rotation {rotation:g} unreachable within duration {duration:g}")
    lo = rotation / (2 * omega_max * math.sqrt(2 * math.pi))
    sigma = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return gaussian_pulse(sigma, duration / (2 * sigma), rotation)


def bb1_phase(rotation):
    """Auxiliary BB1 phase ``arccos(-Theta / 4 pi)``."""
    ratio = -rotation / (4 * math.pi)
    if not -1 <= ratio <= 1 or rotation <= 0:
        raise ValueError(f"BB1 rotation {rotation} outside (0, 4 pi]")
    return math.acos(ratio)


def bb1_sequence(rotation, sigma, truncation):
    """Target rotation followed by the ``pi_phi 2pi_3phi pi_phi`` correction.

    The ``Theta``-pulse about X plays first, matching the right-to-left
    product ``R_{pi,phi} R_{2pi,3phi} R_{pi,phi} R_{Theta,0}``.
    """
    phi = bb1_phase(rotation)
    segs = (
        GaussianSegment(sigma, truncation, rotation, 0.0),
        GaussianSegment(sigma, truncation, math.pi, phi),
        GaussianSegment(sigma, truncation, 2 * math.pi, 3 * phi),
        GaussianSegment(sigma, truncation, math.pi, phi),
    )
    return PulseShape("bb1", segs)


def composite_pulse(segments):
    return PulseShape("composite", tuple(segments))


def custom_pulse(times, values, phases=None):
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    phases = np.zeros_like(times) if phases is None else np.asarray(phases, dtype=float)
    if times.ndim != 1 or times.shape != values.shape or times.shape != phases.shape:
        raise ValueError("custom pulse table columns must be 1-D and of equal length")
    if np.any(np.diff(times) <= 0):
        raise ValueError("custom pulse times must be strictly increasing")
    return PulseShape("custom", (), (times, values, phases))


# --------------------------------------------------------------------------
# two-level system


@dataclass(frozen=True)
class TwoLevelModel:
    """Driven qubit; ``uncertain`` maps ``"omega_max"``/``"delta"`` to sigma."""

    delta: float
    omega_max: float
    pulse: PulseShape
    uncertain: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.omega_max > 0:
            raise ValueError("omega_max must be positive")
        unknown = set(self.uncertain) - {"omega_max", "delta"}
        if unknown:
            raise ValueError(f"unknown uncertain parameters {sorted(unknown)}")

    @property
    def parameter_names(self):
        return tuple(n for n in ("omega_max", "delta") if n in self.uncertain)

    def nominal(self, name):
        return {"omega_max": self.omega_max, "delta": self.delta}[name]

    def distribution(self):
        names = self.parameter_names
        return ParameterDistribution.independent(
            names, [self.nominal(n) for n in names], [self.uncertain[n] for n in names]
        )


def two_level_generator(model):
    """``Delta Z + Omega_max u(t) X_phi`` with uncertain entries mapped to parameters."""
    names = model.parameter_names
    model.pulse.check(model.omega_max)
    pulse, omega = model.pulse, model.omega_max

    def drive(t):
        u, phi = pulse.envelope(t, omega)
        u, phi = float(u), float(phi)
        return u * (math.cos(phi) * X + math.sin(phi) * Y)

    def coefficient(name):
        if name in names:
            return Linear(names.index(name))
        return Constant(model.nominal(name))

    return DynamicGenerator(
        dim=2,
        n_params=len(names),
        couplings=[coupling(drive, coefficient("omega_max")), coupling(Z, coefficient("delta"))],
    )


# --------------------------------------------------------------------------
# spin star

N_STAR = 5
RING_EDGES = tuple((i, (i + 1) % N_STAR) for i in range(N_STAR))
CHORD_EDGES = tuple((i, (i + 2) % N_STAR) for i in range(N_STAR))
AXES = ("x", "y", "z")


def sine_control(coefficients, duration):
    """``u(t) = sum_n c_n sin(n pi t / T)``."""
    items = sorted((int(n), float(c)) for n, c in dict(coefficients).items())

    def u(t):
        return sum(c * math.sin(n * math.pi * t / duration) for n, c in items)

    return u


DEFAULT_CONTROL = {1: 1.0, 3: 1.0, 5: -1.0}


@dataclass(frozen=True)
class SpinStarModel:
    """Five qubits on a ring with nearest and next-nearest Heisenberg-type couplings.

    Parameter names are ``J{axis}_{i}{j}`` for ring edges and
    ``g{axis}_{i}{j}`` for chords. With ``strict_typo`` the ZZ couplings
    reuse the x-axis constants (20 parameters instead of 30).
    """

    J: float = 1.0
    g: Optional[float] = None
    duration: Optional[float] = None
    control: dict = field(default_factory=lambda: dict(DEFAULT_CONTROL))
    uncertain: dict = field(default_factory=dict)
    strict_typo: bool = False

    @property
    def g_value(self):
        return self.J / 10 if self.g is None else self.g

    @property
    def T(self):
        return 10.0 / self.J if self.duration is None else self.duration

    def coupling_terms(self):
        """``[(name, nominal, operator)]`` for every independent coupling constant."""
        terms = []
        axes = ("x", "y") if self.strict_typo else AXES
        for prefix, edges, value in (("J", RING_EDGES, self.J), ("g", CHORD_EDGES, self.g_value)):
            for i, j in edges:
                for ax in axes:
                    paulis = [ax.upper()] + (["Z"] if self.strict_typo and ax == "x" else [])
                    op = -sum(embed(PAULI[p], i, N_STAR) @ embed(PAULI[p], j, N_STAR) for p in paulis)
                    terms.append((f"{prefix}{ax}_{i}{j}", value, op))
        return terms

    @property
    def all_parameter_names(self):
        return tuple(t[0] for t in self.coupling_terms())

    @property
    def parameter_names(self):
        return tuple(n for n in self.all_parameter_names if n in self.uncertain)

    def distribution(self):
        nominal = {name: value for name, value, _ in self.coupling_terms()}
        names = self.parameter_names
        return ParameterDistribution.independent(
            names, [nominal[n] for n in names], [self.uncertain[n] for n in names]
        )

    def initial_state(self):
        psi = np.zeros(2**N_STAR, dtype=complex)
        psi[0] = 1.0
        return psi


def random_coupling_subset(model, size, rng):
    names = model.all_parameter_names
    if not 0 <= size <= len(names):
        raise ValueError(f"subset size {size} outside [0, {len(names)}]")
    picks = rng.choice(len(names), size=size, replace=False)
    return tuple(names[k] for k in sorted(picks))


def with_relative_uncertainty(model, names, relative_sigma):
    nominal = {name: value for name, value, _ in model.coupling_terms()}
    uncertain = {n: relative_sigma * abs(nominal[n]) for n in names}
    return SpinStarModel(model.J, model.g, model.duration, model.control, uncertain, model.strict_typo)


def spin_star_generator(model):
    names = model.parameter_names
    sx = sum(embed(X, k, N_STAR) for k in range(N_STAR))
    u = sine_control(model.control, model.T)
    couplings = []
    for name, value, op in model.coupling_terms():
        coeff = Linear(names.index(name)) if name in names else Constant(value)
        couplings.append(coupling(op, coeff))
    return DynamicGenerator(
        dim=2**N_STAR,
        n_params=len(names),
        couplings=couplings,
        drift=lambda t: u(t) * sx,
    )
