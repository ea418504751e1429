"""Ready-made scenarios and the studies built on them.

A :class:`Scenario` bundles everything needed to run both the jet engine
and the Monte Carlo reference on the same discretized model.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from qupid import findiff, montecarlo
from qupid.evolution import STATE, TimeGrid, evolve, init_jet, propagate
from qupid.models import (
    SpinStarModel,
    TwoLevelModel,
    Z,
    bb1_sequence,
    full_amplitude_gaussian,
    gaussian_pulse,
    random_coupling_subset,
    spin_star_generator,
    two_level_generator,
    with_relative_uncertainty,
)
from qupid.observables import expectation, observable_jet, observable_value, projector_fidelity
from qupid.uncertainty import build_report


@dataclass
class Scenario:
    name: str
    generator: object
    distribution: object
    grid: TimeGrid
    initial_state: np.ndarray
    observables: list
    kind: str = STATE
    sample_times: Optional[np.ndarray] = None
    initial_derivs: Optional[list] = None

    def refined(self, factor):
        """Same scenario on a grid with ``factor`` times more steps."""
        times = self.sample_times
        return replace(self, grid=self.grid.refined(factor), sample_times=times)


def run_qupid(scenario, hessian="full"):
    """Jet propagation plus moment estimates; returns ``{label: UncertaintyReport}``."""
    dist = scenario.distribution
    init = init_jet(scenario.initial_state, scenario.kind, dist.n_params, scenario.initial_derivs,
                    hessian=hessian)
    traj = evolve(scenario.generator, dist.mean, scenario.grid, init, scenario.sample_times)
    with_variance = hessian == "full" or dist.n_params <= 1
    reports = {}
    for spec in scenario.observables:
        jets = [observable_jet(s, spec) for s in traj]
        reports[spec.label] = build_report(spec.label, traj.times, jets, dist, spec.bounds, with_variance)
    return reports


def final_observable(scenario, theta, label=None):
    """Observable at ``T`` from a plain simulation at ``theta`` (finite-difference oracle input)."""
    spec = scenario.observables[0] if label is None else next(o for o in scenario.observables if o.label == label)
    _, chis = propagate(scenario.generator, theta, scenario.grid, scenario.initial_state, scenario.kind, [scenario.grid.T])
    return observable_value(chis[-1], scenario.kind, spec)


# --------------------------------------------------------------------------
# two-level scenarios

KET0 = np.array([1.0, 0.0], dtype=complex)


def two_level_scenario(name, model, n_steps, duration=None, sample_times=None):
    gen = two_level_generator(model)
    T = model.pulse.duration if duration is None else duration
    return Scenario(
        name=name,
        generator=gen,
        distribution=model.distribution(),
        grid=TimeGrid(T, n_steps),
        initial_state=KET0,
        observables=[expectation(Z, "Z")],
        sample_times=sample_times,
    )


def gaussian_pi_model(omega_max=1.0, relative_sigma=0.03):
    """Gaussian pi-pulse peaking at ``omega_max`` and filling ``T = 6 / omega_max``.

    Amplitude and detuning noise both have standard deviation
    ``relative_sigma * omega_max``.
    """
    pulse = full_amplitude_gaussian(math.pi, omega_max, 6.0 / omega_max)
    sigma = relative_sigma * omega_max
    return TwoLevelModel(0.0, omega_max, pulse, {"omega_max": sigma, "delta": sigma})


def fig1_scenario(n_steps=600, relative_sigma=0.03):
    return two_level_scenario("fig1_gaussian_pi", gaussian_pi_model(relative_sigma=relative_sigma), n_steps)


# hardware-like pulses: sigma = 75 ns truncated at +-6 sigma, times in ns
HW_SIGMA = 75.0
HW_TRUNCATION = 6.0
HW_OMEGA_MAX = 0.02  # rad/ns, leaves headroom for the 2 pi BB1 segment


def amplitude_noise_model(kind, rotation, epsilon=0.05, omega_max=HW_OMEGA_MAX):
    if kind == "gaussian":
        pulse = gaussian_pulse(HW_SIGMA, HW_TRUNCATION, rotation)
    elif kind == "bb1":
        pulse = bb1_sequence(rotation, HW_SIGMA, HW_TRUNCATION)
    else:
        raise ValueError(f"unknown pulse kind {kind!r}")
    return TwoLevelModel(0.0, omega_max, pulse, {"omega_max": epsilon * omega_max})


def amplitude_noise_scenario(kind, rotation, epsilon=0.05, steps_per_segment=450):
    model = amplitude_noise_model(kind, rotation, epsilon)
    n = steps_per_segment * len(model.pulse.segments)
    label = f"{kind}_{'pi' if abs(rotation - math.pi) < 1e-12 else 'pi2' if abs(rotation - math.pi / 2) < 1e-12 else rotation}"
    return two_level_scenario(label, model, n)


# --------------------------------------------------------------------------
# spin star


def spin_star_scenario(names=(), relative_sigma=0.01, n_steps=200, model=None):
    """Projector fidelity onto the uncertainty-free final state."""
    base = model or SpinStarModel()
    model = with_relative_uncertainty(base, names, relative_sigma)
    gen = spin_star_generator(model)
    dist = model.distribution()
    grid = TimeGrid(model.T, n_steps)
    psi0 = model.initial_state()
    _, chis = propagate(gen, dist.mean, grid, psi0, STATE, [grid.T])
    target = chis[-1][:, 0]
    target = target / np.linalg.norm(target)
    return Scenario(
        name="spin_star",
        generator=gen,
        distribution=dist,
        grid=grid,
        initial_state=psi0,
        observables=[projector_fidelity(target, "F")],
        sample_times=np.array([grid.T]),
    )


@dataclass
class ScalingPoint:
    n_params: int
    names: tuple
    qupid_mean: float
    one_minus_f: float
    mc_mean: float
    mc_std: float
    qupid_error: float
    qupid_cost: int
    curve: montecarlo.ScalingCurve
    speedup: montecarlo.Speedup


def scaling_study(subset_sizes=(1, 10, 20, 30), k=10_000, repeats=1000, seed=0, relative_sigma=0.01,
                  n_steps=200, model=None, curve_sizes=None, progress=None):
    """Equal-accuracy comparison of QUPID and Monte Carlo on the spin star.

    For each subset size a random subset of couplings becomes uncertain; the
    QUPID mean (diagonal Hessian, charged at ``1 + 2M`` evaluations) is
    compared with a ``k``-sample Monte Carlo batch.
    """
    base = model or SpinStarModel()
    rng = np.random.default_rng([int(seed), 0x5EED])
    points = []
    for m in subset_sizes:
        names = random_coupling_subset(base, m, rng)
        sc = spin_star_scenario(names, relative_sigma, n_steps, base)
        report = run_qupid(sc, hessian="diagonal")["F"]
        qupid_mean = float(report.mean[-1])
        stats, batch = montecarlo.mc_statistics(sc, k, seed + 1000 * m)
        values = batch.observables[:, -1, 0]
        sizes = montecarlo.default_subset_sizes(k) if curve_sizes is None else curve_sizes
        curve = montecarlo.subsampling_error_curve(values, sizes, repeats, seed + 1000 * m + 1)
        f_true = float(values.mean())
        err = abs(f_true - qupid_mean)
        cost = findiff.evaluation_count(m)
        sp = montecarlo.equal_accuracy_speedup(curve, err, cost)
        points.append(ScalingPoint(m, names, qupid_mean, 1 - qupid_mean, f_true, float(values.std(ddof=1)),
                                   err, cost, curve, sp))
        if progress:
            progress(points[-1])
    return points
