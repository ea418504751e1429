"""Monte Carlo reference: sampled parameters, plain trajectories, statistics.

Draw ``k`` of a batch always comes from the substream seeded by
``(seed, k)``, so results do not depend on chunking or thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from qupid import kernels
from qupid.evolution import DENSITY, Constant, Linear, _as_chi, _dissipator_superoperator, _sample_indices
from qupid.observables import observable_value
from qupid.uncertainty import band

CHUNK = 256


class SamplingError(ValueError):
    pass


def sample_parameters(dist, k, seed):
    """``k`` draws from the multivariate normal ``N(mean, covariance)``.

    Uses the symmetric (eigen) square root of the covariance, so singular
    covariances are fine.
    """
    if k < 1:
        raise ValueError("need at least one draw")
    m = dist.n_params
    if m == 0:
        return np.zeros((k, 0))
    w, v = np.linalg.eigh(dist.covariance)
    if w[0] < -1e-10 * max(np.trace(dist.covariance), np.finfo(float).tiny):
        raise SamplingError(f"covariance has negative eigenvalue {w[0]:.3e}")
    root = (v * np.sqrt(np.clip(w, 0, None))) @ v.T
    z = np.empty((k, m))
    for i in range(k):
        z[i] = np.random.default_rng([int(seed), i]).standard_normal(m)
    return dist.mean + z @ root.T


def _coefficient_matrix(gen, thetas):
    k = thetas.shape[0]
    out = np.empty((k, len(gen.couplings)))
    for n, c in enumerate(gen.couplings):
        cm = c.coefficient
        if isinstance(cm, Constant):
            out[:, n] = cm.value
        elif isinstance(cm, Linear):
            out[:, n] = cm.offset + cm.scale * thetas[:, cm.index]
        else:
            out[:, n] = [cm(th)[0] for th in thetas]
    return out


def _rates(gen, thetas):
    return np.array([[c.coefficient(th)[0] for c in gen.dissipators] for th in thetas]).reshape(
        thetas.shape[0], len(gen.dissipators)
    )


def _batched_commutator(h):
    # S[a*d + i, b*d + j] = delta_ab H_ij - H_ba delta_ij
    k, d, _ = h.shape
    eye = np.eye(d)
    s = np.einsum("ab,kij->kaibj", eye, h) - np.einsum("kba,ij->kaibj", h, eye)
    return s.reshape(k, d * d, d * d)


def simulate_batch(gen, thetas, grid, chi0, kind, observables, sample_times=None):
    """Plain trajectories for every row of ``thetas``.

    Returns ``(times, values)`` where ``values`` has shape
    ``(K, len(times), len(observables))``.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    k = thetas.shape[0]
    wanted = sorted(_sample_indices(grid, sample_times))
    chi = _as_chi(chi0, kind)
    coeffs = _coefficient_matrix(gen, thetas)
    rates = _rates(gen, thetas) if gen.dissipators else None
    static = [n for n, c in enumerate(gen.couplings) if c.is_static]
    dynamic = [n for n, c in enumerate(gen.couplings) if not c.is_static]
    static_ops = np.array([gen.couplings[n].operator for n in static]).reshape(len(static), gen.dim, gen.dim)
    static_drift = gen.drift is not None and not callable(gen.drift)
    values = np.empty((k, len(wanted), len(observables)))
    times = np.array(wanted) * grid.dt

    def record(slot, chis, rows):
        for o, spec in enumerate(observables):
            values[rows, slot, o] = observable_value(chis, kind, spec)

    def run_chunk(start):
        rows = slice(start, min(start + CHUNK, k))
        nk = rows.stop - rows.start
        h_static = np.tensordot(coeffs[rows][:, static], static_ops, axes=(1, 0)) if static else \
            np.zeros((nk, gen.dim, gen.dim), dtype=complex)
        h_static = h_static.astype(complex)
        if static_drift:
            h_static = h_static + gen.drift
        state = np.repeat(chi[None], nk, axis=0)
        slot = 0
        if wanted[0] == 0:
            record(0, state, rows)
            slot = 1
        for n in range(grid.N):
            t = grid.midpoint(n)
            h = h_static
            if gen.drift is not None and not static_drift:
                h = h + gen.drift_at(t)
            for q in dynamic:
                op = gen.couplings[q].at(t)
                h = h + coeffs[rows][:, q, None, None] * op
            if kind == DENSITY:
                b = -1j * grid.dt * _batched_commutator(np.asarray(h))
                for q, c in enumerate(gen.dissipators):
                    b = b + grid.dt * rates[rows][:, q, None, None] * _dissipator_superoperator(np.asarray(c.at(t)))
            else:
                b = -1j * grid.dt * np.asarray(h)
            state = kernels.expm_action(b, state)
            if not np.all(np.isfinite(state)):
                bad = rows.start + int(np.argmax(~np.all(np.isfinite(state), axis=(1, 2))))
                raise FloatingPointError(f"draw {bad}: non-finite state at step {n}")
            if slot < len(wanted) and wanted[slot] == n + 1:
                record(slot, state, rows)
                slot += 1

    starts = range(0, k, CHUNK)
    threads = max(1, int(os.environ.get("QUPID_THREADS", "1")))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(run_chunk, starts))
    else:
        for s in starts:
            run_chunk(s)
    return times, values


@dataclass
class SampleBatch:
    seed: int
    draws: np.ndarray
    times: np.ndarray
    observables: np.ndarray  # (K, n_times, n_observables)
    labels: tuple


@dataclass
class MCStatistics:
    label: str
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    sem: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    n_samples: int


def run_batch(gen, dist, grid, chi0, kind, observables, k, seed, sample_times=None):
    draws = sample_parameters(dist, k, seed)
    times, values = simulate_batch(gen, draws, grid, chi0, kind, observables, sample_times)
    return SampleBatch(int(seed), draws, times, values, tuple(o.label for o in observables))


def statistics(batch, bounds_by_label=None):
    """Mean, standard deviation, SEM and clamped 2-sigma band per observable."""
    if batch.observables.shape[0] < 2:
        raise ValueError("need at least two samples")
    k = batch.observables.shape[0]
    out = {}
    for o, label in enumerate(batch.labels):
        vals = batch.observables[:, :, o]
        mean = vals.mean(axis=0)
        std = vals.std(axis=0, ddof=1)
        bounds = (bounds_by_label or {}).get(label, (-np.inf, np.inf))
        low, high = band(mean, std, bounds)
        out[label] = MCStatistics(label, batch.times, mean, std, std / np.sqrt(k), low, high, k)
    return out


def mc_statistics(scenario, k, seed, sample_times=None):
    """Run ``k`` sampled trajectories of a scenario and summarize them."""
    batch = run_batch(
        scenario.generator, scenario.distribution, scenario.grid, scenario.initial_state,
        scenario.kind, scenario.observables, k, seed,
        scenario.sample_times if sample_times is None else sample_times,
    )
    bounds = {o.label: o.bounds for o in scenario.observables}
    return statistics(batch, bounds), batch


# --------------------------------------------------------------------------
# subsampling and equal-accuracy comparison


@dataclass
class ScalingCurve:
    sizes: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float

    def __post_init__(self):
        if np.any(np.diff(self.sizes) <= 0):
            raise ValueError("subset sizes must be strictly increasing")
        if np.any(self.errors < 0):
            raise ValueError("errors must be non-negative")

    def predict_size(self, error):
        """Sample count at which the fitted power law reaches ``error``."""
        return float(np.exp((np.log(error) - self.intercept) / self.slope))


def default_subset_sizes(k, fraction=0.1, points=16):
    top = max(2, int(k * fraction))
    return np.unique(np.round(np.logspace(0, np.log10(top), points)).astype(int))


def subsampling_error_curve(values, subset_sizes, repeats, seed):
    """Mean ``|F_full - F_subset|`` over random subsets drawn without replacement.

    The power law is fitted on log-log axes over subsets smaller than the
    full batch.
    """
    values = np.asarray(values, dtype=float)
    k = values.size
    sizes = np.asarray(sorted(set(int(s) for s in subset_sizes)))
    if sizes[0] < 1 or sizes[-1] > k:
        raise ValueError(f"subset sizes must lie in [1, {k}]")
    full = values.mean()
    errors = np.empty(sizes.size)
    for a, n in enumerate(sizes):
        rng = np.random.default_rng([int(seed), int(n)])
        errs = np.empty(repeats)
        for r in range(repeats):
            errs[r] = abs(values[rng.choice(k, n, replace=False)].mean() - full)
        errors[a] = errs.mean()
    fit = (sizes < k) & (errors > 0)
    if fit.sum() >= 2:
        slope, intercept = np.polyfit(np.log(sizes[fit]), np.log(errors[fit]), 1)
    else:
        slope, intercept = np.nan, np.nan
    return ScalingCurve(sizes, errors, float(slope), float(intercept))


@dataclass
class Speedup:
    n_mc: float
    cost: int
    speedup: float
    extrapolated: bool


def equal_accuracy_speedup(curve, qupid_error, qupid_cost_evals):
    """Monte Carlo samples matching ``qupid_error`` divided by the QUPID cost.

    Interpolates the curve on log-log axes; outside its range the fitted
    power law is used and the result is flagged as extrapolated.
    """
    if qupid_cost_evals < 1:
        raise ValueError("cost must be at least one evaluation")
    ok = curve.errors > 0
    sizes, errors = curve.sizes[ok], curve.errors[ok]
    extrapolated = True
    n_mc = None
    if qupid_error > 0 and errors.size and errors.min() <= qupid_error <= errors.max():
        below = np.flatnonzero(errors <= qupid_error)
        i = int(below[0])
        if i == 0 or errors[i] == qupid_error:
            n_mc = float(sizes[i])
        else:
            x0, x1 = np.log(sizes[i - 1]), np.log(sizes[i])
            y0, y1 = np.log(errors[i - 1]), np.log(errors[i])
            n_mc = float(np.exp(x0 + (np.log(qupid_error) - y0) * (x1 - x0) / (y1 - y0)))
        extrapolated = False
    if n_mc is None:
        n_mc = curve.predict_size(qupid_error) if qupid_error > 0 else np.inf
    return Speedup(n_mc, int(qupid_cost_evals), n_mc / qupid_cost_evals, extrapolated)
