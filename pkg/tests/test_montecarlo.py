import numpy as np
import pytest

from conftest import random_generator, random_hermitian, random_state
from qupid import montecarlo
from qupid.evolution import DENSITY, STATE, Linear, TimeGrid, coupling, propagate
from qupid.montecarlo import (
    SampleBatch,
    ScalingCurve,
    equal_accuracy_speedup,
    mc_statistics,
    sample_parameters,
    simulate_batch,
    statistics,
    subsampling_error_curve,
)
from qupid.observables import expectation, observable_value
from qupid.scenarios import fig1_scenario
from qupid.uncertainty import ParameterDistribution


def test_zero_covariance_draws_equal_mean():
    dist = ParameterDistribution.independent(["a", "b"], [1.0, -2.0], [0.0, 0.0])
    np.testing.assert_array_equal(sample_parameters(dist, 5, 3), [[1.0, -2.0]] * 5)


def test_draws_are_seeded_per_index():
    dist = ParameterDistribution.independent(["a"], [0.0], [1.0])
    a = sample_parameters(dist, 100, 7)
    b = sample_parameters(dist, 50, 7)
    np.testing.assert_array_equal(a[:50], b)
    assert not np.array_equal(a, sample_parameters(dist, 100, 8))


def test_law_of_large_numbers():
    sigma = 0.03
    dist = ParameterDistribution.independent(["omega"], [1.0], [sigma])
    k = 10_000
    x = sample_parameters(dist, k, 11)[:, 0]
    assert abs(x.mean() - 1.0) < 4 * sigma / np.sqrt(k)
    assert x.var(ddof=1) == pytest.approx(sigma**2, rel=0.1)


def test_correlated_draws():
    s1, s2 = 0.2, 0.5
    cov = [[s1**2, 0.5 * s1 * s2], [0.5 * s1 * s2, s2**2]]
    x = sample_parameters(ParameterDistribution(("a", "b"), [0, 0], cov), 10_000, 5)
    assert np.corrcoef(x.T)[0, 1] == pytest.approx(0.5, abs=0.05)


def test_singular_covariance_is_sampled():
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    x = sample_parameters(ParameterDistribution(("a", "b"), [0, 0], cov), 200, 1)
    np.testing.assert_allclose(x[:, 0], x[:, 1], atol=1e-12)


@pytest.mark.parametrize("kind", [STATE, DENSITY])
def test_batch_matches_plain_propagation(kind, rng):
    d, m = 3, 2
    gen = random_generator(rng, d, m, nonlinear=False, dissipators=1 if kind == DENSITY else 0)
    if kind == DENSITY:
        gen.dissipators = [coupling(gen.dissipators[0].operator, Linear(0, 0.05))]
    grid = TimeGrid(1.0, 10)
    psi = random_state(rng, d)
    chi0 = np.outer(psi, psi.conj()) if kind == DENSITY else psi
    spec = expectation(random_hermitian(rng, d))
    thetas = rng.uniform(0.5, 1.5, size=(7, m))
    times, vals = simulate_batch(gen, thetas, grid, chi0, kind, [spec], [0.5, 1.0])
    np.testing.assert_allclose(times, [0.0, 0.5, 1.0])
    for n, th in enumerate(thetas):
        _, chis = propagate(gen, th, grid, chi0, kind, [0.5, 1.0])
        for s, chi in enumerate(chis):
            assert vals[n, s, 0] == pytest.approx(observable_value(chi, kind, spec), abs=1e-12)


def test_results_independent_of_chunking_and_threads(monkeypatch):
    sc = fig1_scenario(n_steps=60)
    a, _ = mc_statistics(sc, 300, 9)
    monkeypatch.setattr(montecarlo, "CHUNK", 7)
    monkeypatch.setenv("QUPID_THREADS", "3")
    b, _ = mc_statistics(sc, 300, 9)
    np.testing.assert_array_equal(a["Z"].mean, b["Z"].mean)


def test_zero_covariance_statistics():
    sc = fig1_scenario(n_steps=60)
    sc.distribution = sc.distribution.scaled(0.0)
    stats, _ = mc_statistics(sc, 4, 0)
    det = [observable_value(c, STATE, sc.observables[0])
           for c in propagate(sc.generator, sc.distribution.mean, sc.grid, sc.initial_state)[1]]
    np.testing.assert_allclose(stats["Z"].mean, det, atol=1e-12)
    np.testing.assert_allclose(stats["Z"].band_high - stats["Z"].band_low, 0, atol=1e-12)


def test_sem_shrinks_with_batch_size():
    rng = np.random.default_rng(2)
    vals = rng.normal(size=(20_000, 1, 1))
    small = statistics(SampleBatch(0, None, np.zeros(1), vals[:10_000], ("x",)))["x"]
    big = statistics(SampleBatch(0, None, np.zeros(1), vals, ("x",)))["x"]
    assert small.sem[0] / big.sem[0] == pytest.approx(np.sqrt(2), rel=0.1)
    with pytest.raises(ValueError):
        statistics(SampleBatch(0, None, np.zeros(1), vals[:1], ("x",)))


def test_subsampling_curve_slope_and_full_size():
    vals = np.random.default_rng(3).normal(size=10_000)
    curve = subsampling_error_curve(vals, montecarlo.default_subset_sizes(10_000), 300, 1)
    assert curve.slope == pytest.approx(-0.5, abs=0.05)
    full = subsampling_error_curve(vals[:50], [1, 10, 50], 20, 0)
    assert full.errors[-1] == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        subsampling_error_curve(vals[:50], [0, 10], 5, 0)


def test_curves_differ_in_height_not_slope():
    rng = np.random.default_rng(4)
    sizes = montecarlo.default_subset_sizes(5000)
    narrow = subsampling_error_curve(rng.normal(0, 1e-4, 5000), sizes, 300, 1)
    wide = subsampling_error_curve(rng.normal(0, 1e-2, 5000), sizes, 300, 1)
    assert narrow.slope == pytest.approx(wide.slope, abs=0.05)
    assert wide.errors[0] / narrow.errors[0] == pytest.approx(100, rel=0.2)


def test_speedup_direct_ratio():
    sizes = np.array([10, 100, 1000, 10000])
    errors = 0.1 / np.sqrt(sizes)
    curve = ScalingCurve(sizes, errors, -0.5, np.log(0.1))
    sp = equal_accuracy_speedup(curve, 0.1 / np.sqrt(1000), 3)
    assert sp.n_mc == pytest.approx(1000) and sp.speedup == pytest.approx(333.33, rel=1e-3)
    assert not sp.extrapolated
    far = equal_accuracy_speedup(curve, 0.1 / np.sqrt(1e6), 3)
    assert far.extrapolated and far.n_mc == pytest.approx(1e6, rel=1e-9)
    with pytest.raises(ValueError):
        equal_accuracy_speedup(curve, 0.01, 0)
