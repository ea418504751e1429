import math

import numpy as np
import pytest

from qupid.evolution import STATE, TimeGrid, evolve, init_jet, propagate
from qupid.models import (
    CHORD_EDGES,
    RING_EDGES,
    CalibrationError,
    GaussianSegment,
    SpinStarModel,
    TwoLevelModel,
    X,
    Y,
    Z,
    bb1_phase,
    bb1_sequence,
    custom_pulse,
    embed,
    full_amplitude_gaussian,
    gaussian_pulse,
    pauli_string,
    random_coupling_subset,
    spin_star_generator,
    two_level_generator,
    with_relative_uncertainty,
)
from qupid.observables import expectation, observable_jet
from qupid.scenarios import amplitude_noise_model, run_qupid, spin_star_scenario, two_level_scenario


def _final_z(model, n_steps=600, theta=None):
    sc = two_level_scenario("t", model, n_steps)
    th = sc.distribution.mean if theta is None else theta
    chi = propagate(sc.generator, th, sc.grid, sc.initial_state)[1][-1][:, 0]
    return float(np.real(np.vdot(chi, Z @ chi)))


def test_paulis_and_embedding():
    np.testing.assert_array_equal(pauli_string("XZ"), np.kron(X, Z))
    np.testing.assert_array_equal(embed(Y, 1, 3), np.kron(np.kron(np.eye(2), Y), np.eye(2)))


@pytest.mark.parametrize("rotation", [math.pi / 2, math.pi, 2 * math.pi])
def test_pulse_area_on_grid(rotation):
    pulse = gaussian_pulse(75.0, 6.0, rotation)
    grid = TimeGrid(pulse.duration, 450)
    assert pulse.rotation_on_grid(0.02, grid) == pytest.approx(rotation, rel=1e-8)
    bb1 = bb1_sequence(rotation, 75.0, 6.0) if rotation <= math.pi else None
    if bb1 is not None:
        g = TimeGrid(bb1.duration, 1800)
        assert bb1.rotation_on_grid(0.02, g) == pytest.approx(rotation + 4 * math.pi, rel=1e-8)


def test_full_amplitude_gaussian_peaks_at_one():
    pulse = full_amplitude_gaussian(math.pi, 1.0, 6.0)
    seg = pulse.segments[0]
    assert seg.amplitude(1.0) == pytest.approx(1.0, abs=1e-12)
    assert pulse.duration == pytest.approx(6.0)
    u, _ = pulse.envelope(np.linspace(0, 6, 1001), 1.0)
    assert u.max() <= 1 + 1e-12
    with pytest.raises(CalibrationError):
        full_amplitude_gaussian(math.pi, 1.0, 1.0)


def test_on_resonance_pi_and_half_pi():
    assert _final_z(TwoLevelModel(0.0, 1.0, gaussian_pulse(1.0, 3.0, math.pi))) == pytest.approx(-1, abs=1e-6)
    assert _final_z(amplitude_noise_model("gaussian", math.pi / 2)) == pytest.approx(0.0, abs=1e-6)
    assert _final_z(amplitude_noise_model("bb1", math.pi / 2), 1800) == pytest.approx(0.0, abs=1e-6)
    assert _final_z(amplitude_noise_model("bb1", math.pi), 1800) == pytest.approx(-1.0, abs=1e-6)
    # vanishing rotation leaves |0> alone
    assert _final_z(TwoLevelModel(0.0, 1.0, gaussian_pulse(1.0, 3.0, 1e-9))) == pytest.approx(1.0, abs=1e-12)


def test_calibration_error():
    with pytest.raises(CalibrationError):
        two_level_generator(TwoLevelModel(0.0, 0.001, gaussian_pulse(75.0, 6.0, math.pi)))
    with pytest.raises(CalibrationError):
        custom_pulse([0, 1, 2], [0, 1.5, 0]).check(1.0)
    with pytest.raises(ValueError):
        GaussianSegment(-1.0, 3.0, 1.0)
    with pytest.raises(ValueError):
        gaussian_pulse(1.0, 3.0, 7.0)


def test_bb1_phases_and_order():
    assert bb1_phase(math.pi) == pytest.approx(math.acos(-0.25))
    assert bb1_phase(math.pi / 2) == pytest.approx(math.acos(-0.125))
    with pytest.raises(ValueError):
        bb1_phase(5 * math.pi)
    seq = bb1_sequence(math.pi / 2, 10.0, 4.0)
    phi = bb1_phase(math.pi / 2)
    assert [s.rotation for s in seq.segments] == pytest.approx([math.pi / 2, math.pi, 2 * math.pi, math.pi])
    assert [s.phase for s in seq.segments] == pytest.approx([0, phi, 3 * phi, phi])


@pytest.mark.parametrize("rotation", [math.pi, math.pi / 2])
def test_bb1_amplitude_robustness(rotation):
    def endpoint(kind):
        model = amplitude_noise_model(kind, rotation)
        sc = two_level_scenario("r", model, 450 * len(model.pulse.segments))
        sc.sample_times = np.array([sc.grid.T])
        return run_qupid(sc)["Z"]

    bb1, gauss = endpoint("bb1"), endpoint("gaussian")
    assert bb1.std[-1] < 1e-2 * gauss.std[-1]
    assert abs(bb1.shift[-1]) <= 1e-2 * abs(gauss.shift[-1]) or abs(bb1.shift[-1]) < 1e-12


def test_detuning_only_generator():
    model = TwoLevelModel(0.2, 1.0, custom_pulse([0.0, 1.0], [0.0, 0.0]), {"delta": 0.1})
    sc = two_level_scenario("d", model, 10)
    jet = observable_jet(evolve(sc.generator, [0.2], sc.grid, init_jet([1, 0], STATE, 1)).final, expectation(Z))
    assert jet.value == pytest.approx(1.0) and abs(jet.grad[0]) < 1e-15


def test_spin_star_census():
    model = SpinStarModel()
    names = model.all_parameter_names
    assert len(names) == 30 == len(set(names))
    assert len(RING_EDGES) == len(CHORD_EDGES) == 5
    assert sum(n.startswith("J") for n in names) == 15
    assert model.g_value == pytest.approx(0.1) and model.T == pytest.approx(10.0)
    typo = SpinStarModel(strict_typo=True)
    assert len(typo.all_parameter_names) == 20
    op = dict((n, o) for n, _, o in typo.coupling_terms())["Jx_01"]
    np.testing.assert_allclose(op, -(pauli_string("XXIII") + pauli_string("ZZIII")))


def test_spin_star_identity_and_reference():
    zero = SpinStarModel(J=0.0, g=0.0, duration=1.0, control={})
    gen = spin_star_generator(zero)
    psi0 = zero.initial_state()
    chi = propagate(gen, [], TimeGrid(1.0, 5), psi0)[1][-1][:, 0]
    np.testing.assert_allclose(chi, psi0, atol=1e-14)
    sc = spin_star_scenario(("Jx_01",), n_steps=100)
    chi = propagate(sc.generator, sc.distribution.mean, sc.grid, sc.initial_state)[1][-1][:, 0]
    assert np.sum(np.abs(chi) ** 2 > 1e-3) > 2
    assert 1 - abs(np.vdot(sc.observables[0].target, chi)) ** 2 < 1e-14


def test_random_subsets_are_seeded():
    model = SpinStarModel()
    a = random_coupling_subset(model, 10, np.random.default_rng(4))
    b = random_coupling_subset(model, 10, np.random.default_rng(4))
    assert a == b and len(set(a)) == 10
    with pytest.raises(ValueError):
        random_coupling_subset(model, 31, np.random.default_rng(0))
    scaled = with_relative_uncertainty(model, a, 0.01)
    assert scaled.distribution().sigmas == pytest.approx([0.01 * (1.0 if n[0] == "J" else 0.1) for n in a])
