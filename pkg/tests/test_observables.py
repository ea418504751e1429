import numpy as np
import pytest

from conftest import random_hermitian, random_state, random_unitary
from oracles import run_case
from qupid.evolution import DENSITY, STATE, UNITARY, DynamicGenerator, Linear, TimeGrid, coupling, evolve, \
    init_jet, propagate
from qupid.findiff import fd_jet
from qupid.models import X, Z
from qupid.observables import (
    ObservableError,
    expectation,
    expectation_jet,
    gate_fidelity,
    gate_fidelity_jet,
    observable_jet,
    observable_value,
    projector_fidelity,
    projector_fidelity_jet,
)
from qupid.scenarios import fig1_scenario


def test_trivial_expectation():
    jet = expectation_jet(init_jet([1, 0], STATE, 2), expectation(Z))
    assert jet.value == 1.0
    np.testing.assert_array_equal(jet.grad, 0)
    np.testing.assert_array_equal(jet.hess, 0)


def test_operator_dependence_term():
    plus = np.array([1, 1]) / np.sqrt(2)
    jet = expectation_jet(init_jet(plus, STATE, 1), expectation(Z, d_operator=[X]))
    assert jet.grad[0] == pytest.approx(1.0)


def test_explicit_operator_dependence_matches_fd(rng):
    # A(theta) = Z + theta0 X + theta0 theta1 Y-like term, state depends on theta through H
    d = 3
    a0, a1, a2 = (random_hermitian(rng, d) for _ in range(3))
    gen = DynamicGenerator(d, 2, [coupling(random_hermitian(rng, d), Linear(0)),
                                  coupling(random_hermitian(rng, d), Linear(1))])
    theta = np.array([0.7, 1.3])
    grid = TimeGrid(1.0, 12)
    psi0 = random_state(rng, d)

    def op(th):
        return a0 + th[0] * a1 + th[0] * th[1] * a2

    spec = expectation(op(theta), d_operator=[a1 + theta[1] * a2, theta[0] * a2], dd_operator={(0, 1): a2})
    jet = observable_jet(evolve(gen, theta, grid, init_jet(psi0, STATE, 2)).final, spec)

    def f(th):
        psi = propagate(gen, th, grid, psi0)[1][-1][:, 0]
        return float(np.real(np.vdot(psi, op(th) @ psi)))

    _, grad, _, _ = fd_jet(f, theta, 1e-5, mixed=False)
    _, _, hess, _ = fd_jet(f, theta, 1e-3)
    np.testing.assert_allclose(jet.grad, grad, rtol=1e-6)
    np.testing.assert_allclose(jet.hess, hess, rtol=1e-4, atol=1e-8)


def test_projector_fidelity_values(rng):
    psi = random_state(rng, 4)
    jet = projector_fidelity_jet(init_jet(psi, STATE, 1), projector_fidelity(psi))
    assert jet.value == pytest.approx(1.0) and jet.grad[0] == 0
    other = np.array([-psi[1].conj(), psi[0].conj(), 0, 0])
    other /= np.linalg.norm(other)
    assert projector_fidelity_jet(init_jet(psi, STATE, 0), projector_fidelity(other)).value < 1e-30


def test_gate_fidelity_phase_invariance(rng):
    v = random_unitary(rng, 3)
    for phase in (0.0, 1.1):
        jet = gate_fidelity_jet(init_jet(v * np.exp(1j * phase), UNITARY, 0), gate_fidelity(v))
        assert jet.value == pytest.approx(1.0, abs=1e-14)


def test_gate_fidelity_gradient_two_by_two(rng):
    v = random_unitary(rng, 2)
    h1, h2 = random_hermitian(rng, 2), random_hermitian(rng, 2)
    gen = DynamicGenerator(2, 1, [coupling(h1, Linear(0)), coupling(h2, 1.0)])
    grid = TimeGrid(1.0, 8)
    jet = observable_jet(evolve(gen, [0.6], grid, init_jet(np.eye(2), UNITARY, 1)).final, gate_fidelity(v))

    def f(th):
        return observable_value(propagate(gen, th, grid, np.eye(2), UNITARY)[1][-1], UNITARY, gate_fidelity(v))

    _, grad, _, _ = fd_jet(f, [0.6], 1e-5, mixed=False)
    assert abs(jet.grad[0] - grad[0]) < 1e-7


def test_fig1_jet_against_fd():
    sc = fig1_scenario(n_steps=200)
    # off the calibrated point, where <Z> is stationary and the gradient vanishes
    theta = sc.distribution.mean + np.array([0.05, 0.02])
    jet = observable_jet(evolve(sc.generator, theta, sc.grid, init_jet(sc.initial_state, STATE, 2),
                                [sc.grid.T]).final, sc.observables[0])

    def f(th):
        return observable_value(propagate(sc.generator, th, sc.grid, sc.initial_state)[1][-1], STATE,
                                sc.observables[0])

    _, grad, _, _ = fd_jet(f, theta, 1e-5, mixed=False)
    _, _, hess, _ = fd_jet(f, theta, 1e-3)
    assert np.max(np.abs(jet.grad - grad)) / np.max(np.abs(grad)) < 1e-6
    assert np.max(np.abs(jet.hess - hess)) / np.max(np.abs(hess)) < 1e-4


@pytest.mark.parametrize("seed", range(12))
def test_random_scenarios_against_fd(seed):
    r = run_case(1000 + seed)
    assert r.ok, r


def test_density_and_state_values_agree(rng):
    psi = random_state(rng, 3)
    a = random_hermitian(rng, 3)
    spec = expectation(a)
    v_state = observable_value(psi[:, None], STATE, spec)
    v_rho = observable_value(np.outer(psi, psi.conj()).reshape(-1, 1, order="F"), DENSITY, spec)
    assert v_state == pytest.approx(v_rho, abs=1e-14)
    batch = observable_value(np.stack([psi[:, None]] * 4), STATE, spec)
    np.testing.assert_allclose(batch, v_state, atol=1e-15)


def test_invalid_specs():
    with pytest.raises(ObservableError):
        expectation(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ObservableError):
        projector_fidelity([1, 1])
    with pytest.raises(ObservableError):
        gate_fidelity(np.ones((2, 2)))
    with pytest.raises(ObservableError):
        gate_fidelity_jet(init_jet([1, 0], STATE, 0), gate_fidelity(np.eye(2)))
    with pytest.raises(ObservableError):
        expectation_jet(init_jet([1, 0, 0], STATE, 0), expectation(Z))


def test_bounds():
    assert expectation(Z).bounds == (-1.0, 1.0)
    assert projector_fidelity([1, 0]).bounds == (0.0, 1.0)
