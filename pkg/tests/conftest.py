import numpy as np
import pytest

from qupid.evolution import DynamicGenerator, Function, Linear, coupling


def random_hermitian(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (a + a.conj().T) / (2 * np.sqrt(d))


def random_state(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_unitary(rng, d):
    q, r = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _quadratic_map(index, a, b):
    # u = a * theta + b * theta^2, exercises d2H != 0
    def fn(theta):
        m = theta.size
        t = theta[index]
        grad = np.zeros(m)
        grad[index] = a + 2 * b * t
        hess = np.zeros((m, m))
        hess[index, index] = 2 * b
        return a * t + b * t * t, grad, hess

    return Function(fn)


def _product_map(i, j):
    def fn(theta):
        m = theta.size
        grad = np.zeros(m)
        grad[i], grad[j] = theta[j], theta[i]
        hess = np.zeros((m, m))
        hess[i, j] = hess[j, i] = 1.0
        return theta[i] * theta[j], grad, hess

    return Function(fn)


def random_generator(rng, d, m, time_dependent=True, nonlinear=True, dissipators=0):
    """``H0 + drive(t) + sum_j u_j(theta) A_j`` with a mix of parameter maps."""
    h0 = random_hermitian(rng, d)
    drive = random_hermitian(rng, d, 0.5)
    freq = rng.uniform(0.5, 2.0)
    couplings = []
    for j in range(m):
        op = random_hermitian(rng, d, 0.7)
        if nonlinear and j % 2 == 1:
            couplings.append(coupling(op, _quadratic_map(j, rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5))))
        else:
            couplings.append(coupling(op, Linear(j, rng.uniform(0.5, 1.5))))
    if nonlinear and m >= 2:
        couplings.append(coupling(random_hermitian(rng, d, 0.3), _product_map(0, m - 1)))
    if time_dependent:
        couplings.append(coupling(lambda t, a=drive: np.sin(freq * t) * a, 1.0))
    diss = []
    for k in range(dissipators):
        op = rng.normal(size=(d, d)) * 0.3 + 0j
        diss.append(coupling(op, Linear(k % m, 1.0, 0.0) if m else 0.05))
    return DynamicGenerator(dim=d, n_params=m, couplings=couplings, drift=h0, dissipators=diss)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
