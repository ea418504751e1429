"""Central finite-difference stencils and their evaluation cost.

All stencils accept functions returning scalars or arrays, so they also
serve to differentiate matrix-valued maps such as a step propagator.
"""

from dataclasses import dataclass

import numpy as np

FIRST = "first"
SECOND_DIAGONAL = "second-diagonal"
SECOND_MIXED = "second-mixed"

#: relative step for first-order stencils
EPS_FIRST = 1e-5
#: relative step for second-order stencils applied to per-step propagators
EPS_SECOND = 1e-3
SCALE_FLOOR = 1e-3


@dataclass(frozen=True)
class Stencil:
    order: str
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.order not in (FIRST, SECOND_DIAGONAL, SECOND_MIXED):
            raise ValueError(f"unknown stencil order {self.order!r}")

    @property
    def evaluations(self):
        """Extra function evaluations beyond the shared centre point."""
        return 2


def default_epsilon(theta_bar, j, order=1):
    """``1e-5 * max(|theta_j|, 1e-3)``; second-order per-step use takes ``1e-3``."""
    rel = EPS_FIRST if order == 1 else EPS_SECOND
    return rel * max(abs(float(theta_bar[j])), SCALE_FLOOR)


def _shifted(theta_bar, shifts):
    theta = np.array(theta_bar, dtype=float, copy=True)
    for j, delta in shifts:
        theta[j] += delta
    return theta


def _checked(value, where):
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"function returned non-finite value at {where}")
    return value


def _eval(f, theta_bar, shifts):
    theta = _shifted(theta_bar, shifts)
    return _checked(f(theta), theta)


def _eps(theta_bar, j, epsilon):
    eps = default_epsilon(theta_bar, j) if epsilon is None else epsilon
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    return eps


def fd_first(f, theta_bar, j, epsilon=None):
    """``(f(theta_j + eps) - f(theta_j - eps)) / (2 eps)``."""
    eps = _eps(theta_bar, j, epsilon)
    return (_eval(f, theta_bar, [(j, eps)]) - _eval(f, theta_bar, [(j, -eps)])) / (2 * eps)


def fd_second_diag(f, theta_bar, j, epsilon=None, center=None):
    """``(f(theta_j + eps) - 2 f(theta) + f(theta_j - eps)) / eps^2``."""
    eps = _eps(theta_bar, j, epsilon)
    f0 = _eval(f, theta_bar, []) if center is None else center
    return (_eval(f, theta_bar, [(j, eps)]) - 2 * f0 + _eval(f, theta_bar, [(j, -eps)])) / eps**2


def fd_second_mixed(f, theta_bar, i, j, epsilon=None, center=None):
    """Seven-point mixed stencil for ``d2f / dtheta_i dtheta_j`` (``i != j``).

    Only the ``(+,+)`` and ``(-,-)`` corners are new; the remaining points
    are shared with the diagonal stencils.
    """
    if i == j:
        raise ValueError("mixed stencil needs two distinct parameters")
    eps = _eps(theta_bar, j, epsilon)
    f0 = _eval(f, theta_bar, []) if center is None else center
    total = (
        _eval(f, theta_bar, [(i, eps), (j, eps)])
        - _eval(f, theta_bar, [(i, eps)])
        - _eval(f, theta_bar, [(j, eps)])
        + 2 * f0
        - _eval(f, theta_bar, [(i, -eps)])
        - _eval(f, theta_bar, [(j, -eps)])
        + _eval(f, theta_bar, [(i, -eps), (j, -eps)])
    )
    return total / (2 * eps**2)


def evaluation_count(m, include_mixed=False):
    """Function evaluations for value, gradient and Hessian diagonal (or full)."""
    if m < 0:
        raise ValueError("number of parameters must be non-negative")
    return 1 + m + m * m if include_mixed else 1 + 2 * m


def fd_jet(f, theta_bar, epsilon=None, mixed=True):
    """Value, gradient and Hessian of a scalar ``f`` by central differences.

    Evaluations are cached so the total cost matches :func:`evaluation_count`.
    """
    theta_bar = np.asarray(theta_bar, dtype=float)
    m = theta_bar.size
    eps = [_eps(theta_bar, j, epsilon if np.isscalar(epsilon) or epsilon is None else epsilon[j])
           for j in range(m)]
    cache = {}

    def z(*shifts):
        key = tuple(sorted(shifts))
        if key not in cache:
            cache[key] = float(_eval(f, theta_bar, [(j, s * eps[j]) for j, s in key]))
        return cache[key]

    f0 = z()
    grad = np.zeros(m)
    hess = np.full((m, m), np.nan)
    for j in range(m):
        fp, fm = z((j, 1)), z((j, -1))
        grad[j] = (fp - fm) / (2 * eps[j])
        hess[j, j] = (fp - 2 * f0 + fm) / eps[j] ** 2
    if mixed:
        for i in range(m):
            for j in range(i + 1, m):
                # the seven-point stencil assumes a common step
                if eps[i] != eps[j]:
                    e = min(eps[i], eps[j])
                    value = fd_second_mixed(f, theta_bar, i, j, e, center=f0)
                else:
                    e = eps[i]
                    value = (z((i, 1), (j, 1)) - z((i, 1)) - z((j, 1)) + 2 * f0
                             - z((i, -1)) - z((j, -1)) + z((i, -1), (j, -1))) / (2 * e * e)
                hess[i, j] = hess[j, i] = value
    return f0, grad, hess, len(cache)
