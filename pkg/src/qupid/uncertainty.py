"""Second-order moment propagation from observable jets.

Given the value, gradient ``g`` and Hessian ``H`` of an observable at the
parameter mean and the parameter covariance ``C``::

    mean     = Z + 1/2 sum_ij H_ij C_ij
    variance = g^T C g + 1/2 tr(H C H C)

The mean expression holds for any symmetric distribution; the variance
relies on Gaussian fourth moments.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParameterDistribution:
    names: tuple
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        names = tuple(self.names)
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        m = len(names)
        if mean.shape != (m,) or cov.shape != (m, m):
            raise ValueError(f"distribution shapes inconsistent: {m} names, mean {mean.shape}, cov {cov.shape}")
        if len(set(names)) != m:
            raise ValueError("parameter names must be unique")
        if m and np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance matrix is not symmetric")
        if np.any(np.diag(cov) < 0):
            raise ValueError("covariance has negative variances")
        if m:
            smallest = np.linalg.eigvalsh(cov)[0]
            if smallest < -1e-10 * max(np.trace(cov), np.finfo(float).tiny):
                raise ValueError(f"covariance is not positive semidefinite (eigenvalue {smallest:.3e})")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def independent(cls, names, mean, sigmas):
        sigmas = np.asarray(sigmas, dtype=float)
        return cls(tuple(names), mean, np.diag(sigmas**2))

    @property
    def n_params(self):
        return len(self.names)

    @property
    def sigmas(self):
        return np.sqrt(np.diag(self.covariance))

    @property
    def is_independent(self):
        cov = self.covariance
        return bool(np.all(cov == np.diag(np.diag(cov))))

    def scaled(self, factor):
        """Same mean, covariance multiplied by ``factor**2``."""
        return ParameterDistribution(self.names, self.mean, self.covariance * factor**2)


def _check(jet, dist):
    if jet.grad.size != dist.n_params:
        raise ValueError(f"jet has {jet.grad.size} parameters, distribution has {dist.n_params}")


def _weighted_hessian(jet, dist):
    # unpropagated Hessian entries are NaN; they only matter where C_ij != 0
    cov = dist.covariance
    needed = cov != 0
    if np.any(np.isnan(jet.hess[needed])):
        raise ValueError("Hessian entries required by the covariance were not propagated")
    return np.where(needed, jet.hess, 0.0)


def mean_estimate(jet, dist):
    _check(jet, dist)
    h = _weighted_hessian(jet, dist)
    return jet.value + 0.5 * float(np.sum(h * dist.covariance))


def variance_estimate(jet, dist):
    _check(jet, dist)
    cov = dist.covariance
    if np.any(np.isnan(jet.hess)) and np.any(cov != 0):
        raise ValueError("variance needs the full Hessian")
    g, h = jet.grad, np.nan_to_num(jet.hess)
    linear = float(g @ cov @ g)
    hc = h @ cov
    quartic = 0.5 * float(np.trace(hc @ hc))
    var = linear + quartic
    if var < 0:
        scale = abs(linear) + abs(quartic)
        if var < -1e-12 * scale and var < -1e-15:
            raise ArithmeticError(f"negative variance {var:.3e} beyond round-off")
        var = 0.0
    return var


def error_contributions(jet, dist):
    """Per-parameter shares of the mean shift.

    A vector ``1/2 H_jj sigma_j^2`` for independent parameters, otherwise the
    matrix ``1/2 H_ij C_ij``. Either way the entries sum to the mean shift.
    """
    _check(jet, dist)
    h = _weighted_hessian(jet, dist)
    terms = 0.5 * h * dist.covariance
    return np.diag(terms).copy() if dist.is_independent else terms


def wick_moment(indices, dist):
    """``E[prod_k (theta_{i_k} - mean)]`` for a zero-mean Gaussian by pair partitions."""
    idx = list(indices)
    for i in idx:
        if not 0 <= i < dist.n_params:
            raise IndexError(f"parameter index {i} out of range")
    cov = dist.covariance

    def pairings(items):
        if not items:
            return 1.0
        if len(items) % 2:
            return 0.0
        first, rest = items[0], items[1:]
        total = 0.0
        for k, partner in enumerate(rest):
            c = cov[first, partner]
            if c != 0.0:
                total += c * pairings(rest[:k] + rest[k + 1:])
        return total

    return pairings(idx)


@dataclass
class UncertaintyReport:
    """Time series of second-order uncertainty estimates for one observable."""

    label: str
    names: tuple
    times: np.ndarray
    value_at_mean: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    contributions: np.ndarray
    bounds: tuple = (-np.inf, np.inf)

    @property
    def std(self):
        return np.sqrt(self.variance)

    @property
    def shift(self):
        return self.mean - self.value_at_mean

    def final(self):
        return {
            "time": float(self.times[-1]),
            "value_at_mean": float(self.value_at_mean[-1]),
            "mean": float(self.mean[-1]),
            "variance": float(self.variance[-1]),
            "contributions": self.contributions[-1].tolist(),
        }


def band(mean, std, bounds, width=2.0):
    lo, hi = bounds
    low = np.minimum(mean, np.clip(mean - width * std, lo, hi))
    high = np.maximum(mean, np.clip(mean + width * std, lo, hi))
    return low, high


def build_report(label, times, jets, dist, bounds=(-np.inf, np.inf), with_variance=True):
    """Assemble an :class:`UncertaintyReport` from observable jets at each time."""
    times = np.asarray(times, dtype=float)
    values = np.array([j.value for j in jets])
    means = np.array([mean_estimate(j, dist) for j in jets])
    if with_variance:
        variances = np.array([variance_estimate(j, dist) for j in jets])
    else:
        variances = np.full(len(jets), np.nan)
    contribs = np.array([error_contributions(j, dist) for j in jets])
    low, high = band(means, np.sqrt(variances), bounds)
    return UncertaintyReport(label, dist.names, times, values, means, variances, low, high, contribs, tuple(bounds))
