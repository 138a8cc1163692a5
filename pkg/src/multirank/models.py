"""Parametric families: scores, transports, pooled MLE and likelihood-ratio baselines.

Every family here has independent components, so the population transport
to the uniform cube is the vector of marginal CDFs and its inverse is the
vector of marginal quantiles.  The adaptive weight of a family is its score
composed with the inverse transport at the pooled MLE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, DomainError, InvalidArgumentError
from .rank_map import SampleSet
from .special import gaussian_cdf, gaussian_quantile
from .weights import WeightFn

FAMILY_NAMES = ("gaussian_location", "gaussian_location_scale", "logistic_location")


@dataclass(frozen=True)
class ModelParams:
    """Parameter vector of a family."""

    theta: np.ndarray

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float)).copy()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)


def _points(x, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, p) if p > 1 or x.size != 1 else x.reshape(1, 1)
    if x.ndim != 2 or x.shape[1] != p:
        raise InvalidArgumentError(f"expected points of dimension {p}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("points must be finite")
    return x


def _open_cube(u, p: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    u = u.reshape(-1, p) if u.ndim <= 1 else u
    if u.shape[1] != p:
        raise InvalidArgumentError(f"expected points of dimension {p}")
    if not np.all((u > 0.0) & (u < 1.0)):
        raise DomainError("transport inverse requires points strictly inside (0, 1)^p")
    return u


def _data(sample) -> np.ndarray:
    return sample.data if isinstance(sample, SampleSet) else np.asarray(sample, dtype=float)


class ModelFamily:
    """Base class of the independent-component families.

    Subclasses define ``name``, ``m`` and the per-point methods.  The
    ``theta`` argument of every method is a :class:`ModelParams` or an array.
    """

    name = "family"

    def __init__(self, p: int):
        if int(p) != p or p < 1:
            raise InvalidArgumentError("family dimension p must be a positive integer")
        self.p = int(p)

    def __repr__(self):
        return f"{type(self).__name__}(p={self.p})"

    @property
    def m(self) -> int:
        raise NotImplementedError

    def check_theta(self, theta) -> np.ndarray:
        t = theta.theta if isinstance(theta, ModelParams) else np.atleast_1d(np.asarray(theta, float))
        if t.shape != (self.m,) or not np.all(np.isfinite(t)):
            raise InvalidArgumentError(f"{self.name} needs a finite parameter vector of length {self.m}")
        return t

    # Interface -------------------------------------------------------------
    def score(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    def loglik(self, theta, x) -> float:
        raise NotImplementedError

    def transport_forward(self, theta, x) -> np.ndarray:
        raise NotImplementedError

    def transport_inverse(self, theta, u) -> np.ndarray:
        raise NotImplementedError

    def mle(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def sample(self, theta, size: int, rng) -> np.ndarray:
        u = rng.random((size, self.p))
        return self.transport_inverse(theta, np.clip(u, 1e-300, 1 - 2**-53))

    # Shared behaviour ------------------------------------------------------
    def pooled_mle(self, sample) -> ModelParams:
        """Maximizer of the likelihood of the pooled observations."""
        x = _points(_data(sample), self.p)
        if x.shape[0] < self.m + 1:
            raise DegenerateSampleError(
                f"{self.name} needs at least {self.m + 1} observations, got {x.shape[0]}")
        return ModelParams(self.mle(x))

    def effective_score(self, theta, u) -> np.ndarray:
        """Score composed with the inverse transport, ``z_theta(P_theta^{-1}(u))``.

        Families override this with the closed form, which avoids the
        round-off of mapping to data space and back.
        """
        return self.score(theta, self.transport_inverse(theta, u))

    def score_block(self, w: WeightFn, which: str) -> WeightFn:
        raise InvalidArgumentError(f"{self.name} has no score block {which!r}")


class GaussianLocation(ModelFamily):
    """``N(mu, I_p)`` with unknown mean ``mu``."""

    name = "gaussian_location"

    @property
    def m(self):
        return self.p

    def score(self, theta, x):
        return _points(x, self.p) - self.check_theta(theta)

    def loglik(self, theta, x):
        d = _points(x, self.p) - self.check_theta(theta)
        return float(-0.5 * np.sum(d * d) - 0.5 * d.size * np.log(2 * np.pi))

    def transport_forward(self, theta, x):
        return gaussian_cdf(_points(x, self.p) - self.check_theta(theta))

    def transport_inverse(self, theta, u):
        return self.check_theta(theta) + gaussian_quantile(_open_cube(u, self.p))

    def effective_score(self, theta, u):
        self.check_theta(theta)
        return gaussian_quantile(_open_cube(u, self.p))

    def mle(self, x):
        return x.mean(axis=0)


class GaussianLocationScale(ModelFamily):
    """Independent ``N(mu_i, sigma_i^2)`` components.

    Parameters are ordered ``(mu_1..mu_p, sigma_1..sigma_p)`` and so are the
    score components.
    """

    name = "gaussian_location_scale"

    @property
    def m(self):
        return 2 * self.p

    def check_theta(self, theta):
        t = super().check_theta(theta)
        if np.any(t[self.p:] <= 0):
            raise InvalidArgumentError("scale parameters must be strictly positive")
        return t

    def _split(self, theta):
        t = self.check_theta(theta)
        return t[: self.p], t[self.p:]

    def score(self, theta, x):
        mu, sd = self._split(theta)
        z = (_points(x, self.p) - mu) / sd
        return np.hstack([z / sd, (z * z - 1.0) / sd])

    def loglik(self, theta, x):
        mu, sd = self._split(theta)
        x = _points(x, self.p)
        z = (x - mu) / sd
        return float(-0.5 * np.sum(z * z) - x.shape[0] * np.sum(np.log(sd))
                     - 0.5 * z.size * np.log(2 * np.pi))

    def transport_forward(self, theta, x):
        mu, sd = self._split(theta)
        return gaussian_cdf((_points(x, self.p) - mu) / sd)

    def transport_inverse(self, theta, u):
        mu, sd = self._split(theta)
        return mu + sd * gaussian_quantile(_open_cube(u, self.p))

    def effective_score(self, theta, u):
        _, sd = self._split(theta)
        z = gaussian_quantile(_open_cube(u, self.p))
        return np.hstack([z / sd, (z * z - 1.0) / sd])

    def mle(self, x):
        mu = x.mean(axis=0)
        sd = np.sqrt(np.mean((x - mu) ** 2, axis=0))
        if np.any(sd <= 0):
            raise DegenerateSampleError("a coordinate has zero spread; scale MLE is undefined")
        return np.concatenate([mu, sd])

    def score_block(self, w, which):
        p = self.p
        cols = {"location": slice(0, p), "scale": slice(p, 2 * p)}.get(which)
        if cols is None:
            return super().score_block(w, which)
        return WeightFn(m=p, p=p, func=lambda u: w(u)[:, cols], label=f"{w.label}:{which}")


def _logistic_cdf(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LogisticLocation(ModelFamily):
    """Independent standard logistic components with unknown locations."""

    name = "logistic_location"

    @property
    def m(self):
        return self.p

    def score(self, theta, x):
        return 2.0 * _logistic_cdf(_points(x, self.p) - self.check_theta(theta)) - 1.0

    def loglik(self, theta, x):
        z = _points(x, self.p) - self.check_theta(theta)
        return float(np.sum(-z - 2.0 * np.logaddexp(0.0, -z)))

    def transport_forward(self, theta, x):
        return _logistic_cdf(_points(x, self.p) - self.check_theta(theta))

    def transport_inverse(self, theta, u):
        u = _open_cube(u, self.p)
        return self.check_theta(theta) + np.log(u) - np.log1p(-u)

    def effective_score(self, theta, u):
        self.check_theta(theta)
        return 2.0 * _open_cube(u, self.p) - 1.0

    def mle(self, x, tol: float = 1e-9, max_iter: int = 100):
        # The likelihood factorizes over axes, and each axis has a strictly
        # concave log-likelihood: damped Newton on the score equation.
        theta = np.median(x, axis=0)
        for j in range(self.p):
            xj = x[:, j]
            t = theta[j]
            g = np.sum(2.0 * _logistic_cdf(xj - t) - 1.0)
            for _ in range(max_iter):
                if abs(g) <= tol:
                    break
                F = _logistic_cdf(xj - t)
                h = 2.0 * np.sum(F * (1.0 - F))
                step = g / h
                while True:
                    t_new = t + step
                    g_new = np.sum(2.0 * _logistic_cdf(xj - t_new) - 1.0)
                    if abs(g_new) < abs(g) or abs(step) < 1e-15 * (1 + abs(t)):
                        break
                    step *= 0.5
                t, g = t_new, g_new
            theta[j] = t
        return theta


_FAMILIES = {
    "gaussian_location": GaussianLocation,
    "gaussian_location_scale": GaussianLocationScale,
    "logistic_location": LogisticLocation,
}


def get_family(name: str, p: int) -> ModelFamily:
    """Instantiate a family by its CLI name."""
    try:
        return _FAMILIES[name](p)
    except KeyError:
        raise InvalidArgumentError(
            f"unknown family {name!r}; expected one of {', '.join(FAMILY_NAMES)}") from None


def score(fam: ModelFamily, theta, x) -> np.ndarray:
    """Gradient in ``theta`` of the log-density at ``x``."""
    return fam.score(theta, x)


def transport_forward(fam: ModelFamily, theta, x) -> np.ndarray:
    return fam.transport_forward(theta, x)


def transport_inverse(fam: ModelFamily, theta, u) -> np.ndarray:
    return fam.transport_inverse(theta, u)


def pooled_mle(fam: ModelFamily, pooled) -> ModelParams:
    return fam.pooled_mle(pooled)


def adaptive_weight(fam: ModelFamily, theta) -> WeightFn:
    """Score composed with the inverse transport: ``u -> z_theta(P_theta^{-1}(u))``."""
    theta = ModelParams(fam.check_theta(theta))
    return WeightFn(
        m=fam.m, p=fam.p,
        func=lambda u: fam.effective_score(theta, u),
        label=f"model:{fam.name}")


def _group_arrays(samples: SampleSet):
    return [samples.data[samples.groups == k] for k in range(samples.K)]


def glr_statistic(fam: ModelFamily, samples: SampleSet, known_variance: bool = True) -> float:
    """Likelihood-ratio statistic ``-2 log lambda`` for equality of all group laws.

    Parameters
    ----------
    fam : ModelFamily
    samples : SampleSet
        Pooled data with ``K >= 2`` groups.
    known_variance : bool, optional
        Only used by ``gaussian_location``.  When False, the groups share an
        unknown diagonal covariance that is profiled out.

    Returns
    -------
    float
    """
    if samples.K < 2:
        raise InvalidArgumentError("the likelihood ratio needs at least two groups")
    groups = _group_arrays(samples)
    min_size = 1 if isinstance(fam, GaussianLocation) else 2
    for k, g in enumerate(groups):
        if g.shape[0] < min_size:
            raise DegenerateSampleError(f"group {k} has too few observations for {fam.name}")
    if isinstance(fam, GaussianLocation):
        grand = samples.data.mean(axis=0)
        if known_variance:
            return float(sum(g.shape[0] * np.sum((g.mean(axis=0) - grand) ** 2) for g in groups))
        within = sum(np.sum((g - g.mean(axis=0)) ** 2, axis=0) for g in groups) / samples.N
        total = np.mean((samples.data - grand) ** 2, axis=0)
        if np.any(within <= 0):
            raise DegenerateSampleError("zero within-group spread on some coordinate")
        return float(samples.N * np.sum(np.log(total / within)))
    ll_pooled = fam.loglik(fam.mle(samples.data), samples.data)
    ll_groups = sum(fam.loglik(fam.mle(g), g) for g in groups)
    return float(max(2.0 * (ll_groups - ll_pooled), 0.0))
