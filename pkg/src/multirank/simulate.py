"""Monte Carlo harness: size calibration, local power, efficiency and robustness studies.

Local alternatives are realized literally at finite ``N``: group ``k`` is
drawn as ``X * (1 + scale_k / sqrt(N)) + location_k / sqrt(N)`` with ``X``
from the null law.  Replication ``r`` uses the generator
``default_rng([seed, r])``, so every study is reproducible bit for bit and
independent of the order in which replications run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize, stats

from .errors import InvalidArgumentError
from .models import get_family, glr_statistic
from .pipeline import rank_test
from .rank_map import SampleSet, build_grid
from .special import chi2_quantile, chi2_sf, gaussian_cdf, gaussian_quantile
from .teststat import helmert_basis
from .weights import builtin, center_on_grid, gram, resolve_weights, stack

NULLS = ("gaussian", "exponential", "t3")


@dataclass(frozen=True)
class SimConfig:
    """Specification of a Monte Carlo study.

    Parameters
    ----------
    group_sizes : tuple of int
        ``n_1 .. n_K``.
    p : int
        Dimension.
    weights : str
        Weight spec for the rank test.
    null : {'gaussian', 'exponential', 't3'}
        Law of the unperturbed coordinates (independent components).
    location, scale : array_like, shape (K, p), optional
        Local effects per group; broadcast from scalars or ``(K,)``.
    R : int
        Replications.
    alpha : float
        Nominal size.
    seed : int
    mode : {'asymptotic', 'exact', 'permutation'}
    B : int
        Permutation draws when ``mode`` is not asymptotic.
    """

    group_sizes: tuple
    p: int = 1
    weights: str = "van_der_waerden"
    null: str = "gaussian"
    location: object = 0.0
    scale: object = 0.0
    R: int = 1000
    alpha: float = 0.05
    seed: int = 0
    mode: str = "asymptotic"
    B: int = 999

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.group_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise InvalidArgumentError("need at least two non-empty groups")
        if self.R < 1:
            raise InvalidArgumentError("need R >= 1 replications")
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidArgumentError("nominal size must lie in [0, 1)")
        if self.null not in NULLS:
            raise InvalidArgumentError(f"null must be one of {NULLS}")
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "location", self._effects(self.location))
        object.__setattr__(self, "scale", self._effects(self.scale))

    def _effects(self, e) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        K = len(self.group_sizes)
        if e.ndim == 1 and e.size == K:
            e = e[:, None]
        e = np.broadcast_to(e, (K, self.p)).copy()
        e.setflags(write=False)
        return e

    @property
    def N(self) -> int:
        return sum(self.group_sizes)

    @property
    def K(self) -> int:
        return len(self.group_sizes)

    def scaled(self, c: float) -> "SimConfig":
        """Same study with both effect arrays multiplied by ``c``."""
        return replace(self, location=self.location * c, scale=self.scale * c)


def _null_draw(rng, null: str, shape):
    if null == "gaussian":
        return rng.standard_normal(shape)
    if null == "exponential":
        return rng.standard_exponential(shape)
    return rng.standard_t(3, shape)


def generate(cfg: SimConfig, rng: np.random.Generator) -> SampleSet:
    """Draw one pooled sample under the configured (local) alternative."""
    root = math.sqrt(cfg.N)
    parts = []
    for k, n in enumerate(cfg.group_sizes):
        x = _null_draw(rng, cfg.null, (n, cfg.p))
        parts.append(x * (1.0 + cfg.scale[k] / root) + cfg.location[k] / root)
    return SampleSet.from_groups(*parts)


def hotelling_known(sample: SampleSet) -> float:
    """Mean-contrast chi-square statistic at identity covariance.

    Contrasts of the ``sqrt(n_k)``-scaled group means along a basis of the
    complement of ``sqrt(alpha)``; equal in law to the Gaussian-location
    likelihood ratio and computed independently of it.
    """
    counts = sample.counts
    means = np.vstack([sample.data[sample.groups == k].mean(axis=0) for k in range(sample.K)])
    d = np.sqrt(counts)[:, None] * means
    r = np.sqrt(counts / sample.N)
    # Orthonormal basis of the complement of r: rotate the Helmert basis.
    Q, _ = np.linalg.qr(np.column_stack([r, helmert_basis(sample.K)]))
    C = Q[:, 1:]
    z = C.T @ d
    return float(np.sum(z * z))


def _fixed_weights(spec: str) -> bool:
    return "model:" not in spec


def replicate(cfg: SimConfig, specs: dict, comparators: tuple = ("glr",)) -> dict:
    """Run the study and collect p-values.

    Parameters
    ----------
    cfg : SimConfig
    specs : dict of str -> str
        Test name to weight spec; every spec is applied to the same data.
    comparators : tuple of {'glr', 'glr_unknown_variance', 'hotelling'}
        Gaussian-location parametric comparators.

    Returns
    -------
    dict of str -> ndarray of shape (R,)
    """
    N, p, K = cfg.N, cfg.p, cfg.K
    grid = build_grid(N, p)
    cache = {name: resolve_weights(spec, grid) for name, spec in specs.items() if _fixed_weights(spec)}
    fam = get_family("gaussian_location", p)
    df_param = (K - 1) * p
    out = {name: np.empty(cfg.R) for name in (*specs, *comparators)}
    for r in range(cfg.R):
        rng = np.random.default_rng([cfg.seed, r])
        sample = generate(cfg, rng)
        tie_seed = int(rng.integers(2**31))
        for name, spec in specs.items():
            res = rank_test(sample, spec, mode=cfg.mode, B=cfg.B, seed=tie_seed,
                            grid=grid, cw=cache.get(name))
            out[name][r] = res.p_value
        for name in comparators:
            if name == "glr":
                q = glr_statistic(fam, sample)
            elif name == "glr_unknown_variance":
                q = glr_statistic(fam, sample, known_variance=False)
            elif name == "hotelling":
                q = hotelling_known(sample)
            else:
                raise InvalidArgumentError(f"unknown comparator {name!r}")
            out[name][r] = chi2_sf(q, df_param)
    return out


@dataclass
class SimResult:
    """Rejection rates of several tests in one study."""

    rates: dict
    se: dict
    R: int
    alpha: float

    def row(self) -> dict:
        d = {"R": self.R, "alpha": self.alpha}
        for k in self.rates:
            d[f"{k}_rate"] = self.rates[k]
            d[f"{k}_se"] = self.se[k]
        return d


def _summarize(pvals: dict, R: int, alpha: float) -> SimResult:
    rates = {k: float(np.mean(v <= alpha)) for k, v in pvals.items()}
    se = {k: math.sqrt(r * (1 - r) / R) for k, r in rates.items()}
    return SimResult(rates=rates, se=se, R=R, alpha=alpha)


def calibrate_null(cfg: SimConfig, comparators: tuple = ("glr",)) -> SimResult:
    """Rejection rates with all local effects set to zero."""
    null_cfg = cfg.scaled(0.0)
    pv = replicate(null_cfg, {"rank": cfg.weights}, comparators)
    return _summarize(pv, cfg.R, cfg.alpha)


# ---------------------------------------------------------------------------
# Analytic local power


def _effective_scores(p: int):
    """Gaussian effective scores for location then scale, per axis."""
    loc = builtin("van_der_waerden", p)
    scl = builtin("klotz", p)
    return stack([loc, scl])


def noncentrality(cfg: SimConfig, c: float = 1.0) -> tuple[float, int]:
    """Limiting noncentrality and degrees of freedom of the rank test under a Gaussian null.

    With effective scores ``zeta = (Phi^{-1}, Phi^{-2} - 1)`` per axis and
    group effects ``delta_k = c (location_k, scale_k)``, the noncentrality is
    ``sum_k alpha_k (delta_k - delta_bar)^T H_wz^T H_w^+ H_wz (delta_k - delta_bar)``;
    Gram matrices are taken on the rank grid.
    """
    if cfg.null != "gaussian":
        raise InvalidArgumentError("analytic power is available for the Gaussian null only")
    grid = build_grid(cfg.N, cfg.p)
    cw = resolve_weights(cfg.weights, grid, _reference_sample(cfg))
    cz = center_on_grid(_effective_scores(cfg.p), grid)
    Hw = gram(cw)
    Hwz = gram(cw, cz)
    M = Hwz.T @ np.linalg.pinv(Hw, rcond=1e-10, hermitian=True) @ Hwz
    alpha = np.asarray(cfg.group_sizes, float) / cfg.N
    delta = c * np.hstack([cfg.location, cfg.scale])
    dc = delta - alpha @ delta
    nc = float(np.einsum("k,ki,ij,kj->", alpha, dc, M, dc))
    rank = int(np.linalg.matrix_rank(Hw, tol=1e-10 * max(np.abs(Hw).max(), 1e-300), hermitian=True))
    return nc, (cfg.K - 1) * rank


def _reference_sample(cfg: SimConfig) -> SampleSet:
    # Adaptive Gaussian weights are parameter-free up to scale, so any sample
    # from the null serves to resolve a model weight for analytic work.
    return generate(cfg.scaled(0.0), np.random.default_rng([cfg.seed, 2**31 - 1]))


def analytic_power(cfg: SimConfig, c: float = 1.0) -> float:
    """Noncentral chi-square power at nominal size ``cfg.alpha``."""
    nc, df = noncentrality(cfg, c)
    crit = chi2_quantile(1.0 - cfg.alpha, df)
    return float(stats.ncx2.sf(crit, df, nc)) if nc > 0 else float(cfg.alpha)


def tune_effect(cfg: SimConfig, target: float = 0.6) -> float:
    """Multiplier of the configured effects at which the analytic power equals ``target``."""
    if not cfg.alpha < target < 1.0:
        raise InvalidArgumentError("target power must lie between the nominal size and 1")
    if noncentrality(cfg, 1.0)[0] <= 0:
        raise InvalidArgumentError("configured effects have zero noncentrality")
    hi = 1.0
    while analytic_power(cfg, hi) < target:
        hi *= 2.0
    return float(optimize.brentq(lambda c: analytic_power(cfg, c) - target, 0.0, hi, xtol=1e-10))


@dataclass
class PowerReport:
    """Rejection rates along a grid of effect multipliers.

    ``rates[name][i]`` is the rate of test ``name`` at ``effects[i]``;
    ``analytic`` holds the noncentral chi-square prediction (NaN when not
    available).
    """

    effects: list
    rates: dict
    se: dict
    analytic: list
    R: int

    def rows(self):
        for i, e in enumerate(self.effects):
            row = {"effect": e, "analytic": self.analytic[i]}
            for k in self.rates:
                row[f"{k}_rate"] = self.rates[k][i]
                row[f"{k}_se"] = self.se[k][i]
            yield row


def power_curve(cfg: SimConfig, effects, comparators: tuple = ()) -> PowerReport:
    """Monte Carlo and analytic power of the rank test at ``effects`` times the configured effects."""
    effects = [float(e) for e in effects]
    names = ("rank", *comparators)
    rates = {k: [] for k in names}
    se = {k: [] for k in names}
    analytic = []
    for e in effects:
        sub = cfg.scaled(e)
        res = _summarize(replicate(sub, {"rank": cfg.weights}, comparators), cfg.R, cfg.alpha)
        for k in names:
            rates[k].append(res.rates[k])
            se[k].append(res.se[k])
        try:
            analytic.append(analytic_power(cfg, e))
        except InvalidArgumentError:
            analytic.append(float("nan"))
    return PowerReport(effects=effects, rates=rates, se=se, analytic=analytic, R=cfg.R)


def efficiency_report(cfg: SimConfig, target: float = 0.6) -> dict:
    """Rank test against the likelihood ratio and the mean-contrast test at a tuned local alternative.

    The configured effects set the direction; their scale is tuned so the
    rank test's analytic power equals ``target``.
    """
    c = tune_effect(cfg, target)
    alt = cfg.scaled(c)
    res = _summarize(replicate(alt, {"rank": cfg.weights}, ("glr", "hotelling")), cfg.R, cfg.alpha)
    return {"multiplier": c, "analytic": analytic_power(cfg, c), "rates": res.rates, "se": res.se, "R": cfg.R}


# ---------------------------------------------------------------------------
# Nuisance projection and consistency

LOCATION = "model:gaussian_location_scale:location"
SCALE = "model:gaussian_location_scale:scale"
PROJECTED = f"proj:{LOCATION}/{SCALE}"
OMNIBUS = "model:gaussian_location_scale"


def nuisance_robustness(group_sizes=(200, 200), scale_effect: float = 4.0, target: float = 0.6,
                        R: int = 10000, alpha: float = 0.05, seed: int = 0) -> dict:
    """Projected location test under scale-only and location-only local alternatives.

    The location effect is tuned so the pure location test has analytic
    power ``target``.  All tests in one study see the same data.
    """
    base = SimConfig(group_sizes=tuple(group_sizes), p=1, weights=LOCATION, R=R, alpha=alpha, seed=seed)
    K = base.K
    loc_dir = np.zeros(K)
    loc_dir[-1] = 1.0
    loc_cfg = replace(base, location=loc_dir)
    c = tune_effect(loc_cfg, target)
    specs = {"projected": PROJECTED, "location": LOCATION, "omnibus": OMNIBUS}
    scale_cfg = replace(base, scale=loc_dir * scale_effect, seed=seed + 1)
    out = {"location_multiplier": c, "scale_effect": scale_effect, "R": R}
    for label, cfg in (("scale_only", scale_cfg), ("location_only", loc_cfg.scaled(c))):
        res = _summarize(replicate(cfg, specs, ()), R, alpha)
        out[label] = {"rates": res.rates, "se": res.se}
    return out


def consistency_check(Ns=(50, 100, 200, 400), shift: float = 1.0, weights: str = "mann_whitney",
                      scale_ratio: float = 2.0, R: int = 1000, alpha: float = 0.05, seed: int = 0):
    """Power against fixed alternatives as ``N`` grows.

    Two alternatives per ``N`` (equal group sizes): a location shift by
    ``shift``, and a symmetric scale change by ``scale_ratio`` under which
    ``P(X < Y) = 1/2``.

    Returns
    -------
    list of dict
        Rows with keys ``N``, ``shift_power``, ``symmetric_power`` and
        their standard errors.
    """
    rows = []
    for N in Ns:
        n = N // 2
        cfg = SimConfig(group_sizes=(N - n, n), p=1, weights=weights, R=R, alpha=alpha, seed=seed)
        grid = build_grid(N, 1)
        cw = resolve_weights(weights, grid)
        hits = {"shift": 0, "symmetric": 0}
        for r in range(R):
            rng = np.random.default_rng([seed, N, r])
            x = rng.standard_normal(N - n)
            y = rng.standard_normal(n)
            for key, yy in (("shift", y + shift), ("symmetric", y * scale_ratio)):
                res = rank_test(SampleSet.from_groups(x, yy), weights, grid=grid, cw=cw,
                                seed=int(rng.integers(2**31)))
                hits[key] += res.p_value <= cfg.alpha
        row = {"N": N}
        for key, h in hits.items():
            rate = h / R
            row[f"{key}_power"] = rate
            row[f"{key}_se"] = math.sqrt(rate * (1 - rate) / R)
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Joint location/scale testing versus Bonferroni


def joint_power(mu_tilde_sq, sigma_tilde_sq, alpha):
    """Large-``p`` power of the stacked location/scale test, ``1 - Phi(z_{1-alpha} - mu2 - 2 sigma2)``."""
    alpha = np.asarray(alpha, dtype=float)
    z = gaussian_quantile(1.0 - alpha)
    return 1.0 - gaussian_cdf(z - mu_tilde_sq - 2.0 * sigma_tilde_sq)


def bonferroni_power(mu_tilde_sq, sigma_tilde_sq, alpha):
    """Large-``p`` power of separate location and scale tests at level ``alpha / 2`` each."""
    alpha = np.asarray(alpha, dtype=float)
    z = gaussian_quantile(1.0 - alpha / 2.0)
    r2 = math.sqrt(2.0)
    return 1.0 - gaussian_cdf(z - r2 * mu_tilde_sq) * gaussian_cdf(z - 2.0 * r2 * sigma_tilde_sq)


PAPER_PAIRS = ((0.5, 0.5), (0.5, 0.75), (0.75, 0.5))


def joint_vs_bonferroni(mu_tilde_sq: float, sigma_tilde_sq: float, alphas) -> dict:
    """Both closed-form power curves over a grid of nominal sizes."""
    if mu_tilde_sq < 0 or sigma_tilde_sq < 0:
        raise InvalidArgumentError("effect sizes must be non-negative")
    alphas = np.asarray(alphas, dtype=float)
    return {"alpha": alphas,
            "joint": np.atleast_1d(joint_power(mu_tilde_sq, sigma_tilde_sq, alphas)),
            "bonferroni": np.atleast_1d(bonferroni_power(mu_tilde_sq, sigma_tilde_sq, alphas))}


def joint_power_mc(mu_tilde_sq: float, sigma_tilde_sq: float, alpha: float = 0.05, p: int = 200,
                   N: int = 2000, R: int = 4000, seed: int = 0) -> dict:
    """Monte Carlo power of the stacked van der Waerden / Klotz test in high dimension.

    Coordinates are independent, so each axis is ranked on its own (the
    univariate rank map) and the ``2p`` components are combined with their
    exact per-axis permutation covariance.  The per-axis local effects are
    chosen so that the total noncentrality is
    ``2 sqrt(p) (mu2 + 2 sigma2)``, the scaling behind :func:`joint_power`.
    """
    k = N // 2
    n = N - k
    a = k / N
    loc = math.sqrt(2.0 * math.sqrt(p) * mu_tilde_sq / (p * a * (1 - a)))
    scl = math.sqrt(2.0 * math.sqrt(p) * sigma_tilde_sq / (p * a * (1 - a)))
    grid = build_grid(N, 1)
    cw = center_on_grid(stack([builtin("van_der_waerden", 1), builtin("klotz", 1)]), grid)
    V = cw.values
    cov = a * (1 - a) * N / (N - 1) * gram(cw)
    Linv = np.linalg.cholesky(np.linalg.inv(cov))
    crit = chi2_quantile(1.0 - alpha, 2 * p)
    root = math.sqrt(N)
    hits = 0
    for r in range(R):
        rng = np.random.default_rng([seed, r])
        x = rng.standard_normal((p, k))
        y = rng.standard_normal((p, n)) * (1.0 + scl / root) + loc / root
        # Continuous data have no ties.  Row j of ``held`` marks the sorted
        # positions along axis j that belong to the second sample.
        held = np.argsort(np.hstack([x, y]), axis=1) >= k
        T = held @ V / root  # (p, 2)
        U = T @ Linv
        hits += float(np.sum(U * U)) > crit
    rate = hits / R
    return {"power": rate, "se": math.sqrt(rate * (1 - rate) / R),
            "formula": float(joint_power(mu_tilde_sq, sigma_tilde_sq, alpha)),
            "chi2_limit": float(stats.ncx2.sf(crit, 2 * p, 2 * math.sqrt(p) * (mu_tilde_sq + 2 * sigma_tilde_sq))),
            "p": p, "N": N, "R": R}


# ---------------------------------------------------------------------------
# Scale-test noncentralities


SCALE_WEIGHTS = ("siegel_tukey", "mood", "klotz")


@dataclass
class NoncentralityEstimate:
    """Monte Carlo quadrature estimate of a scale-test noncentrality.

    Attributes
    ----------
    beta : float
        Noncentrality of the unit-variance weight against the scale score.
    se : float
        Its Monte Carlo standard error.
    efficiency : float
        ``beta^2 / (2 p)``, relative to the Fisher information ``2 p`` of the
        common Gaussian scale.
    efficiency_se : float
    p : int
    n_points : int
    """

    weight: str
    beta: float
    se: float
    efficiency: float
    efficiency_se: float
    p: int
    n_points: int

    @property
    def beta_per_axis(self) -> float:
        return self.beta / math.sqrt(self.p)

    @property
    def se_per_axis(self) -> float:
        return self.se / math.sqrt(self.p)


def _scale_weight(name: str, u: np.ndarray):
    p = u.shape[1]
    if name == "siegel_tukey":
        return math.sqrt(48.0 / p) * (np.abs(u - 0.5).sum(axis=1) - p / 4.0)
    if name == "mood":
        return math.sqrt(180.0 / p) * (((u - 0.5) ** 2).sum(axis=1) - p / 12.0)
    if name == "klotz":
        z = gaussian_quantile(u)
        return (np.sum(z * z, axis=1) - p) / math.sqrt(2.0 * p)
    raise InvalidArgumentError(f"scale weight must be one of {SCALE_WEIGHTS}")


def scale_shift_noncentrality(weight_name: str, p: int, family: str = "gaussian",
                              n_points: int = 2**20, seed: int = 0, constant_score: bool = False,
                              chunk: int = 2**18) -> NoncentralityEstimate:
    """Estimate ``-E[w(U) <P^{-1}(U), z(P^{-1}(U))>]`` for a unit-variance scale weight.

    ``U`` is uniform on the cube, ``P^{-1}`` the product Gaussian quantile
    map and ``z`` the Gaussian location score, so the inner product is
    ``||Phi^{-1}(U)||^2``.  With ``constant_score`` the inner product is
    replaced by 1, a sanity check whose expectation is zero.
    """
    if family != "gaussian":
        raise InvalidArgumentError("only the product Gaussian reference law is supported")
    if n_points < 2:
        raise InvalidArgumentError("need at least two quadrature points")
    rng = np.random.default_rng([seed, p])
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_points:
        m = min(chunk, n_points - done)
        u = rng.random((m, p))
        u = np.clip(u, 2**-60, 1 - 2**-53)
        w = _scale_weight(weight_name, u)
        if constant_score:
            inner = np.ones(m)
        else:
            z = gaussian_quantile(u)
            inner = np.sum(z * z, axis=1)
        f = -w * inner
        total += float(f.sum())
        total_sq += float((f * f).sum())
        done += m
    mean = total / n_points
    var = max(total_sq / n_points - mean * mean, 0.0)
    se = math.sqrt(var / n_points)
    eff = mean * mean / (2.0 * p)
    return NoncentralityEstimate(weight=weight_name, beta=mean, se=se, efficiency=eff,
                                 efficiency_se=2.0 * abs(mean) * se / (2.0 * p), p=p, n_points=n_points)


# ---------------------------------------------------------------------------
# Output


def write_csv(path, rows, fieldnames=None):
    """Write dict rows to CSV with round-tripping float formatting."""
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=fieldnames)
        out.writeheader()
        for row in rows:
            out.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                          for k, v in row.items()})
