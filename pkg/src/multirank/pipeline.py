"""End-to-end rank test: rank map, weights, statistic and p-value."""

from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import BudgetExceededError, DegenerateSampleError
from .exact import (DEFAULT_BUDGET, exact_null_distribution, permutation_pvalue,
                    permutation_pvalue_labels)
from .rank_map import RankGrid, SampleSet, assign_ranks, build_grid
from .teststat import (KSampleTransform, TestOutcome, asymptotic_pvalue, k_sample_T,
                       null_covariance, quadratic_stat, two_sample_T, whitener)
from .weights import CenteredWeights, resolve_weights

MODES = ("asymptotic", "exact", "permutation")


def _two_sample_subset_stat(cw: CenteredWeights, L: np.ndarray):
    """Quadratic statistic as a function of the grid subset held by group 1."""
    U = cw.values @ L / math.sqrt(cw.grid.N)

    def stat(subsets):
        z = U[subsets].sum(axis=1)
        return np.einsum("ij,ij->i", z, z)

    return stat


def _k_sample_label_stat(cw: CenteredWeights, perm: np.ndarray, counts, L: np.ndarray):
    """Quadratic K-sample statistic as a function of a relabelling of the observations."""
    tr = KSampleTransform.from_counts(counts)
    K = counts.size
    rows = cw.values[perm] / math.sqrt(cw.grid.N)
    coef = tr.scaling[:, None] * tr.B  # K x (K-1)

    def stat(labels):
        labels = np.atleast_2d(labels)
        onehot = labels[:, :, None] == np.arange(K)
        blocks = np.einsum("bnk,nm->bkm", onehot, rows)
        T = np.einsum("bkm,kc->bcm", blocks, coef).reshape(labels.shape[0], -1)
        z = T @ L
        return np.einsum("ij,ij->i", z, z)

    return stat


def rank_test(sample: SampleSet, weights: str = "van_der_waerden", mode: str = "asymptotic",
              B: int = 9999, seed: int = 0, budget: int = DEFAULT_BUDGET,
              grid: RankGrid | None = None, cw: CenteredWeights | None = None) -> TestOutcome:
    """Test equality of the group laws of ``sample`` with a linear rank statistic.

    Parameters
    ----------
    sample : SampleSet
        Two groups give the two-sample statistic (group 1 is summed);
        more give the K-sample contrast statistic.
    weights : str
        Weight spec, see :func:`multirank.weights.resolve_weights`.
    mode : {'asymptotic', 'exact', 'permutation'}
        ``exact`` enumerates all grid subsets when there are two groups and
        the count fits ``budget``; otherwise it falls back to permutation
        draws and records a warning on the outcome.
    B : int
        Permutation draws.
    seed : int
        Seeds both the tie-breaking of the rank map and, through a separate
        stream, the permutation draws.
    grid, cw : optional
        Precomputed grid and centered weights, reused across calls in
        simulations.  ``cw`` must not depend on the data.

    Returns
    -------
    TestOutcome
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    N, K = sample.N, sample.K
    if K < 2:
        raise DegenerateSampleError("a test needs at least two groups")
    grid = grid if grid is not None else build_grid(N, sample.p)
    assign = assign_ranks(sample, grid, tie_seed=seed)
    if cw is None:
        cw = resolve_weights(weights, grid, sample)
    counts = sample.counts
    if K == 2:
        T = two_sample_T(assign, cw, sample.groups)
        cov = null_covariance(cw, int(counts[0]), int(counts[1]))
    else:
        T, cov = k_sample_T(assign, cw, sample.groups)
    Q, df = quadratic_stat(T, cov)
    if df == 0:
        raise DegenerateSampleError(f"weight {weights!r} is constant on the grid; the statistic has no variance")
    method, warning = mode, None
    perm_seed = np.random.SeedSequence([int(seed), 1])
    if mode == "asymptotic":
        p_value = asymptotic_pvalue(Q, df)
    else:
        L, _ = whitener(cov)
        if mode == "exact" and K > 2:
            method = "permutation"
            warning = "exact enumeration is implemented for two groups only; used permutation draws"
        elif mode == "exact":
            n = int(counts[1])
            stat = _two_sample_subset_stat(cw, L)
            observed = stat(np.sort(assign.perm[sample.groups == 1])[None, :])[0]
            try:
                dist = exact_null_distribution(stat, N, n, budget=budget)
                p_value = dist.pvalue(observed)
            except BudgetExceededError as exc:
                method = "permutation"
                warning = f"{exc}; fell back to {B} permutation draws"
        if method == "permutation":
            if K == 2:
                stat = _two_sample_subset_stat(cw, L)
                observed = stat(np.sort(assign.perm[sample.groups == 1])[None, :])[0]
                p_value = permutation_pvalue(stat, observed, N, int(counts[1]), B, seed=perm_seed)
            else:
                stat = _k_sample_label_stat(cw, assign.perm, counts, L)
                observed = stat(sample.groups[None, :])[0]
                p_value = permutation_pvalue_labels(stat, observed, sample.groups, B, seed=perm_seed)
    if warning:
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return TestOutcome(
        statistic=T.tolist(), Q=float(Q), df=int(df), p_value=float(min(max(p_value, 0.0), 1.0)),
        method=method, weights=cw.label if cw.label else weights, N=N,
        group_sizes=counts.tolist(), seed=seed, alpha_vector=(counts / N).tolist(), warning=warning)
