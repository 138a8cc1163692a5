"""Linear rank statistics, their permutation covariance and chi-square calibration.

Two-sample statistic: ``T = N^{-1/2} * sum of centered weight rows over the
grid points held by group 1``.  Under the null the held points are a
uniformly random subset, so ``T`` has mean zero and covariance
``alpha (1 - alpha) N / (N - 1) * H`` exactly, where ``H`` is the empirical
Gram matrix and ``alpha`` the fraction of observations in group 0.

K-sample statistic: per-group block sums are scaled by ``1/sqrt(n_k)`` and
contracted with a Helmert basis of the contrasts orthogonal to the all-ones
vector, giving a ``(K - 1) m`` vector with Kronecker-structured covariance.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .rank_map import RankAssignment
from .special import chi2_sf
from .weights import CenteredWeights, gram

PINV_RTOL = 1e-10


def _labels(groups, N: int) -> np.ndarray:
    g = np.asarray(groups)
    if g.shape != (N,):
        raise InvalidArgumentError(f"need one group label per observation ({N}), got shape {g.shape}")
    return g.astype(np.int64)


def _check_grid(assign: RankAssignment, cw: CenteredWeights):
    if not assign.grid.same_as(cw.grid):
        raise InvalidArgumentError("rank assignment and weights use different grids")


def two_sample_T(assign: RankAssignment, cw: CenteredWeights, groups) -> np.ndarray:
    """Two-sample statistic of the observations labelled 1.

    Parameters
    ----------
    assign : RankAssignment
    cw : CenteredWeights
    groups : array_like of int
        Labels in ``{0, 1}``, both present.

    Returns
    -------
    ndarray, shape (m,)
    """
    _check_grid(assign, cw)
    g = _labels(groups, assign.grid.N)
    if set(np.unique(g).tolist()) != {0, 1}:
        raise InvalidArgumentError("two_sample_T needs exactly the two labels 0 and 1")
    rows = assign.perm[g == 1]
    return cw.values[rows].sum(axis=0) / np.sqrt(assign.grid.N)


def null_covariance(cw: CenteredWeights, k: int, n: int) -> np.ndarray:
    """Exact permutation covariance of :func:`two_sample_T`.

    ``k`` and ``n`` are the sizes of groups 0 and 1.
    """
    N = cw.grid.N
    if k + n != N or k < 0 or n < 0:
        raise InvalidArgumentError(f"group sizes {k} + {n} do not add up to N = {N}")
    a = k / N
    return a * (1.0 - a) * N / (N - 1) * gram(cw)


def whitener(cov: np.ndarray, rtol: float = PINV_RTOL):
    """Factor ``L`` with ``L L^T`` the pseudoinverse of ``cov``.

    Returns ``(L, df)`` where ``df`` is the numerical rank; eigenvalues at or
    below ``rtol`` times the largest are discarded.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    ev, U = np.linalg.eigh(0.5 * (cov + cov.T))
    top = ev.max(initial=0.0)
    keep = ev > rtol * top if top > 0 else np.zeros(ev.shape, bool)
    return U[:, keep] / np.sqrt(ev[keep]), int(keep.sum())


def quadratic_stat(T, cov) -> tuple[float, int]:
    """Quadratic form ``T^T cov^+ T`` and the numerical rank of ``cov``.

    Examples
    --------
    >>> quadratic_stat([0.25], [[0.25 * 4 / 3 * 0.078125]])
    (2.4000000000000004, 1)
    """
    T = np.atleast_1d(np.asarray(T, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (T.size, T.size):
        raise InvalidArgumentError(f"statistic has length {T.size}, covariance is {cov.shape}")
    L, df = whitener(cov)
    z = T @ L
    return max(float(z @ z), 0.0), df


def helmert_basis(K: int) -> np.ndarray:
    """Orthonormal ``K x (K-1)`` basis of the vectors orthogonal to ``(1, ..., 1)``.

    Column ``j`` is ``(1, ..., 1, -j, 0, ..., 0) / sqrt(j (j + 1))`` with ``j``
    leading ones.
    """
    if K < 2:
        raise InvalidArgumentError("Helmert basis needs K >= 2")
    B = np.zeros((K, K - 1))
    for j in range(1, K):
        B[:j, j - 1] = 1.0
        B[j, j - 1] = -float(j)
        B[:, j - 1] /= np.sqrt(j * (j + 1.0))
    return B


@dataclass(frozen=True)
class KSampleTransform:
    """Contrast basis, projector and scaling of the K-sample statistic.

    Attributes
    ----------
    B : ndarray, shape (K, K-1)
        Helmert basis.
    A_proj : ndarray, shape (K, K)
        ``I - sqrt(alpha) sqrt(alpha)^T``.
    scaling : ndarray, shape (K,)
        ``1 / sqrt(alpha_k)``.
    alpha : ndarray, shape (K,)
        Group fractions.
    """

    B: np.ndarray
    A_proj: np.ndarray
    scaling: np.ndarray
    alpha: np.ndarray

    @classmethod
    def from_counts(cls, counts) -> "KSampleTransform":
        counts = np.asarray(counts, dtype=float)
        if counts.size < 2 or np.any(counts < 1):
            raise InvalidArgumentError("K-sample statistic needs K >= 2 non-empty groups")
        alpha = counts / counts.sum()
        r = np.sqrt(alpha)
        return cls(B=helmert_basis(counts.size), A_proj=np.eye(counts.size) - np.outer(r, r),
                   scaling=1.0 / r, alpha=alpha)

    def contrast_covariance(self) -> np.ndarray:
        return self.B.T @ self.A_proj @ self.B


def k_sample_blocks(assign: RankAssignment, cw: CenteredWeights, groups) -> np.ndarray:
    """Unscaled per-group sums ``N^{-1/2} sum_{j in group k} w(rank_j)``, shape ``(K, m)``."""
    _check_grid(assign, cw)
    g = _labels(groups, assign.grid.N)
    K = int(g.max()) + 1
    S = np.zeros((K, cw.m))
    np.add.at(S, g, cw.values[assign.perm])
    return S / np.sqrt(assign.grid.N)


def k_sample_T(assign: RankAssignment, cw: CenteredWeights, groups):
    """K-sample statistic and its exact permutation covariance.

    Returns
    -------
    T : ndarray, shape ((K-1) m,)
        Row-major flattening of the ``(K-1) x m`` contrast matrix.
    cov : ndarray, shape ((K-1) m, (K-1) m)
    """
    g = _labels(groups, assign.grid.N)
    counts = np.bincount(g)
    if counts.size < 2 or np.any(counts == 0):
        raise InvalidArgumentError("every group 0..K-1 must be non-empty")
    tr = KSampleTransform.from_counts(counts)
    blocks = k_sample_blocks(assign, cw, g) * tr.scaling[:, None]
    T = (tr.B.T @ blocks).reshape(-1)
    N = assign.grid.N
    cov = np.kron(tr.contrast_covariance(), gram(cw)) * N / (N - 1)
    return T, cov


def asymptotic_pvalue(Q: float, df: int) -> float:
    """Chi-square upper tail ``P(chi2_df >= Q)``."""
    if Q < 0:
        raise InvalidArgumentError("quadratic statistic must be non-negative")
    return chi2_sf(Q, df)


@dataclass
class TestOutcome:
    """Result of a rank test.

    ``statistic`` is the vector ``T``; ``alpha_vector`` holds the group
    fractions.  Serializes to JSON through :meth:`to_json`.
    """

    __test__ = False  # not a pytest class

    statistic: list
    Q: float
    df: int
    p_value: float
    method: str
    weights: str
    N: int
    group_sizes: list
    seed: object = None
    alpha_vector: list = field(default_factory=list)
    warning: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise InvalidArgumentError(f"p-value {self.p_value} outside [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["statistic"] = [float(x) for x in self.statistic]
        d["alpha_vector"] = [float(x) for x in self.alpha_vector]
        d["group_sizes"] = [int(x) for x in self.group_sizes]
        if d["warning"] is None:
            del d["warning"]
        return d

    def to_json(self) -> str:
        # json writes floats with repr, the shortest round-tripping form.
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
