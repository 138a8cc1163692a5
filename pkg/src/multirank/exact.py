"""Finite-sample inference: enumeration, permutation draws and rank spacings.

Under the null the grid points held by group 1 form a uniformly random
subset of the grid, so any statistic that is a function of that subset has
a null law computable by enumerating subsets.  For spacing statistics the
law is also available through its moment generating function.

Spacing statistic.  Let ``r_1 < ... < r_n`` be the positions of group 1
among the ``N`` pooled positions (along a snake curve when ``p > 1``), with
``r_0 = 0`` and ``r_{n+1} = N + 1``.  With weight rows ``v_j = w(j/n)``,
``j = 0..n``::

    S = (1/n) * sum_j v_j (r_{j+1} - r_j).

The ``n + 1`` gaps minus one are a uniformly random composition of ``k``
into ``n + 1`` non-negative parts, which gives the transform

    E exp<s, S> = prod_j y_j * h_k(y_0, ..., y_n) / C(N, n),
    y_j = exp(<s, v_j> / n),

with ``h_k`` the complete homogeneous symmetric polynomial of degree ``k``.
Its partial-fraction form ``h_k(y) = sum_j y_j^{k+n} / prod_{m != j}(y_j - y_m)``
requires distinct ``y_j`` and loses about ``n`` times the number of digits
separating them, so it is evaluated in extended precision.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import mpmath
import numpy as np

from .errors import (BudgetExceededError, DegenerateSpectrumError, InvalidArgumentError,
                     PrecisionWarning)
from .rank_map import RankAssignment, RankGrid
from .weights import WeightFn

DEFAULT_BUDGET = 2_000_000
TIE_TOL = 1e-12
VALIDATED_MAX_N = 15


# ---------------------------------------------------------------------------
# Snake curve


@dataclass(frozen=True, eq=False)
class SnakeCurve:
    """Face-adjacent traversal of the ``a^p`` cells of the unit cube.

    Attributes
    ----------
    p, a : int
    order : ndarray of int, shape (a**p, p)
        Cell indices in traversal order; axis 0 varies slowest.
    cell_centers : ndarray, shape (a**p, p)
        ``(order + 1/2) / a``.
    """

    p: int
    a: int
    order: np.ndarray
    cell_centers: np.ndarray

    def flat_index(self, cells: np.ndarray) -> np.ndarray:
        """Mixed-radix index of cells, axis 0 most significant."""
        cells = np.asarray(cells, dtype=np.int64)
        return cells @ (self.a ** np.arange(self.p - 1, -1, -1, dtype=np.int64))

    def position_of(self) -> np.ndarray:
        """``pos[flat_index(cell)]`` is the 0-based curve position of ``cell``."""
        pos = np.empty(self.a ** self.p, dtype=np.int64)
        pos[self.flat_index(self.order)] = np.arange(self.a ** self.p)
        return pos

    def __call__(self, s) -> np.ndarray:
        """Curve point at parameter ``s`` in ``[0, 1]``.

        The curve passes through the centre of the ``i``-th cell at
        ``s = i / a^p`` (``i`` counted from 1), is linear in between and is
        held at the first centre for ``s < 1 / a^p``.
        """
        s = np.atleast_1d(np.asarray(s, dtype=float))
        M = self.cell_centers.shape[0]
        x = np.clip(s * M, 1.0, float(M)) - 1.0
        i = np.minimum(np.floor(x).astype(np.int64), M - 1)
        frac = (x - i)[:, None]
        nxt = np.minimum(i + 1, M - 1)
        return (1.0 - frac) * self.cell_centers[i] + frac * self.cell_centers[nxt]


def _snake_order(p: int, a: int) -> np.ndarray:
    if p == 1:
        return np.arange(a, dtype=np.int64)[:, None]
    sub = _snake_order(p - 1, a)
    blocks = []
    for i in range(a):
        inner = sub if i % 2 == 0 else sub[::-1]
        blocks.append(np.column_stack([np.full(len(inner), i, dtype=np.int64), inner]))
    return np.vstack(blocks)


def check_snake(order: np.ndarray, a: int) -> bool:
    """True when ``order`` visits every cell once and steps between face neighbours."""
    order = np.asarray(order)
    p = order.shape[1]
    if order.shape[0] != a ** p or order.min() < 0 or order.max() >= a:
        return False
    flat = order @ (a ** np.arange(p - 1, -1, -1))
    if np.unique(flat).size != a ** p:
        return False
    steps = np.abs(np.diff(order, axis=0))
    return bool(np.all(steps.sum(axis=1) == 1))


def snake_curve(p: int, a: int) -> SnakeCurve:
    """Boustrophedon traversal of the ``a^p`` grid cells.

    Examples
    --------
    >>> snake_curve(2, 2).order.tolist()
    [[0, 0], [0, 1], [1, 1], [1, 0]]
    """
    if p < 1 or a < 1:
        raise InvalidArgumentError("snake curve needs p >= 1 and a >= 1")
    order = _snake_order(int(p), int(a))
    if not check_snake(order, a):  # pragma: no cover - construction guarantees it
        raise AssertionError("snake construction violated coverage or adjacency")
    order.setflags(write=False)
    centers = (order + 0.5) / a
    centers.setflags(write=False)
    return SnakeCurve(p=int(p), a=int(a), order=order, cell_centers=centers)


def curve_ranks(grid: RankGrid, curve: SnakeCurve) -> np.ndarray:
    """1-based position of every grid point among the occupied cells along the curve."""
    if curve.p != grid.p or curve.a != grid.levels:
        raise InvalidArgumentError(
            f"curve (p={curve.p}, a={curve.a}) does not match grid (p={grid.p}, a={grid.levels})")
    along = curve.position_of()[curve.flat_index(grid.cells)]
    ranks = np.empty(grid.N, dtype=np.int64)
    ranks[np.argsort(along)] = np.arange(1, grid.N + 1)
    return ranks


# ---------------------------------------------------------------------------
# Spacing statistic


def spacing_nodes(w: WeightFn, n: int, curve: SnakeCurve | None = None) -> np.ndarray:
    """Weight rows ``w(c(j/n))``, ``j = 0..n``, shape ``(n + 1, m)``.

    For ``p = 1`` the curve is the identity.  An endpoint at which ``w`` is
    not finite (a quantile-based weight at 0 or 1) is moved half a step
    inwards, to ``1/(2n)`` or ``1 - 1/(2n)``.
    """
    if n < 1:
        raise InvalidArgumentError("spacing statistic needs n >= 1")
    s = np.arange(n + 1) / n
    if w.p == 1:
        pts = s[:, None].copy()
        with np.errstate(all="ignore"):
            for j, inward in ((0, 0.5 / n), (n, 1.0 - 0.5 / n)):
                try:
                    ok = np.all(np.isfinite(w(pts[j:j + 1])))
                except ValueError:
                    ok = False
                if not ok:
                    pts[j, 0] = inward
    else:
        if curve is None or curve.p != w.p:
            raise InvalidArgumentError("a multivariate weight needs a snake curve of matching dimension")
        pts = curve(s)
    V = w(pts)
    if not np.all(np.isfinite(V)):
        raise InvalidArgumentError(f"weight {w.label!r} is not finite at the spacing nodes")
    return V


def spacing_from_positions(positions, N: int, V: np.ndarray) -> np.ndarray:
    """Spacing statistic for sorted 1-based positions; accepts a batch ``(B, n)``."""
    r = np.asarray(positions, dtype=float)
    single = r.ndim == 1
    r = np.atleast_2d(r)
    n = r.shape[1]
    full = np.hstack([np.zeros((r.shape[0], 1)), r, np.full((r.shape[0], 1), N + 1.0)])
    S = np.diff(full, axis=1) @ V / n
    return S[0] if single else S


@dataclass(frozen=True)
class SpacingStatistic:
    """Spacing statistic together with the curve positions it came from.

    Attributes
    ----------
    S : ndarray, shape (m,)
    rho : ndarray, shape (n,)
        Positions of group 1 as fractions ``r_j / N`` of the pooled length.
    positions : ndarray of int, shape (n,)
        The integer positions ``r_j``.
    label : str
    """

    S: np.ndarray
    rho: np.ndarray
    positions: np.ndarray
    label: str


def spacing_stat(assign: RankAssignment, w: WeightFn, curve: SnakeCurve | None, groups) -> SpacingStatistic:
    """Spacing statistic of the observations labelled 1.

    Parameters
    ----------
    assign : RankAssignment
    w : WeightFn
        Uncentered weight, evaluated at the nodes ``c(j/n)``.
    curve : SnakeCurve or None
        Required when ``p > 1``; must match the grid's level count.
    groups : array_like of int
        Labels in ``{0, 1}``.
    """
    grid = assign.grid
    g = np.asarray(groups)
    if g.shape != (grid.N,) or set(np.unique(g).tolist()) != {0, 1}:
        raise InvalidArgumentError("spacing statistic needs labels 0 and 1 for every observation")
    if grid.p == 1:
        ranks = np.arange(1, grid.N + 1)  # grid points are already in curve order
    else:
        if curve is None:
            raise InvalidArgumentError("a multivariate spacing statistic needs a snake curve")
        ranks = curve_ranks(grid, curve)
    r = np.sort(ranks[assign.perm[g == 1]])
    V = spacing_nodes(w, r.size, curve)
    S = spacing_from_positions(r, grid.N, V)
    return SpacingStatistic(S=S, rho=r / grid.N, positions=r, label=w.label)


# ---------------------------------------------------------------------------
# Laplace transform of the spacing statistic


@dataclass(frozen=True)
class LaplaceParams:
    """Inputs of the spacing-statistic transform.

    Attributes
    ----------
    k, n : int
        Sizes of groups 0 and 1.
    W : ndarray, shape (n + 1, m)
        Weight rows ``v_0 .. v_n``.
    """

    k: int
    n: int
    W: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=float))
        if W.shape[0] != self.n + 1:
            raise InvalidArgumentError(f"need n + 1 = {self.n + 1} weight rows, got {W.shape[0]}")
        if self.k < 0 or self.n < 1:
            raise InvalidArgumentError("need k >= 0 and n >= 1")
        W = W.copy()
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def N(self) -> int:
        return self.k + self.n

    @property
    def m(self) -> int:
        return self.W.shape[1]

    @classmethod
    def from_weight(cls, w: WeightFn, k: int, n: int, curve: SnakeCurve | None = None):
        return cls(k=k, n=n, W=spacing_nodes(w, n, curve))


def laplace_transform(params: LaplaceParams, s, t: float = 1.0) -> float:
    """Null moment generating function ``E exp<t s, S>`` of the spacing statistic.

    Raises
    ------
    DegenerateSpectrumError
        If two exponents ``<t s, v_j>`` coincide (to 1e-12 relative) without
        all of them coinciding; use the enumeration path instead.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.shape != (params.m,):
        raise InvalidArgumentError(f"s must have length {params.m}")
    k, n, N = params.k, params.n, params.N
    lam = t * (params.W @ s) / n
    top = float(np.max(np.abs(lam)))
    if top == 0.0 or np.ptp(lam) <= 1e-15 * top:
        return float(np.exp((N + 1) * lam[0]))
    gaps = np.diff(np.sort(lam))
    if np.min(gaps) <= 1e-12 * top:
        raise DegenerateSpectrumError(
            "weight exponents coincide; the partial-fraction transform is undefined, "
            "use exact_null_distribution instead")
    if n > VALIDATED_MAX_N:
        warnings.warn(f"transform validated for n <= {VALIDATED_MAX_N}, got n = {n}",
                      PrecisionWarning, stacklevel=2)
    # The partial-fraction terms can exceed the result by many orders of
    # magnitude; retry with more digits until the cancellation is covered.
    dps = 30 + int(math.ceil(n * max(0.0, -math.log10(float(np.min(gaps))))))
    while True:
        with mpmath.workdps(dps):
            lmax = mpmath.mpf(float(lam.max()))
            x = [mpmath.exp(mpmath.mpf(float(v)) - lmax) for v in lam]
            terms = []
            for j, xj in enumerate(x):
                den = mpmath.fprod(xj - xi for i, xi in enumerate(x) if i != j)
                terms.append(xj ** N / den)
            total = mpmath.fsum(terms)
            biggest = max(abs(tm) for tm in terms)
            lost = float(mpmath.log10(biggest / abs(total))) if total != 0 else float(dps)
            if lost < dps - 25:
                val = mpmath.exp((N + 1) * lmax) * mpmath.fprod(x) * total / mpmath.binomial(N, n)
                return float(val)
        dps = int(lost) + 40


def transform_moments(params: LaplaceParams, h: float = 1e-3):
    """Mean and covariance of ``S`` by central differences of the log-transform at 0.

    Raises :class:`DegenerateSpectrumError` when a difference direction makes
    two exponents coincide (for example a weight symmetric about 1/2).
    """
    m = params.m

    def logL(s):
        return math.log(laplace_transform(params, s))

    base = logL(np.zeros(m))
    grad = np.zeros(m)
    hess = np.zeros((m, m))
    E = np.eye(m) * h
    for i in range(m):
        fp, fm = logL(E[i]), logL(-E[i])
        grad[i] = (fp - fm) / (2 * h)
        hess[i, i] = (fp - 2 * base + fm) / h ** 2
        for j in range(i):
            val = (logL(E[i] + E[j]) - logL(E[i] - E[j])
                   - logL(E[j] - E[i]) + logL(-E[i] - E[j])) / (4 * h * h)
            hess[i, j] = hess[j, i] = val
    return grad, hess


def spacing_moments(params: LaplaceParams):
    """Exact null mean and covariance of the spacing statistic.

    The ``n + 1`` gaps minus one are uniform over compositions of ``k``,
    a Dirichlet-multinomial law with unit parameters.
    """
    k, n = params.k, params.n
    A = n + 1
    mean_gap = (k + A) / A
    c = k * (k + A) / (A * A * (A + 1.0))
    gap_cov = c * (A * np.eye(A) - np.ones((A, A)))
    V = params.W / n
    return mean_gap * V.sum(axis=0), V.T @ gap_cov @ V


# ---------------------------------------------------------------------------
# Enumeration and permutation


@dataclass(frozen=True)
class NullDistribution:
    """Exact null law of a subset statistic.

    Attributes
    ----------
    values : ndarray
        Sorted values over all ``C(N, n)`` subsets (with multiplicity).
    support : ndarray
        Distinct values (values closer than 1e-12 are merged).
    counts : ndarray of int
        Multiplicity of every support point.
    total : int
        ``C(N, n)``.
    """

    values: np.ndarray
    support: np.ndarray
    counts: np.ndarray
    total: int

    def probabilities(self) -> list:
        return [Fraction(int(c), self.total) for c in self.counts]

    def pvalue(self, observed: float) -> float:
        """Fraction of subsets whose value is at least ``observed`` (ties included)."""
        hit = np.searchsorted(self.values, observed - TIE_TOL, side="left")
        return (self.values.size - hit) / self.total

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["value", "count"])
            for v, c in zip(self.support, self.counts):
                out.writerow([repr(float(v)), int(c)])


def subsets(N: int, n: int, chunk: int = 100_000):
    """Yield all ``n``-subsets of ``{0..N-1}`` in lexicographic order as ``(B, n)`` blocks."""
    it = itertools.combinations(range(N), n)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.int64).reshape(len(block), n)


def exact_null_distribution(stat_fn, N: int, n: int, budget: int = DEFAULT_BUDGET) -> NullDistribution:
    """Enumerate a subset statistic over all ``n``-subsets of the ``N`` grid points.

    Parameters
    ----------
    stat_fn : callable
        Maps a ``(B, n)`` array of sorted 0-based subsets to ``B`` values.
    N, n : int
    budget : int
        Largest number of subsets allowed.

    Raises
    ------
    BudgetExceededError
        If ``C(N, n) > budget``.
    """
    total = math.comb(N, n)
    if total > budget:
        raise BudgetExceededError(f"C({N}, {n}) = {total} subsets exceed the budget of {budget}")
    vals = np.concatenate([np.asarray(stat_fn(b), dtype=float).reshape(-1) for b in subsets(N, n)])
    vals.sort()
    if vals.size > 1:
        brk = np.flatnonzero(np.diff(vals) > TIE_TOL * np.maximum(1.0, np.abs(vals[1:])))
        starts = np.concatenate([[0], brk + 1])
    else:
        starts = np.array([0])
    counts = np.diff(np.append(starts, vals.size))
    vals.setflags(write=False)
    return NullDistribution(values=vals, support=vals[starts], counts=counts, total=total)


def random_subsets(rng: np.random.Generator, N: int, n: int, size: int) -> np.ndarray:
    """``size`` uniformly random sorted ``n``-subsets of ``{0..N-1}``."""
    keys = rng.random((size, N))
    part = np.argpartition(keys, n - 1, axis=1)[:, :n] if n < N else np.tile(np.arange(N), (size, 1))
    return np.sort(part, axis=1)


def permutation_pvalue(stat_fn, observed: float, N: int, n: int, B: int, seed=0,
                       chunk: int = 10_000) -> float:
    """Monte Carlo p-value ``(1 + #{draws >= observed}) / (B + 1)``.

    Draws are uniformly random ``n``-subsets generated from ``seed`` in
    fixed-size chunks, so the result depends only on ``(seed, B)``.
    """
    if B < 1:
        raise InvalidArgumentError("need at least one permutation draw")
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < B:
        size = min(chunk, B - done)
        vals = np.asarray(stat_fn(random_subsets(rng, N, n, size)), dtype=float)
        hits += int(np.sum(vals >= observed - TIE_TOL))
        done += size
    return (1 + hits) / (B + 1)


def permutation_pvalue_labels(stat_fn, observed: float, labels, B: int, seed=0,
                              chunk: int = 2_000) -> float:
    """Permutation p-value for a statistic of a full labelling.

    ``stat_fn`` maps a ``(B, N)`` array of permuted labels to ``B`` values.
    """
    if B < 1:
        raise InvalidArgumentError("need at least one permutation draw")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < B:
        size = min(chunk, B - done)
        perm = rng.permuted(np.tile(labels, (size, 1)), axis=1)
        vals = np.asarray(stat_fn(perm), dtype=float)
        hits += int(np.sum(vals >= observed - TIE_TOL))
        done += size
    return (1 + hits) / (B + 1)
