"""Hierarchical conditional rank map onto a balanced grid in ``[0, 1]^p``.

The pooled sample is ranked one coordinate at a time.  Layer ``j`` sorts
the points inside every bucket left by layer ``j - 1`` along coordinate
``j`` and splits each bucket into ``a`` sub-buckets whose sizes differ by at
most one.  After ``p`` layers every bucket holds exactly one point, and the
nested bucket index is the point's grid cell.  Layer ``j`` sorts ``a^(j-1)``
buckets of about ``N / a^(j-1)`` points each, so the map costs
``O(p N log N)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Pooled observations with group labels.

    Parameters
    ----------
    data : ndarray, shape (N, p)
        Finite real observations.
    groups : ndarray of int, shape (N,)
        Group id of every row, taking every value in ``0..K-1``.
    """

    data: np.ndarray
    groups: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[1] < 1:
            raise InvalidArgumentError("data must be an (N, p) array with p >= 1")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("data contains non-finite entries")
        groups = np.asarray(self.groups)
        if groups.shape != (data.shape[0],):
            raise InvalidArgumentError("groups must have one label per row of data")
        if groups.size and not np.issubdtype(groups.dtype, np.integer):
            raise InvalidArgumentError("group labels must be integers")
        groups = groups.astype(np.int64)
        K = int(groups.max()) + 1 if groups.size else 0
        counts = np.bincount(groups, minlength=K) if K else np.zeros(0, int)
        if groups.size and (groups.min() < 0 or np.any(counts == 0)):
            raise InvalidArgumentError("group labels must cover 0..K-1 with every group non-empty")
        data.setflags(write=False)
        groups.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "groups", groups)

    @classmethod
    def from_groups(cls, *samples) -> "SampleSet":
        """Pool several ``(n_k, p)`` arrays, labelling them ``0, 1, ...`` in order."""
        arrays = []
        for s in samples:
            arr = np.asarray(s, dtype=float)
            arrays.append(arr[:, None] if arr.ndim == 1 else arr)
        data = np.vstack(arrays)
        groups = np.concatenate([np.full(len(a), k) for k, a in enumerate(arrays)])
        return cls(data, groups)

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]

    @property
    def K(self) -> int:
        return int(self.groups.max()) + 1

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.groups, minlength=self.K)

    @property
    def fractions(self) -> np.ndarray:
        return self.counts / self.N


def _levels_per_axis(N: int, p: int) -> int:
    a = max(1, int(round(N ** (1.0 / p))))
    while a ** p < N:
        a += 1
    while a > 1 and (a - 1) ** p >= N:
        a -= 1
    return a


def _split(sizes: np.ndarray, a: int):
    """Balanced split of every bucket into its non-empty sub-buckets.

    Returns the child sizes and the sub-bucket index of every child, both in
    nested order.  Larger children come first inside each parent.
    """
    n_children = np.minimum(sizes, a)
    parent = np.repeat(np.arange(sizes.size), n_children)
    offsets = np.cumsum(n_children) - n_children
    sub = np.arange(parent.size) - np.repeat(offsets, n_children)
    g = sizes[parent]
    child = g // a + (sub < g % a)
    return child, sub


@dataclass(frozen=True, eq=False)
class RankGrid:
    """Target grid of the conditional rank map.

    Attributes
    ----------
    N, p : int
        Number of grid points and their dimension.
    levels : int
        Per-axis level count ``a = ceil(N ** (1/p))``.
    cells : ndarray of int, shape (N, p)
        Per-axis level index of every grid point, rows in nested
        lexicographic order (axis 0 most significant).
    points : ndarray, shape (N, p)
        Grid coordinates ``(cells + 1/2) / a``.
    layer_plan : tuple of ndarray
        Sizes of the non-empty buckets after each layer, in nested order.
    """

    N: int
    p: int
    levels: int
    cells: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)
    layer_plan: tuple = field(repr=False)

    def same_as(self, other: "RankGrid") -> bool:
        # Grids are a deterministic function of (N, p).
        return self is other or (self.N == other.N and self.p == other.p)


def build_grid(N: int, p: int) -> RankGrid:
    """Build the balanced target grid for ``N`` points in ``p`` dimensions.

    Examples
    --------
    >>> g = build_grid(4, 2)
    >>> g.levels, g.points.tolist()
    (2, [[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])
    """
    if int(N) != N or int(p) != p:
        raise InvalidArgumentError("N and p must be integers")
    N, p = int(N), int(p)
    if N < 2:
        raise InvalidArgumentError(f"grid needs N >= 2, got {N}")
    if p < 1:
        raise InvalidArgumentError(f"grid needs p >= 1, got {p}")
    a = _levels_per_axis(N, p)
    sizes = np.array([N], dtype=np.int64)
    cells = np.zeros((1, 0), dtype=np.int64)
    plan = []
    for _ in range(p):
        child, sub = _split(sizes, a)
        parent = np.repeat(np.arange(sizes.size), np.minimum(sizes, a))
        cells = np.column_stack([cells[parent], sub])
        sizes = child
        plan.append(sizes)
    assert sizes.size == N and np.all(sizes == 1)
    points = (cells + 0.5) / a
    for arr in (cells, points, *plan):
        arr.setflags(write=False)
    return RankGrid(N=N, p=p, levels=a, cells=cells, points=points, layer_plan=tuple(plan))


def _tied_within_buckets(sorted_values: np.ndarray, sizes: np.ndarray) -> bool:
    same = sorted_values[1:] == sorted_values[:-1]
    if not same.any():
        return False
    # Pairs straddling a bucket boundary are never compared.
    same[np.cumsum(sizes)[:-1] - 1] = False
    return bool(same.any())


def _sort_within_buckets(values: np.ndarray, ids: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """Reorder ``ids`` by ``values`` inside each contiguous bucket.

    Buckets are laid out as rows of a padded matrix so that every sort is
    row-local; ``+inf`` padding sinks to the end of each row.
    """
    nb, width = sizes.size, int(sizes.max())
    if nb == 1:
        return ids[np.argsort(values)]
    row = np.repeat(np.arange(nb), sizes)
    col = np.arange(values.size) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    padded = np.full((nb, width), np.inf)
    padded[row, col] = values
    slot = np.full((nb, width), -1, dtype=ids.dtype)
    slot[row, col] = ids
    srt = np.take_along_axis(slot, np.argsort(padded, axis=1), axis=1)
    return srt[np.arange(width) < sizes[:, None]]


@dataclass(frozen=True, eq=False)
class RankAssignment:
    """Bijection from observations to grid points.

    Attributes
    ----------
    perm : ndarray of int, shape (N,)
        ``perm[i]`` is the grid-point index of observation ``i``.
    grid : RankGrid
    tie_seed : int or None
        Seed of the tie-breaking keys.
    """

    perm: np.ndarray
    grid: RankGrid
    tie_seed: object = None

    def points(self) -> np.ndarray:
        """Grid coordinates of every observation, in observation order."""
        return self.grid.points[self.perm]


def assign_ranks(sample, grid: RankGrid, tie_seed=0) -> RankAssignment:
    """Compute the conditional rank map of a pooled sample.

    Parameters
    ----------
    sample : SampleSet or array_like, shape (N, p)
    grid : RankGrid
        Grid built for the same ``N`` and ``p``.
    tie_seed : int or numpy SeedSequence, optional
        Seed of the uniformly random keys that order tied values.

    Returns
    -------
    RankAssignment
    """
    data = sample.data if isinstance(sample, SampleSet) else np.asarray(sample, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if data.shape != (grid.N, grid.p):
        raise InvalidArgumentError(
            f"sample has shape {data.shape}, grid expects ({grid.N}, {grid.p})")
    N = grid.N
    rng = np.random.default_rng(tie_seed)
    order = np.arange(N)
    sizes = np.array([N], dtype=np.int64)
    for j in range(grid.p):
        x = data[:, j]
        new_order = _sort_within_buckets(x[order], order, sizes)
        if _tied_within_buckets(x[new_order], sizes):
            # Ranks of a stable sort over shuffled rows break ties uniformly.
            shuffle = rng.permutation(N)
            tie_free = np.empty(N)
            tie_free[shuffle[np.argsort(x[shuffle], kind="stable")]] = np.arange(N)
            new_order = _sort_within_buckets(tie_free[order], order, sizes)
        order = new_order
        # Consecutive runs of the new order are the layer's child buckets.
        sizes = grid.layer_plan[j]
    perm = np.empty(N, dtype=np.intp)
    perm[order] = np.arange(N)
    perm.setflags(write=False)
    return RankAssignment(perm=perm, grid=grid, tie_seed=tie_seed)


def runtime_profile(N_list, p: int, repeats: int = 5, seed: int = 0):
    """Median wall time of :func:`assign_ranks` for each ``N``.

    Grid construction is excluded from the timing.  Data are standard
    Gaussian drawn from ``seed``.  Each size gets one untimed warm-up call,
    and repetitions are interleaved across sizes so that slow drifts in
    machine load affect every size alike.

    Returns
    -------
    list of (int, float)
        ``(N, median seconds)`` rows.
    """
    cases = []
    for N in N_list:
        rng = np.random.default_rng([seed, int(N), int(p)])
        data = rng.standard_normal((int(N), p))
        grid = build_grid(int(N), p)
        assign_ranks(data, grid, tie_seed=0)
        cases.append((data, grid))
    times = [[] for _ in cases]
    for r in range(repeats):
        for (data, grid), bucket in zip(cases, times):
            t0 = time.perf_counter()
            assign_ranks(data, grid, tie_seed=r)
            bucket.append(time.perf_counter() - t0)
    return [(int(N), float(np.median(t))) for N, t in zip(N_list, times)]
