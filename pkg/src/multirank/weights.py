"""Vector-valued weight functions on the unit cube and their grid algebra.

A weight maps ``[0, 1]^p`` to ``R^m``.  Tests only ever see a weight through
its values on the rank grid, so the central object here is
:class:`CenteredWeights`: the ``N x m`` matrix of grid evaluations with
column means removed.  Gram matrices are empirical grid averages
``(1/N) V1^T V2``, which makes the null covariance of the rank statistics
exact under the permutation law rather than only asymptotically correct.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError, InvalidArgumentError, RankDeficiencyError
from .rank_map import RankGrid
from .special import gaussian_quantile

COND_LIMIT = 1e12


@dataclass(frozen=True)
class WeightFn:
    """A weight ``[0, 1]^p -> R^m``.

    Parameters
    ----------
    m, p : int
        Output and input dimensions.
    func : callable
        Maps an ``(M, p)`` array of points to an ``(M, m)`` array.
    label : str
        Name used in reports.
    """

    m: int
    p: int
    func: Callable[[np.ndarray], np.ndarray]
    label: str = "weight"

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        pts = u.reshape(1, -1) if single else u
        if pts.shape[1] != self.p:
            raise InvalidArgumentError(
                f"weight {self.label!r} expects points of dimension {self.p}, got {pts.shape[1]}")
        out = np.asarray(self.func(pts), dtype=float).reshape(pts.shape[0], self.m)
        return out[0] if single else out


def _klotz(u):
    z = gaussian_quantile(u)
    return z * z


_BUILTINS = {
    "mann_whitney": lambda u: u,
    "van_der_waerden": gaussian_quantile,
    "siegel_tukey": lambda u: np.abs(u - 0.5),
    "mood": lambda u: (u - 0.5) ** 2,
    "klotz": _klotz,
}
BUILTIN_NAMES = tuple(_BUILTINS)


def builtin(name: str, p: int) -> WeightFn:
    """Classical univariate weight applied to each coordinate (``m = p``).

    Parameters
    ----------
    name : {'mann_whitney', 'van_der_waerden', 'siegel_tukey', 'mood', 'klotz'}
    p : int

    Examples
    --------
    >>> float(builtin("mann_whitney", 1)([0.75])[0])
    0.75
    """
    try:
        f = _BUILTINS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown weight {name!r}; expected one of {', '.join(BUILTIN_NAMES)}") from None
    if p < 1:
        raise InvalidArgumentError("p must be >= 1")
    return WeightFn(m=p, p=p, func=lambda u: f(u), label=name)


def stack(ws: Sequence[WeightFn]) -> WeightFn:
    """Concatenate the outputs of several weights sharing an input dimension."""
    ws = list(ws)
    if not ws:
        raise InvalidArgumentError("stack needs at least one weight")
    p = ws[0].p
    if any(w.p != p for w in ws):
        raise InvalidArgumentError("stacked weights must share the input dimension")
    if len(ws) == 1:
        return ws[0]
    return WeightFn(
        m=sum(w.m for w in ws), p=p,
        func=lambda u: np.hstack([w(u) for w in ws]),
        label="+".join(w.label for w in ws))


@dataclass(frozen=True, eq=False)
class CenteredWeights:
    """Grid evaluations of a weight with zero column sums.

    Attributes
    ----------
    values : ndarray, shape (N, m)
        Row ``j`` belongs to grid point ``j``.
    grid : RankGrid
    label : str
    """

    values: np.ndarray
    grid: RankGrid
    label: str = "weight"

    @property
    def m(self) -> int:
        return self.values.shape[1]


def _freeze(values: np.ndarray, grid: RankGrid, label: str) -> CenteredWeights:
    values = np.ascontiguousarray(values, dtype=float)
    values.setflags(write=False)
    return CenteredWeights(values=values, grid=grid, label=label)


def center_on_grid(w: WeightFn, grid: RankGrid) -> CenteredWeights:
    """Evaluate ``w`` at every grid point and subtract the column means.

    Raises
    ------
    EvaluationError
        If ``w`` is not finite at some grid point; the message names it.
    """
    if w.p != grid.p:
        raise InvalidArgumentError(f"weight has p={w.p}, grid has p={grid.p}")
    raw = w(grid.points)
    bad = ~np.all(np.isfinite(raw), axis=1)
    if bad.any():
        j = int(np.argmax(bad))
        raise EvaluationError(
            f"weight {w.label!r} is not finite at grid point {j} = {grid.points[j].tolist()}")
    return _freeze(raw - raw.mean(axis=0), grid, w.label)


def _check_same_grid(a: CenteredWeights, b: CenteredWeights):
    if not a.grid.same_as(b.grid):
        raise InvalidArgumentError(
            f"weights live on different grids (N={a.grid.N}, p={a.grid.p}) vs (N={b.grid.N}, p={b.grid.p})")


def gram(cw1: CenteredWeights, cw2: CenteredWeights | None = None) -> np.ndarray:
    """Empirical Gram matrix ``(1/N) V1^T V2`` over the grid.

    ``gram(cw)`` is the ``m x m`` second-moment matrix of a single weight.
    """
    if cw2 is None:
        cw2 = cw1
    _check_same_grid(cw1, cw2)
    return cw1.values.T @ cw2.values / cw1.grid.N


def numerical_rank(H: np.ndarray, rtol: float = 1e-10) -> int:
    ev = np.linalg.eigvalsh(0.5 * (H + H.T))
    top = max(ev.max(initial=0.0), 0.0)
    return int(np.sum(ev > rtol * top)) if top > 0 else 0


def project_nuisance(cw_signal: CenteredWeights, cw_nuisance: CenteredWeights) -> CenteredWeights:
    """Remove from the signal weight its Gram projection onto the nuisance weight.

    Returns ``V0 - V1 H11^{-1} H10``, whose Gram matrix against the nuisance
    block vanishes.

    Raises
    ------
    RankDeficiencyError
        If the nuisance Gram matrix has condition number above ``1e12``.
    """
    _check_same_grid(cw_signal, cw_nuisance)
    H11 = gram(cw_nuisance)
    H10 = gram(cw_nuisance, cw_signal)
    cond = np.linalg.cond(H11) if H11.size else np.inf
    if not np.isfinite(cond) or cond > COND_LIMIT:
        r = numerical_rank(H11)
        raise RankDeficiencyError(
            f"nuisance Gram matrix is singular (condition {cond:.3g}, numerical rank {r} of {H11.shape[0]})",
            rank=r)
    coef = np.linalg.solve(H11, H10)
    out = cw_signal.values - cw_nuisance.values @ coef
    return _freeze(out, cw_signal.grid, f"{cw_signal.label}/{cw_nuisance.label}")


def _split_top(spec: str, sep: str) -> list[str]:
    return [part.strip() for part in spec.split(sep)]


def resolve_weight_fn(spec: str, p: int, sample=None) -> WeightFn:
    """Parse a weight spec that denotes a plain function of the cube.

    Accepted forms: a builtin name, ``model:<family>[:location|:scale]``
    (adaptive weight at the pooled MLE of ``sample``) and ``stack:<a>+<b>...``.
    Projections depend on the grid; use :func:`resolve_weights` for those.
    """
    spec = spec.strip()
    if spec.startswith("stack:"):
        return stack([resolve_weight_fn(s, p, sample) for s in _split_top(spec[6:], "+")])
    if spec.startswith("model:"):
        from .models import adaptive_weight, get_family

        parts = spec.split(":")
        if len(parts) not in (2, 3):
            raise InvalidArgumentError(f"malformed model weight {spec!r}")
        fam = get_family(parts[1], p)
        if sample is None:
            raise InvalidArgumentError(f"weight {spec!r} needs the pooled sample for its MLE")
        w = adaptive_weight(fam, fam.pooled_mle(sample))
        if len(parts) == 3:
            w = fam.score_block(w, parts[2])
        return w
    if spec.startswith("proj:"):
        raise InvalidArgumentError("projected weights depend on the grid; use resolve_weights")
    return builtin(spec, p)


def resolve_weights(spec: str, grid: RankGrid, sample=None) -> CenteredWeights:
    """Build centered grid weights from a CLI-style spec string.

    Besides the forms of :func:`resolve_weight_fn`, accepts
    ``proj:<signal>/<nuisance>``, which projects the signal weight off the
    nuisance weight.
    """
    spec = spec.strip()
    if spec.startswith("proj:"):
        body = spec[5:]
        if "/" not in body:
            raise InvalidArgumentError(f"projection spec {spec!r} needs '<signal>/<nuisance>'")
        sig, nuis = body.split("/", 1)
        cs = center_on_grid(resolve_weight_fn(sig, grid.p, sample), grid)
        cn = center_on_grid(resolve_weight_fn(nuis, grid.p, sample), grid)
        return project_nuisance(cs, cn)
    cw = center_on_grid(resolve_weight_fn(spec, grid.p, sample), grid)
    return CenteredWeights(values=cw.values, grid=grid, label=spec)
