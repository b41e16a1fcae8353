"""
Conformal building blocks: order-statistic thresholds, prediction sets made
of disjoint intervals, superlevel-set extraction on a response grid, and the
baseline predictors (vanilla CP, CQR, dist-split, HPD-split).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.spatial import cKDTree

from .errors import InvalidInput
from .grid_density import CdeModel, GridDensity, YGrid, eval_density_batch, hpd_mass_values, interp_values

# Guards floor/ceil of alpha * (m + 1) against binary round-off.
_INDEX_EPS = 1e-9
TIE_JITTER_SCALE = 1e-9


class ScoreKind(str, enum.Enum):
    DENSITY = "density"
    RESIDUAL = "residual"
    CDF = "cdf"
    HPD = "hpd"
    CQR = "cqr"


@dataclass(frozen=True)
class ScoreSample:
    scores: np.ndarray
    kind: ScoreKind

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=float)
        if not np.all(np.isfinite(s)):
            raise InvalidInput("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "kind", ScoreKind(self.kind))


@dataclass(frozen=True)
class IntervalSet:
    """Sorted, disjoint, closed intervals."""

    intervals: tuple = ()

    def __post_init__(self):
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        for lo, hi in ivs:
            if not lo <= hi:
                raise InvalidInput(f"bad interval ({lo}, {hi})")
        for (_, hi), (lo, _) in zip(ivs, ivs[1:]):
            if hi >= lo:
                raise InvalidInput("intervals must be sorted and disjoint")
        object.__setattr__(self, "intervals", ivs)

    @property
    def count(self) -> int:
        return len(self.intervals)

    @property
    def total_length(self) -> float:
        return float(sum(hi - lo for lo, hi in self.intervals))

    def __contains__(self, y) -> bool:
        return any(lo <= y <= hi for lo, hi in self.intervals)

    def __len__(self):
        return self.count

    def __iter__(self):
        return iter(self.intervals)


def _validate_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise InvalidInput("empty score sample")
    return s


def lower_quantile(scores, alpha: float) -> float:
    """
    ``k``-th smallest score with ``k = floor(alpha (m + 1))``; ``-inf`` when
    ``k = 0``. A fresh exchangeable score is ``>=`` this value with
    probability at least ``1 - alpha``.
    """
    s = _validate_scores(scores)
    k = int(math.floor(alpha * (s.size + 1) + _INDEX_EPS))
    if k <= 0:
        return -math.inf
    return float(np.partition(s, k - 1)[k - 1])


def upper_quantile_conformal(scores, alpha: float) -> float:
    """``ceil((1 - alpha)(m + 1))``-th smallest score, ``+inf`` past the end."""
    s = _validate_scores(scores)
    k = int(math.ceil((1.0 - alpha) * (s.size + 1) - _INDEX_EPS))
    if k > s.size:
        return math.inf
    k = max(k, 1)
    return float(np.partition(s, k - 1)[k - 1])


def jitter_ties(scores, alpha: float, rng) -> np.ndarray:
    """
    Break a degenerate tie at the minimum score.

    When more than an ``alpha`` fraction of the scores equal the minimum,
    every score gets iid ``Uniform(0, 1e-9 * scale)`` noise added, where
    ``scale`` is the largest absolute score (1 if all are zero).
    Otherwise the scores are returned unchanged.
    """
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        return s
    if np.count_nonzero(s == s.min()) <= alpha * s.size:
        return s
    scale = float(np.max(np.abs(s))) or 1.0
    return s + rng.uniform(0.0, TIE_JITTER_SCALE * scale, size=s.shape)


def superlevel_from_values(values: np.ndarray, grid: YGrid, t: float) -> IntervalSet:
    """
    Superlevel set ``{y : f(y) >= t}`` of the piecewise-linear interpolant of
    ``values``. Runs of grid points at or above ``t`` become intervals whose
    ends are placed at the linearly interpolated crossings.
    """
    v = np.asarray(values, dtype=float)
    if t == -math.inf:
        return IntervalSet(((grid.y_min, grid.y_max),))
    mask = v >= t
    if not mask.any():
        return IntervalSet()
    edges = np.diff(mask.astype(np.int8))
    starts = np.flatnonzero(edges == 1) + 1
    ends = np.flatnonzero(edges == -1)
    if mask[0]:
        starts = np.concatenate([[0], starts])
    if mask[-1]:
        ends = np.concatenate([ends, [v.size - 1]])
    pts, step = grid.points, grid.step
    out = []
    for s, e in zip(starts, ends):
        if s == 0:
            lo = grid.y_min
        else:
            lo = pts[s - 1] + step * (t - v[s - 1]) / (v[s] - v[s - 1])
            # pts[s - 1] lies below t; keep it outside despite round-off
            lo = max(lo, np.nextafter(pts[s - 1], math.inf))
        if e == v.size - 1:
            hi = grid.y_max
        else:
            hi = pts[e] + step * (v[e] - t) / (v[e] - v[e + 1])
            hi = min(hi, np.nextafter(pts[e + 1], -math.inf))
        out.append((lo, hi))
    return IntervalSet(tuple(out))


def superlevel_intervals(density: GridDensity, t: float) -> IntervalSet:
    return superlevel_from_values(density.values, density.grid, t)


def superlevel_counts(values: np.ndarray, thresholds) -> np.ndarray:
    """Number of intervals in each row's superlevel set (vectorised)."""
    values = np.atleast_2d(values)
    t = np.asarray(thresholds, dtype=float).reshape(-1, 1)
    mask = values >= t
    rises = np.count_nonzero(np.diff(mask.astype(np.int8), axis=1) == 1, axis=1)
    return rises + mask[:, 0]


# ----------------------------------------------------------------------------
# Baselines
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class KnnRegressor:
    """k-NN mean and empirical-quantile regressor."""

    x_train: np.ndarray
    y_train: np.ndarray
    k: int
    _tree: cKDTree = None

    def neighbours(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.x_train.shape[1]:
            raise InvalidInput(f"expected {self.x_train.shape[1]} features, got {X.shape[1]}")
        _, idx = self._tree.query(X, k=self.k)
        return self.y_train[np.asarray(idx).reshape(X.shape[0], self.k)]

    def predict_mean(self, X) -> np.ndarray:
        return self.neighbours(X).mean(axis=1)

    def predict_quantiles(self, X, levels) -> np.ndarray:
        """Empirical quantiles of the neighbour responses, shape ``(m, len(levels))``."""
        return np.quantile(self.neighbours(X), np.asarray(levels, dtype=float), axis=1).T


def fit_knn_regressor(train_x, train_y, k: int = 100) -> KnnRegressor:
    x = np.asarray(train_x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(train_y, dtype=float).ravel()
    if x.shape[0] != y.shape[0]:
        raise InvalidInput("train_x and train_y have different lengths")
    k = int(k)
    if not 1 <= k <= y.size:
        raise InvalidInput(f"need 1 <= k <= n, got k={k}, n={y.size}")
    return KnnRegressor(x, y, k, cKDTree(x))


@dataclass(frozen=True)
class VanillaCpModel:
    regressor: KnnRegressor
    q: float

    def predict_many(self, X) -> list[IntervalSet]:
        mu = self.regressor.predict_mean(X)
        if math.isinf(self.q):
            return [IntervalSet(((-math.inf, math.inf),)) for _ in mu]
        return [IntervalSet(((m - self.q, m + self.q),)) for m in mu]

    def predict(self, x) -> IntervalSet:
        return self.predict_many(np.atleast_2d(x))[0]


def calibrate_vanilla_cp(regressor: KnnRegressor, cal, alpha: float) -> VanillaCpModel:
    """Absolute-residual split conformal around the k-NN mean."""
    resid = np.abs(cal.y - regressor.predict_mean(cal.X))
    return VanillaCpModel(regressor, upper_quantile_conformal(resid, alpha))


def vanilla_cp_predict(regressor: KnnRegressor, cal, alpha: float, x) -> IntervalSet:
    return calibrate_vanilla_cp(regressor, cal, alpha).predict(x)


@dataclass(frozen=True)
class CqrModel:
    regressor: KnnRegressor
    alpha: float
    q: float

    def quantile_band(self, X) -> np.ndarray:
        """Lower and upper k-NN quantile curves; crossed pairs collapse to their midpoint."""
        band = self.regressor.predict_quantiles(X, [self.alpha / 2, 1 - self.alpha / 2])
        mid = band.mean(axis=1)
        crossed = band[:, 0] > band[:, 1]
        band[crossed, 0] = mid[crossed]
        band[crossed, 1] = mid[crossed]
        return band

    def predict_many(self, X) -> list[IntervalSet]:
        band = self.quantile_band(X)
        if math.isinf(self.q):
            return [IntervalSet(((-math.inf, math.inf),)) for _ in band]
        out = []
        for lo, hi in band:
            lo, hi = lo - self.q, hi + self.q
            # a negative correction larger than the half-width empties the set
            out.append(IntervalSet(((lo, hi),)) if lo <= hi else IntervalSet())
        return out

    def predict(self, x) -> IntervalSet:
        return self.predict_many(np.atleast_2d(x))[0]


def calibrate_cqr(regressor: KnnRegressor, cal, alpha: float) -> CqrModel:
    """Conformalised quantile regression on k-NN empirical quantiles."""
    model = CqrModel(regressor, alpha, 0.0)
    band = model.quantile_band(cal.X)
    scores = np.maximum(band[:, 0] - cal.y, cal.y - band[:, 1])
    return CqrModel(regressor, alpha, upper_quantile_conformal(scores, alpha))


def cqr_predict(regressor: KnnRegressor, cal, alpha: float, x) -> IntervalSet:
    return calibrate_cqr(regressor, cal, alpha).predict(x)


def cdf_values(values: np.ndarray, grid: YGrid) -> np.ndarray:
    """Row-wise cumulative trapezoid integrals, forced nondecreasing."""
    cdf = cumulative_trapezoid(np.atleast_2d(values), dx=grid.step, axis=-1, initial=0.0)
    return np.maximum.accumulate(cdf, axis=-1)


def _rows(cde: CdeModel, X, raw):
    return eval_density_batch(cde, X) if raw is None else np.atleast_2d(raw)


@dataclass(frozen=True)
class DistSplitModel:
    cde: CdeModel
    u_lo: float
    u_hi: float

    def predict_many(self, X=None, raw=None) -> list[IntervalSet]:
        grid = self.cde.grid
        pts = grid.points
        out = []
        for F in cdf_values(_rows(self.cde, X, raw), grid):
            # first crossing of u_lo and last point at or below u_hi of the
            # piecewise-linear CDF
            lo = grid.y_min if self.u_lo <= F[0] else _inverse_left(F, pts, self.u_lo)
            hi = grid.y_max if self.u_hi >= F[-1] else _inverse_right(F, pts, self.u_hi)
            out.append(IntervalSet(((lo, hi),)) if lo <= hi else IntervalSet())
        return out

    def predict(self, x) -> IntervalSet:
        return self.predict_many(np.atleast_2d(x))[0]


def _inverse_left(F, pts, u):
    """Smallest ``y`` with ``F(y) >= u``, assuming ``F[0] < u <= F[-1]``."""
    i = int(np.searchsorted(F, u, side="left"))
    if i >= F.size:
        return float(pts[-1])
    return float(pts[i - 1] + (pts[i] - pts[i - 1]) * (u - F[i - 1]) / (F[i] - F[i - 1]))


def _inverse_right(F, pts, u):
    """Largest ``y`` with ``F(y) <= u``, assuming ``F[0] <= u < F[-1]``."""
    i = int(np.searchsorted(F, u, side="right")) - 1
    if i < 0:
        return float(pts[0])
    return float(pts[i] + (pts[i + 1] - pts[i]) * (u - F[i]) / (F[i + 1] - F[i]))


def calibrate_dist_split(cde: CdeModel, cal, alpha: float, raw_cal=None) -> DistSplitModel:
    """
    Conformal interval from estimated conditional CDF values.

    Calibration scores are ``F(y_i | x_i)``. The lower cut is the
    ``floor(alpha/2 (m+1))``-th order statistic (0 when that index is 0),
    the upper cut the ``ceil((1-alpha/2)(m+1))``-th (1 past the end), and
    the set is ``{y : u_lo <= F(y | x) <= u_hi}``. Cuts at 0 or 1 extend
    the interval to the grid end, as a ``-inf`` density threshold does.
    """
    grid = cde.grid
    F = cdf_values(_rows(cde, cal.X, raw_cal), grid)
    u = interp_values(F, grid, cal.y)
    # interp_values reads 0 outside the grid; above the grid the CDF is 1
    u = np.where(np.asarray(cal.y) > grid.y_max, 1.0, u)
    u_lo = lower_quantile(u, alpha / 2)
    u_hi = upper_quantile_conformal(u, alpha / 2)
    return DistSplitModel(cde, max(u_lo, 0.0), min(u_hi, 1.0))


def dist_split_predict(cde: CdeModel, cal, alpha: float, x) -> IntervalSet:
    return calibrate_dist_split(cde, cal, alpha).predict(x)


def hpd_density_threshold(values: np.ndarray, grid: YGrid, T: float) -> float:
    """
    Density level ``t`` with ``{y : hpd_mass(y) <= T} = {y : f(y) >= t}``.

    ``hpd_mass`` is a nonincreasing step function of the density level, so
    the set is a strict superlevel set ``{f > v}`` of the first sorted grid
    value ``v`` whose mass exceeds ``T``; ``t`` is the next float above
    ``v``. Returns ``-inf`` when every level qualifies.
    """
    v = np.asarray(values, dtype=float)
    if T >= 1.0 or math.isinf(T):
        return -math.inf
    order = np.argsort(-v, kind="stable")
    desc = v[order]
    cum = np.cumsum((v * grid.weights)[order])
    # the mass at a level includes every grid point tied with it
    group_end = np.searchsorted(-desc, -desc, side="right") - 1
    mass = np.clip(cum[group_end], 0.0, 1.0)
    p = int(np.searchsorted(mass, T, side="right"))
    if p >= v.size:
        return -math.inf
    return float(np.nextafter(desc[p], math.inf))


@dataclass(frozen=True)
class HpdSplitModel:
    cde: CdeModel
    T: float

    def thresholds(self, values) -> np.ndarray:
        return np.array([hpd_density_threshold(v, self.cde.grid, self.T) for v in values])

    def predict_many(self, X=None, raw=None) -> list[IntervalSet]:
        values = _rows(self.cde, X, raw)
        return [superlevel_from_values(v, self.cde.grid, t) for v, t in zip(values, self.thresholds(values))]

    def predict(self, x) -> IntervalSet:
        return self.predict_many(np.atleast_2d(x))[0]


def hpd_scores(values: np.ndarray, grid: YGrid, y) -> np.ndarray:
    """HPD mass of each response under its own density row; 1 outside the grid."""
    level = interp_values(values, grid, y)
    return np.clip(hpd_mass_values(values, grid, level), 0.0, 1.0)


def calibrate_hpd_split(cde: CdeModel, cal, alpha: float, raw_cal=None, seed=0) -> HpdSplitModel:
    """HPD-split: conformal upper quantile of the HPD-mass scores."""
    s = hpd_scores(_rows(cde, cal.X, raw_cal), cde.grid, cal.y)
    s = jitter_ties(s, alpha, np.random.default_rng(seed))
    return HpdSplitModel(cde, upper_quantile_conformal(s, alpha))


def hpd_split_predict(cde: CdeModel, cal, alpha: float, x) -> IntervalSet:
    return calibrate_hpd_split(cde, cal, alpha).predict(x)
