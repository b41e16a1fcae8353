"""
SCD-split: conditional-density split conformal prediction with Gaussian
smoothing of the estimated densities.

For every candidate smoothing width the training densities are smoothed,
clustered by profile distance, calibrated per cell on the calibration split,
and scored on the validation split by how far the average number of disjoint
intervals is from the requested target. The best width is frozen together
with its partition and calibration thresholds. CD-split is the ``sigma = 0``
case.
"""
from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .conformal import IntervalSet, jitter_ties, lower_quantile, superlevel_counts, superlevel_from_values
from .datagen import Dataset, split_sizes, three_way_split
from .errors import InvalidInput
from .grid_density import BANDWIDTH_RULES, CdeModel, YGrid, eval_density_batch, fit_cde, interp_values, make_grid
from .partition import DEFAULT_Z_POINTS, Partition, assign_cells, kmeanspp_fit, profile_values, z_grid_for
from .smoothing import SmoothParams, SmoothPath, smooth_values

logger = logging.getLogger(__name__)


class LossKind(str, enum.Enum):
    GLOBAL_L1 = "global_l1"
    GLOBAL_L2 = "global_l2"
    MAE = "mae"
    MSE = "mse"


def validation_loss(counts, k_target: float, kind="global_l1") -> float:
    """
    Distance between validation interval counts and the target.

    The global losses compare the mean count with the target, the inner
    ones (``mae``, ``mse``) average the per-point deviation.
    """
    c = np.asarray(counts, dtype=float).ravel()
    if c.size == 0:
        raise InvalidInput("counts is empty")
    kind = LossKind(kind)
    if kind is LossKind.GLOBAL_L1:
        return float(abs(c.mean() - k_target))
    if kind is LossKind.GLOBAL_L2:
        return float((c.mean() - k_target) ** 2)
    if kind is LossKind.MAE:
        return float(np.mean(np.abs(c - k_target)))
    return float(np.mean((c - k_target) ** 2))


def default_n_clusters(n_cal: int) -> int:
    return max(1, min(10, n_cal // 100))


def default_sigma_grid(grid: YGrid, n_values: int = 8) -> tuple[float, ...]:
    """Zero plus ``n_values`` log-spaced widths from 2% to 50% of the grid span."""
    nonzero = np.geomspace(0.02 * grid.span, 0.5 * grid.span, n_values)
    return (0.0,) + tuple(float(s) for s in nonzero)


@dataclass(frozen=True)
class ScdConfig:
    alpha: float = 0.1
    sigma_grid: tuple | None = None  # None: default_sigma_grid of the fitted grid
    k_target: float = 2.0
    loss_kind: LossKind = LossKind.GLOBAL_L1
    split_fractions: tuple = (0.4, 0.2, 0.4)
    n_clusters: int | None = None  # None: default_n_clusters(n_cal)
    seed: int = 0
    k_neighbors: int = 100
    n_grid: int = 1024
    margin_sds: float = 3.0
    smooth_path: SmoothPath = SmoothPath.SPECTRAL
    truncation: float = 6.0
    kmeans_iters: int = 100
    z_points: int = DEFAULT_Z_POINTS
    bandwidth: str = "cv"  # response bandwidth rule of the density estimator

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidInput("alpha must lie in (0, 1)")
        if self.k_target < 1:
            raise InvalidInput("k_target must be >= 1")
        if self.sigma_grid is not None:
            sg = tuple(float(s) for s in self.sigma_grid)
            if not sg or any(s < 0 or not math.isfinite(s) for s in sg):
                raise InvalidInput("sigma_grid must be a nonempty list of nonnegative numbers")
            object.__setattr__(self, "sigma_grid", tuple(sorted(set(sg))))
        fr = tuple(float(f) for f in self.split_fractions)
        if len(fr) != 3 or any(f < 0.1 for f in fr) or abs(sum(fr) - 1) > 1e-9:
            raise InvalidInput("split_fractions must be three numbers >= 0.1 summing to 1")
        object.__setattr__(self, "split_fractions", fr)
        if self.n_clusters is not None and self.n_clusters < 1:
            raise InvalidInput("n_clusters must be >= 1")
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        object.__setattr__(self, "smooth_path", SmoothPath(self.smooth_path))
        if self.bandwidth not in BANDWIDTH_RULES:
            raise InvalidInput(f"bandwidth must be one of {BANDWIDTH_RULES}")

    def smooth_params(self, sigma: float) -> SmoothParams:
        return SmoothParams(sigma, self.truncation, self.smooth_path)

    @property
    def cde_seed(self) -> int:
        return self.seed + 1

    @property
    def cluster_seed(self) -> int:
        return self.seed + 2


@dataclass(frozen=True)
class SigmaReport:
    """Validation summary for one candidate width."""

    sigma: float
    mean_count: float
    losses: dict
    cell_thresholds: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class CellCalibration:
    smooth: SmoothParams
    partition: Partition
    cell_thresholds: np.ndarray
    warnings: tuple = ()


def calibrate_cells(cde: CdeModel, raw_train, raw_cal, y_cal, smooth: SmoothParams,
                    alpha: float, n_clusters: int, seed: int, kmeans_iters: int = 100,
                    z_points: int = DEFAULT_Z_POINTS) -> CellCalibration:
    """
    Partition the training profiles of the smoothed densities and compute a
    lower conformal quantile of the smoothed calibration scores in each cell.
    A cell without calibration points gets a ``-inf`` threshold.
    """
    grid = cde.grid
    sm_train = smooth_values(raw_train, grid, smooth)
    z_grid = z_grid_for(sm_train, z_points)
    partition = kmeanspp_fit(profile_values(sm_train, grid, z_grid), n_clusters,
                             kmeans_iters, seed, z_grid=z_grid)
    sm_cal = smooth_values(raw_cal, grid, smooth)
    cells = assign_cells(partition, profile_values(sm_cal, grid, z_grid))
    scores = interp_values(sm_cal, grid, y_cal)

    thresholds = np.empty(partition.n_cells)
    notes = []
    for j in range(partition.n_cells):
        s = scores[cells == j]
        if s.size == 0:
            thresholds[j] = -math.inf
            notes.append(f"cell {j} has no calibration points (sigma={smooth.sigma:g})")
            continue
        s = jitter_ties(s, alpha, np.random.default_rng([seed, j]))
        thresholds[j] = lower_quantile(s, alpha)
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    thresholds.setflags(write=False)
    return CellCalibration(smooth, partition, thresholds, tuple(notes))


def _thresholds_for(cal: CellCalibration, grid: YGrid, raw):
    sm = smooth_values(raw, grid, cal.smooth)
    cells = assign_cells(cal.partition, profile_values(sm, grid, cal.partition.z_grid))
    return sm, cal.cell_thresholds[cells]


@dataclass(frozen=True)
class ScdModel:
    """Fitted SCD-split predictor."""

    cde: CdeModel
    sigma_hat: float
    partition: Partition
    cell_thresholds: np.ndarray
    config: ScdConfig
    sigma_reports: tuple = ()
    warnings: tuple = ()

    @property
    def calibration(self) -> CellCalibration:
        return CellCalibration(self.config.smooth_params(self.sigma_hat), self.partition,
                               self.cell_thresholds, self.warnings)

    def smoothed_with_thresholds(self, X=None, raw=None):
        """Smoothed test densities and the threshold of each one's cell."""
        if raw is None:
            raw = eval_density_batch(self.cde, X)
        return _thresholds_for(self.calibration, self.cde.grid, raw)

    def predict_many(self, X=None, raw=None) -> list[IntervalSet]:
        sm, t = self.smoothed_with_thresholds(X, raw)
        return [superlevel_from_values(v, self.cde.grid, ti) for v, ti in zip(sm, t)]

    def predict(self, x) -> IntervalSet:
        return self.predict_many(np.atleast_2d(np.asarray(x, dtype=float)))[0]


def predict_set(model: ScdModel, x) -> IntervalSet:
    return model.predict(x)


def fit_scd_split(train: Dataset, val: Dataset, cal: Dataset, config: ScdConfig,
                  cde: CdeModel | None = None, raw: dict | None = None) -> ScdModel:
    """
    SCD-split on an existing train/validation/calibration split.

    ``cde`` and ``raw`` (unsmoothed density rows keyed ``"train"``,
    ``"val"``, ``"cal"``) may be supplied to reuse work across methods.
    Training rows must follow ``cde.x_train``, which is canonically ordered.
    """
    if cde is None:
        grid = make_grid(train.y, config.n_grid, config.margin_sds)
        cde = fit_cde(train.X, train.y, min(config.k_neighbors, train.n), grid, config.cde_seed,
                      config.bandwidth)
    raw = dict(raw or {})
    if "train" not in raw:
        raw["train"] = eval_density_batch(cde, cde.x_train)
    for key, part in (("val", val), ("cal", cal)):
        if key not in raw:
            raw[key] = eval_density_batch(cde, part.X)

    sigma_grid = config.sigma_grid or default_sigma_grid(cde.grid)
    n_clusters = config.n_clusters or default_n_clusters(cal.n)
    n_clusters = min(n_clusters, train.n)

    reports = []
    best = None
    for sigma in sigma_grid:
        calib = calibrate_cells(cde, raw["train"], raw["cal"], cal.y, config.smooth_params(sigma),
                                config.alpha, n_clusters, config.cluster_seed,
                                config.kmeans_iters, config.z_points)
        sm_val, t_val = _thresholds_for(calib, cde.grid, raw["val"])
        counts = superlevel_counts(sm_val, t_val)
        losses = {k.value: validation_loss(counts, config.k_target, k) for k in LossKind}
        reports.append(SigmaReport(sigma, float(counts.mean()), losses, calib.cell_thresholds))
        loss = losses[config.loss_kind.value]
        logger.debug("sigma=%g mean_count=%.3f loss=%.4f", sigma, counts.mean(), loss)
        # strict comparison keeps the smallest sigma among ties
        if best is None or loss < best[0]:
            best = (loss, calib)

    _, chosen = best
    return ScdModel(cde, chosen.smooth.sigma, chosen.partition, chosen.cell_thresholds,
                    config, tuple(reports), chosen.warnings)


def fit_scd(data: Dataset, config: ScdConfig) -> ScdModel:
    """Split ``data`` three ways with ``config.seed`` and run SCD-split."""
    n_tr, _, n_cal = split_sizes(data.n, config.split_fractions)
    if data.n < 60 or min(n_tr, n_cal) < 20:
        raise InvalidInput("SCD-split needs at least 60 observations")
    train, val, cal = three_way_split(data, config.split_fractions, config.seed)
    return fit_scd_split(train, val, cal, config)


def fit_cd_split(cde: CdeModel, cal: Dataset, alpha: float, n_clusters: int | None = None,
                 seed: int = 0, raw_train=None, raw_cal=None, config: ScdConfig | None = None) -> ScdModel:
    """
    CD-split: the unsmoothed pipeline without a validation loop.

    ``seed`` plays the role of ``ScdConfig.seed``, so a model built here
    matches ``fit_scd`` with ``sigma_grid=(0,)`` on the same split.
    """
    config = replace(config or ScdConfig(), alpha=alpha, sigma_grid=(0.0,), seed=seed,
                     n_clusters=n_clusters)
    if raw_train is None:
        raw_train = eval_density_batch(cde, cde.x_train)
    if raw_cal is None:
        raw_cal = eval_density_batch(cde, cal.X)
    n_clusters = min(n_clusters or default_n_clusters(cal.n), cde.n_train)
    calib = calibrate_cells(cde, raw_train, raw_cal, cal.y, config.smooth_params(0.0), alpha,
                            n_clusters, config.cluster_seed, config.kmeans_iters, config.z_points)
    return ScdModel(cde, 0.0, calib.partition, calib.cell_thresholds, config, (), calib.warnings)


def cd_split_predict(cde: CdeModel, cal: Dataset, alpha: float, n_clusters, x, seed: int = 0) -> IntervalSet:
    return fit_cd_split(cde, cal, alpha, n_clusters, seed).predict(x)
