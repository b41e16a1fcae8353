"""
Conditional densities on a uniform response grid.

A :class:`YGrid` fixes the discretisation of the response axis, a
:class:`GridDensity` holds one normalised density on it, and
:class:`CdeModel` is a k-nearest-neighbour Nadaraya-Watson conditional
kernel density estimator that produces such densities for new covariates.

All quadrature uses the trapezoid rule so that CDFs, highest-density masses
and interval lengths computed elsewhere are mutually consistent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.integrate import cumulative_trapezoid
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import InvalidInput, InvalidState

MIN_GRID_POINTS = 16
NORMALIZATION_TOL = 1e-6
# Subsample size for the covariate bandwidth rule of thumb.
BANDWIDTH_SUBSAMPLE = 256
# Rows of the weight matrix processed at once by ``eval_density_batch``.
EVAL_CHUNK = 2048
# Candidate fractions of the rule-of-thumb response bandwidth tried by
# leave-one-out likelihood cross-validation.
CV_FRACTIONS = 2.0 ** (-0.5 * np.arange(11))
BANDWIDTH_RULES = ("cv", "rule")


@dataclass(frozen=True)
class YGrid:
    """Uniform grid ``y_min = y_0 < ... < y_{n-1} = y_max``."""

    y_min: float
    y_max: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.y_min) and np.isfinite(self.y_max)):
            raise InvalidInput("grid bounds must be finite")
        if not self.y_min < self.y_max:
            raise InvalidInput(f"need y_min < y_max, got [{self.y_min}, {self.y_max}]")
        if int(self.n_points) != self.n_points or self.n_points < MIN_GRID_POINTS:
            raise InvalidInput(f"n_points must be an integer >= {MIN_GRID_POINTS}")

    @property
    def step(self) -> float:
        return (self.y_max - self.y_min) / (self.n_points - 1)

    @property
    def span(self) -> float:
        return self.y_max - self.y_min

    @cached_property
    def points(self) -> np.ndarray:
        pts = np.linspace(self.y_min, self.y_max, self.n_points)
        pts.setflags(write=False)
        return pts

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights; ``weights @ f`` integrates ``f``."""
        w = np.full(self.n_points, self.step)
        w[0] = w[-1] = 0.5 * self.step
        w.setflags(write=False)
        return w

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid integral along the last axis."""
        return np.asarray(values) @ self.weights

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y)
        return (y >= self.y_min) & (y <= self.y_max)


def normalize_values(values: np.ndarray, grid: YGrid) -> np.ndarray:
    """Scale rows of ``values`` to unit trapezoid integral (zero rows are left alone)."""
    values = np.asarray(values, dtype=float)
    mass = grid.integrate(values)
    mass = np.where(mass > 0, mass, 1.0)
    if values.ndim == 1:
        return values / mass
    return values / mass[..., None]


def interp_values(values: np.ndarray, grid: YGrid, y) -> np.ndarray:
    """
    Evaluate piecewise-linear densities at ``y``; zero outside the grid.

    ``values`` is either one density (shape ``(n_points,)``, any shape of
    ``y``) or a stack of densities (shape ``(m, n_points)``) paired
    row-by-row with ``y`` of shape ``(m,)``.
    """
    values = np.asarray(values, dtype=float)
    y = np.asarray(y, dtype=float)
    if values.ndim == 1:
        return np.interp(y, grid.points, values, left=0.0, right=0.0)
    if y.shape != values.shape[:1]:
        raise InvalidInput("need one y per density row")
    pos = (y - grid.y_min) / grid.step
    inside = (pos >= 0) & (pos <= grid.n_points - 1)
    j = np.clip(np.floor(pos).astype(np.int64), 0, grid.n_points - 2)
    frac = np.clip(pos - j, 0.0, 1.0)
    rows = np.arange(values.shape[0])
    out = values[rows, j] * (1.0 - frac) + values[rows, j + 1] * frac
    return np.where(inside, out, 0.0)


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative density values on ``grid`` with unit trapezoid integral."""

    grid: YGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n_points,):
            raise InvalidInput(
                f"expected {self.grid.n_points} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise InvalidInput("density values must be finite")
        if np.any(vals < 0):
            raise InvalidInput("density values must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_values(cls, grid: YGrid, values) -> "GridDensity":
        """Build a density from raw nonnegative values, normalising them."""
        values = np.asarray(values, dtype=float)
        if np.any(values < 0):
            raise InvalidInput("density values must be nonnegative")
        if grid.integrate(values) <= 0:
            raise InvalidInput("cannot normalise a density with zero mass")
        return cls(grid, normalize_values(values, grid))

    @property
    def integral(self) -> float:
        return float(self.grid.integrate(self.values))

    @property
    def is_normalized(self) -> bool:
        return abs(self.integral - 1.0) <= NORMALIZATION_TOL

    def __call__(self, y):
        return interp_values(self.values, self.grid, y)


def make_grid(y_values, n_points: int = 1024, margin_sds: float = 3.0) -> YGrid:
    """
    Grid spanning the observed responses plus ``margin_sds`` sample standard
    deviations (denominator ``n - 1``) on either side.
    """
    y = np.asarray(y_values, dtype=float).ravel()
    if y.size == 0:
        raise InvalidInput("y_values is empty")
    if not np.all(np.isfinite(y)):
        raise InvalidInput("y_values contains non-finite entries")
    sd = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
    return YGrid(
        float(y.min() - margin_sds * sd), float(y.max() + margin_sds * sd), int(n_points)
    )


def _canonical_order(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # lexsort treats the last key as primary
    keys = [x[:, j] for j in range(x.shape[1] - 1, -1, -1)]
    return np.lexsort([y] + keys)


@dataclass(frozen=True)
class CdeModel:
    """
    Fitted k-NN Gaussian-kernel conditional density estimator.

    For a query ``x`` the ``k`` nearest training covariates receive weights
    ``exp(-|x - x_i|^2 / (2 h_x^2))`` and the density is the weighted
    mixture of ``N(y_i, h_y^2)`` kernels, evaluated on ``grid`` and
    renormalised.
    """

    x_train: np.ndarray
    y_train: np.ndarray
    h_x: float
    h_y: float
    k: int
    grid: YGrid
    _tree: cKDTree = field(repr=False, compare=False)
    _kernel_rows: np.ndarray = field(repr=False, compare=False)

    @property
    def n_train(self) -> int:
        return self.x_train.shape[0]

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]


def _loo_log_likelihood(x, y, tree, k, h_x, h_candidates):
    """Mean leave-one-out log density of each training response, per candidate h_y."""
    n = x.shape[0]
    kk = min(k + 1, n)
    dist, idx = tree.query(x, k=kk)
    dist = np.asarray(dist).reshape(n, kk)
    idx = np.asarray(idx).reshape(n, kk)
    # drop each point from its own neighbourhood (duplicates may reorder it)
    is_self = idx == np.arange(n)[:, None]
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), kk - 1)
    keep = np.ones_like(is_self)
    keep[np.arange(n), drop] = False
    dist = dist[keep].reshape(n, kk - 1)
    idx = idx[keep].reshape(n, kk - 1)
    d2 = dist * dist
    w = np.exp(-(d2 - d2[:, :1]) / (2.0 * h_x**2))
    w /= w.sum(axis=1, keepdims=True)
    resid = y[:, None] - y[idx]
    out = []
    for h in h_candidates:
        dens = (w * np.exp(-0.5 * (resid / h) ** 2)).sum(axis=1) / (h * np.sqrt(2 * np.pi))
        out.append(float(np.mean(np.log(np.maximum(dens, 1e-300)))))
    return np.array(out)


def fit_cde(train_x, train_y, k: int, grid: YGrid, seed=0, bandwidth: str = "cv") -> CdeModel:
    """
    Fit the k-NN conditional density estimator.

    ``h_x`` is the median pairwise distance within a seeded subsample of at
    most 256 covariate rows. The rule-of-thumb response bandwidth is
    ``1.06 * sd(y) * n^(-1/5)``; with ``bandwidth="rule"`` it is used as
    is, with ``bandwidth="cv"`` (default) the fraction of it in
    ``CV_FRACTIONS`` maximising the leave-one-out conditional
    log-likelihood of the training responses is used instead. The
    normal-reference rule oversmooths multimodal responses badly, since
    ``sd(y)`` then measures the spread between modes.

    Both bandwidths are floored (``h_x >= 1e-6``, ``h_y >= 1e-3 * grid.step``)
    so degenerate data does not divide by zero. Training rows are put into a
    canonical order first, so the fit does not depend on row order.
    """
    if bandwidth not in BANDWIDTH_RULES:
        raise InvalidInput(f"bandwidth must be one of {BANDWIDTH_RULES}")
    x = np.asarray(train_x, dtype=float)
    y = np.asarray(train_y, dtype=float).ravel()
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if y.shape[0] != n:
        raise InvalidInput("train_x and train_y have different lengths")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInput("training data contains non-finite values")
    k = int(k)
    if k < 1 or n < k:
        raise InvalidInput(f"need 1 <= k <= n, got k={k}, n={n}")

    order = _canonical_order(x, y)
    x, y = x[order], y[order]
    tree = cKDTree(x)

    rng = np.random.default_rng(seed)
    if n > BANDWIDTH_SUBSAMPLE:
        sub = np.sort(rng.choice(n, BANDWIDTH_SUBSAMPLE, replace=False))
    else:
        sub = np.arange(n)
    dists = pdist(x[sub]) if sub.size > 1 else np.zeros(1)
    h_x = max(float(np.median(dists)), 1e-6)

    floor_y = 1e-3 * grid.step
    sd_y = float(np.std(y, ddof=1)) if n > 1 else 0.0
    h_y = max(1.06 * sd_y * n ** (-0.2), floor_y)
    if bandwidth == "cv" and n > 2 and sd_y > 0:
        candidates = np.maximum(h_y * CV_FRACTIONS, floor_y)
        scores = _loo_log_likelihood(x, y, tree, k, h_x, candidates)
        h_y = float(candidates[int(np.argmax(scores))])

    # Row i is the response kernel of training point i on the grid; a
    # density is then a weight vector times this matrix.
    z = (grid.points[None, :] - y[:, None]) / h_y
    kernel_rows = np.exp(-0.5 * z * z) / (h_y * np.sqrt(2 * np.pi))

    x.setflags(write=False)
    y.setflags(write=False)
    kernel_rows.setflags(write=False)
    return CdeModel(x, y, h_x, h_y, k, grid, tree, kernel_rows)


def _knn_weights(model: CdeModel, x: np.ndarray):
    dist, idx = model._tree.query(x, k=model.k)
    dist = np.asarray(dist).reshape(x.shape[0], model.k)
    idx = np.asarray(idx).reshape(x.shape[0], model.k)
    d2 = dist * dist
    # shifting by the nearest distance cancels in the normalisation
    logw = -(d2 - d2[:, :1]) / (2.0 * model.h_x**2)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    return w, idx


def _check_query(model: CdeModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise InvalidInput(f"expected covariates of dimension {model.dim}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("covariates must be finite")
    return x


def eval_density_batch(model: CdeModel, x) -> np.ndarray:
    """Normalised density values, one row per covariate row of ``x``."""
    x = _check_query(model, x)
    out = np.empty((x.shape[0], model.grid.n_points))
    for start in range(0, x.shape[0], EVAL_CHUNK):
        xs = x[start : start + EVAL_CHUNK]
        w, idx = _knn_weights(model, xs)
        rows = np.repeat(np.arange(xs.shape[0]), model.k)
        wmat = sparse.csr_matrix(
            (w.ravel(), (rows, idx.ravel())), shape=(xs.shape[0], model.n_train)
        )
        dens = np.asarray(wmat @ model._kernel_rows)
        out[start : start + EVAL_CHUNK] = normalize_values(dens, model.grid)
    return out


def eval_density(model: CdeModel, x) -> GridDensity:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidInput("eval_density takes a single covariate vector")
    return GridDensity(model.grid, eval_density_batch(model, x)[0])


def density_cdf(density: GridDensity) -> np.ndarray:
    """Cumulative trapezoid integral ``F(y_j)``; ``F(y_0) = 0``."""
    if not density.is_normalized:
        raise InvalidState("density_cdf needs a normalised density")
    cdf = cumulative_trapezoid(density.values, dx=density.grid.step, initial=0.0)
    return np.maximum.accumulate(cdf)


def hpd_mass_values(values: np.ndarray, grid: YGrid, level) -> np.ndarray:
    """
    Mass of grid points whose density is at least ``level``, per row.

    ``values`` has shape ``(m, n_points)`` and ``level`` shape ``(m,)``.
    """
    values = np.atleast_2d(values)
    level = np.asarray(level, dtype=float).reshape(-1)
    contrib = values * grid.weights
    return np.where(values >= level[:, None], contrib, 0.0).sum(axis=1)


def hpd_mass(density: GridDensity, y: float) -> float:
    """Probability mass of ``{y': f(y') >= f(y)}``, a value in ``[0, 1]``."""
    if not np.isfinite(y) or not density.grid.contains(y):
        raise InvalidInput(f"y={y} lies outside the grid")
    level = density(y)
    mass = hpd_mass_values(density.values[None, :], density.grid, [level])[0]
    return float(min(max(mass, 0.0), 1.0))
