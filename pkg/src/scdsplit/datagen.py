"""
Synthetic benchmarks, feature standardisation, seeded splits and CSV input.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInput

logger = logging.getLogger(__name__)

SIMPLE_DIM = 5
SIMPLE_MEANS = (0.0, 1.0, 2.0)
SIMPLE_SD = 0.2
SIMPLE_SLOPE = 0.1

COMPLEX_DIM = 5
COMPLEX_MU_BASE = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
COMPLEX_SIGMAS = (1.0, 1.2, 1.5, 1.0, 1.5, 1.2, 1.0)
COMPLEX_BETA_SD = 1.0
COMPLEX_GAMMA_SD = 0.5


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_means: np.ndarray | None = None
    feature_sds: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise InvalidInput("X and y have different numbers of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInput("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        return replace(self, X=self.X[idx], y=self.y[idx])


@dataclass(frozen=True)
class ComplexMixtureParams:
    mu_base: np.ndarray
    sigmas: np.ndarray
    beta: np.ndarray  # (K, d) softmax weights
    gamma: np.ndarray  # (K, d) mean shifts

    def __post_init__(self):
        if np.any(np.asarray(self.sigmas) <= 0):
            raise InvalidInput("component sds must be positive")

    @property
    def n_components(self) -> int:
        return len(self.mu_base)

    @classmethod
    def draw(cls, rng, dim: int = COMPLEX_DIM) -> "ComplexMixtureParams":
        k = len(COMPLEX_MU_BASE)
        beta = rng.normal(0.0, COMPLEX_BETA_SD, size=(k, dim))
        gamma = rng.normal(0.0, COMPLEX_GAMMA_SD, size=(k, dim))
        return cls(np.array(COMPLEX_MU_BASE), np.array(COMPLEX_SIGMAS), beta, gamma)

    def weights(self, X: np.ndarray) -> np.ndarray:
        logits = X @ self.beta.T
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        return w / w.sum(axis=1, keepdims=True)

    def means(self, X: np.ndarray) -> np.ndarray:
        return self.mu_base[None, :] + X @ self.gamma.T


def simple_conditional_cdf(y, x1):
    """CDF of the simple benchmark's response given the raw first covariate."""
    from scipy.stats import norm

    y = np.asarray(y, dtype=float)
    return sum(norm.cdf(y, m + SIMPLE_SLOPE * x1, SIMPLE_SD) for m in SIMPLE_MEANS) / 3.0


def sample_simple_y(x1, rng) -> np.ndarray:
    x1 = np.asarray(x1, dtype=float)
    comp = rng.integers(0, len(SIMPLE_MEANS), size=x1.shape)
    return np.asarray(SIMPLE_MEANS)[comp] + SIMPLE_SLOPE * x1 + rng.normal(0.0, SIMPLE_SD, x1.shape)


def gen_simple(n: int, seed, standardized: bool = True) -> Dataset:
    """
    Equal-weight three-component mixture with means ``{0, 1, 2} + 0.1 x_1``
    and sd 0.2, covariates iid Uniform(-5, 5) in five dimensions. The
    response uses the raw covariates; standardisation is applied afterwards.
    """
    if n < 1:
        raise InvalidInput("n must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-5.0, 5.0, size=(n, SIMPLE_DIM))
    y = sample_simple_y(X[:, 0], rng)
    data = Dataset(X, y, meta={"generator": "simple"})
    return standardize(data) if standardized else data


def gen_complex(n: int, seed, params: ComplexMixtureParams | None = None,
                standardized: bool = True) -> Dataset:
    """
    Seven-component Gaussian mixture whose weights are a softmax of
    ``X beta_k`` and whose means are ``mu_base_k + X gamma_k``.

    ``beta`` and ``gamma`` are drawn once from the seed (or passed in) and
    shared by every sample; they are kept in ``meta`` for auditing.
    """
    if n < 1:
        raise InvalidInput("n must be >= 1")
    rng = np.random.default_rng(seed)
    if params is None:
        params = ComplexMixtureParams.draw(rng)
    X = rng.normal(0.0, 1.0, size=(n, params.beta.shape[1]))
    w = params.weights(X)
    # inverse-CDF categorical draw, one uniform per row
    u = rng.uniform(size=(n, 1))
    comp = np.minimum((np.cumsum(w, axis=1) < u).sum(axis=1), params.n_components - 1)
    mu = params.means(X)[np.arange(n), comp]
    y = mu + params.sigmas[comp] * rng.normal(size=n)
    meta = {"generator": "complex", "beta": params.beta.tolist(), "gamma": params.gamma.tolist()}
    data = Dataset(X, y, meta=meta)
    return standardize(data) if standardized else data


def standardize(dataset: Dataset) -> Dataset:
    """
    Centre and scale each column with the population sd (denominator n).
    Constant columns are dropped with a warning.
    """
    if dataset.n < 2:
        raise InvalidInput("need at least two rows to standardise")
    X = dataset.X
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    scale = np.maximum(np.abs(means), 1.0)
    keep = sds > 1e-12 * scale
    if not keep.all():
        dropped = np.flatnonzero(~keep).tolist()
        warnings.warn(f"dropping constant feature columns {dropped}", stacklevel=2)
    Z = (X[:, keep] - means[keep]) / sds[keep]
    return replace(dataset, X=Z, feature_means=means[keep], feature_sds=sds[keep])


def split_sizes(n: int, fractions) -> tuple[int, int, int]:
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise InvalidInput(f"fractions must be three positive numbers summing to 1, got {fr}")
    n_val = int(math.floor(fr[1] * n + 1e-9))
    n_cal = int(math.floor(fr[2] * n + 1e-9))
    n_tr = n - n_val - n_cal
    if min(n_tr, n_val, n_cal) < 1:
        raise InvalidInput(f"split of n={n} by {fr} leaves an empty part")
    return n_tr, n_val, n_cal


def three_way_split(dataset: Dataset, fractions=(0.4, 0.2, 0.4), seed=0):
    """Seeded (train, validation, calibration) split; rounding remainder goes to train."""
    n_tr, n_val, _ = split_sizes(dataset.n, fractions)
    perm = np.random.default_rng(seed).permutation(dataset.n)
    tr = perm[:n_tr]
    val = perm[n_tr : n_tr + n_val]
    cal = perm[n_tr + n_val :]
    return dataset.subset(tr), dataset.subset(val), dataset.subset(cal)


def _to_float(cell: str) -> float:
    cell = cell.strip()
    if not cell:
        return math.nan
    return float(cell)


def load_csv(path, target_column: str, max_rows: int | None = None, seed=0) -> Dataset:
    """
    Read a headed, comma-separated numeric table.

    Non-numeric columns are dropped with a warning; rows with empty or
    non-finite cells are dropped. With ``max_rows`` a seeded subsample is
    taken. Features are returned unstandardised.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidInput(f"{path} is empty") from None
        rows = [r for r in reader if r]
    if target_column not in header:
        raise InvalidInput(f"target column {target_column!r} not in {header}")

    columns = {}
    for j, name in enumerate(header):
        cells = [r[j] if j < len(r) else "" for r in rows]
        try:
            columns[name] = np.array([_to_float(c) for c in cells], dtype=float)
        except ValueError:
            if name == target_column:
                raise InvalidInput(f"target column {name!r} is not numeric") from None
            warnings.warn(f"dropping non-numeric column {name!r}", stacklevel=2)

    features = [c for c in columns if c != target_column]
    y = columns[target_column]
    X = np.column_stack([columns[c] for c in features]) if features else np.empty((len(y), 0))
    ok = np.isfinite(y) & np.all(np.isfinite(X), axis=1)
    X, y = X[ok], y[ok]
    if y.size == 0:
        raise InvalidInput(f"{path} has no usable rows")
    if max_rows is not None and y.size > max_rows:
        idx = np.sort(np.random.default_rng(seed).choice(y.size, int(max_rows), replace=False))
        X, y = X[idx], y[idx]
    logger.info("loaded %d rows, %d features from %s", y.size, X.shape[1], path)
    return Dataset(X, y, meta={"source": str(path), "features": features})
