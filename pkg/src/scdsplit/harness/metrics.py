"""
Per-sample summaries of prediction sets against held-out responses.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInput


@dataclass(frozen=True)
class TrialMetrics:
    """Test-set averages; ``mean_length`` and ``mean_count`` describe set size."""

    coverage: float
    mean_length: float
    mean_count: float

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise InvalidInput(f"coverage {self.coverage} outside [0, 1]")
        if self.mean_count < 0 or self.mean_length < 0:
            raise InvalidInput("lengths and counts must be nonnegative")

    def as_dict(self) -> dict:
        return {"coverage": self.coverage, "length": self.mean_length, "count": self.mean_count}


def covered_mask(sets, y) -> np.ndarray:
    """Closed-interval membership of each ``y[i]`` in ``sets[i]``."""
    y = np.asarray(y, dtype=float).ravel()
    if len(sets) != y.size:
        raise InvalidInput("one prediction set per response is required")
    return np.fromiter((yi in s for s, yi in zip(sets, y)), dtype=bool, count=y.size)


def evaluate_sets(sets, y) -> TrialMetrics:
    """Metrics of precomputed prediction sets against their responses."""
    if len(sets) == 0:
        raise InvalidInput("empty test set")
    cov = covered_mask(sets, y)
    lengths = np.array([s.total_length for s in sets])
    counts = np.array([s.count for s in sets], dtype=float)
    return TrialMetrics(float(cov.mean()), float(lengths.mean()), float(counts.mean()))


def evaluate(predictor, test) -> TrialMetrics:
    """
    Evaluate a fitted predictor on a test :class:`~scdsplit.datagen.Dataset`.

    ``predictor`` is anything with ``predict_many(X)`` returning one
    :class:`~scdsplit.conformal.IntervalSet` per row, or a plain callable
    with the same behaviour.
    """
    if test.n == 0:
        raise InvalidInput("empty test set")
    predict = getattr(predictor, "predict_many", predictor)
    return evaluate_sets(predict(test.X), test.y)
