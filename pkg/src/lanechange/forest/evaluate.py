from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Any, NamedTuple

import numpy as np
import numpy.typing as npt

from lanechange.errors import ParameterError, ShapeError
from lanechange.forest.ensemble import Forest, predict_proba_batch
from lanechange.forest.tree import LANE_CHANGE, LANE_KEEP, encode_labels
from lanechange.model import FloatArray, IntArray

logger = logging.getLogger(__name__)


class Metrics(NamedTuple):
    accuracy: float
    # Rows are true classes, columns predicted, lane keep first.
    confusion: tuple[tuple[int, int], tuple[int, int]]
    precision: float
    recall: float
    keep_precision: float
    keep_recall: float

    def as_dict(self) -> dict[str, object]:
        return {
            "accuracy": self.accuracy,
            "confusion": [list(row) for row in self.confusion],
            "precision": self.precision,
            "recall": self.recall,
            "per_class": {
                "lane_keep": {
                    "precision": self.keep_precision,
                    "recall": self.keep_recall,
                },
                "lane_change": {
                    "precision": self.precision,
                    "recall": self.recall,
                },
            },
        }


def _precision_recall(matrix: IntArray, label: int) -> tuple[float, float]:
    hits = int(matrix[label, label])
    called = int(matrix[:, label].sum())
    actual = int(matrix[label].sum())

    return (
        hits / called if called else 0.0,
        hits / actual if actual else 0.0,
    )


def confusion_metrics(truth: IntArray, predicted: IntArray) -> Metrics:
    if truth.shape != predicted.shape:
        raise ShapeError("Truth and predictions differ in length")

    if truth.size == 0:
        raise ParameterError("Cannot score an empty test set")

    matrix = np.zeros((2, 2), dtype=np.int64)
    np.add.at(matrix, (truth, predicted), 1)
    precision, recall = _precision_recall(matrix, LANE_CHANGE)
    keep_precision, keep_recall = _precision_recall(matrix, LANE_KEEP)

    return Metrics(
        accuracy=float(np.trace(matrix) / truth.size),
        confusion=(
            (int(matrix[LANE_KEEP, 0]), int(matrix[LANE_KEEP, 1])),
            (int(matrix[LANE_CHANGE, 0]), int(matrix[LANE_CHANGE, 1])),
        ),
        precision=precision,
        recall=recall,
        keep_precision=keep_precision,
        keep_recall=keep_recall,
    )


def evaluate(
    forest: Forest,
    features: FloatArray,
    labels: Sequence[object] | npt.NDArray[Any],
    *,
    threshold: float = 0.5,
) -> Metrics:
    """Score the forest, calling a lane change when p > ``threshold``."""
    truth = encode_labels(labels)
    change = predict_proba_batch(forest, features)[:, 1]
    predicted = (change > threshold).astype(np.int64)
    metrics = confusion_metrics(truth, predicted)
    logger.info(
        "Accuracy %.3f precision %.3f recall %.3f on %d instances",
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        truth.size,
    )

    return metrics


def split_by_vehicle(
    vehicle_ids: Sequence[int] | IntArray,
    test_fraction: float,
    rng: np.random.Generator,
) -> tuple[IntArray, IntArray]:
    """
    Row indices for train and test sets such that no vehicle has rows
    on both sides.
    """
    if not 0 < test_fraction < 1:
        raise ParameterError("test_fraction must be in (0, 1)")

    ids = np.asarray(vehicle_ids, dtype=np.int64)
    unique = np.unique(ids)

    if unique.size < 2:
        raise ParameterError("Splitting needs at least 2 distinct vehicles")

    n_test = min(
        max(1, round(test_fraction * unique.size)),
        unique.size - 1,
    )
    test_ids = rng.choice(unique, size=n_test, replace=False)
    in_test = np.isin(ids, test_ids)

    return np.flatnonzero(~in_test), np.flatnonzero(in_test)
