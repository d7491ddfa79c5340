from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from typing import Any, NamedTuple

import numpy as np
import numpy.typing as npt

from lanechange.config import TrainConfig
from lanechange.errors import (
    DegenerateForestError,
    ParameterError,
    ShapeError,
)
from lanechange.forest.tree import (
    LANE_CHANGE,
    TreeNode,
    encode_labels,
    grow_tree,
    tree_decreases,
    tree_predict,
)
from lanechange.model import FloatArray, IntArray, Manoeuvre

logger = logging.getLogger(__name__)


class Forest(NamedTuple):
    trees: tuple[TreeNode, ...]
    feature_names: tuple[str, ...]
    train_config: TrainConfig
    # Normalized mean Gini decrease per feature.
    importances: tuple[float, ...]
    oob_accuracy: float | None = None
    # History layout (n_past, step_gap) the feature vectors were built with.
    history: tuple[int, int] = (0, 1)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


class Probabilities(NamedTuple):
    lane_keep: float
    lane_change: float

    def decide(self, threshold: float = 0.5) -> Manoeuvre:
        if self.lane_change > threshold:
            return Manoeuvre.LANE_CHANGE

        return Manoeuvre.LANE_KEEP


def resolve_mtry(cfg: TrainConfig, n_features: int) -> int:
    mtry = cfg.mtry if cfg.mtry is not None else math.isqrt(n_features - 1) + 1

    if not 1 <= mtry <= n_features:
        raise ParameterError(
            f"mtry must be between 1 and {n_features}, got {mtry}",
        )

    return mtry


def _check_features(forest: Forest, features: FloatArray) -> FloatArray:
    matrix = np.atleast_2d(np.asarray(features, dtype=np.float64))

    if matrix.shape[1] != forest.n_features:
        raise ShapeError(
            f"Expected {forest.n_features} features, got {matrix.shape[1]}",
        )

    return matrix


def train(
    features: FloatArray,
    labels: Sequence[object] | npt.NDArray[Any],
    cfg: TrainConfig,
    *,
    feature_names: Sequence[str] | None = None,
    history: tuple[int, int] = (0, 1),
) -> Forest:
    """
    Train ``cfg.n_trees`` pure-leaf trees, tree ``t`` seeded with
    ``cfg.seed + t``.
    """
    matrix = np.asarray(features, dtype=np.float64)
    codes = encode_labels(labels)

    if matrix.ndim != 2 or matrix.shape[0] != codes.shape[0]:
        raise ShapeError(
            f"{codes.shape[0]} labels do not match features of shape "
            f"{matrix.shape}",
        )

    n, d = matrix.shape
    names = (
        tuple(feature_names)
        if feature_names is not None
        else tuple(f"f{i}" for i in range(d))
    )

    if len(names) != d:
        raise ShapeError(f"{len(names)} feature names for {d} features")

    if n < 2 or len(np.unique(codes)) < 2:
        raise DegenerateForestError(
            "Training needs at least 2 instances covering both classes",
        )

    if cfg.n_trees < 1:
        raise ParameterError("n_trees must be at least 1")

    mtry = resolve_mtry(cfg, d)
    trees: list[TreeNode] = []
    decreases = np.zeros(d)
    oob_votes = np.zeros(n)
    oob_counts = np.zeros(n)

    for t in range(cfg.n_trees):
        rng = np.random.default_rng(cfg.seed + t)
        rows = (
            rng.integers(0, n, size=n)
            if cfg.bootstrap
            else np.arange(n)
        )
        tree = grow_tree(
            matrix[rows],
            codes[rows],
            mtry=mtry,
            rng=rng,
            min_samples_split=cfg.min_samples_split,
            max_depth=cfg.max_depth,
        )
        trees.append(tree)
        decreases += tree_decreases(tree, d) / n

        if cfg.bootstrap:
            out_of_bag = np.ones(n, dtype=bool)
            out_of_bag[rows] = False
            oob_votes[out_of_bag] += tree_predict(tree, matrix[out_of_bag])
            oob_counts[out_of_bag] += 1

    total = decreases.sum()
    importances = decreases / total if total > 0 else np.full(d, 1 / d)
    oob_accuracy = None
    scored = oob_counts > 0

    if cfg.bootstrap and scored.any():
        predicted = oob_votes[scored] * 2 > oob_counts[scored]
        oob_accuracy = float(
            np.mean(predicted == (codes[scored] == LANE_CHANGE)),
        )

    logger.info(
        "Trained %d trees on %d instances with %d features (oob=%s)",
        cfg.n_trees,
        n,
        d,
        oob_accuracy,
    )

    return Forest(
        trees=tuple(trees),
        feature_names=names,
        train_config=cfg,
        importances=tuple(float(x) for x in importances),
        oob_accuracy=oob_accuracy,
        history=history,
    )


def vote_counts(forest: Forest, features: FloatArray) -> IntArray:
    """Number of trees voting lane change for each row."""
    matrix = _check_features(forest, features)
    votes = np.zeros(matrix.shape[0], dtype=np.int64)

    for tree in forest.trees:
        votes += tree_predict(tree, matrix)

    return votes


def predict_proba_batch(forest: Forest, features: FloatArray) -> FloatArray:
    """Rows of (p(lane_keep), p(lane_change)), each exactly votes / T."""
    n_trees = len(forest.trees)
    votes = vote_counts(forest, features)

    return np.column_stack(
        ((n_trees - votes) / n_trees, votes / n_trees),
    )


def predict_proba(forest: Forest, fvec: FloatArray) -> Probabilities:
    vector = np.asarray(fvec, dtype=np.float64)

    if vector.ndim != 1:
        raise ShapeError("predict_proba takes a single feature vector")

    keep, change = predict_proba_batch(forest, vector[None, :])[0]

    return Probabilities(lane_keep=float(keep), lane_change=float(change))


def feature_importance(forest: Forest) -> list[tuple[str, float]]:
    """Importances in descending order, ties by feature index."""
    ranked = sorted(
        enumerate(forest.importances),
        key=lambda item: (-item[1], item[0]),
    )

    return [(forest.feature_names[i], value) for i, value in ranked]
