from __future__ import annotations

from collections.abc import Sequence
from typing import Any, NamedTuple

import numpy as np
import numpy.typing as npt

from lanechange.model import FloatArray, IntArray, Manoeuvre

# Class codes used inside the forest.
LANE_KEEP = 0
LANE_CHANGE = 1
LABELS = (Manoeuvre.LANE_KEEP, Manoeuvre.LANE_CHANGE)


class Leaf(NamedTuple):
    label: int


class Split(NamedTuple):
    feature: int
    threshold: float
    left: TreeNode
    right: TreeNode
    # Count-weighted Gini impurity decrease of this split.
    decrease: float


TreeNode = Split | Leaf


class _Candidate(NamedTuple):
    score: float
    feature: int
    threshold: float


def encode_labels(labels: Sequence[object] | npt.NDArray[Any]) -> IntArray:
    """Class codes from manoeuvre names or from codes already."""
    if isinstance(labels, np.ndarray) and labels.dtype.kind in "iub":
        return labels.astype(np.int64)

    return np.array(
        [LABELS.index(Manoeuvre(str(x))) for x in labels],
        dtype=np.int64,
    )


def majority(labels: IntArray) -> int:
    """Majority class code; ties go to lane keeping."""
    positives = int(labels.sum())

    return LANE_CHANGE if positives * 2 > labels.shape[0] else LANE_KEEP


def _split_score(values: FloatArray, labels: IntArray) -> _Candidate | None:
    # score = sum over children of (sum over classes of count^2) / size,
    # which is the parent size minus the weighted child Gini impurity.
    order = np.argsort(values, kind="stable")
    sorted_values = values[order]
    valid = np.flatnonzero(sorted_values[1:] > sorted_values[:-1])

    if valid.size == 0:
        return None

    n = labels.shape[0]
    positives = np.cumsum(labels[order])[:-1].astype(np.float64)
    left_n = np.arange(1, n, dtype=np.float64)
    right_n = n - left_n
    right_pos = positives[-1] + labels[order][-1] - positives
    score = (
        (positives**2 + (left_n - positives) ** 2) / left_n
        + (right_pos**2 + (right_n - right_pos) ** 2) / right_n
    )[valid]
    tolerance = 1e-12 * n
    best = int(np.flatnonzero(score >= score.max() - tolerance)[0])
    i = int(valid[best])
    low = float(sorted_values[i])
    high = float(sorted_values[i + 1])
    threshold = (low + high) / 2

    # Adjacent floats can round the midpoint up onto the upper value.
    if threshold >= high:
        threshold = low

    return _Candidate(float(score[best]), -1, threshold)


def best_split(
    features: FloatArray,
    labels: IntArray,
    candidates: IntArray,
) -> _Candidate | None:
    """Best Gini split over ``candidates``; ties favour the lower index."""
    best: _Candidate | None = None
    tolerance = 1e-12 * labels.shape[0]

    for feature in np.sort(candidates):
        found = _split_score(features[:, feature], labels)

        if found is None:
            continue

        if best is None or found.score > best.score + tolerance:
            best = found._replace(feature=int(feature))

    return best


def grow_tree(
    features: FloatArray,
    labels: IntArray,
    *,
    mtry: int,
    rng: np.random.Generator,
    min_samples_split: int = 2,
    max_depth: int | None = None,
    depth: int = 0,
) -> TreeNode:
    """Grow a tree until every leaf is pure or cannot be split."""
    n, d = features.shape
    positives = int(labels.sum())

    if (
        positives in (0, n)
        or n < min_samples_split
        or (max_depth is not None and depth >= max_depth)
    ):
        return Leaf(majority(labels))

    sampled = rng.choice(d, size=mtry, replace=False)
    found = best_split(features, labels, sampled)

    if found is None and mtry < d:
        rest = np.setdiff1d(np.arange(d), sampled)
        found = best_split(features, labels, rest)

    if found is None:
        return Leaf(majority(labels))

    goes_left = features[:, found.feature] <= found.threshold
    parent = (positives**2 + (n - positives) ** 2) / n

    return Split(
        feature=found.feature,
        threshold=found.threshold,
        left=grow_tree(
            features[goes_left],
            labels[goes_left],
            mtry=mtry,
            rng=rng,
            min_samples_split=min_samples_split,
            max_depth=max_depth,
            depth=depth + 1,
        ),
        right=grow_tree(
            features[~goes_left],
            labels[~goes_left],
            mtry=mtry,
            rng=rng,
            min_samples_split=min_samples_split,
            max_depth=max_depth,
            depth=depth + 1,
        ),
        decrease=found.score - parent,
    )


def _fill(
    node: TreeNode,
    features: FloatArray,
    rows: IntArray,
    out: IntArray,
) -> None:
    match node:
        case Leaf(label=label):
            out[rows] = label
        case Split(feature=feature, threshold=threshold):
            goes_left = features[rows, feature] <= threshold
            _fill(node.left, features, rows[goes_left], out)
            _fill(node.right, features, rows[~goes_left], out)


def tree_predict(node: TreeNode, features: FloatArray) -> IntArray:
    out = np.zeros(features.shape[0], dtype=np.int64)
    _fill(node, features, np.arange(features.shape[0]), out)

    return out


def tree_decreases(node: TreeNode, n_features: int) -> FloatArray:
    totals = np.zeros(n_features)
    stack = [node]

    while stack:
        match stack.pop():
            case Split(feature=feature, decrease=decrease) as split:
                totals[feature] += decrease
                stack.extend((split.left, split.right))
            case Leaf():
                pass

    return totals
