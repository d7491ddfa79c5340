import numpy as np
import pytest
from hypothesis import given, settings as hypothesis_settings, strategies as st

from lanechange.config import TrainConfig
from lanechange.errors import DegenerateForestError, ParameterError, ShapeError
from lanechange.forest.ensemble import (
    Forest,
    Probabilities,
    feature_importance,
    predict_proba,
    predict_proba_batch,
    resolve_mtry,
    train,
    vote_counts,
)
from lanechange.forest.tree import (
    LANE_CHANGE,
    LANE_KEEP,
    Leaf,
    Split,
    TreeNode,
    grow_tree,
    tree_predict,
)
from lanechange.model import FloatArray, IntArray, Manoeuvre

type Oracle = tuple[int, float, Oracle, Oracle] | int


def _shape(node: TreeNode) -> Oracle:
    match node:
        case Leaf(label=label):
            return label
        case Split(feature=feature, threshold=threshold):
            return (feature, threshold, _shape(node.left), _shape(node.right))


def _score(labels: IntArray) -> float:
    n = labels.shape[0]
    pos = float(labels.sum())

    return (pos**2 + (n - pos) ** 2) / n


def _exhaustive_tree(features: FloatArray, labels: IntArray) -> Oracle:
    n, d = features.shape
    positives = int(labels.sum())

    if positives in (0, n):
        return int(labels[0])

    candidates: list[tuple[float, int, float]] = []

    for j in range(d):
        values = np.unique(features[:, j])

        for low, high in zip(values[:-1], values[1:], strict=True):
            threshold = float((low + high) / 2)
            left = features[:, j] <= threshold
            score = _score(labels[left]) + _score(labels[~left])
            candidates.append((score, j, threshold))

    if not candidates:
        return LANE_CHANGE if positives * 2 > n else LANE_KEEP

    top = max(c[0] for c in candidates)
    _, feature, threshold = min(
        (c for c in candidates if c[0] >= top - 1e-12 * n),
        key=lambda c: (c[1], c[2]),
    )
    left = features[:, feature] <= threshold

    return (
        feature,
        threshold,
        _exhaustive_tree(features[left], labels[left]),
        _exhaustive_tree(features[~left], labels[~left]),
    )


def _full_config(d: int) -> TrainConfig:
    return TrainConfig(mtry=d, bootstrap=False)


def test_two_points_split_at_midpoint() -> None:
    features = np.array([[1.0, 5.0], [3.0, 5.0]])

    forest = train(features, ["lane_keep", "lane_change"], _full_config(2))

    assert _shape(forest.trees[0]) == (0, 2.0, LANE_KEEP, LANE_CHANGE)


def test_identical_features_give_majority_leaves() -> None:
    features = np.ones((5, 3))
    labels = np.array([1, 1, 0, 0, 1])

    forest = train(features, labels, TrainConfig(n_trees=10))

    assert all(isinstance(tree, Leaf) for tree in forest.trees)
    # Bootstrap resamples may tie, which goes to lane keeping.
    assert {tree for tree in forest.trees} <= {Leaf(0), Leaf(1)}
    no_bootstrap = train(features, labels, _full_config(3))
    assert no_bootstrap.trees[0] == Leaf(LANE_CHANGE)


def test_tie_goes_to_lane_keep() -> None:
    tree = grow_tree(
        np.ones((4, 1)),
        np.array([1, 0, 1, 0]),
        mtry=1,
        rng=np.random.default_rng(0),
    )

    assert tree == Leaf(LANE_KEEP)


def test_single_class_is_degenerate() -> None:
    with pytest.raises(DegenerateForestError):
        train(np.zeros((4, 2)), [0, 0, 0, 0], TrainConfig())


def test_label_count_mismatch() -> None:
    with pytest.raises(ShapeError):
        train(np.zeros((4, 2)), [0, 1, 0], TrainConfig())


def test_mtry_default_and_range() -> None:
    assert resolve_mtry(TrainConfig(), 10) == 4
    assert resolve_mtry(TrainConfig(), 9) == 3
    assert resolve_mtry(TrainConfig(), 1) == 1

    with pytest.raises(ParameterError):
        resolve_mtry(TrainConfig(mtry=11), 10)


_instances = st.lists(
    st.tuples(
        st.tuples(*[st.integers(0, 6)] * 3),
        st.integers(0, 1),
    ),
    min_size=2,
    max_size=64,
)


@hypothesis_settings(max_examples=60, deadline=None)
@given(_instances)
def test_tree_matches_exhaustive_induction(
    rows: list[tuple[tuple[int, int, int], int]],
) -> None:
    features = np.array([r[0] for r in rows], dtype=np.float64)
    labels = np.array([r[1] for r in rows], dtype=np.int64)

    tree = grow_tree(
        features,
        labels,
        mtry=3,
        rng=np.random.default_rng(0),
    )

    assert _shape(tree) == _exhaustive_tree(features, labels)


@hypothesis_settings(max_examples=30, deadline=None)
@given(_instances)
def test_training_set_is_fit_without_bootstrap(
    rows: list[tuple[tuple[int, int, int], int]],
) -> None:
    features = np.array([r[0] for r in rows], dtype=np.float64)
    labels = np.array([r[1] for r in rows], dtype=np.int64)
    keys = [tuple(r[0]) for r in rows]
    conflicting = any(
        keys[i] == keys[j] and labels[i] != labels[j]
        for i in range(len(rows))
        for j in range(i)
    )

    if conflicting or len(set(labels.tolist())) < 2:
        return

    forest = train(features, labels, TrainConfig(n_trees=3, bootstrap=False))

    for tree in forest.trees:
        np.testing.assert_array_equal(tree_predict(tree, features), labels)


def _noisy_dataset(
    seed: int,
    n: int = 200,
    d: int = 4,
) -> tuple[FloatArray, IntArray]:
    rng = np.random.default_rng(seed)
    features = rng.normal(size=(n, d))
    labels = (features[:, 0] > 0).astype(np.int64)

    return features, labels


def test_training_is_deterministic() -> None:
    features, labels = _noisy_dataset(1)
    cfg = TrainConfig(n_trees=15, seed=3)

    first = train(features, labels, cfg)
    second = train(features, labels, cfg)

    assert first == second


def test_monotone_transform_keeps_predictions() -> None:
    rng = np.random.default_rng(5)
    features = rng.integers(-10, 10, size=(80, 3)).astype(np.float64)
    labels = (features[:, 0] + features[:, 1] > 0).astype(np.int64)
    cubed = features.copy()
    cubed[:, 1] = cubed[:, 1] ** 3
    cfg = TrainConfig(n_trees=10, seed=2)

    plain = train(features, labels, cfg)
    warped = train(cubed, labels, cfg)

    np.testing.assert_array_equal(
        vote_counts(plain, features),
        vote_counts(warped, cubed),
    )
    for a, b in zip(plain.trees, warped.trees, strict=True):
        assert _structure(a) == _structure(b)


def _structure(node: TreeNode) -> object:
    match node:
        case Leaf(label=label):
            return label
        case Split(feature=feature):
            return (feature, _structure(node.left), _structure(node.right))


def test_single_informative_feature_dominates() -> None:
    features, labels = _noisy_dataset(2)

    forest = train(features, labels, TrainConfig(n_trees=20, mtry=4))

    ranked = feature_importance(forest)
    assert ranked[0][0] == "f0"
    assert ranked[0][1] == pytest.approx(1.0)
    assert sum(forest.importances) == pytest.approx(1.0)


def test_noise_features_share_importance() -> None:
    rng = np.random.default_rng(4)
    features = rng.normal(size=(200, 3))
    labels = rng.integers(0, 2, size=200)

    forest = train(features, labels, TrainConfig(n_trees=100))

    assert np.allclose(forest.importances, 1 / 3, atol=3 / np.sqrt(100))
    assert all(value >= 0 for value in forest.importances)


def test_importance_ties_break_by_index() -> None:
    forest = Forest(
        trees=(Leaf(0),),
        feature_names=("b", "a", "c"),
        train_config=TrainConfig(),
        importances=(0.25, 0.5, 0.25),
    )

    assert [name for name, _ in feature_importance(forest)] == ["a", "b", "c"]


def _voting_forest(n_change: int, n_keep: int) -> Forest:
    trees = (Leaf(LANE_CHANGE),) * n_change + (Leaf(LANE_KEEP),) * n_keep

    return Forest(
        trees=trees,
        feature_names=("x",),
        train_config=TrainConfig(n_trees=len(trees)),
        importances=(1.0,),
    )


def test_vote_fractions() -> None:
    assert predict_proba(_voting_forest(100, 0), np.zeros(1)) == (0.0, 1.0)

    probabilities = predict_proba(_voting_forest(80, 20), np.zeros(1))

    assert probabilities.lane_change == pytest.approx(0.8)
    assert probabilities.decide(0.5) is Manoeuvre.LANE_CHANGE
    assert probabilities.decide(0.8) is Manoeuvre.LANE_KEEP


@pytest.mark.parametrize("k", range(101))
def test_probabilities_are_exact_vote_fractions(k: int) -> None:
    probabilities = predict_proba(_voting_forest(k, 100 - k), np.zeros(1))

    assert probabilities.lane_change == k / 100
    assert probabilities.lane_keep == (100 - k) / 100


def test_probabilities_sum_to_one() -> None:
    features, labels = _noisy_dataset(6)
    forest = train(features, labels, TrainConfig(n_trees=25))

    batch = predict_proba_batch(forest, features)

    np.testing.assert_allclose(batch.sum(axis=1), 1.0)
    votes = batch[:, 1] * 25
    np.testing.assert_allclose(votes, np.round(votes))


def test_prediction_dimension_mismatch() -> None:
    forest = _voting_forest(1, 0)

    with pytest.raises(ShapeError):
        predict_proba(forest, np.zeros(2))

    with pytest.raises(ShapeError):
        predict_proba(forest, np.zeros((1, 1)))


def test_out_of_bag_accuracy_is_reported() -> None:
    features, labels = _noisy_dataset(7)

    forest = train(features, labels, TrainConfig(n_trees=30))

    assert forest.oob_accuracy is not None
    assert forest.oob_accuracy > 0.9
    assert train(features, labels, _full_config(4)).oob_accuracy is None


def test_probabilities_type() -> None:
    assert Probabilities(0.3, 0.7).decide() is Manoeuvre.LANE_CHANGE
