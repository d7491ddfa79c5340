import json
import pathlib

import numpy as np
import numpy.typing as npt
import pytest

from lanechange.config import TrainConfig
from lanechange.errors import ParameterError, ParseError
from lanechange.forest.ensemble import predict_proba_batch, train
from lanechange.forest.evaluate import (
    confusion_metrics,
    evaluate,
    split_by_vehicle,
)
from lanechange.forest.serialize import (
    FORMAT_VERSION,
    forest_from_json,
    forest_to_json,
    load_forest,
    save_forest,
)
from lanechange.model import FloatArray


def _separable() -> tuple[FloatArray, npt.NDArray[np.str_]]:
    rng = np.random.default_rng(0)
    features = rng.normal(size=(120, 3))
    labels = np.where(features[:, 1] > 0, "lane_change", "lane_keep")

    return features, labels


def test_perfect_predictions() -> None:
    truth = np.array([0, 1, 1, 0, 1])

    metrics = confusion_metrics(truth, truth.copy())

    assert metrics.accuracy == 1.0
    assert metrics.confusion == ((2, 0), (0, 3))
    assert metrics.precision == 1.0
    assert metrics.recall == 1.0


def test_confusion_rows_are_truth() -> None:
    truth = np.array([0, 0, 1, 1])
    predicted = np.array([0, 1, 1, 0])

    metrics = confusion_metrics(truth, predicted)

    assert metrics.confusion == ((1, 1), (1, 1))
    assert metrics.accuracy == 0.5
    assert metrics.as_dict()["confusion"] == [[1, 1], [1, 1]]


def test_precision_and_recall_per_class() -> None:
    # Confusion [[3, 1], [2, 4]]: keep row first, columns predicted.
    truth = np.array([0, 0, 0, 0, 1, 1, 1, 1, 1, 1])
    predicted = np.array([0, 0, 0, 1, 0, 0, 1, 1, 1, 1])

    metrics = confusion_metrics(truth, predicted)

    assert metrics.confusion == ((3, 1), (2, 4))
    assert metrics.keep_precision == pytest.approx(3 / 5)
    assert metrics.keep_recall == pytest.approx(3 / 4)
    assert metrics.precision == pytest.approx(4 / 5)
    assert metrics.recall == pytest.approx(4 / 6)
    assert metrics.as_dict()["per_class"] == {
        "lane_keep": {
            "precision": metrics.keep_precision,
            "recall": metrics.keep_recall,
        },
        "lane_change": {
            "precision": metrics.precision,
            "recall": metrics.recall,
        },
    }


def test_class_never_predicted_scores_zero_precision() -> None:
    metrics = confusion_metrics(np.array([0, 1, 1]), np.array([1, 1, 1]))

    assert metrics.keep_precision == 0.0
    assert metrics.keep_recall == 0.0
    assert metrics.precision == pytest.approx(2 / 3)
    assert metrics.recall == 1.0


def test_empty_test_set_is_rejected() -> None:
    with pytest.raises(ParameterError):
        confusion_metrics(np.array([], dtype=np.int64), np.array([]))


def test_evaluate_on_training_data() -> None:
    features, labels = _separable()
    forest = train(features, labels, TrainConfig(n_trees=10, bootstrap=False))

    assert evaluate(forest, features, labels).accuracy == 1.0


def test_split_keeps_vehicles_apart() -> None:
    ids = np.repeat(np.arange(10), 3)

    train_rows, test_rows = split_by_vehicle(
        ids,
        0.2,
        np.random.default_rng(1),
    )

    assert set(ids[train_rows]).isdisjoint(set(ids[test_rows]))
    assert len(set(ids[test_rows].tolist())) == 2
    assert sorted([*train_rows, *test_rows]) == list(range(30))


@pytest.mark.parametrize(
    ("ids", "fraction"),
    [([1, 1, 1], 0.2), ([1, 2, 3], 1.0), ([1, 2, 3], 0.0)],
)
def test_split_rejects_degenerate_input(
    ids: list[int],
    fraction: float,
) -> None:
    with pytest.raises(ParameterError):
        split_by_vehicle(ids, fraction, np.random.default_rng(0))


def test_saved_forest_predicts_the_same(tmp_path: pathlib.Path) -> None:
    features, labels = _separable()
    forest = train(
        features,
        labels,
        TrainConfig(n_trees=5, seed=9),
        feature_names=["a", "b", "c"],
        history=(1, 5),
    )
    path = tmp_path / "forest.json"

    save_forest(forest, path)
    loaded = load_forest(path)

    assert loaded == forest
    np.testing.assert_array_equal(
        predict_proba_batch(loaded, features),
        predict_proba_batch(forest, features),
    )
    document = json.loads(path.read_text(encoding="utf-8"))
    assert document["version"] == FORMAT_VERSION
    assert document["history"] == [1, 5]


def test_unknown_version_is_rejected() -> None:
    features, labels = _separable()
    document = forest_to_json(train(features, labels, TrainConfig(n_trees=1)))
    document["version"] = 99

    with pytest.raises(ParseError):
        forest_from_json(document)


def test_bad_leaf_names_its_tree() -> None:
    features, labels = _separable()
    document = forest_to_json(train(features, labels, TrainConfig(n_trees=2)))
    document["trees"][1] = {"class": "swerve"}

    with pytest.raises(ParseError) as info:
        forest_from_json(document)

    assert info.value.row == 1


def test_truncated_forest_file_is_a_parse_error(
    tmp_path: pathlib.Path,
) -> None:
    path = tmp_path / "forest.json"
    path.write_text('{"version": 1,\n"trees": [', encoding="utf-8")

    with pytest.raises(ParseError) as info:
        load_forest(path)

    assert info.value.row == 2
