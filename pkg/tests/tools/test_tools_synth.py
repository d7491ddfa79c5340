import pathlib

import numpy as np
import pandas as pd
import pytest

from lanechange.config import INTERNAL_SCHEMA, Settings, TrainConfig
from lanechange.context.features import FEATURE_NAMES
from lanechange.errors import ParameterError
from lanechange.forest.ensemble import predict_proba_batch, train
from lanechange.forest.evaluate import split_by_vehicle
from lanechange.model import Manoeuvre
from lanechange.tools.synth import main, synth_instances, synth_tracks
from lanechange.trajdata.road import RoadGeometry


def test_instances_are_balanced(settings: Settings) -> None:
    config = settings.synth._replace(n_instances=200)

    table = synth_instances(config, settings.features, seed=3)

    assert len(table) == 200
    assert list(table.columns[3:]) == list(FEATURE_NAMES)
    assert table["label"].value_counts().to_dict() == {
        "lane_change": 100,
        "lane_keep": 100,
    }
    assert table.groupby("vehicle_id").size().eq(2).all()


def test_instances_are_reproducible(settings: Settings) -> None:
    config = settings.synth._replace(n_instances=100)

    first = synth_instances(config, settings.features, seed=11)
    second = synth_instances(config, settings.features, seed=11)
    other = synth_instances(config, settings.features, seed=12)

    pd.testing.assert_frame_equal(first, second)
    assert not first.equals(other)


def test_noise_free_labels_follow_the_rule(settings: Settings) -> None:
    config = settings.synth._replace(n_instances=400, label_noise=0.0)

    table = synth_instances(config, settings.features, seed=5)
    changes = table[table["label"] == Manoeuvre.LANE_CHANGE]

    assert (changes["x_FL"] >= config.gap_accept_lo).all()
    assert (changes["x_RL"] >= 12.0).all()
    assert (changes["TTC_RL"] >= 4.0).all()


@pytest.mark.parametrize(
    ("n_instances", "label_noise"),
    [(0, 0.05), (101, 0.05), (100, 0.5), (100, -0.1)],
)
def test_invalid_instance_settings(
    settings: Settings,
    n_instances: int,
    label_noise: float,
) -> None:
    config = settings.synth._replace(
        n_instances=n_instances,
        label_noise=label_noise,
    )

    with pytest.raises(ParameterError):
        synth_instances(config, settings.features, seed=0)


@pytest.mark.slow
def test_forest_learns_the_gap_rule(settings: Settings) -> None:
    table = synth_instances(settings.synth, settings.features, seed=0)
    vehicles = table["vehicle_id"].to_numpy(np.int64)
    train_rows, test_rows = split_by_vehicle(
        vehicles,
        0.2,
        np.random.default_rng(1),
    )
    features = table[list(FEATURE_NAMES)].to_numpy()
    labels = table["label"].to_numpy()

    forest = train(
        features[train_rows],
        labels[train_rows],
        TrainConfig(seed=0),
        feature_names=FEATURE_NAMES,
    )
    predicted = np.where(
        predict_proba_batch(forest, features[test_rows])[:, 1] > 0.5,
        Manoeuvre.LANE_CHANGE.value,
        Manoeuvre.LANE_KEEP.value,
    )

    assert len(forest.trees) == 100
    assert not set(vehicles[train_rows]) & set(vehicles[test_rows])
    assert len(test_rows) == pytest.approx(0.2 * len(table), abs=2)
    assert np.mean(predicted == labels[test_rows]) >= 0.90


def test_tracks_cover_every_vehicle_and_frame(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    config = settings.synth._replace(n_vehicles=6, duration_s=10.0)

    table = synth_tracks(config, road, 0.1, seed=2)

    assert sorted(table[INTERNAL_SCHEMA.vehicle_id].unique()) == list(
        range(1, 7),
    )
    assert len(table) == 6 * 101
    assert table.groupby(INTERNAL_SCHEMA.vehicle_id).size().eq(101).all()
    assert (table[INTERNAL_SCHEMA.speed] >= 0).all()
    assert table[INTERNAL_SCHEMA.lane_id].between(1, 3).all()

    again = synth_tracks(config, road, 0.1, seed=2)
    pd.testing.assert_frame_equal(table, again)


def test_tracks_need_vehicles(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    with pytest.raises(ParameterError):
        synth_tracks(settings.synth._replace(n_vehicles=0), road, 0.1, 0)


def test_command_writes_csv(
    tmp_path: pathlib.Path,
    monkeypatch: pytest.MonkeyPatch,
) -> None:
    monkeypatch.chdir(tmp_path)
    out = tmp_path / "data" / "instances.csv"

    main(["instances", "--seed", "4", "--out", str(out)])

    table = pd.read_csv(out)
    assert len(table) == 1200
    assert set(table["label"]) == {"lane_change", "lane_keep"}
