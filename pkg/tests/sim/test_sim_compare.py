from collections.abc import Callable

import numpy as np
import pytest
import scipy.stats

from lanechange.config import Settings, TrainConfig
from lanechange.context.features import FEATURE_NAMES
from lanechange.errors import ParameterError, ShapeError
from lanechange.forest.ensemble import Forest, Probabilities, train
from lanechange.forest.tree import LANE_CHANGE, LANE_KEEP, Leaf, Split
from lanechange.model import EgoState, FloatArray, Manoeuvre
from lanechange.planner.targets import TargetPose
from lanechange.sim.compare import compare_to_ground_truth, comparison_dict
from lanechange.sim.replay import SimStep
from lanechange.sim.sweep import (
    sensitivity_sweep,
    sweep_correlation,
    sweep_values,
)
from lanechange.tools.synth import synth_instances
from lanechange.trajdata.loader import VehicleTrack
from lanechange.trajdata.road import RoadGeometry

MakeTrack = Callable[..., VehicleTrack]


def _left_change_y(n: int = 140) -> FloatArray:
    k = np.arange(n, dtype=np.float64)

    return np.clip(5.55 - 0.1 * (k - 50), 1.85, 5.55)


def _steps(
    road: RoadGeometry,
    ys: FloatArray,
    commit: int | None,
) -> list[SimStep]:
    steps = []

    for frame, y in enumerate(ys):
        changing = commit is not None and frame >= commit
        steps.append(
            SimStep(
                frame=frame,
                features=np.zeros(len(FEATURE_NAMES)),
                probabilities=Probabilities(0.0, 1.0),
                decision=(
                    Manoeuvre.LANE_CHANGE if changing
                    else Manoeuvre.LANE_KEEP
                ),
                target=TargetPose(
                    road.lane_centre(1 if changing else 2),
                    0.0,
                    25.0,
                    1 if changing else 2,
                ),
                delta_f=0.01 * frame,
                a_x=-0.5,
                state=EgoState(2.5 * frame, float(y), 0.0, 25.0),
                status="optimal",
                objective=0.0,
                margin=1.0,
            ),
        )

    return steps


def test_replaying_the_human_matches_exactly(
    settings: Settings,
    road: RoadGeometry,
    make_track: MakeTrack,
) -> None:
    human = _left_change_y()
    track = make_track(1, human)

    comparison = compare_to_ground_truth(
        _steps(road, human, commit=50),
        track,
        road,
        settings.events,
    )

    assert comparison.lateral_rmse == 0.0
    assert comparison.initiation_offset == 0.0
    assert comparison.completion_offset == 0.0
    assert comparison.max_abs_ax == 0.5
    assert comparison.max_abs_delta == pytest.approx(1.39)
    assert comparison.ghost_conflicts == 0


def test_late_manoeuvre_is_offset_by_a_second(
    settings: Settings,
    road: RoadGeometry,
    make_track: MakeTrack,
) -> None:
    human = _left_change_y()
    late = np.concatenate((np.full(10, 5.55), human[:-10]))

    comparison = compare_to_ground_truth(
        _steps(road, late, commit=60),
        make_track(1, human),
        road,
        settings.events,
    )

    assert comparison.initiation_offset == pytest.approx(1.0)
    assert comparison.completion_offset == pytest.approx(1.0)
    assert comparison.lateral_rmse > 0


def test_no_simulated_change_has_no_offsets(
    settings: Settings,
    road: RoadGeometry,
    make_track: MakeTrack,
) -> None:
    comparison = compare_to_ground_truth(
        _steps(road, np.full(140, 5.55), commit=None),
        make_track(1, _left_change_y()),
        road,
        settings.events,
    )

    assert comparison.initiation_offset is None
    assert comparison.completion_offset is None
    assert comparison_dict(comparison)["initiation_offset"] is None


def test_disjoint_frames(
    settings: Settings,
    road: RoadGeometry,
    make_track: MakeTrack,
) -> None:
    track = make_track(1, np.full(20, 5.55), first_frame=500)

    with pytest.raises(ParameterError):
        compare_to_ground_truth(
            _steps(road, np.full(20, 5.55), commit=None),
            track,
            road,
            settings.events,
        )


def _forest(*trees: Leaf | Split) -> Forest:
    return Forest(
        trees=trees,
        feature_names=FEATURE_NAMES,
        train_config=TrainConfig(n_trees=len(trees)),
        importances=(0.1,) * len(FEATURE_NAMES),
    )


def test_sweep_values_include_both_ends() -> None:
    np.testing.assert_allclose(sweep_values(0.0, 25.0, 1.0), np.arange(26))

    with pytest.raises(ParameterError):
        sweep_values(5.0, 5.0, 1.0)

    with pytest.raises(ParameterError):
        sweep_values(0.0, 5.0, 0.0)


def test_constant_forest_sweeps_flat() -> None:
    forest = _forest(Leaf(LANE_KEEP), Leaf(LANE_CHANGE), Leaf(LANE_KEEP))

    frame = sensitivity_sweep(forest, np.zeros(len(FEATURE_NAMES)), "x_FL")

    assert len(frame) == 26
    np.testing.assert_allclose(frame["lane_change"], 1 / 3)
    np.testing.assert_allclose(frame["lane_keep"] + frame["lane_change"], 1)


def test_gap_ahead_raises_change_probability() -> None:
    column = FEATURE_NAMES.index("x_FL")
    forest = _forest(
        *(
            Split(column, threshold, Leaf(LANE_KEEP), Leaf(LANE_CHANGE), 1.0)
            for threshold in (4.5, 9.5, 14.5, 19.5)
        ),
    )

    frame = sensitivity_sweep(forest, np.zeros(len(FEATURE_NAMES)), "x_FL")
    rho = scipy.stats.spearmanr(frame["value"], frame["lane_change"]).statistic

    assert sweep_correlation(frame) == pytest.approx(rho)
    assert rho >= 0.8
    assert frame["lane_change"].is_monotonic_increasing
    assert frame["lane_change"].iloc[0] == 0.0
    assert frame["lane_change"].iloc[-1] == 1.0


def test_sweep_rejects_bad_inputs() -> None:
    forest = _forest(Leaf(LANE_KEEP))

    with pytest.raises(ParameterError):
        sensitivity_sweep(forest, np.zeros(len(FEATURE_NAMES)), "v_XX")

    with pytest.raises(ShapeError):
        sensitivity_sweep(forest, np.zeros(3), "x_FL")


def test_flat_sweep_has_no_correlation() -> None:
    forest = _forest(Leaf(LANE_KEEP))

    frame = sensitivity_sweep(forest, np.zeros(len(FEATURE_NAMES)), "x_FL")

    assert np.isnan(sweep_correlation(frame))


@pytest.mark.slow
def test_trained_forest_favours_a_larger_front_left_gap(
    settings: Settings,
) -> None:
    table = synth_instances(settings.synth, settings.features, seed=0)
    features = table[list(FEATURE_NAMES)].to_numpy(np.float64)
    forest = train(
        features,
        table["label"].to_numpy(),
        TrainConfig(seed=0),
        feature_names=FEATURE_NAMES,
    )
    changes = features[table["label"] == str(Manoeuvre.LANE_CHANGE)]

    rhos = [
        sweep_correlation(sensitivity_sweep(forest, frozen, "x_FL"))
        for frozen in changes[:50]
    ]

    assert np.median(np.nan_to_num(rhos, nan=0.0)) >= 0.8
