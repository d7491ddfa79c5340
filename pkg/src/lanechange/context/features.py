from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np

from lanechange.config import FeatureSettings
from lanechange.context.neighbors import (
    NeighborSet,
    Side,
    identify_neighbors,
)
from lanechange.context.utility import UtilityState, utility_update
from lanechange.errors import LengthError, ParameterError
from lanechange.model import FloatArray
from lanechange.trajdata.loader import VehicleTrack
from lanechange.trajdata.road import RoadGeometry
from lanechange.trajdata.scenes import Scene, SceneIndex

logger = logging.getLogger(__name__)

# Column name of the accumulated lane-change utility.
UTILITY = "Δ"

FEATURE_NAMES = (
    "x_RL",
    "TTC_RL",
    UTILITY,
    "TTC_FL",
    "v_FL",
    "x_FL",
    "v_RL",
    "v_LV",
    "x_LV",
    "vel_SV",
)
N_BASE = len(FEATURE_NAMES)

# The baseline drops the engineered TTC and utility features.
FEATURE_SETS: dict[str, tuple[str, ...]] = {
    "full": FEATURE_NAMES,
    "baseline": tuple(
        name for name in FEATURE_NAMES
        if not name.startswith("TTC") and name != UTILITY
    ),
}


def ttc(gap: float, closing_speed: float, ttc_max: float = 60.0) -> float:
    """Time to collision, capped at ``ttc_max`` when not closing."""
    if gap <= 0:
        return 0.0

    if closing_speed <= 0:
        return ttc_max

    return min(gap / closing_speed, ttc_max)


def base_vector(
    neighbors: NeighborSet,
    delta: float,
    ego_speed: float,
    settings: FeatureSettings,
) -> FloatArray:
    gap_default = settings.gap_sentinel
    speed_default = settings.rel_speed_sentinel
    ttc_max = settings.ttc_max
    rl, fl, lv = neighbors.rl, neighbors.fl, neighbors.lv

    return np.array(
        [
            rl.gap if rl else gap_default,
            ttc(rl.gap, rl.rel_speed, ttc_max) if rl else ttc_max,
            delta,
            ttc(fl.gap, -fl.rel_speed, ttc_max) if fl else ttc_max,
            fl.rel_speed if fl else speed_default,
            fl.gap if fl else gap_default,
            rl.rel_speed if rl else speed_default,
            lv.rel_speed if lv else speed_default,
            lv.gap if lv else gap_default,
            ego_speed,
        ],
        dtype=np.float64,
    )


def featurize(
    scene: Scene,
    ego_id: int,
    road: RoadGeometry,
    utility: UtilityState,
    settings: FeatureSettings,
) -> FloatArray:
    neighbors = identify_neighbors(
        scene,
        ego_id,
        road,
        Side.CURRENT,
        sensing_range=settings.sensing_range,
    )
    ego_speed = float(scene.speed[scene.index_of(ego_id)])

    return base_vector(neighbors, utility.delta, ego_speed, settings)


class Featurizer:
    """Carries one vehicle's utility state across consecutive frames."""

    def __init__(
        self,
        ego_id: int,
        road: RoadGeometry,
        settings: FeatureSettings,
    ) -> None:
        self.ego_id = ego_id
        self.road = road
        self.settings = settings
        self.utility = UtilityState()

    def step(self, scene: Scene) -> FloatArray:
        neighbors = identify_neighbors(
            scene,
            self.ego_id,
            self.road,
            Side.CURRENT,
            sensing_range=self.settings.sensing_range,
        )
        lv = neighbors.lv

        if lv is None:
            self.utility = utility_update(self.utility, 0.0, 1.0, None)
        else:
            self.utility = utility_update(
                self.utility,
                lv.rel_speed,
                max(lv.gap, self.settings.min_lead_gap),
                lv.vehicle_id,
                frame=scene.frame,
            )

        ego_speed = float(scene.speed[scene.index_of(self.ego_id)])

        return base_vector(
            neighbors,
            self.utility.delta,
            ego_speed,
            self.settings,
        )


def featurize_track(
    track: VehicleTrack,
    scenes: SceneIndex,
    road: RoadGeometry,
    settings: FeatureSettings,
) -> FloatArray:
    """Base feature vectors for every frame of ``track``, in order."""
    featurizer = Featurizer(track.vehicle_id, road, settings)
    rows = np.empty((track.n_samples, N_BASE))

    for k, frame in enumerate(track.frames):
        rows[k] = featurizer.step(scenes.at(int(frame)))

    return rows


def history_stack(
    series: Sequence[FloatArray] | FloatArray,
    n_past: int,
    step_gap: int,
    index: int | None = None,
) -> FloatArray:
    """
    Concatenate the vector at ``index`` (default: the last one) with
    ``n_past`` earlier vectors spaced ``step_gap`` apart.
    """
    if n_past < 0 or step_gap < 1:
        raise ParameterError("n_past must be >= 0 and step_gap >= 1")

    rows = np.asarray(series, dtype=np.float64)

    if rows.ndim != 2 or rows.shape[0] == 0:
        raise LengthError("History needs a non-empty sequence of vectors")

    current = rows.shape[0] - 1 if index is None else index

    if current < n_past * step_gap:
        raise LengthError(
            f"Index {current} has less than {n_past * step_gap} frames "
            "of history",
        )

    picks = [current - k * step_gap for k in range(n_past + 1)]

    return rows[picks].reshape(-1)


def history_names(
    names: Sequence[str],
    n_past: int,
    step_gap: int,
) -> tuple[str, ...]:
    stacked = list(names)

    for k in range(1, n_past + 1):
        stacked.extend(f"{name}@t-{k * step_gap}" for name in names)

    return tuple(stacked)


def feature_columns(feature_set: str) -> list[int]:
    """Indices of a named feature set within the base vector."""
    if feature_set not in FEATURE_SETS:
        raise ParameterError(f"Unknown feature set: {feature_set}")

    return [FEATURE_NAMES.index(name) for name in FEATURE_SETS[feature_set]]
