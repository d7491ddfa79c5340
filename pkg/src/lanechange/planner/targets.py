from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from lanechange.config import PlannerSettings
from lanechange.context.neighbors import nearest_ahead
from lanechange.errors import BoundsError
from lanechange.model import FloatArray, Manoeuvre
from lanechange.trajdata.road import RoadGeometry
from lanechange.trajdata.scenes import Scene

logger = logging.getLogger(__name__)


class TargetPose(NamedTuple):
    y_hat: float
    psi_hat: float
    v_hat: float
    # Lane whose centre is y_hat.
    lane: int

    def as_vector(self) -> FloatArray:
        return np.array([self.y_hat, self.psi_hat, self.v_hat])


def headway_speed(gap: float, t_hw: float, v_pref: float) -> float:
    """Speed that keeps a ``t_hw`` headway at ``gap``, within [0, v_pref]."""
    return min(max(gap / t_hw, 0.0), v_pref)


def target_generation(
    decision: Manoeuvre,
    scene: Scene,
    ego_id: int,
    road: RoadGeometry,
    settings: PlannerSettings,
    *,
    lane: int | None = None,
) -> TargetPose:
    """
    Centre of the current lane (lane keep) or of the lane to its left
    (lane change), at the headway speed behind that lane's leader.

    ``lane`` pins the origin lane while a latched manoeuvre is under way.
    """
    origin = (
        lane if lane is not None
        else int(scene.lane[scene.index_of(ego_id)])
    )
    target_lane = (
        origin - 1 if decision is Manoeuvre.LANE_CHANGE else origin
    )

    if not road.has_lane(target_lane):
        raise BoundsError(
            f"Lane {target_lane} is outside a {road.lane_count}-lane road",
        )

    leader = nearest_ahead(scene, ego_id, target_lane)
    v_hat = (
        headway_speed(leader.gap, settings.t_hw, settings.v_pref)
        if leader is not None
        else settings.v_pref
    )

    return TargetPose(
        y_hat=road.lane_centre(target_lane),
        psi_hat=0.0,
        v_hat=v_hat,
        lane=target_lane,
    )


def emergency_target(
    scene: Scene,
    ego_id: int,
    road: RoadGeometry,
) -> TargetPose:
    """Stop in the lane the ego currently occupies."""
    lane = int(scene.lane[scene.index_of(ego_id)])
    logger.warning("Emergency stop target in lane %d", lane)

    return TargetPose(
        y_hat=road.lane_centre(lane),
        psi_hat=0.0,
        v_hat=0.0,
        lane=lane,
    )
