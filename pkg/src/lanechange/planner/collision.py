from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from lanechange.config import PlannerSettings
from lanechange.context.neighbors import nearest_ahead
from lanechange.errors import InfeasibleEnvironmentError, ParameterError
from lanechange.trajdata.road import RoadGeometry
from lanechange.trajdata.scenes import Scene

logger = logging.getLogger(__name__)


class HalfPlane(NamedTuple):
    """
    Region a*x + b*y + c + c_rate*t < 0 for the ego centre at time t
    seconds after the snapshot.
    """
    a: float
    b: float
    c: float
    c_rate: float = 0.0
    label: str = ""

    def value(self, x: float, y: float, t: float = 0.0) -> float:
        return self.a * x + self.b * y + self.c + self.c_rate * t

    def contains(self, x: float, y: float, t: float = 0.0) -> bool:
        return self.value(x, y, t) < 0


def _plane(
    a: float,
    b: float,
    c: float,
    c_rate: float = 0.0,
    *,
    label: str,
) -> HalfPlane:
    if a == 0 and b == 0:
        raise ParameterError(f"Half-plane {label} has no normal")

    return HalfPlane(float(a), float(b), float(c), float(c_rate), label)


def road_edges(
    road: RoadGeometry,
    ego_width: float,
    margin: float,
) -> list[HalfPlane]:
    low = road.marking_positions[0] + ego_width / 2 + margin
    high = road.marking_positions[-1] - ego_width / 2 - margin

    return [
        _plane(0.0, -1.0, low, label="edge_left"),
        _plane(0.0, 1.0, -high, label="edge_right"),
    ]


def rear_plane(
    scene: Scene,
    ego: int,
    other: int,
    clearance: float,
) -> HalfPlane:
    """Keep the ego front ``clearance`` behind the other vehicle's rear."""
    offset = (scene.length[ego] + scene.length[other]) / 2 + clearance

    return _plane(
        1.0,
        0.0,
        offset - scene.x[other],
        -scene.speed[other],
        label=f"rear:{int(scene.ids[other])}",
    )


def side_plane(
    road: RoadGeometry,
    scene: Scene,
    ego: int,
    lane: int,
    target_lane: int,
    margin: float,
) -> HalfPlane:
    """Keep the ego on its own side of the marking towards ``target_lane``."""
    marking = road.shared_marking(lane, target_lane)
    half_width = scene.width[ego] / 2
    y = float(scene.y[ego])

    # Left is decreasing y, so the ego stays at or right of the bound.
    bound = min(marking + half_width, y - margin)

    return _plane(0.0, -1.0, bound, label=f"side:{target_lane}")


def corner_plane(
    road: RoadGeometry,
    scene: Scene,
    ego: int,
    other: int,
    gap_min: float,
    margin: float,
) -> HalfPlane:
    """
    Diagonal boundary past a slower vehicle in the origin lane: anywhere
    behind its rear clearance point, and clear of its left side once the
    ego has closed in by ``gap_min`` plus its length.
    """
    length = float(scene.length[other])
    x1 = (
        scene.x[other] - length / 2 - gap_min - scene.length[ego] / 2
    )
    y1 = road.marking_positions[-1]
    y2 = scene.y[other] - (scene.width[other] + scene.width[ego]) / 2
    y2 -= margin
    slope = (y2 - y1) / (gap_min + length)

    return _plane(
        -slope,
        1.0,
        slope * x1 - y1,
        slope * scene.speed[other],
        label=f"corner:{int(scene.ids[other])}",
    )


def _alongside(
    scene: Scene,
    ego: int,
    lane: int,
    gap_min: float,
) -> bool:
    reach = (scene.length + scene.length[ego]) / 2 + gap_min
    near = (scene.lane == lane) & (np.abs(scene.x - scene.x[ego]) < reach)
    near[ego] = False

    return bool(near.any())


def build_collision_set(
    scene: Scene,
    ego_id: int,
    road: RoadGeometry,
    settings: PlannerSettings,
    *,
    lane: int,
    target_lane: int,
    emergency: bool = False,
) -> list[HalfPlane]:
    """
    Convex safe region for the ego centre over the horizon, with other
    vehicles extrapolated at constant speed.

    Raises InfeasibleEnvironmentError when the ego is already outside it.
    """
    ego = scene.index_of(ego_id)
    x = float(scene.x[ego])
    y = float(scene.y[ego])
    planes = road_edges(road, float(scene.width[ego]), settings.edge_margin)
    clearance = settings.gap_min

    if not emergency:
        clearance += settings.t_hw * float(scene.speed[ego])

    leader = nearest_ahead(scene, ego_id, lane)

    if target_lane == lane:
        if leader is not None:
            other = scene.index_of(leader.vehicle_id)
            planes.append(rear_plane(scene, ego, other, clearance))
    else:
        target_leader = nearest_ahead(scene, ego_id, target_lane)
        blocked = _alongside(scene, ego, target_lane, settings.gap_min)

        if target_leader is not None:
            other = scene.index_of(target_leader.vehicle_id)
            rear = rear_plane(scene, ego, other, clearance)

            if rear.contains(x, y):
                planes.append(rear)
            else:
                blocked = True

        if blocked:
            planes.append(
                side_plane(
                    road,
                    scene,
                    ego,
                    lane,
                    target_lane,
                    settings.edge_margin,
                ),
            )

        if leader is not None:
            other = scene.index_of(leader.vehicle_id)
            planes.append(
                corner_plane(
                    road,
                    scene,
                    ego,
                    other,
                    settings.gap_min,
                    settings.edge_margin,
                ),
            )

    violated = tuple(p.label for p in planes if not p.contains(x, y))

    if violated:
        raise InfeasibleEnvironmentError(violated)

    logger.debug(
        "Collision set at frame %d: %s",
        scene.frame,
        ", ".join(p.label for p in planes),
    )

    return planes
