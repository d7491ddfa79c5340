from __future__ import annotations

from enum import StrEnum
from typing import NamedTuple

import numpy as np

from lanechange.model import BoolArray
from lanechange.trajdata.road import RoadGeometry
from lanechange.trajdata.scenes import Scene


class Side(StrEnum):
    CURRENT = "current"
    LEFT = "left"


class Neighbor(NamedTuple):
    vehicle_id: int
    # Bumper-to-bumper distance; zero or negative when boxes overlap
    # longitudinally.
    gap: float
    # Other vehicle's speed minus the ego's.
    rel_speed: float
    speed: float


class NeighborSet(NamedTuple):
    lv: Neighbor | None
    fl: Neighbor | None
    rl: Neighbor | None


def _nearest(
    scene: Scene,
    ego: int,
    candidates: BoolArray,
    *,
    ahead: bool,
    sensing_range: float,
) -> Neighbor | None:
    dx = scene.x - scene.x[ego]
    gap = np.abs(dx) - (scene.length + scene.length[ego]) / 2
    mask = candidates & (gap <= sensing_range)
    mask &= dx >= 0 if ahead else dx < 0
    mask[ego] = False
    indices = np.flatnonzero(mask)

    if indices.size == 0:
        return None

    # Ties in distance go to the lower vehicle id.
    best = min(indices, key=lambda i: (abs(dx[i]), scene.ids[i]))

    return Neighbor(
        vehicle_id=int(scene.ids[best]),
        gap=float(gap[best]),
        rel_speed=float(scene.speed[best] - scene.speed[ego]),
        speed=float(scene.speed[best]),
    )


def nearest_ahead(
    scene: Scene,
    ego_id: int,
    lane: int,
    *,
    sensing_range: float = 100.0,
) -> Neighbor | None:
    """Nearest vehicle whose centre is ahead of the ego in ``lane``."""
    ego = scene.index_of(ego_id)

    return _nearest(
        scene,
        ego,
        scene.lane == lane,
        ahead=True,
        sensing_range=sensing_range,
    )


def identify_neighbors(
    scene: Scene,
    ego_id: int,
    road: RoadGeometry,
    side: Side = Side.CURRENT,
    *,
    sensing_range: float = 100.0,
) -> NeighborSet:
    """
    Find the lead vehicle in the current (or left) lane and the nearest
    front-left and rear-left vehicles.

    Slots are assigned by centre position, so a vehicle alongside the ego
    fills the front or rear slot with a non-positive gap.
    """
    ego = scene.index_of(ego_id)
    lane = int(scene.lane[ego])
    left = lane - 1
    lv_lane = lane if side is Side.CURRENT else left
    lv = None
    fl = None
    rl = None

    if road.has_lane(lv_lane):
        lv = _nearest(
            scene,
            ego,
            scene.lane == lv_lane,
            ahead=True,
            sensing_range=sensing_range,
        )

    if road.has_lane(left):
        in_left = scene.lane == left
        fl = _nearest(
            scene,
            ego,
            in_left,
            ahead=True,
            sensing_range=sensing_range,
        )
        rl = _nearest(
            scene,
            ego,
            in_left,
            ahead=False,
            sensing_range=sensing_range,
        )

    return NeighborSet(lv=lv, fl=fl, rl=rl)
