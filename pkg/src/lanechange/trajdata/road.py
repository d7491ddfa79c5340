from __future__ import annotations

from collections.abc import Sequence
from typing import NamedTuple

import numpy as np

from lanechange.config import RoadSettings
from lanechange.errors import BoundsError, ParameterError
from lanechange.model import FloatArray, IntArray


class RoadGeometry(NamedTuple):
    """
    A straight road in road-aligned coordinates.

    Lane 1 is the leftmost lane and has the smallest lateral position, so
    moving left means decreasing ``y``.
    """
    lane_count: int
    lane_width: float
    lane_centres: tuple[float, ...]
    marking_positions: tuple[float, ...]
    ramp_zones: tuple[tuple[float, float], ...]

    def has_lane(self, lane_id: int) -> bool:
        return 1 <= lane_id <= self.lane_count

    def lane_centre(self, lane_id: int) -> float:
        if not self.has_lane(lane_id):
            raise BoundsError(
                f"Lane {lane_id} is outside a {self.lane_count}-lane road",
            )

        return self.lane_centres[lane_id - 1]

    def lane_of(self, y: float) -> int:
        return int(self.lanes_of(np.array([y]))[0])

    def lanes_of(self, y: FloatArray) -> IntArray:
        # Points outside the road are assigned to the nearest edge lane.
        interior = np.asarray(self.marking_positions[1:-1], dtype=np.float64)

        return np.searchsorted(interior, y, side="right").astype(np.int64) + 1

    def shared_marking(self, lane_a: int, lane_b: int) -> float:
        if abs(lane_a - lane_b) != 1:
            raise BoundsError(f"Lanes {lane_a} and {lane_b} are not adjacent")

        return self.marking_positions[max(lane_a, lane_b) - 1]

    def in_ramp_zone(self, x: float, margin: float = 0.0) -> bool:
        return any(
            start - margin <= x <= end + margin
            for start, end in self.ramp_zones
        )


def make_road(
    lane_count: int,
    lane_width: float,
    *,
    origin: float = 0.0,
    ramp_zones: Sequence[tuple[float, float]] = (),
) -> RoadGeometry:
    if lane_count < 1:
        raise ParameterError("A road needs at least one lane")

    if lane_width <= 0:
        raise ParameterError("Lane width must be positive")

    markings = tuple(origin + i * lane_width for i in range(lane_count + 1))
    centres = tuple(
        (left + right) / 2 for left, right in zip(
            markings[:-1],
            markings[1:],
            strict=True,
        )
    )

    return RoadGeometry(
        lane_count=lane_count,
        lane_width=lane_width,
        lane_centres=centres,
        marking_positions=markings,
        ramp_zones=tuple(ramp_zones),
    )


def road_from_settings(settings: RoadSettings) -> RoadGeometry:
    return make_road(
        settings.lane_count,
        settings.lane_width,
        origin=settings.origin,
        ramp_zones=settings.ramp_zones,
    )
