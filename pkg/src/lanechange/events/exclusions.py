from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Callable, Sequence

from lanechange.config import EventSettings
from lanechange.context.neighbors import Neighbor, Side, identify_neighbors
from lanechange.errors import VehicleLookupError
from lanechange.model import Direction, ExclusionReason, LaneChangeEvent
from lanechange.trajdata.road import RoadGeometry
from lanechange.trajdata.scenes import Scene

logger = logging.getLogger(__name__)


def time_headway(gap: float, follower_speed: float) -> float:
    if gap <= 0:
        return 0.0

    if follower_speed <= 0:
        return math.inf

    return gap / follower_speed


def _left_headways(
    scene: Scene,
    vehicle_id: int,
    road: RoadGeometry,
    sensing_range: float,
) -> list[float]:
    neighbors = identify_neighbors(
        scene,
        vehicle_id,
        road,
        Side.LEFT,
        sensing_range=sensing_range,
    )
    ego_speed = float(scene.speed[scene.index_of(vehicle_id)])
    headways: list[float] = []
    fl: Neighbor | None = neighbors.fl
    rl: Neighbor | None = neighbors.rl

    # The ego follows the front-left vehicle; the rear-left follows the ego.
    if fl is not None:
        headways.append(time_headway(fl.gap, ego_speed))

    if rl is not None:
        headways.append(time_headway(rl.gap, rl.speed))

    return headways


def _reason(
    event: LaneChangeEvent,
    road: RoadGeometry,
    scene_at: Callable[[int], Scene],
    settings: EventSettings,
    sensing_range: float,
) -> ExclusionReason | None:
    if event.direction is Direction.RIGHT:
        return ExclusionReason.MANDATORY

    if event.low_confidence:
        return ExclusionReason.LOW_CONFIDENCE

    try:
        x = scene_at(event.crossing_frame).state_of(event.vehicle_id).x
        headways = _left_headways(
            scene_at(event.initiation_frame),
            event.vehicle_id,
            road,
            sensing_range,
        )
    except VehicleLookupError:
        return ExclusionReason.INDETERMINATE

    if road.in_ramp_zone(x, settings.ramp_margin):
        return ExclusionReason.RAMP

    if any(h <= settings.headway_min for h in headways):
        return ExclusionReason.HEADWAY

    return None


def apply_exclusions(
    events: Sequence[LaneChangeEvent],
    road: RoadGeometry,
    scene_at: Callable[[int], Scene],
    settings: EventSettings,
    *,
    sensing_range: float = 100.0,
) -> list[LaneChangeEvent]:
    """Flag right, near-ramp, tight-headway and undecidable changes."""
    flagged: list[LaneChangeEvent] = []

    for event in events:
        reason = _reason(event, road, scene_at, settings, sensing_range)
        flagged.append(
            event._replace(excluded=reason is not None, reason=reason),
        )

    summary = exclusion_summary(flagged)
    logger.info("Exclusions over %d events: %s", len(flagged), summary)

    return flagged


def exclusion_summary(events: Sequence[LaneChangeEvent]) -> dict[str, int]:
    counts = Counter(
        str(event.reason) if event.excluded else "retained"
        for event in events
    )

    return dict(sorted(counts.items()))
