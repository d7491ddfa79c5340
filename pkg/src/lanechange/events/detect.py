from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from lanechange.config import EventSettings
from lanechange.model import Direction, FloatArray, LaneChangeEvent
from lanechange.trajdata.loader import VehicleTrack
from lanechange.trajdata.road import RoadGeometry

logger = logging.getLogger(__name__)


class Crossing(NamedTuple):
    # First frame at which the front is on the far side of the marking.
    frame: int
    direction: Direction
    marking: int


class Initiation(NamedTuple):
    frame: int
    low_confidence: bool


def front_lateral(track: VehicleTrack) -> FloatArray:
    """Lateral position of the front-centre of the vehicle."""
    return track.y + track.length / 2 * np.sin(track.heading)


def _merge(crossings: list[Crossing], window: int) -> list[Crossing]:
    # Back-and-forth crossings of one marking close together form a
    # group; an even group returns to where it started and is dropped.
    merged: list[Crossing] = []
    group: list[Crossing] = []

    for crossing in crossings:
        if group and crossing.frame - group[-1].frame > window:
            if len(group) % 2:
                merged.append(group[0])

            group = []

        group.append(crossing)

    if len(group) % 2:
        merged.append(group[0])

    return merged


def detect_crossings(
    track: VehicleTrack,
    road: RoadGeometry,
    *,
    merge_window_s: float = 2.0,
) -> list[Crossing]:
    if track.n_samples < 2:
        return []

    front = front_lateral(track)
    window = round(merge_window_s / track.ts)
    found: list[Crossing] = []

    for marking in range(1, road.lane_count):
        position = road.marking_positions[marking]
        right_of = front >= position
        changes = np.flatnonzero(right_of[1:] != right_of[:-1]) + 1
        crossings = [
            Crossing(
                frame=int(track.frames[k]),
                direction=Direction.RIGHT if right_of[k] else Direction.LEFT,
                marking=marking,
            )
            for k in changes
        ]
        found.extend(_merge(crossings, window))

    return sorted(found, key=lambda c: (c.frame, c.marking))


def find_initiation(
    track: VehicleTrack,
    crossing_frame: int,
    threshold: float = 0.1,
    *,
    direction: Direction | None = None,
    min_run_s: float = 0.5,
) -> Initiation:
    """
    Start of the final run of lateral speed toward the target lane at or
    above ``threshold`` that ends at the crossing.
    """
    end = track.index_of(crossing_frame)
    speed = track.lateral_speed[: end + 1]

    if direction is None:
        direction = Direction.LEFT if speed[-1] >= 0 else Direction.RIGHT

    toward = speed if direction is Direction.LEFT else -speed
    below = np.flatnonzero(toward[:end] < threshold)

    if below.size == 0:
        logger.warning(
            "Vehicle %d never drops below %.2f m/s before frame %d",
            track.vehicle_id,
            threshold,
            crossing_frame,
        )

        return Initiation(frame=track.first_frame, low_confidence=True)

    start = int(below[-1]) + 1
    short_run = (end - start) * track.ts < min_run_s

    return Initiation(
        frame=int(track.frames[start]),
        low_confidence=short_run,
    )


def extract_events(
    track: VehicleTrack,
    road: RoadGeometry,
    settings: EventSettings,
) -> list[LaneChangeEvent]:
    events: list[LaneChangeEvent] = []

    for crossing in detect_crossings(
        track,
        road,
        merge_window_s=settings.merge_window_s,
    ):
        initiation = find_initiation(
            track,
            crossing.frame,
            settings.threshold,
            direction=crossing.direction,
            min_run_s=settings.min_run_s,
        )
        events.append(
            LaneChangeEvent(
                vehicle_id=track.vehicle_id,
                crossing_frame=crossing.frame,
                initiation_frame=initiation.frame,
                direction=crossing.direction,
                low_confidence=initiation.low_confidence,
            ),
        )

    return events
