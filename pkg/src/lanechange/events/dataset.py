from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np

from lanechange.config import EventSettings
from lanechange.events.detect import extract_events
from lanechange.events.exclusions import apply_exclusions
from lanechange.events.sampling import sample_lane_keep
from lanechange.model import LabeledInstance, LaneChangeEvent, Manoeuvre
from lanechange.trajdata.loader import VehicleTrack
from lanechange.trajdata.road import RoadGeometry
from lanechange.trajdata.scenes import SceneIndex

logger = logging.getLogger(__name__)


class Dataset(NamedTuple):
    instances: tuple[LabeledInstance, ...]
    events: tuple[LaneChangeEvent, ...]


def track_for(
    tracks: Sequence[VehicleTrack],
    vehicle_id: int,
    frame: int,
) -> VehicleTrack | None:
    for track in tracks:
        if track.vehicle_id == vehicle_id and track.has_frame(frame):
            return track

    return None


def balance(
    instances: Sequence[LabeledInstance],
    rng: np.random.Generator,
) -> tuple[LabeledInstance, ...]:
    """Subsample the larger class down to the size of the smaller one."""
    by_label = {
        label: [i for i in instances if i.label is label]
        for label in Manoeuvre
    }
    size = min(len(group) for group in by_label.values())
    kept: list[LabeledInstance] = []

    for group in by_label.values():
        chosen = sorted(rng.choice(len(group), size=size, replace=False))
        kept.extend(group[int(i)] for i in chosen)

    return tuple(sorted(kept, key=lambda i: (i.vehicle_id, i.frame)))


def build_dataset(
    tracks: Sequence[VehicleTrack],
    road: RoadGeometry,
    scenes: SceneIndex,
    settings: EventSettings,
    rng: np.random.Generator,
    *,
    sensing_range: float = 100.0,
) -> Dataset:
    """
    Detect and screen lane changes, then pair every retained change with
    lane-keep frames sampled before its initiation.
    """
    detected: list[LaneChangeEvent] = []

    for track in tracks:
        detected.extend(extract_events(track, road, settings))

    events = apply_exclusions(
        detected,
        road,
        scenes.at,
        settings,
        sensing_range=sensing_range,
    )
    instances: list[LabeledInstance] = []

    for event in events:
        if event.excluded:
            continue

        track = track_for(tracks, event.vehicle_id, event.crossing_frame)

        if track is None:
            continue

        keep = sample_lane_keep(
            track,
            event.initiation_frame,
            settings.keep_per_event,
            rng,
            warmup_s=settings.warmup_s,
            margin_s=settings.margin_s,
        )

        if not keep.frames:
            logger.warning(
                "No lane-keep window before frame %d for vehicle %d",
                event.initiation_frame,
                event.vehicle_id,
            )
            continue

        instances.append(
            LabeledInstance(
                vehicle_id=event.vehicle_id,
                frame=event.initiation_frame,
                label=Manoeuvre.LANE_CHANGE,
                event_frame=event.crossing_frame,
            ),
        )
        instances.extend(
            LabeledInstance(
                vehicle_id=event.vehicle_id,
                frame=frame,
                label=Manoeuvre.LANE_KEEP,
                event_frame=event.crossing_frame,
            )
            for frame in keep.frames
        )

    balanced = balance(instances, rng)
    logger.info(
        "Built %d instances from %d events (%d retained)",
        len(balanced),
        len(events),
        sum(not e.excluded for e in events),
    )

    return Dataset(instances=balanced, events=tuple(events))
