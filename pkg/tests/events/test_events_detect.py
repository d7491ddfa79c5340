from collections.abc import Callable

import numpy as np

from lanechange.config import Settings
from lanechange.events.detect import (
    detect_crossings,
    extract_events,
    find_initiation,
)
from lanechange.model import Direction, FloatArray
from lanechange.trajdata.loader import VehicleTrack
from lanechange.trajdata.road import RoadGeometry

MakeTrack = Callable[..., VehicleTrack]


def _left_change_y(n: int = 140) -> FloatArray:
    # Lane 2 centre until frame 50, then 1 m/s toward lane 1.
    k = np.arange(n, dtype=np.float64)

    return np.clip(5.55 - 0.1 * (k - 50), 1.85, 5.55)


def test_single_lane_track_has_no_crossings(
    road: RoadGeometry,
    make_track: MakeTrack,
) -> None:
    track = make_track(1, 5.55 + 0.3 * np.sin(np.arange(100) / 10))

    assert detect_crossings(track, road) == []


def test_linear_ramp_crosses_once(
    road: RoadGeometry,
    make_track: MakeTrack,
) -> None:
    track = make_track(1, _left_change_y())

    crossings = detect_crossings(track, road)

    assert len(crossings) == 1
    assert crossings[0].frame == 69
    assert crossings[0].direction is Direction.LEFT
    assert crossings[0].marking == 1


def test_mirrored_track_mirrors_directions(
    road: RoadGeometry,
    make_track: MakeTrack,
) -> None:
    y = _left_change_y()
    width = road.marking_positions[-1]

    forward = detect_crossings(make_track(1, y), road)
    mirrored = detect_crossings(make_track(1, width - y), road)

    assert [c.frame for c in mirrored] == [c.frame for c in forward]
    assert [c.direction for c in mirrored] == [Direction.RIGHT]


def test_oscillation_is_merged(
    road: RoadGeometry,
    make_track: MakeTrack,
) -> None:
    # Dips across the marking and comes back within 1 s.
    y = np.full(100, 4.0)
    y[40:48] = 3.5

    assert detect_crossings(make_track(1, y), road) == []


def test_step_signal_initiation(make_track: MakeTrack) -> None:
    track = make_track(1, np.full(100, 5.55))
    speed = np.zeros(100)
    speed[50:] = 0.3

    initiation = find_initiation(
        track._replace(lateral_speed=speed),
        80,
        0.1,
        direction=Direction.LEFT,
    )

    assert initiation.frame == 50
    assert not initiation.low_confidence


def test_blip_before_sustained_run_is_ignored(make_track: MakeTrack) -> None:
    track = make_track(1, np.full(100, 5.55))
    speed = np.zeros(100)
    speed[20] = 0.12
    speed[60:] = 0.3

    initiation = find_initiation(track._replace(lateral_speed=speed), 80)

    assert initiation.frame == 60


def test_never_slow_is_low_confidence(make_track: MakeTrack) -> None:
    track = make_track(1, np.full(30, 5.55), first_frame=10)

    initiation = find_initiation(
        track._replace(lateral_speed=np.full(30, 0.5)),
        30,
    )

    assert initiation.frame == 10
    assert initiation.low_confidence


def test_short_run_is_low_confidence(make_track: MakeTrack) -> None:
    track = make_track(1, np.full(100, 5.55))
    speed = np.zeros(100)
    speed[78:] = 0.3

    initiation = find_initiation(track._replace(lateral_speed=speed), 80)

    assert initiation.frame == 78
    assert initiation.low_confidence


def test_noisy_initiation_is_found_within_one_sample(
    make_track: MakeTrack,
) -> None:
    rng = np.random.default_rng(0)
    track = make_track(1, np.full(100, 5.55))
    hits = 0

    for trial in range(200):
        onset = int(rng.integers(20, 60))
        k = np.arange(100, dtype=np.float64)

        if trial % 2 == 0:
            profile = np.where(k >= onset, 0.3, 0.0)
            expected = onset
        else:
            # First sample at or above 0.1 is two steps after the onset.
            profile = np.clip(0.06 * (k - onset), 0.0, 0.4)
            expected = onset + 2

        speed = profile + rng.normal(0.0, 0.02, size=100)
        initiation = find_initiation(
            track._replace(lateral_speed=speed),
            onset + 20,
            direction=Direction.LEFT,
        )
        hits += int(abs(initiation.frame - expected) <= 1)

    assert hits >= 190


def test_initiation_ignores_frames_after_crossing(
    make_track: MakeTrack,
) -> None:
    short = make_track(1, _left_change_y(90))
    long = make_track(1, _left_change_y(140))

    assert find_initiation(short, 69) == find_initiation(long, 69)


def test_extract_events(
    road: RoadGeometry,
    make_track: MakeTrack,
    settings: Settings,
) -> None:
    events = extract_events(
        make_track(3, _left_change_y()),
        road,
        settings.events,
    )

    assert len(events) == 1
    event = events[0]
    assert event.vehicle_id == 3
    assert event.initiation_frame == 50
    assert event.crossing_frame == 69
    assert event.initiation_frame < event.crossing_frame
    assert not event.low_confidence


def test_single_sample_has_no_crossings(
    road: RoadGeometry,
    make_track: MakeTrack,
) -> None:
    assert detect_crossings(make_track(1, [5.55]), road) == []
