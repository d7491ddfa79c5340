from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np

from lanechange.config import EventSettings
from lanechange.errors import ParameterError
from lanechange.events.detect import detect_crossings, find_initiation
from lanechange.model import Direction, Manoeuvre
from lanechange.sim.replay import SimStep
from lanechange.trajdata.loader import VehicleTrack
from lanechange.trajdata.road import RoadGeometry

logger = logging.getLogger(__name__)


class Comparison(NamedTuple):
    lateral_rmse: float
    # Simulated minus human instants, in seconds; None if either side
    # has no lane change in the window.
    initiation_offset: float | None
    completion_offset: float | None
    max_abs_ax: float
    max_abs_delta: float
    ghost_conflicts: int
    fallback_steps: int


def _settled(
    frames: Sequence[int],
    ys: Sequence[float],
    after: int,
    target_y: float,
    tol: float,
) -> int | None:
    for frame, y in zip(frames, ys, strict=True):
        if frame >= after and abs(y - target_y) < tol:
            return frame

    return None


def _human_manoeuvre(
    track: VehicleTrack,
    road: RoadGeometry,
    first: int,
    last: int,
    settings: EventSettings,
    tol: float,
) -> tuple[int, int | None] | None:
    for crossing in detect_crossings(
        track,
        road,
        merge_window_s=settings.merge_window_s,
    ):
        if crossing.direction is not Direction.LEFT:
            continue

        if not first <= crossing.frame <= last:
            continue

        initiation = find_initiation(
            track,
            crossing.frame,
            settings.threshold,
            direction=crossing.direction,
            min_run_s=settings.min_run_s,
        )
        completion = _settled(
            [int(f) for f in track.frames],
            [float(y) for y in track.y],
            crossing.frame,
            road.lane_centre(crossing.marking),
            tol,
        )

        return initiation.frame, completion

    return None


def compare_to_ground_truth(
    steps: Sequence[SimStep],
    track: VehicleTrack,
    road: RoadGeometry,
    settings: EventSettings,
    *,
    completion_tol: float = 0.2,
) -> Comparison:
    """Compare the simulated ego with the recorded human driver."""
    sim_frames = np.array([s.frame for s in steps], dtype=np.int64)
    common, sim_idx, gt_idx = np.intersect1d(
        sim_frames,
        track.frames,
        return_indices=True,
    )

    if common.size == 0:
        raise ParameterError("Simulation and recording share no frames")

    sim_y = np.array([steps[i].state.y for i in sim_idx])
    rmse = float(np.sqrt(np.mean((sim_y - track.y[gt_idx]) ** 2)))

    first, last = int(common[0]), int(common[-1])
    human = _human_manoeuvre(
        track,
        road,
        first,
        last,
        settings,
        completion_tol,
    )
    committed = next(
        (s for s in steps if s.decision is Manoeuvre.LANE_CHANGE),
        None,
    )
    initiation_offset = None
    completion_offset = None

    if human is not None and committed is not None:
        human_start, human_end = human
        initiation_offset = (committed.frame - human_start) * track.ts
        sim_end = _settled(
            [s.frame for s in steps],
            [s.state.y for s in steps],
            committed.frame,
            committed.target.y_hat,
            completion_tol,
        )

        if sim_end is not None and human_end is not None:
            completion_offset = (sim_end - human_end) * track.ts

    comparison = Comparison(
        lateral_rmse=rmse,
        initiation_offset=initiation_offset,
        completion_offset=completion_offset,
        max_abs_ax=max((abs(s.a_x) for s in steps), default=0.0),
        max_abs_delta=max((abs(s.delta_f) for s in steps), default=0.0),
        ghost_conflicts=sum(s.ghost_conflict for s in steps),
        fallback_steps=sum(s.fallback for s in steps),
    )
    logger.info(
        "Lateral RMSE %.3f m, initiation offset %s s",
        comparison.lateral_rmse,
        comparison.initiation_offset,
    )

    return comparison


def comparison_dict(comparison: Comparison) -> dict[str, object]:
    return {
        key: (
            None
            if isinstance(value, float) and not math.isfinite(value)
            else value
        )
        for key, value in comparison._asdict().items()
    }
