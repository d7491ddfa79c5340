from __future__ import annotations

from typing import NamedTuple

import numpy as np

from lanechange.errors import ParameterError
from lanechange.trajdata.loader import VehicleTrack


class KeepSample(NamedTuple):
    frames: tuple[int, ...]
    # Fewer eligible frames than requested.
    short: bool


def keep_window(
    track: VehicleTrack,
    initiation_frame: int,
    *,
    warmup_s: float = 3.0,
    margin_s: float = 1.0,
) -> range:
    """Frames after the warmup and strictly before initiation - margin."""
    start = track.first_frame + round(warmup_s / track.ts)
    stop = initiation_frame - round(margin_s / track.ts)

    return range(start, max(start, stop))


def sample_lane_keep(
    track: VehicleTrack,
    initiation_frame: int,
    count: int,
    rng: np.random.Generator,
    *,
    warmup_s: float = 3.0,
    margin_s: float = 1.0,
) -> KeepSample:
    if count < 1:
        raise ParameterError("Lane-keep sample count must be at least 1")

    window = keep_window(
        track,
        initiation_frame,
        warmup_s=warmup_s,
        margin_s=margin_s,
    )

    if len(window) == 0:
        return KeepSample(frames=(), short=True)

    take = min(count, len(window))
    chosen = rng.choice(len(window), size=take, replace=False)

    return KeepSample(
        frames=tuple(sorted(window[int(i)] for i in chosen)),
        short=take < count,
    )
