from __future__ import annotations

from enum import StrEnum
from typing import NamedTuple

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.int64]
BoolArray = npt.NDArray[np.bool_]


class Direction(StrEnum):
    LEFT = "left"
    RIGHT = "right"


class Manoeuvre(StrEnum):
    LANE_KEEP = "lane_keep"
    LANE_CHANGE = "lane_change"


class ExclusionReason(StrEnum):
    MANDATORY = "mandatory"
    RAMP = "ramp"
    HEADWAY = "headway"
    INDETERMINATE = "indeterminate"
    LOW_CONFIDENCE = "low_confidence"


class RawSample(NamedTuple):
    """One recorded row of a trajectory file, in metric units."""
    vehicle_id: int
    frame: int
    # Geometric centre, x along the road and y across it.
    x: float
    y: float
    speed: float
    lane_id: int
    length: float
    width: float


class LaneChangeEvent(NamedTuple):
    """
    A detected manoeuvre: the instant the vehicle front crosses a marking
    and the start of the sustained lateral motion leading to it.
    """
    vehicle_id: int
    crossing_frame: int
    initiation_frame: int
    direction: Direction
    low_confidence: bool = False
    excluded: bool = False
    reason: ExclusionReason | None = None


class LabeledInstance(NamedTuple):
    vehicle_id: int
    frame: int
    label: Manoeuvre
    # The crossing frame of the event this instance was drawn for.
    event_frame: int


class EgoState(NamedTuple):
    x: float
    y: float
    psi: float
    v: float
