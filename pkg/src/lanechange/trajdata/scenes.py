from __future__ import annotations

from collections.abc import Iterable
from typing import NamedTuple

import numpy as np

from lanechange.errors import VehicleLookupError
from lanechange.model import EgoState, FloatArray, IntArray
from lanechange.trajdata.loader import VehicleTrack
from lanechange.trajdata.road import RoadGeometry


class Scene(NamedTuple):
    """Every vehicle present at one frame, as parallel arrays."""
    frame: int
    ids: IntArray
    x: FloatArray
    y: FloatArray
    speed: FloatArray
    length: FloatArray
    width: FloatArray
    lane: IntArray

    def index_of(self, vehicle_id: int) -> int:
        matches = np.flatnonzero(self.ids == vehicle_id)

        if matches.size == 0:
            raise VehicleLookupError(
                f"Vehicle {vehicle_id} is not in the scene at frame "
                f"{self.frame}",
            )

        return int(matches[0])

    def state_of(self, vehicle_id: int) -> EgoState:
        i = self.index_of(vehicle_id)

        return EgoState(
            x=float(self.x[i]),
            y=float(self.y[i]),
            psi=0.0,
            v=float(self.speed[i]),
        )

    def without(self, vehicle_id: int) -> Scene:
        keep = self.ids != vehicle_id

        return Scene(
            frame=self.frame,
            ids=self.ids[keep],
            x=self.x[keep],
            y=self.y[keep],
            speed=self.speed[keep],
            length=self.length[keep],
            width=self.width[keep],
            lane=self.lane[keep],
        )

    def with_vehicle(
        self,
        vehicle_id: int,
        state: EgoState,
        *,
        length: float,
        width: float,
        road: RoadGeometry,
    ) -> Scene:
        rest = self.without(vehicle_id)

        return Scene(
            frame=self.frame,
            ids=np.append(rest.ids, vehicle_id),
            x=np.append(rest.x, state.x),
            y=np.append(rest.y, state.y),
            speed=np.append(rest.speed, state.v),
            length=np.append(rest.length, length),
            width=np.append(rest.width, width),
            lane=np.append(rest.lane, road.lane_of(state.y)),
        )


class SceneIndex:
    """Frame-ordered store answering "who is where" at any frame."""

    def __init__(
        self,
        tracks: Iterable[VehicleTrack],
        road: RoadGeometry,
        *,
        exclude: int | None = None,
    ) -> None:
        kept = [t for t in tracks if t.vehicle_id != exclude]
        columns = {
            "frame": [t.frames for t in kept],
            "id": [np.full(t.n_samples, t.vehicle_id) for t in kept],
            "x": [t.x for t in kept],
            "y": [t.y for t in kept],
            "speed": [t.speed for t in kept],
            "length": [np.full(t.n_samples, t.length) for t in kept],
            "width": [np.full(t.n_samples, t.width) for t in kept],
        }
        arrays = {
            name: (
                np.concatenate(parts) if parts else np.empty(0)
            )
            for name, parts in columns.items()
        }
        order = np.lexsort((arrays["id"], arrays["frame"]))
        self._frames = arrays["frame"][order].astype(np.int64)
        self._ids = arrays["id"][order].astype(np.int64)
        self._x = arrays["x"][order].astype(np.float64)
        self._y = arrays["y"][order].astype(np.float64)
        self._speed = arrays["speed"][order].astype(np.float64)
        self._length = arrays["length"][order].astype(np.float64)
        self._width = arrays["width"][order].astype(np.float64)
        self._lane = road.lanes_of(self._y)

    def at(self, frame: int) -> Scene:
        lo = int(np.searchsorted(self._frames, frame, side="left"))
        hi = int(np.searchsorted(self._frames, frame, side="right"))

        return Scene(
            frame=frame,
            ids=self._ids[lo:hi],
            x=self._x[lo:hi],
            y=self._y[lo:hi],
            speed=self._speed[lo:hi],
            length=self._length[lo:hi],
            width=self._width[lo:hi],
            lane=self._lane[lo:hi],
        )
