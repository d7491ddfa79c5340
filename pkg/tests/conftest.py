from collections.abc import Callable, Sequence

import numpy as np
import pytest

from lanechange.config import Settings, load_settings
from lanechange.model import FloatArray
from lanechange.trajdata.loader import VehicleTrack, finite_difference
from lanechange.trajdata.road import RoadGeometry, make_road


@pytest.fixture
def settings() -> Settings:
    return load_settings(None)


@pytest.fixture
def road() -> RoadGeometry:
    return make_road(3, 3.7)


def _make_track(
    road: RoadGeometry,
    ts: float,
) -> Callable[..., VehicleTrack]:
    def build(
        vehicle_id: int,
        y: Sequence[float] | FloatArray,
        *,
        x0: float = 0.0,
        speed: float = 25.0,
        first_frame: int = 0,
        length: float = 4.5,
        width: float = 1.8,
    ) -> VehicleTrack:
        lateral = np.asarray(y, dtype=np.float64)
        n = lateral.shape[0]
        x = x0 + speed * ts * np.arange(n, dtype=np.float64)

        return VehicleTrack(
            vehicle_id=vehicle_id,
            segment=0,
            ts=ts,
            frames=np.arange(first_frame, first_frame + n, dtype=np.int64),
            x=x,
            y=lateral,
            speed=np.full(n, speed),
            lane_id=road.lanes_of(lateral),
            length=length,
            width=width,
            heading=np.zeros(n),
            lateral_speed=-finite_difference(lateral, ts),
            longitudinal_speed=np.full(n, speed),
            interpolated=np.zeros(n, dtype=np.bool_),
        )

    return build


@pytest.fixture
def make_track(road: RoadGeometry) -> Callable[..., VehicleTrack]:
    """Constant-speed tracks on the 3-lane road with 0.1 s frames."""
    return _make_track(road, 0.1)
