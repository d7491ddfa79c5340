from __future__ import annotations

import math
from typing import NamedTuple

from lanechange.model import EgoState


class NonlinearPlant(NamedTuple):
    """Kinematic bicycle integrated with forward Euler."""
    ts: float
    wheelbase: float

    def step(self, state: EgoState, delta_f: float, a_x: float) -> EgoState:
        return EgoState(
            x=state.x + self.ts * state.v * math.cos(state.psi),
            y=state.y + self.ts * state.v * math.sin(state.psi),
            psi=state.psi
            + self.ts * state.v / self.wheelbase * math.tan(delta_f),
            v=max(state.v + self.ts * a_x, 0.0),
        )
