from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np
import scipy.linalg

from lanechange.config import PlannerSettings
from lanechange.errors import NumericalError, ParameterError
from lanechange.model import FloatArray
from lanechange.trajdata.road import RoadGeometry

logger = logging.getLogger(__name__)

N_STATES = 3
N_INPUTS = 2


class Bounds(NamedTuple):
    """Box limits on the state (y, psi, v) and the input (delta_f, a_x)."""
    y: tuple[float, float]
    psi: tuple[float, float]
    v: tuple[float, float]
    delta: tuple[float, float]
    ax: tuple[float, float]

    @property
    def state_lower(self) -> FloatArray:
        return np.array([self.y[0], self.psi[0], self.v[0]])

    @property
    def state_upper(self) -> FloatArray:
        return np.array([self.y[1], self.psi[1], self.v[1]])

    @property
    def input_lower(self) -> FloatArray:
        return np.array([self.delta[0], self.ax[0]])

    @property
    def input_upper(self) -> FloatArray:
        return np.array([self.delta[1], self.ax[1]])


class PlantModel(NamedTuple):
    a: FloatArray
    b: FloatArray
    ts: float
    bounds: Bounds
    v0: float
    wheelbase: float


def bounds_from_settings(
    settings: PlannerSettings,
    road: RoadGeometry,
) -> Bounds:
    return Bounds(
        y=(road.marking_positions[0], road.marking_positions[-1]),
        psi=settings.psi_bounds,
        v=settings.v_bounds,
        delta=settings.delta_bounds,
        ax=settings.ax_bounds,
    )


def controllability_rank(a: FloatArray, b: FloatArray) -> int:
    blocks = [b]

    for _ in range(a.shape[0] - 1):
        blocks.append(a @ blocks[-1])

    return int(np.linalg.matrix_rank(np.hstack(blocks)))


def build_model(
    v0: float,
    wheelbase: float,
    ts: float,
    bounds: Bounds,
) -> PlantModel:
    """
    Forward-Euler lateral/heading/speed model linearized about ``v0``:
    y+ = y + ts*v0*psi, psi+ = psi + ts*(v0/L)*delta_f, v+ = v + ts*a_x.
    """
    if v0 < 0 or wheelbase <= 0 or ts <= 0:
        raise ParameterError(
            "Linearization needs v0 >= 0, wheelbase > 0 and ts > 0",
        )

    a = np.array(
        [
            [1.0, ts * v0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ],
    )
    b = np.array(
        [
            [0.0, 0.0],
            [ts * v0 / wheelbase, 0.0],
            [0.0, ts],
        ],
    )
    rank = controllability_rank(a, b)

    if rank < N_STATES:
        raise NumericalError(
            f"Plant linearized at v0={v0} has controllability rank {rank}; "
            "the lateral channel is uncontrollable",
        )

    return PlantModel(
        a=a,
        b=b,
        ts=ts,
        bounds=bounds,
        v0=v0,
        wheelbase=wheelbase,
    )


def steady_state_basis(model: PlantModel) -> FloatArray:
    """
    Matrix M with (xi_ss, u_ss) = M @ rho for every steady state.

    The basis is normalized so that rho reads off the state components
    picked by a pivoted QR, which for this plant are y and v.
    """
    n = model.a.shape[0]
    stacked = np.hstack((model.a - np.eye(n), model.b))
    null = scipy.linalg.null_space(stacked)
    k = null.shape[1]
    _, _, pivots = scipy.linalg.qr(null.T, pivoting=True)
    rows = np.sort(pivots[:k])
    basis = null @ np.linalg.inv(null[rows])
    basis[np.abs(basis) < 1e-12] = 0.0
    logger.debug("Steady-state basis of dimension %d on rows %s", k, rows)

    return basis
