from __future__ import annotations

import logging
from collections.abc import Sequence

import numpy as np
import pandas as pd

from lanechange.config import EkfConfig, SmoothingSettings
from lanechange.errors import LengthError, NumericalError, ParameterError
from lanechange.model import FloatArray
from lanechange.trajdata.loader import VehicleTrack, finite_difference

logger = logging.getLogger(__name__)

# Innovation covariances above this condition number count as singular.
_MAX_CONDITION = 1e12
_MEASUREMENT = np.array(
    [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]],
)


def _predict(
    state: FloatArray,
    covariance: FloatArray,
    ts: float,
    cfg: EkfConfig,
) -> tuple[FloatArray, FloatArray]:
    _, _, psi, v = state
    cos_psi = np.cos(psi)
    sin_psi = np.sin(psi)
    predicted = state + np.array(
        [ts * v * cos_psi, ts * v * sin_psi, 0.0, 0.0],
    )
    jacobian = np.array(
        [
            [1.0, 0.0, -ts * v * sin_psi, ts * cos_psi],
            [0.0, 1.0, ts * v * cos_psi, ts * sin_psi],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ],
    )
    # The steering disturbance reaches the heading through the bicycle
    # yaw rate v / L * tan(delta).
    yaw_gain = ts * v / cfg.wheelbase
    noise = np.diag(
        [
            cfg.process_noise[0],
            cfg.process_noise[1],
            cfg.process_noise[2] * yaw_gain**2,
            cfg.process_noise[3],
        ],
    )

    return predicted, jacobian @ covariance @ jacobian.T + noise


def ekf_smooth(track: VehicleTrack, cfg: EkfConfig) -> VehicleTrack:
    """
    Filter positions with a kinematic bicycle model.

    The state is (x, y, heading, speed) and only positions are measured.
    The returned track keeps its frames and replaces x, y, speed and
    heading by the filtered estimates.
    """
    n = track.n_samples

    if n < 2:
        raise LengthError("EKF smoothing needs at least 2 samples")

    ts = track.ts
    measurement_noise = np.diag(cfg.measurement_noise)
    identity = np.eye(4)
    dx = track.x[1] - track.x[0]
    dy = track.y[1] - track.y[0]
    heading0 = float(np.arctan2(dy, dx)) if dx > 0 else 0.0
    state = np.array([track.x[0], track.y[0], heading0, track.speed[0]])
    covariance = np.diag(cfg.initial_covariance)
    estimates = np.empty((n, 4))
    estimates[0] = state

    for k in range(1, n):
        state, covariance = _predict(state, covariance, ts, cfg)
        innovation_cov = (
            _MEASUREMENT @ covariance @ _MEASUREMENT.T + measurement_noise
        )

        if (
            not np.all(np.isfinite(innovation_cov))
            or np.linalg.cond(innovation_cov) > _MAX_CONDITION
        ):
            raise NumericalError(
                f"Singular innovation covariance for vehicle "
                f"{track.vehicle_id}",
                frame=int(track.frames[k]),
            )

        gain = np.linalg.solve(innovation_cov, _MEASUREMENT @ covariance).T
        innovation = np.array([track.x[k], track.y[k]]) - state[:2]
        state = state + gain @ innovation
        # Joseph form keeps the covariance symmetric positive definite.
        correction = identity - gain @ _MEASUREMENT
        covariance = (
            correction @ covariance @ correction.T
            + gain @ measurement_noise @ gain.T
        )
        estimates[k] = state

    return track._replace(
        x=estimates[:, 0].copy(),
        y=estimates[:, 1].copy(),
        heading=estimates[:, 2].copy(),
        speed=np.maximum(estimates[:, 3], 0.0),
        longitudinal_speed=finite_difference(estimates[:, 0].copy(), ts),
    )


def exp_smooth(
    series: Sequence[float] | FloatArray,
    alpha: float,
) -> FloatArray:
    """s[0] = x[0]; s[k] = alpha * x[k] + (1 - alpha) * s[k - 1]."""
    if not 0 < alpha <= 1:
        raise ParameterError(f"Smoothing factor {alpha} is outside (0, 1]")

    values = np.asarray(series, dtype=np.float64)

    if values.size == 0:
        raise LengthError("Cannot smooth an empty series")

    if alpha == 1:
        return values.copy()

    smoothed = pd.Series(values).ewm(alpha=alpha, adjust=False).mean()

    return smoothed.to_numpy(dtype=np.float64)


def lateral_speed(track: VehicleTrack) -> FloatArray:
    """Lateral speed in m/s, positive toward decreasing lane ids."""
    if track.n_samples < 2:
        raise LengthError("Lateral speed needs at least 2 samples")

    return -finite_difference(track.y, track.ts)


def smooth_track(
    track: VehicleTrack,
    settings: SmoothingSettings,
) -> VehicleTrack:
    """EKF on positions, then exponential smoothing of lateral speed."""
    if track.n_samples < 2:
        logger.warning(
            "Vehicle %d segment %d has a single sample, left unsmoothed",
            track.vehicle_id,
            track.segment,
        )

        return track

    filtered = ekf_smooth(track, settings.ekf)

    return filtered._replace(
        lateral_speed=exp_smooth(lateral_speed(filtered), settings.alpha),
    )
