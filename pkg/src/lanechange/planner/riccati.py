from __future__ import annotations

import numpy as np
import scipy.linalg

from lanechange.errors import NumericalError
from lanechange.model import FloatArray

RESIDUAL_TOL = 1e-8


def dare_residual(
    a: FloatArray,
    b: FloatArray,
    q: FloatArray,
    r: FloatArray,
    p: FloatArray,
) -> float:
    """Relative residual of the discrete algebraic Riccati equation."""
    gain = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    rhs = a.T @ p @ a - a.T @ p @ b @ gain + q
    scale = max(1.0, float(np.linalg.norm(p)))

    return float(np.linalg.norm(rhs - p) / scale)


def riccati(
    a: FloatArray,
    b: FloatArray,
    q: FloatArray,
    r: FloatArray,
) -> FloatArray:
    try:
        p = scipy.linalg.solve_discrete_are(a, b, q, r)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(
            f"Riccati equation has no solution: {exc}",
        ) from exc

    p = (p + p.T) / 2
    residual = dare_residual(a, b, q, r, p)

    if not np.isfinite(residual) or residual > RESIDUAL_TOL:
        raise NumericalError(f"Riccati residual {residual:.3g} is too large")

    return p


def spectral_radius(matrix: FloatArray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def lqr_gain(
    a: FloatArray,
    b: FloatArray,
    q: FloatArray,
    r: FloatArray,
    p: FloatArray | None = None,
) -> FloatArray:
    """State feedback K for u = -K x from the Riccati solution."""
    if p is None:
        p = riccati(a, b, q, r)

    try:
        gain = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("R + B'PB is singular") from exc

    radius = spectral_radius(a - b @ gain)

    if radius >= 1:
        raise NumericalError(
            f"Closed loop has spectral radius {radius:.6f} >= 1",
        )

    return gain
