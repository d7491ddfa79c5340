"""
Dense strictly convex quadratic programming.

Minimizes 0.5 x'Hx + f'x subject to E x = e and G x <= g with a dual
active-set method in the manner of Goldfarb and Idnani: start from the
equality-constrained minimizer and add the most violated inequality until
none is left, dropping constraints whose multiplier would turn negative.
"""

from __future__ import annotations

import logging
import math
from enum import StrEnum
from typing import NamedTuple

import numpy as np

from lanechange.errors import NumericalError, ShapeError
from lanechange.model import FloatArray

logger = logging.getLogger(__name__)

_DEPENDENT = 1e-12
# Largest normalized constraint violation accepted for a capped result.
_FEASIBLE = 1e-7


class QpStatus(StrEnum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"


class QpResult(NamedTuple):
    x: FloatArray
    status: QpStatus
    iterations: int
    # Indices of inequality rows active at the returned point.
    active: tuple[int, ...]
    # Whether x satisfies every constraint.
    feasible: bool = True


def qp_objective(
    hessian: FloatArray,
    linear: FloatArray,
    x: FloatArray,
    constant: float = 0.0,
) -> float:
    return float(0.5 * x @ hessian @ x + linear @ x + constant)


def _rows(
    matrix: FloatArray | None,
    vector: FloatArray | None,
    n: int,
) -> tuple[FloatArray, FloatArray]:
    if matrix is None or vector is None:
        return np.zeros((0, n)), np.zeros(0)

    rows = np.asarray(matrix, dtype=np.float64).reshape(-1, n)
    rhs = np.asarray(vector, dtype=np.float64).reshape(-1)

    if rows.shape[0] != rhs.shape[0]:
        raise ShapeError(
            f"{rows.shape[0]} constraint rows but {rhs.shape[0]} bounds",
        )

    return rows, rhs


def _kkt_solve(
    hessian: FloatArray,
    normals: FloatArray,
    rhs_x: FloatArray,
    rhs_c: FloatArray,
) -> tuple[FloatArray, FloatArray]:
    n = hessian.shape[0]
    m = normals.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = hessian
    kkt[:n, n:] = normals.T
    kkt[n:, :n] = normals

    try:
        solution = np.linalg.solve(kkt, np.concatenate((rhs_x, rhs_c)))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Singular KKT system in QP solver") from exc

    return solution[:n], solution[n:]


def solve_qp(
    hessian: FloatArray,
    linear: FloatArray,
    *,
    eq_matrix: FloatArray | None = None,
    eq_vector: FloatArray | None = None,
    ineq_matrix: FloatArray | None = None,
    ineq_vector: FloatArray | None = None,
    max_iter: int = 500,
    tol: float = 1e-9,
    start: FloatArray | None = None,
) -> QpResult:
    """
    Dual iterates only become primal feasible at the optimum. When the
    iteration cap is hit before that, the returned point is the current
    iterate if it happens to be feasible, else ``start`` if that is
    feasible, else the infeasible iterate with ``feasible`` unset.
    """
    h_raw = np.asarray(hessian, dtype=np.float64)
    n = h_raw.shape[0]
    diag = np.diag(h_raw)

    if h_raw.shape != (n, n) or np.any(diag <= 0):
        raise NumericalError("QP Hessian must be square positive definite")

    # Jacobi scaling x = d * xs, then unit-norm constraint rows.
    d = 1 / np.sqrt(diag)
    h = h_raw * np.outer(d, d)
    f = np.asarray(linear, dtype=np.float64) * d
    eq, eq_rhs = _rows(eq_matrix, eq_vector, n)
    ineq, ineq_rhs = _rows(ineq_matrix, ineq_vector, n)
    eq = eq * d
    ineq = ineq * d
    eq_norm = np.linalg.norm(eq, axis=1)
    ineq_norm = np.linalg.norm(ineq, axis=1)

    if np.any((eq_norm == 0) & (np.abs(eq_rhs) > tol)):
        return QpResult(np.zeros(n), QpStatus.INFEASIBLE, 0, (), False)

    if np.any((ineq_norm == 0) & (ineq_rhs < -tol)):
        return QpResult(np.zeros(n), QpStatus.INFEASIBLE, 0, (), False)

    keep_eq = eq_norm > 0
    eq = eq[keep_eq] / eq_norm[keep_eq, None]
    eq_rhs = eq_rhs[keep_eq] / eq_norm[keep_eq]
    kept = np.flatnonzero(ineq_norm > 0)
    ineq = ineq[kept] / ineq_norm[kept, None]
    ineq_rhs = ineq_rhs[kept] / ineq_norm[kept]
    n_eq = eq.shape[0]

    x, _ = _kkt_solve(h, eq, -f, eq_rhs)
    active: list[int] = []
    multipliers: list[float] = []
    iterations = 0

    def violation(xs: FloatArray) -> float:
        worst = 0.0

        if n_eq:
            worst = float(np.abs(eq @ xs - eq_rhs).max())

        if ineq_rhs.size:
            worst = max(worst, float((ineq @ xs - ineq_rhs).max()))

        return worst

    def result(status: QpStatus) -> QpResult:
        return QpResult(
            x=x * d,
            status=status,
            iterations=iterations,
            active=tuple(sorted(int(kept[i]) for i in active)),
            feasible=status is QpStatus.OPTIMAL,
        )

    def capped() -> QpResult:
        if violation(x) <= _FEASIBLE:
            return result(QpStatus.MAX_ITER)._replace(feasible=True)

        if start is not None:
            xs = np.asarray(start, dtype=np.float64).reshape(n) / d

            if violation(xs) <= _FEASIBLE:
                touching = np.flatnonzero(ineq_rhs - ineq @ xs <= _FEASIBLE)

                return QpResult(
                    x=xs * d,
                    status=QpStatus.MAX_ITER,
                    iterations=iterations,
                    active=tuple(int(kept[i]) for i in touching),
                    feasible=True,
                )

        logger.warning(
            "QP hit the %d iteration cap without a feasible point",
            max_iter,
        )

        return result(QpStatus.MAX_ITER)

    while True:
        slack = ineq_rhs - ineq @ x

        if slack.size == 0 or slack.min() >= -tol:
            logger.debug("QP optimal after %d iterations", iterations)
            return result(QpStatus.OPTIMAL)

        p = int(np.argmin(slack))
        normal = -ineq[p]
        added = 0.0

        while True:
            iterations += 1

            if iterations > max_iter:
                logger.debug("QP stopped at the %d iteration cap", max_iter)
                return capped()

            # Active rows enter as inward normals so r has the dual sign.
            normals = np.vstack((eq, -ineq[active]))
            z, r = _kkt_solve(h, normals, normal, np.zeros(normals.shape[0]))
            r_ineq = r[n_eq:]
            dual_step = math.inf
            block = -1

            for j, (u_j, r_j) in enumerate(
                zip(multipliers, r_ineq, strict=True),
            ):
                if r_j > _DEPENDENT and u_j / r_j < dual_step:
                    dual_step = u_j / r_j
                    block = j

            curvature = float(z @ normal)

            if curvature <= _DEPENDENT:
                if block < 0:
                    logger.debug("QP infeasible at row %d", int(kept[p]))
                    return result(QpStatus.INFEASIBLE)

                step = dual_step
            else:
                shortfall = float(ineq_rhs[p] - ineq[p] @ x)
                step = min(dual_step, -shortfall / curvature)
                x = x + step * z

            multipliers = [
                u_j - step * float(r_j)
                for u_j, r_j in zip(multipliers, r_ineq, strict=True)
            ]
            added += step

            if curvature > _DEPENDENT and step < dual_step:
                active.append(p)
                multipliers.append(added)
                break

            del active[block]
            del multipliers[block]
