from __future__ import annotations

import logging
import pathlib
from collections import OrderedDict
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
import pandas as pd

from lanechange.config import PlannerSettings
from lanechange.errors import ParameterError
from lanechange.model import EgoState, FloatArray
from lanechange.planner.collision import HalfPlane
from lanechange.planner.plant import (
    N_INPUTS,
    N_STATES,
    PlantModel,
    bounds_from_settings,
    build_model,
    steady_state_basis,
)
from lanechange.planner.qp import QpStatus, qp_objective, solve_qp
from lanechange.planner.riccati import lqr_gain, riccati
from lanechange.planner.targets import TargetPose
from lanechange.trajdata.road import RoadGeometry

logger = logging.getLogger(__name__)

# Linearization speeds kept by a Planner, least recently used dropped first.
BUNDLE_CACHE_SIZE = 64


class MpcWeights(NamedTuple):
    q: FloatArray
    r: FloatArray
    # Terminal weight from the Riccati equation.
    p: FloatArray
    # Offset weight on the distance between steady state and target.
    t: FloatArray
    horizon: int


class CondensedQp(NamedTuple):
    """Dense QP over z = (u(0), ..., u(H-1), rho) with the states removed."""
    hessian: FloatArray
    linear: FloatArray
    constant: float
    eq_matrix: FloatArray
    eq_vector: FloatArray
    ineq_matrix: FloatArray
    ineq_vector: FloatArray


class MpcSolution(NamedTuple):
    inputs: FloatArray
    rho: FloatArray
    states: FloatArray
    objective: float
    status: QpStatus
    iterations: int = 0
    feasible: bool = True

    @property
    def applied(self) -> tuple[float, float]:
        """First input of the optimal sequence, (delta_f, a_x)."""
        return float(self.inputs[0, 0]), float(self.inputs[0, 1])

    @property
    def usable(self) -> bool:
        """Optimal, or capped at a point that meets every constraint."""
        return self.status is QpStatus.OPTIMAL or (
            self.status is QpStatus.MAX_ITER and self.feasible
        )

    def shifted(self, basis: FloatArray) -> FloatArray:
        """
        Decision vector one step later: drop the first input, hold the
        steady-state input at the end and keep rho.
        """
        u_ss = basis[N_STATES:] @ self.rho

        return np.concatenate(
            (self.inputs[1:].reshape(-1), u_ss, self.rho),
        )


class PlantBundle(NamedTuple):
    model: PlantModel
    weights: MpcWeights
    basis: FloatArray
    gain: FloatArray


def mpc_weights(model: PlantModel, settings: PlannerSettings) -> MpcWeights:
    q = np.diag(settings.q)
    r = np.diag(settings.r)
    p = riccati(model.a, model.b, q, r)

    return MpcWeights(
        q=q,
        r=r,
        p=p,
        t=settings.terminal_scale * p,
        horizon=settings.horizon,
    )


def predict_states(
    model: PlantModel,
    xi0: FloatArray,
    inputs: FloatArray,
) -> FloatArray:
    states = np.empty((inputs.shape[0] + 1, N_STATES))
    states[0] = xi0

    for k, u in enumerate(inputs):
        states[k + 1] = model.a @ states[k] + model.b @ u

    return states


def evaluate_cost(
    weights: MpcWeights,
    basis: FloatArray,
    states: FloatArray,
    inputs: FloatArray,
    rho: FloatArray,
    target: TargetPose,
) -> float:
    """Tracking cost with an artificial steady state, evaluated directly."""
    xi_ss = basis[:N_STATES] @ rho
    u_ss = basis[N_STATES:] @ rho
    dx = states[:-1] - xi_ss
    du = inputs - u_ss
    terminal = states[-1] - xi_ss
    offset = xi_ss - target.as_vector()

    return float(
        np.einsum("ki,ij,kj->", dx, weights.q, dx)
        + np.einsum("ki,ij,kj->", du, weights.r, du)
        + terminal @ weights.p @ terminal
        + offset @ weights.t @ offset,
    )


def build_condensed_qp(
    model: PlantModel,
    weights: MpcWeights,
    basis: FloatArray,
    xi0: FloatArray,
    target: TargetPose,
    planes: Sequence[HalfPlane] = (),
    *,
    x0: float = 0.0,
    margin: float = 1e-6,
) -> CondensedQp:
    h = weights.horizon
    n_u = N_INPUTS * h
    n_rho = basis.shape[1]
    n_z = n_u + n_rho
    mx = basis[:N_STATES]
    mu = basis[N_STATES:]
    xi0 = np.asarray(xi0, dtype=np.float64)

    # xi(k) = free[k] + gamma[k] @ U
    selectors: list[FloatArray] = []
    free = [xi0]
    gamma = [np.zeros((N_STATES, n_u))]

    for k in range(h):
        selector = np.zeros((N_INPUTS, n_u))
        selector[:, N_INPUTS * k:N_INPUTS * (k + 1)] = np.eye(N_INPUTS)
        selectors.append(selector)
        free.append(model.a @ free[k])
        gamma.append(model.a @ gamma[k] + model.b @ selector)

    hessian = np.zeros((n_z, n_z))
    linear = np.zeros(n_z)
    constant = 0.0

    def add_term(rows: FloatArray, shift: FloatArray, w: FloatArray) -> None:
        nonlocal hessian, linear, constant
        hessian = hessian + 2 * rows.T @ w @ rows
        linear = linear + 2 * rows.T @ w @ shift
        constant += float(shift @ w @ shift)

    for k in range(h):
        add_term(np.hstack((gamma[k], -mx)), free[k], weights.q)
        add_term(
            np.hstack((selectors[k], -mu)),
            np.zeros(N_INPUTS),
            weights.r,
        )

    add_term(np.hstack((gamma[h], -mx)), free[h], weights.p)
    add_term(
        np.hstack((np.zeros((N_STATES, n_u)), mx)),
        -target.as_vector(),
        weights.t,
    )

    # Terminal steady state: xi(H) = Mx rho.
    eq_matrix = np.hstack((gamma[h], -mx))
    eq_vector = -free[h]

    rows: list[FloatArray] = []
    bounds: list[float] = []

    def add_upper(row: FloatArray, bound: float) -> None:
        if np.isfinite(bound):
            rows.append(row)
            bounds.append(bound)

    lower_u = model.bounds.input_lower
    upper_u = model.bounds.input_upper

    for k in range(h):
        for i in range(N_INPUTS):
            row = np.zeros(n_z)
            row[N_INPUTS * k + i] = 1.0
            add_upper(row, float(upper_u[i]))
            add_upper(-row, -float(lower_u[i]))

    lower_x = model.bounds.state_lower
    upper_x = model.bounds.state_upper
    padding = np.zeros(n_rho)

    for k in range(1, h + 1):
        for i in range(N_STATES):
            row = np.concatenate((gamma[k][i], padding))
            add_upper(row, float(upper_x[i] - free[k][i]))
            add_upper(-row, float(free[k][i] - lower_x[i]))

    # Longitudinal position integrates the predicted speed.
    travel_row = np.zeros(n_u)
    travel_free = x0

    for k in range(1, h + 1):
        travel_row = travel_row + model.ts * gamma[k - 1][2]
        travel_free += model.ts * float(free[k - 1][2])
        t = k * model.ts

        for plane in planes:
            row = plane.a * travel_row + plane.b * gamma[k][0]
            bound = (
                -margin
                - plane.c
                - plane.c_rate * t
                - plane.a * travel_free
                - plane.b * float(free[k][0])
            )
            add_upper(np.concatenate((row, padding)), bound)

    return CondensedQp(
        hessian=(hessian + hessian.T) / 2,
        linear=linear,
        constant=constant,
        eq_matrix=eq_matrix,
        eq_vector=eq_vector,
        ineq_matrix=np.array(rows).reshape(-1, n_z),
        ineq_vector=np.array(bounds),
    )


def solve_mpc(
    model: PlantModel,
    weights: MpcWeights,
    xi0: FloatArray,
    target: TargetPose,
    planes: Sequence[HalfPlane] = (),
    *,
    basis: FloatArray | None = None,
    x0: float = 0.0,
    margin: float = 1e-6,
    max_iter: int = 500,
    start: FloatArray | None = None,
) -> MpcSolution:
    if basis is None:
        basis = steady_state_basis(model)

    xi0 = np.asarray(xi0, dtype=np.float64)
    qp = build_condensed_qp(
        model,
        weights,
        basis,
        xi0,
        target,
        planes,
        x0=x0,
        margin=margin,
    )
    result = solve_qp(
        qp.hessian,
        qp.linear,
        eq_matrix=qp.eq_matrix,
        eq_vector=qp.eq_vector,
        ineq_matrix=qp.ineq_matrix,
        ineq_vector=qp.ineq_vector,
        max_iter=max_iter,
        start=start,
    )
    n_u = N_INPUTS * weights.horizon

    if result.status is QpStatus.INFEASIBLE:
        inputs = np.zeros((weights.horizon, N_INPUTS))

        return MpcSolution(
            inputs=inputs,
            rho=np.zeros(basis.shape[1]),
            states=predict_states(model, xi0, inputs),
            objective=float("nan"),
            status=result.status,
            iterations=result.iterations,
            feasible=False,
        )

    inputs = result.x[:n_u].reshape(weights.horizon, N_INPUTS)
    rho = result.x[n_u:]
    states = predict_states(model, xi0, inputs)
    objective = evaluate_cost(weights, basis, states, inputs, rho, target)
    logger.debug(
        "MPC %s in %d iterations, objective %.6g (qp %.6g)",
        result.status,
        result.iterations,
        objective,
        qp_objective(qp.hessian, qp.linear, result.x, qp.constant),
    )

    return MpcSolution(
        inputs=inputs,
        rho=rho,
        states=states,
        objective=objective,
        status=result.status,
        iterations=result.iterations,
        feasible=result.feasible,
    )


class Planner:
    """
    Tracking MPC relinearized at the ego speed on every call, with the
    model, weights and LQR gain cached per linearization speed. The
    previous plan, shifted one step, is offered to the solver as a
    fallback point.
    """

    def __init__(
        self,
        settings: PlannerSettings,
        road: RoadGeometry,
        *,
        cache_size: int = BUNDLE_CACHE_SIZE,
    ) -> None:
        if cache_size < 1:
            raise ParameterError("Planner cache size must be at least 1")

        self.settings = settings
        self.road = road
        self.bounds = bounds_from_settings(settings, road)
        self.cache_size = cache_size
        self._cache: OrderedDict[float, PlantBundle] = OrderedDict()
        self._previous: MpcSolution | None = None

    def linearization_speed(self, speed: float) -> float:
        return round(max(speed, self.settings.min_speed), 2)

    @property
    def cached_speeds(self) -> tuple[float, ...]:
        return tuple(self._cache)

    def bundle(self, speed: float) -> PlantBundle:
        v0 = self.linearization_speed(speed)
        cached = self._cache.get(v0)

        if cached is not None:
            self._cache.move_to_end(v0)

            return cached

        model = build_model(
            v0,
            self.settings.wheelbase,
            self.settings.ts,
            self.bounds,
        )
        weights = mpc_weights(model, self.settings)
        bundle = PlantBundle(
            model=model,
            weights=weights,
            basis=steady_state_basis(model),
            gain=lqr_gain(model.a, model.b, weights.q, weights.r, weights.p),
        )
        self._cache[v0] = bundle

        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)

        logger.debug("Linearized planner model at v0=%.2f", v0)

        return bundle

    def reset(self) -> None:
        """Forget the previous plan."""
        self._previous = None

    def plan(
        self,
        state: EgoState,
        target: TargetPose,
        planes: Sequence[HalfPlane],
    ) -> MpcSolution:
        bundle = self.bundle(state.v)
        previous = self._previous
        start = (
            previous.shifted(bundle.basis)
            if previous is not None and previous.usable
            else None
        )
        solution = solve_mpc(
            bundle.model,
            bundle.weights,
            np.array([state.y, state.psi, state.v]),
            target,
            planes,
            basis=bundle.basis,
            x0=state.x,
            margin=self.settings.tol,
            max_iter=self.settings.max_iter,
            start=start,
        )
        self._previous = solution if solution.usable else None

        return solution

    def braking_input(
        self,
        state: EgoState,
        lane_centre: float,
    ) -> tuple[float, float]:
        """Full braking, steering towards ``lane_centre`` with the LQR gain."""
        bundle = self.bundle(state.v)
        error = np.array([state.y - lane_centre, state.psi, 0.0])
        steer = float(-(bundle.gain @ error)[0])
        low, high = self.settings.delta_bounds

        return float(np.clip(steer, low, high)), self.settings.ax_bounds[0]


def solution_frame(solution: MpcSolution) -> pd.DataFrame:
    """Per-step trace of a solution; the last row has no input."""
    n = solution.states.shape[0]
    inputs = np.vstack((solution.inputs, np.full((1, N_INPUTS), np.nan)))

    return pd.DataFrame(
        {
            "k": np.arange(n),
            "y": solution.states[:, 0],
            "psi": solution.states[:, 1],
            "v": solution.states[:, 2],
            "delta_f": inputs[:, 0],
            "a_x": inputs[:, 1],
            "objective": np.full(n, solution.objective),
            "status": [str(solution.status)] * n,
        },
    )


def export_trace(solution: MpcSolution, path: pathlib.Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    solution_frame(solution).to_csv(path, index=False)
