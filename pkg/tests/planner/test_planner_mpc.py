import pathlib

import numpy as np
import pytest

from lanechange.config import Settings
from lanechange.errors import ParameterError
from lanechange.model import EgoState, FloatArray, Manoeuvre
from lanechange.planner.collision import build_collision_set, road_edges
from lanechange.planner.mpc import (
    CondensedQp,
    Planner,
    build_condensed_qp,
    export_trace,
    mpc_weights,
    solution_frame,
    solve_mpc,
)
from lanechange.planner.plant import (
    N_INPUTS,
    N_STATES,
    bounds_from_settings,
    build_model,
)
from lanechange.planner.qp import QpStatus
from lanechange.planner.targets import TargetPose, target_generation
from lanechange.trajdata.road import RoadGeometry
from lanechange.trajdata.scenes import Scene


def _scene(
    road: RoadGeometry,
    vehicles: list[tuple[int, float, float, float]],
) -> Scene:
    ids, x, y, speed = (np.array(col) for col in zip(*vehicles, strict=True))
    n = len(vehicles)

    return Scene(
        frame=0,
        ids=ids.astype(np.int64),
        x=x.astype(np.float64),
        y=y.astype(np.float64),
        speed=speed.astype(np.float64),
        length=np.full(n, 4.5),
        width=np.full(n, 1.8),
        lane=road.lanes_of(y.astype(np.float64)),
    )


def test_equilibrium_costs_nothing(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    planner = Planner(settings.planner, road)
    target = TargetPose(5.55, 0.0, 25.0, 2)
    planes = road_edges(road, 1.8, settings.planner.edge_margin)

    solution = planner.plan(EgoState(0.0, 5.55, 0.0, 25.0), target, planes)

    assert solution.status is QpStatus.OPTIMAL
    assert solution.objective == pytest.approx(0.0, abs=1e-6)
    np.testing.assert_allclose(solution.inputs, 0.0, atol=1e-6)
    np.testing.assert_allclose(solution.rho, [5.55, 25.0], atol=1e-6)


def test_one_step_horizon_closed_form(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    config = settings.planner._replace(horizon=1)
    model = build_model(
        25.0,
        config.wheelbase,
        config.ts,
        bounds_from_settings(config, road),
    )
    weights = mpc_weights(model, config)
    ts = config.ts
    t_vv = weights.t[2, 2]
    expected = t_vv * ts * 0.1 / (
        config.q[2] * ts**2 + config.r[1] + t_vv * ts**2
    )

    solution = solve_mpc(
        model,
        weights,
        np.array([5.55, 0.0, 25.0]),
        TargetPose(5.55, 0.0, 25.1, 2),
    )

    assert solution.status is QpStatus.OPTIMAL
    assert solution.inputs[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert solution.inputs[0, 1] == pytest.approx(expected, rel=1e-6)
    assert solution.rho[1] == pytest.approx(
        25.0 + ts * solution.inputs[0, 1],
        abs=1e-9,
    )


def test_lane_change_respects_every_constraint(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    config = settings.planner
    scene = _scene(road, [(1, 0.0, 5.55, 25.0), (2, 80.0, 5.55, 15.0)])
    target = target_generation(
        Manoeuvre.LANE_CHANGE,
        scene,
        1,
        road,
        config,
    )
    planes = build_collision_set(
        scene,
        1,
        road,
        config,
        lane=2,
        target_lane=1,
    )
    planner = Planner(config, road)
    bundle = planner.bundle(25.0)

    solution = planner.plan(scene.state_of(1), target, planes)

    assert solution.status is QpStatus.OPTIMAL
    assert solution.states.shape == (config.horizon + 1, N_STATES)

    bounds = bundle.model.bounds
    assert np.all(solution.inputs >= bounds.input_lower - 1e-8)
    assert np.all(solution.inputs <= bounds.input_upper + 1e-8)
    assert np.all(solution.states[1:] >= bounds.state_lower - 1e-8)
    assert np.all(solution.states[1:] <= bounds.state_upper + 1e-8)

    travel = np.concatenate(
        ([0.0], config.ts * np.cumsum(solution.states[:-1, 2])),
    )

    for k in range(1, config.horizon + 1):
        for plane in planes:
            value = plane.value(
                travel[k],
                solution.states[k, 0],
                k * config.ts,
            )
            assert value <= 1e-8, plane.label

    # Settles closer to the target lane.
    assert solution.states[-1, 0] < 5.55


def test_predictions_follow_the_model(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    planner = Planner(settings.planner, road)
    bundle = planner.bundle(22.0)
    target = TargetPose(1.85, 0.0, 28.0, 1)

    solution = planner.plan(EgoState(0.0, 5.55, 0.0, 22.0), target, [])

    model = bundle.model

    for k, u in enumerate(solution.inputs):
        step = model.a @ solution.states[k] + model.b @ u
        np.testing.assert_allclose(solution.states[k + 1], step, atol=1e-10)

    np.testing.assert_allclose(
        solution.states[-1],
        bundle.basis[:N_STATES] @ solution.rho,
        atol=1e-7,
    )


def test_heavier_offset_weight_pulls_towards_target(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    bundle = Planner(settings.planner, road).bundle(25.0)
    target = TargetPose(1.85, 0.0, 30.0, 1)
    xi0 = np.array([5.55, 0.0, 25.0])
    distances = []

    for scale in (1.0, 2.0, 4.0, 8.0):
        weights = bundle.weights._replace(t=bundle.weights.t * scale)
        solution = solve_mpc(
            bundle.model,
            weights,
            xi0,
            target,
            basis=bundle.basis,
        )
        offset = bundle.basis[:N_STATES] @ solution.rho - target.as_vector()
        distances.append(float(offset @ bundle.weights.t @ offset))

    for before, after in zip(distances, distances[1:], strict=False):
        assert after <= before * (1 + 1e-6) + 1e-12

    assert distances[-1] < distances[0]


def test_bundles_are_cached_per_speed(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    planner = Planner(settings.planner, road)

    assert planner.bundle(25.0) is planner.bundle(25.001)
    assert planner.bundle(0.0).model.v0 == settings.planner.min_speed


def test_braking_steers_back_to_the_lane(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    planner = Planner(settings.planner, road)
    low, _ = settings.planner.delta_bounds

    steer, accel = planner.braking_input(EgoState(0.0, 6.5, 0.0, 20.0), 5.55)

    assert accel == settings.planner.ax_bounds[0]
    assert low <= steer < 0


def test_solution_trace(
    settings: Settings,
    road: RoadGeometry,
    tmp_path: pathlib.Path,
) -> None:
    planner = Planner(settings.planner, road)
    solution = planner.plan(
        EgoState(0.0, 5.55, 0.0, 25.0),
        TargetPose(5.55, 0.0, 27.0, 2),
        [],
    )

    frame = solution_frame(solution)

    assert list(frame.columns) == [
        "k",
        "y",
        "psi",
        "v",
        "delta_f",
        "a_x",
        "objective",
        "status",
    ]
    assert len(frame) == settings.planner.horizon + 1
    assert np.isnan(frame["a_x"].iloc[-1])
    assert frame["status"].eq("optimal").all()

    export_trace(solution, tmp_path / "trace" / "mpc.csv")

    assert (tmp_path / "trace" / "mpc.csv").exists()


def _worst_violation(qp: CondensedQp, z: FloatArray) -> float:
    eq_norm = np.linalg.norm(qp.eq_matrix, axis=1)
    ineq_norm = np.linalg.norm(qp.ineq_matrix, axis=1)
    eq = np.abs(qp.eq_matrix @ z - qp.eq_vector) / eq_norm
    ineq = (qp.ineq_matrix @ z - qp.ineq_vector) / ineq_norm

    return float(max(eq.max(), ineq.max()))


def test_shifted_plan_stays_feasible(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    config = settings.planner
    bundle = Planner(config, road).bundle(25.0)
    model = bundle.model
    target = TargetPose(1.85, 0.0, 28.0, 1)
    planes = road_edges(road, 1.8, config.edge_margin)
    xi = np.array([5.55, 0.0, 25.0])
    x = 0.0
    solution = None

    for _ in range(15):
        qp = build_condensed_qp(
            model,
            bundle.weights,
            bundle.basis,
            xi,
            target,
            planes,
            x0=x,
            margin=config.tol,
        )

        if solution is not None:
            candidate = solution.shifted(bundle.basis)
            assert _worst_violation(qp, candidate) <= 1e-7

        solution = solve_mpc(
            model,
            bundle.weights,
            xi,
            target,
            planes,
            basis=bundle.basis,
            x0=x,
            margin=config.tol,
        )

        assert solution.status is QpStatus.OPTIMAL
        assert solution.feasible

        x += config.ts * xi[2]
        xi = model.a @ xi + model.b @ solution.inputs[0]


def test_capped_solve_falls_back_to_the_shifted_plan(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    config = settings.planner
    bundle = Planner(config, road).bundle(25.0)
    model = bundle.model
    target = TargetPose(1.85, 0.0, 28.0, 1)
    planes = road_edges(road, 1.8, config.edge_margin)
    xi = np.array([5.55, 0.0, 25.0])
    first = solve_mpc(model, bundle.weights, xi, target, planes)
    candidate = first.shifted(bundle.basis)
    following = model.a @ xi + model.b @ first.inputs[0]
    x = config.ts * xi[2]

    capped = solve_mpc(
        model,
        bundle.weights,
        following,
        target,
        planes,
        x0=x,
        max_iter=0,
        start=candidate,
    )

    assert capped.usable
    assert capped.feasible

    if capped.status is QpStatus.MAX_ITER:
        n_u = N_INPUTS * config.horizon
        np.testing.assert_allclose(
            capped.inputs.reshape(-1),
            candidate[:n_u],
        )


def test_bundle_cache_drops_the_least_recent_speed(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    planner = Planner(settings.planner, road, cache_size=2)

    planner.bundle(20.0)
    planner.bundle(25.0)
    planner.bundle(20.0)
    planner.bundle(30.0)

    assert planner.cached_speeds == (20.0, 30.0)


def test_bundle_cache_needs_room(
    settings: Settings,
    road: RoadGeometry,
) -> None:
    with pytest.raises(ParameterError):
        Planner(settings.planner, road, cache_size=0)
