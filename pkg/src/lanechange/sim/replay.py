from __future__ import annotations

import logging
import math
from collections import deque
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
import pandas as pd

from lanechange.config import FeatureSettings, PlannerSettings
from lanechange.context.features import (
    FEATURE_NAMES,
    Featurizer,
    history_stack,
)
from lanechange.errors import (
    InfeasibleEnvironmentError,
    ScenarioError,
    ShapeError,
)
from lanechange.forest.ensemble import Forest, Probabilities, predict_proba
from lanechange.model import (
    Direction,
    EgoState,
    FloatArray,
    LaneChangeEvent,
    Manoeuvre,
)
from lanechange.planner.collision import HalfPlane, build_collision_set
from lanechange.planner.mpc import Planner
from lanechange.planner.targets import (
    TargetPose,
    emergency_target,
    target_generation,
)
from lanechange.sim.plant import NonlinearPlant
from lanechange.trajdata.loader import VehicleTrack
from lanechange.trajdata.road import RoadGeometry
from lanechange.trajdata.scenes import Scene, SceneIndex

logger = logging.getLogger(__name__)


class Scenario(NamedTuple):
    ego_id: int
    start_frame: int
    end_frame: int
    tracks: tuple[VehicleTrack, ...]
    road: RoadGeometry
    initial_state: EgoState | None = None


class SimStep(NamedTuple):
    frame: int
    features: FloatArray
    probabilities: Probabilities
    decision: Manoeuvre
    target: TargetPose
    delta_f: float
    a_x: float
    # Ego state at the start of the step, before the input is applied.
    state: EgoState
    status: str
    objective: float
    # Smallest half-plane margin at the logged state; inf without planes.
    margin: float
    fallback: bool = False
    emergency: bool = False
    ghost_conflict: bool = False


def ego_track(scenario: Scenario) -> VehicleTrack:
    for track in scenario.tracks:
        if (
            track.vehicle_id == scenario.ego_id
            and track.has_frame(scenario.start_frame)
        ):
            return track

    raise ScenarioError(
        f"Ego vehicle {scenario.ego_id} is not recorded at frame "
        f"{scenario.start_frame}",
    )


def scenario_from_events(
    tracks: Sequence[VehicleTrack],
    events: Sequence[LaneChangeEvent],
    road: RoadGeometry,
    *,
    before_s: float = 5.0,
    after_s: float = 10.0,
) -> Scenario:
    """
    Window around the first retained left lane change, from ``before_s``
    before its initiation to ``after_s`` after the crossing.
    """
    for event in events:
        if event.excluded or event.direction is not Direction.LEFT:
            continue

        for track in tracks:
            if (
                track.vehicle_id != event.vehicle_id
                or not track.has_frame(event.crossing_frame)
            ):
                continue

            start = max(
                track.first_frame,
                event.initiation_frame - round(before_s / track.ts),
            )
            end = min(
                track.last_frame,
                event.crossing_frame + round(after_s / track.ts),
            )

            return Scenario(
                ego_id=event.vehicle_id,
                start_frame=start,
                end_frame=end,
                tracks=tuple(tracks),
                road=road,
            )

    raise ScenarioError("No retained left lane change to replay")


def _feature_layout(forest: Forest) -> tuple[int, int, list[int]]:
    n_past, step_gap = forest.history
    blocks = n_past + 1

    if forest.n_features % blocks:
        raise ShapeError(
            f"{forest.n_features} features do not split into {blocks} "
            "history blocks",
        )

    names = forest.feature_names[: forest.n_features // blocks]
    unknown = [name for name in names if name not in FEATURE_NAMES]

    if unknown:
        raise ShapeError(f"Forest uses unknown features: {unknown}")

    return n_past, step_gap, [FEATURE_NAMES.index(name) for name in names]


def _ghost_conflict(scene: Scene, ego: int) -> bool:
    dx = np.abs(scene.x - scene.x[ego])
    dy = np.abs(scene.y - scene.y[ego])
    overlap = (dx < (scene.length + scene.length[ego]) / 2) & (
        dy < (scene.width + scene.width[ego]) / 2
    )
    overlap[ego] = False

    return bool(overlap.any())


def _margin(planes: Sequence[HalfPlane], state: EgoState) -> float:
    if not planes:
        return math.inf

    return min(-plane.value(state.x, state.y) for plane in planes)


class _Replay:
    """Mutable loop state of one simulation run."""

    def __init__(
        self,
        scenario: Scenario,
        forest: Forest,
        planner_settings: PlannerSettings,
        feature_settings: FeatureSettings,
        threshold: float,
        completion_tol: float,
    ) -> None:
        track = ego_track(scenario)

        if scenario.end_frame <= scenario.start_frame:
            raise ScenarioError("Scenario must end after it starts")

        if not math.isclose(track.ts, planner_settings.ts):
            raise ScenarioError(
                f"Planner step {planner_settings.ts} s does not match the "
                f"data step {track.ts} s",
            )

        self.n_past, self.step_gap, self.columns = _feature_layout(forest)
        self.scenario = scenario
        self.forest = forest
        self.road = scenario.road
        self.settings = planner_settings
        self.threshold = threshold
        self.completion_tol = completion_tol
        self.length = track.length
        self.width = track.width
        self.scenes = SceneIndex(
            scenario.tracks,
            scenario.road,
            exclude=scenario.ego_id,
        )
        self.featurizer = Featurizer(
            scenario.ego_id,
            scenario.road,
            feature_settings,
        )
        self.history: deque[FloatArray] = deque(
            maxlen=self.n_past * self.step_gap + 1,
        )
        self.planner = Planner(planner_settings, scenario.road)
        self.plant = NonlinearPlant(
            planner_settings.ts,
            planner_settings.wheelbase,
        )
        # Origin lane of a committed lane change.
        self.latched: int | None = None

        if scenario.initial_state is not None:
            self.state = scenario.initial_state
        else:
            i = track.index_of(scenario.start_frame)
            self.state = EgoState(
                x=float(track.x[i]),
                y=float(track.y[i]),
                psi=float(track.heading[i]),
                v=float(track.speed[i]),
            )

    def clip_input(self, delta_f: float, a_x: float) -> tuple[float, float]:
        """Project a solver input onto the input box before it is applied."""
        settings = self.planner.settings

        return (
            float(np.clip(delta_f, *settings.delta_bounds)),
            float(np.clip(a_x, *settings.ax_bounds)),
        )

    def classify(self, scene: Scene) -> tuple[FloatArray, Probabilities]:
        self.history.append(self.featurizer.step(scene))

        if len(self.history) < (self.history.maxlen or 1):
            return np.zeros(self.forest.n_features), Probabilities(1.0, 0.0)

        stacked = history_stack(list(self.history), self.n_past, self.step_gap)
        blocks = stacked.reshape(self.n_past + 1, -1)[:, self.columns]
        fvec = blocks.reshape(-1)

        return fvec, predict_proba(self.forest, fvec)

    def decide(
        self,
        lane: int,
        probabilities: Probabilities,
        target_y: float | None,
    ) -> Manoeuvre:
        if self.latched is not None:
            if (
                target_y is not None
                and abs(self.state.y - target_y) < self.completion_tol
            ):
                logger.info("Lane change completed at y=%.3f", self.state.y)
                self.latched = None
            else:
                return Manoeuvre.LANE_CHANGE

        if (
            self.road.has_lane(lane - 1)
            and probabilities.decide(self.threshold) is Manoeuvre.LANE_CHANGE
        ):
            self.latched = lane
            logger.info(
                "Committed to a lane change from lane %d (p=%.2f)",
                lane,
                probabilities.lane_change,
            )

            return Manoeuvre.LANE_CHANGE

        return Manoeuvre.LANE_KEEP

    def step(self, frame: int, target_y: float | None) -> SimStep:
        ego_id = self.scenario.ego_id
        scene = self.scenes.at(frame).with_vehicle(
            ego_id,
            self.state,
            length=self.length,
            width=self.width,
            road=self.road,
        )
        ego = scene.index_of(ego_id)
        lane = int(scene.lane[ego])
        fvec, probabilities = self.classify(scene)
        decision = self.decide(lane, probabilities, target_y)
        origin = self.latched if self.latched is not None else lane
        target = target_generation(
            decision,
            scene,
            ego_id,
            self.road,
            self.settings,
            lane=origin,
        )
        emergency = False
        planes: list[HalfPlane] | None

        try:
            planes = build_collision_set(
                scene,
                ego_id,
                self.road,
                self.settings,
                lane=origin,
                target_lane=target.lane,
            )
        except InfeasibleEnvironmentError as exc:
            logger.warning("Frame %d: %s; escalating to a stop", frame, exc)
            emergency = True
            self.latched = None
            target = emergency_target(scene, ego_id, self.road)

            try:
                planes = build_collision_set(
                    scene,
                    ego_id,
                    self.road,
                    self.settings,
                    lane=lane,
                    target_lane=lane,
                    emergency=True,
                )
            except InfeasibleEnvironmentError:
                planes = None

        solution = (
            self.planner.plan(self.state, target, planes)
            if planes is not None
            else None
        )
        status = str(solution.status) if solution is not None else "no_planes"
        objective = solution.objective if solution is not None else math.nan

        if solution is not None and solution.usable:
            fallback = False
            delta_f, a_x = self.clip_input(*solution.applied)
        else:
            fallback = True
            logger.warning("Frame %d: braking fallback (%s)", frame, status)
            self.latched = None
            delta_f, a_x = self.planner.braking_input(
                self.state,
                self.road.lane_centre(lane),
            )

        logged = SimStep(
            frame=frame,
            features=fvec,
            probabilities=probabilities,
            decision=decision,
            target=target,
            delta_f=delta_f,
            a_x=a_x,
            state=self.state,
            status=status,
            objective=objective,
            margin=_margin(planes or (), self.state),
            fallback=fallback,
            emergency=emergency,
            ghost_conflict=_ghost_conflict(scene, ego),
        )
        self.state = self.plant.step(self.state, delta_f, a_x)

        return logged


def replay_simulate(
    scenario: Scenario,
    forest: Forest,
    planner_settings: PlannerSettings,
    feature_settings: FeatureSettings,
    *,
    threshold: float = 0.8,
    completion_tol: float = 0.2,
) -> list[SimStep]:
    """
    Drive the ego through the scenario: every other vehicle follows its
    recording while the ego perceives, decides, plans and moves.
    """
    replay = _Replay(
        scenario,
        forest,
        planner_settings,
        feature_settings,
        threshold,
        completion_tol,
    )
    steps: list[SimStep] = []
    target_y: float | None = None

    for frame in range(scenario.start_frame, scenario.end_frame + 1):
        logged = replay.step(frame, target_y)
        steps.append(logged)
        target_y = logged.target.y_hat

    conflicts = sum(s.ghost_conflict for s in steps)
    fallbacks = sum(s.fallback for s in steps)
    logger.info(
        "Simulated %d steps for vehicle %d: %d fallbacks, %d ghost "
        "conflicts",
        len(steps),
        scenario.ego_id,
        fallbacks,
        conflicts,
    )

    if conflicts:
        logger.warning("%d steps overlap a recorded vehicle", conflicts)

    return steps


def steps_frame(steps: Sequence[SimStep]) -> pd.DataFrame:
    """One row per step, for plotting traces and trajectories."""
    return pd.DataFrame(
        {
            "frame": [s.frame for s in steps],
            "p_lane_keep": [s.probabilities.lane_keep for s in steps],
            "p_lane_change": [s.probabilities.lane_change for s in steps],
            "decision": [str(s.decision) for s in steps],
            "target_lane": [s.target.lane for s in steps],
            "y_hat": [s.target.y_hat for s in steps],
            "psi_hat": [s.target.psi_hat for s in steps],
            "v_hat": [s.target.v_hat for s in steps],
            "delta_f": [s.delta_f for s in steps],
            "a_x": [s.a_x for s in steps],
            "x": [s.state.x for s in steps],
            "y": [s.state.y for s in steps],
            "psi": [s.state.psi for s in steps],
            "v": [s.state.v for s in steps],
            "status": [s.status for s in steps],
            "objective": [s.objective for s in steps],
            "margin": [s.margin for s in steps],
            "fallback": [s.fallback for s in steps],
            "emergency": [s.emergency for s in steps],
            "ghost_conflict": [s.ghost_conflict for s in steps],
        },
    )


def steps_records(steps: Sequence[SimStep]) -> list[dict[str, object]]:
    return [
        {
            "frame": s.frame,
            "features": s.features.tolist(),
            "probabilities": s.probabilities._asdict(),
            "decision": str(s.decision),
            "target": s.target._asdict(),
            "input": {"delta_f": s.delta_f, "a_x": s.a_x},
            "state": s.state._asdict(),
            "status": s.status,
            "objective": s.objective,
            "margin": s.margin,
            "fallback": s.fallback,
            "emergency": s.emergency,
            "ghost_conflict": s.ghost_conflict,
        }
        for s in steps
    ]
