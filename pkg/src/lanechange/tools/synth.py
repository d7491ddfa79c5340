"""
Synthetic corpora for exercising the pipeline without recorded traffic.

``synth_instances`` draws feature vectors directly and labels them with a
gap-acceptance rule; ``synth_tracks`` runs a small car-following
microsimulation and writes trajectories in the internal schema.
"""

from __future__ import annotations

import argparse
import logging
import math
import pathlib
from typing import NamedTuple

import numpy as np
import pandas as pd

from lanechange.config import (
    INTERNAL_SCHEMA,
    FeatureSettings,
    SynthSettings,
    load_settings,
)
from lanechange.context.features import FEATURE_NAMES, UTILITY, ttc
from lanechange.errors import ParameterError
from lanechange.logging_setup import configure_logging
from lanechange.model import BoolArray, FloatArray, IntArray, Manoeuvre
from lanechange.trajdata.road import RoadGeometry, road_from_settings

logger = logging.getLogger(__name__)

# Decision rule of the instance corpus.
MIN_REAR_GAP = 12.0
MIN_REAR_TTC = 4.0
MAX_UTILITY = -0.5

# Microsimulation constants.
IDM_ACCEL = 1.5
IDM_BRAKE = 2.0
IDM_MIN_GAP = 2.0
IDM_HEADWAY = 1.5
MAX_BRAKE = 8.0
MANOEUVRE_S = 4.0
PATIENCE_S = 2.0
SLOW_MARGIN = 3.0
LOOKAHEAD = 80.0
ACCEPT_GAP = 15.0
ACCEPT_HEADWAY = 2.5
KEEP_RIGHT_RATE = 0.002


def _candidates(
    n: int,
    settings: SynthSettings,
    features: FeatureSettings,
    rng: np.random.Generator,
) -> tuple[FloatArray, BoolArray]:
    sentinel = features.gap_sentinel
    vel_sv = rng.uniform(15, 30, n)
    has_lv = rng.random(n) < 0.9
    x_lv = np.where(has_lv, rng.uniform(5, 80, n), sentinel)
    v_lv = np.where(has_lv, rng.uniform(-8, 3, n), 0.0)
    has_fl = rng.random(n) < 0.8
    x_fl = np.where(has_fl, rng.uniform(0, 60, n), sentinel)
    v_fl = np.where(has_fl, rng.uniform(-5, 8, n), 0.0)
    has_rl = rng.random(n) < 0.8
    x_rl = np.where(has_rl, rng.uniform(0, 60, n), sentinel)
    v_rl = np.where(has_rl, rng.uniform(-5, 8, n), 0.0)
    delta = np.where(has_lv, rng.uniform(0, 60, n) * v_lv / x_lv, 0.0)
    ttc_rl = np.array(
        [
            ttc(g, s, features.ttc_max) if present else features.ttc_max
            for g, s, present in zip(x_rl, v_rl, has_rl, strict=True)
        ],
    )
    ttc_fl = np.array(
        [
            ttc(g, -s, features.ttc_max) if present else features.ttc_max
            for g, s, present in zip(x_fl, v_fl, has_fl, strict=True)
        ],
    )
    critical = rng.uniform(settings.gap_accept_lo, settings.gap_accept_hi, n)
    change = (
        (x_fl >= critical)
        & (x_rl >= MIN_REAR_GAP)
        & (ttc_rl >= MIN_REAR_TTC)
        & (delta <= MAX_UTILITY)
    )
    columns = {
        "x_RL": x_rl,
        "TTC_RL": ttc_rl,
        UTILITY: delta,
        "TTC_FL": ttc_fl,
        "v_FL": v_fl,
        "x_FL": x_fl,
        "v_RL": v_rl,
        "v_LV": v_lv,
        "x_LV": x_lv,
        "vel_SV": vel_sv,
    }

    return np.column_stack([columns[name] for name in FEATURE_NAMES]), change


def synth_instances(
    settings: SynthSettings,
    features: FeatureSettings,
    seed: int,
) -> pd.DataFrame:
    """
    Balanced rule-labeled feature corpus of ``settings.n_instances`` rows,
    with ``settings.label_noise`` of each class flipped.
    """
    if settings.n_instances < 2 or settings.n_instances % 2:
        raise ParameterError("n_instances must be a positive even number")

    if not 0 <= settings.label_noise < 0.5:
        raise ParameterError("label_noise must be in [0, 0.5)")

    rng = np.random.default_rng(seed)
    half = settings.n_instances // 2
    changes: list[FloatArray] = []
    keeps: list[FloatArray] = []
    n_change = 0
    n_keep = 0

    while n_change < half or n_keep < half:
        rows, change = _candidates(4 * half, settings, features, rng)
        changes.append(rows[change])
        keeps.append(rows[~change])
        n_change += int(change.sum())
        n_keep += int((~change).sum())

    positive = np.vstack(changes)[:half]
    negative = np.vstack(keeps)[:half]
    labels = np.array(
        [Manoeuvre.LANE_CHANGE] * half + [Manoeuvre.LANE_KEEP] * half,
        dtype=object,
    )
    flips = round(settings.label_noise * half)

    for offset in (0, half):
        chosen = rng.choice(half, size=flips, replace=False) + offset
        labels[chosen] = [
            Manoeuvre.LANE_KEEP
            if label is Manoeuvre.LANE_CHANGE
            else Manoeuvre.LANE_CHANGE
            for label in labels[chosen]
        ]

    pair = np.arange(half)
    frame = pd.DataFrame(
        {
            "vehicle_id": np.concatenate((pair, pair)),
            "frame": np.concatenate((np.ones(half), np.zeros(half))).astype(
                np.int64,
            ),
            "label": [str(label) for label in labels],
        },
    )
    values = pd.DataFrame(
        np.vstack((positive, negative)),
        columns=list(FEATURE_NAMES),
    )
    logger.info(
        "Generated %d rule-labeled instances (%d flipped per class)",
        settings.n_instances,
        flips,
    )

    return (
        pd.concat([frame, values], axis=1)
        .sort_values(["vehicle_id", "frame"], kind="stable")
        .reset_index(drop=True)
    )


class _Fleet(NamedTuple):
    x: FloatArray
    y: FloatArray
    v: FloatArray
    desired: FloatArray
    length: FloatArray
    width: FloatArray


class _Manoeuvre(NamedTuple):
    start: float
    y_from: float
    y_to: float


def _spawn(
    settings: SynthSettings,
    road: RoadGeometry,
    rng: np.random.Generator,
) -> _Fleet:
    n = settings.n_vehicles
    truck = rng.random(n) < settings.truck_fraction
    # Trucks start in the rightmost lane, cars spread over all lanes.
    lanes = np.where(
        truck,
        road.lane_count,
        np.arange(n) % road.lane_count + 1,
    )
    x = np.zeros(n)
    ahead = {lane: 0.0 for lane in range(1, road.lane_count + 1)}

    # Spawn from the front so each lane fills backwards.
    for i in range(n):
        lane = int(lanes[i])
        ahead[lane] -= rng.uniform(60, 120)
        x[i] = ahead[lane]

    desired = np.where(truck, rng.uniform(18, 22, n), rng.uniform(26, 33, n))

    return _Fleet(
        x=x,
        y=np.array([road.lane_centre(int(lane)) for lane in lanes]),
        v=desired * rng.uniform(0.8, 1.0, n),
        desired=desired,
        length=np.where(truck, 12.0, 4.5),
        width=np.where(truck, 2.5, 1.8),
    )


def _idm(v: float, desired: float, gap: float, closing: float) -> float:
    free = 1 - (v / desired) ** 4

    if not math.isfinite(gap):
        return IDM_ACCEL * free

    wanted = IDM_MIN_GAP + v * IDM_HEADWAY + v * closing / (
        2 * math.sqrt(IDM_ACCEL * IDM_BRAKE)
    )
    interaction = (max(wanted, 0.0) / max(gap, 0.1)) ** 2

    return max(IDM_ACCEL * (free - interaction), -MAX_BRAKE)


def _neighbor(
    fleet: _Fleet,
    lanes: IntArray,
    i: int,
    lane: int,
    *,
    ahead: bool,
) -> tuple[float, int]:
    dx = fleet.x - fleet.x[i]
    gap = np.abs(dx) - (fleet.length + fleet.length[i]) / 2
    mask = lanes == lane
    mask &= dx > 0 if ahead else dx <= 0
    mask[i] = False
    candidates = np.flatnonzero(mask)

    if candidates.size == 0:
        return math.inf, -1

    best = int(candidates[np.argmin(np.abs(dx[candidates]))])

    return float(gap[best]), best


def _accepts(
    fleet: _Fleet,
    lanes: IntArray,
    i: int,
    lane: int,
    min_gap: float,
) -> bool:
    front, _ = _neighbor(fleet, lanes, i, lane, ahead=True)
    rear, follower = _neighbor(fleet, lanes, i, lane, ahead=False)
    rear_speed = fleet.v[follower] if follower >= 0 else 0.0

    return (
        front >= min_gap
        and rear >= min_gap
        and front / max(fleet.v[i], 0.1) > ACCEPT_HEADWAY
        and rear / max(rear_speed, 0.1) > ACCEPT_HEADWAY
    )


def synth_tracks(
    settings: SynthSettings,
    road: RoadGeometry,
    ts: float,
    seed: int,
) -> pd.DataFrame:
    """
    Simulate IDM traffic with gap-acceptance lane changes behind slower
    leaders and occasional keep-right changes.
    """
    if settings.n_vehicles < 1 or settings.duration_s <= 0 or ts <= 0:
        raise ParameterError(
            "Synthetic traffic needs vehicles, a duration and a time step",
        )

    rng = np.random.default_rng(seed)
    fleet = _spawn(settings, road, rng)
    n = settings.n_vehicles
    steps = round(settings.duration_s / ts)
    patience = np.zeros(n)
    moves: dict[int, _Manoeuvre] = {}
    targets = road.lanes_of(fleet.y)
    records: list[FloatArray] = []
    changes = 0

    for step in range(steps + 1):
        t = step * ts
        lanes = road.lanes_of(fleet.y)
        records.append(
            np.column_stack(
                (np.arange(n), np.full(n, step), fleet.x, fleet.y, fleet.v),
            ),
        )
        accel = np.zeros(n)

        for i in range(n):
            lane = int(lanes[i])
            gap, leader = _neighbor(fleet, lanes, i, lane, ahead=True)
            closing = fleet.v[i] - fleet.v[leader] if leader >= 0 else 0.0
            accel[i] = _idm(fleet.v[i], fleet.desired[i], gap, closing)

            if i in moves:
                target = int(targets[i])
                gap, leader = _neighbor(fleet, lanes, i, target, ahead=True)
                closing = fleet.v[i] - fleet.v[leader] if leader >= 0 else 0.0
                accel[i] = min(
                    accel[i],
                    _idm(fleet.v[i], fleet.desired[i], gap, closing),
                )
                continue

            slow = (
                leader >= 0
                and gap < LOOKAHEAD
                and fleet.v[leader] < fleet.desired[i] - SLOW_MARGIN
            )
            patience[i] = patience[i] + ts if slow else 0.0
            left = lane - 1
            right = lane + 1

            if (
                patience[i] >= PATIENCE_S
                and road.has_lane(left)
                and _accepts(fleet, lanes, i, left, ACCEPT_GAP)
            ):
                target = left
            elif (
                not slow
                and road.has_lane(right)
                and rng.random() < KEEP_RIGHT_RATE
                and _accepts(fleet, lanes, i, right, 2 * ACCEPT_GAP)
            ):
                target = right
            else:
                continue

            moves[i] = _Manoeuvre(
                t,
                float(fleet.y[i]),
                road.lane_centre(target),
            )
            targets[i] = target
            patience[i] = 0.0
            changes += 1

        for i, move in list(moves.items()):
            phase = min((t + ts - move.start) / MANOEUVRE_S, 1.0)
            fleet.y[i] = move.y_from + (move.y_to - move.y_from) * (
                1 - math.cos(math.pi * phase)
            ) / 2

            if phase >= 1.0:
                del moves[i]

        fleet.v[:] = np.maximum(fleet.v + accel * ts, 0.0)
        fleet.x[:] = fleet.x + fleet.v * ts

    table = np.vstack(records)
    ids = table[:, 0].astype(np.int64)
    noise = settings.noise_std
    x = table[:, 2] + rng.normal(0.0, noise, table.shape[0])
    y = table[:, 3] + rng.normal(0.0, noise, table.shape[0])
    logger.info(
        "Simulated %d vehicles for %.0f s with %d lane changes",
        n,
        settings.duration_s,
        changes,
    )
    schema = INTERNAL_SCHEMA

    return pd.DataFrame(
        {
            schema.vehicle_id: ids + 1,
            schema.frame: table[:, 1].astype(np.int64),
            schema.x: x,
            schema.y: y,
            schema.speed: table[:, 4],
            schema.lane_id: road.lanes_of(table[:, 3]),
            schema.length: fleet.length[ids],
            schema.width: fleet.width[ids],
        },
    )


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="lanechange.tools.synth")
    parser.add_argument(
        "kind",
        choices=("tracks", "instances"),
        help="Trajectory corpus or rule-labeled feature corpus",
    )
    parser.add_argument(
        "--config",
        default="config.toml",
        help="Path to config.toml",
    )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument(
        "--out",
        type=pathlib.Path,
        required=True,
        help="CSV file to write",
    )
    args = parser.parse_args(argv)
    config_path = pathlib.Path(args.config)
    settings = load_settings(config_path if config_path.exists() else None)
    configure_logging(settings.logging, component="synth")
    seed = settings.seed if args.seed is None else args.seed

    if args.kind == "tracks":
        table = synth_tracks(
            settings.synth,
            road_from_settings(settings.road),
            settings.smoothing.ts_data,
            seed,
        )
    else:
        table = synth_instances(settings.synth, settings.features, seed)

    args.out.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(
        args.out,
        index=False,
        lineterminator="\n",
        encoding="utf-8",
    )
    logger.info("Wrote %d rows to %s", len(table), args.out)


if __name__ == "__main__":
    main()
