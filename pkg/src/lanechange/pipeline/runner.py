from __future__ import annotations

import argparse
import logging
import pathlib
import sys
import tomllib
from collections.abc import Callable, Sequence
from typing import Any, NamedTuple

import numpy as np
import pandas as pd

from lanechange.config import (
    INTERNAL_SCHEMA,
    SCHEMA_PRESETS,
    FeatureSettings,
    Settings,
    load_settings,
)
from lanechange.context.features import (
    FEATURE_NAMES,
    feature_columns,
    featurize_track,
    history_names,
    history_stack,
)
from lanechange.errors import (
    DegenerateForestError,
    DependencyError,
    LaneChangeError,
    LengthError,
    ParameterError,
    ScenarioError,
    ShapeError,
)
from lanechange.events.dataset import build_dataset, track_for
from lanechange.events.exclusions import exclusion_summary
from lanechange.forest.ensemble import Forest, feature_importance, train
from lanechange.forest.evaluate import Metrics, evaluate, split_by_vehicle
from lanechange.forest.serialize import load_forest, save_forest
from lanechange.logging_setup import configure_logging
from lanechange.model import (
    Direction,
    ExclusionReason,
    FloatArray,
    IntArray,
    LaneChangeEvent,
    Manoeuvre,
)
from lanechange.sim.compare import comparison_dict, compare_to_ground_truth
from lanechange.sim.replay import (
    Scenario,
    ego_track,
    replay_simulate,
    scenario_from_events,
    steps_frame,
    steps_records,
)
from lanechange.sim.sweep import sensitivity_sweep, sweep_correlation
from lanechange.storage.artifacts import ArtifactStore, dumps
from lanechange.tools.synth import synth_instances, synth_tracks
from lanechange.trajdata.loader import (
    VehicleTrack,
    export_tracks,
    load_tracks,
    read_smoothed_tracks,
)
from lanechange.trajdata.road import RoadGeometry, road_from_settings
from lanechange.trajdata.scenes import SceneIndex
from lanechange.trajdata.smoothing import smooth_track

logger = logging.getLogger(__name__)

SYNTH_TRACKS = "synth_tracks.csv"
TRACKS = "tracks.csv"
INGEST_REPORT = "ingest_report.json"
INSTANCES = "instances.csv"
EVENTS = "events.csv"
EXCLUSIONS = "exclusions.json"
FEATURES = "features.csv"
FEATURES_META = "features.json"
FOREST = "forest.json"
SPLIT = "split.json"
TRAIN_METRICS = "train_metrics.json"
IMPORTANCE = "importance.csv"
METRICS = "metrics.json"
HISTORY = "history.csv"
SIM_LOG_CSV = "sim_log.csv"
SIM_LOG_JSON = "sim_log.json"
COMPARISON = "comparison.json"
SWEEP = "sweep.csv"
ERROR_REPORT = "error.json"

META_COLUMNS = ["vehicle_id", "frame", "label"]
PIPELINE = (
    "ingest",
    "label",
    "featurize",
    "train",
    "eval",
    "simulate",
    "sweep",
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_DEPENDENCY = 3


class Context(NamedTuple):
    settings: Settings
    store: ArtifactStore
    road: RoadGeometry


class FeatureTable(NamedTuple):
    table: pd.DataFrame
    names: tuple[str, ...]
    skipped: int


def _load_tracks(ctx: Context) -> tuple[VehicleTrack, ...]:
    return read_smoothed_tracks(
        ctx.store.require(TRACKS),
        INTERNAL_SCHEMA,
        ctx.settings.smoothing.ts_data,
    )


def _feature_meta(ctx: Context) -> tuple[list[str], int, int]:
    meta = ctx.store.read_json(FEATURES_META)

    try:
        return (
            [str(name) for name in meta["names"]],
            int(meta["n_past"]),
            int(meta["step_gap"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"Malformed {FEATURES_META}: {exc}") from exc


def _events_from_frame(table: pd.DataFrame) -> list[LaneChangeEvent]:
    events: list[LaneChangeEvent] = []

    for row in table.to_dict("records"):
        reason = row.get("reason")
        events.append(
            LaneChangeEvent(
                vehicle_id=int(row["vehicle_id"]),
                crossing_frame=int(row["crossing_frame"]),
                initiation_frame=int(row["initiation_frame"]),
                direction=Direction(str(row["direction"])),
                low_confidence=bool(row["low_confidence"]),
                excluded=bool(row["excluded"]),
                reason=(
                    ExclusionReason(reason)
                    if isinstance(reason, str) and reason
                    else None
                ),
            ),
        )

    return events


def build_feature_table(
    tracks: Sequence[VehicleTrack],
    road: RoadGeometry,
    instances: pd.DataFrame,
    settings: FeatureSettings,
    n_past: int,
    step_gap: int,
) -> FeatureTable:
    """Stacked feature vectors for every labeled instance with history."""
    scenes = SceneIndex(tracks, road)
    columns = feature_columns(settings.feature_set)
    names = history_names(
        [FEATURE_NAMES[i] for i in columns],
        n_past,
        step_gap,
    )
    cache: dict[tuple[int, int], FloatArray] = {}
    rows: list[FloatArray] = []
    meta: list[tuple[int, int, str]] = []
    skipped = 0

    for vehicle_id, frame, label in zip(
        instances["vehicle_id"],
        instances["frame"],
        instances["label"],
        strict=True,
    ):
        track = track_for(tracks, int(vehicle_id), int(frame))

        if track is None:
            skipped += 1
            continue

        key = (track.vehicle_id, track.segment)

        if key not in cache:
            cache[key] = featurize_track(track, scenes, road, settings)

        try:
            vector = history_stack(
                cache[key][:, columns],
                n_past,
                step_gap,
                track.index_of(int(frame)),
            )
        except LengthError:
            skipped += 1
            continue

        rows.append(vector)
        meta.append((int(vehicle_id), int(frame), str(label)))

    values = pd.DataFrame(
        np.array(rows).reshape(-1, len(names)),
        columns=list(names),
    )
    table = pd.concat(
        [pd.DataFrame(meta, columns=META_COLUMNS), values],
        axis=1,
    )

    if skipped:
        logger.warning(
            "Skipped %d instances without %d frames of history",
            skipped,
            n_past * step_gap,
        )

    return FeatureTable(table=table, names=names, skipped=skipped)


def _train_and_score(
    ctx: Context,
    table: pd.DataFrame,
    names: Sequence[str],
    history: tuple[int, int],
) -> tuple[Forest, Metrics, IntArray, IntArray]:
    cfg = ctx.settings.forest
    features = table[list(names)].to_numpy(dtype=np.float64)
    labels = table["label"].to_numpy()
    ids = table["vehicle_id"].to_numpy(dtype=np.int64)
    rng = np.random.default_rng(ctx.settings.seed)
    train_rows, test_rows = split_by_vehicle(ids, cfg.test_fraction, rng)
    forest = train(
        features[train_rows],
        labels[train_rows],
        cfg,
        feature_names=names,
        history=history,
    )
    metrics = evaluate(forest, features[test_rows], labels[test_rows])

    return forest, metrics, train_rows, test_rows


def stage_synth(ctx: Context, kind: str) -> None:
    settings = ctx.settings

    if kind == "tracks":
        ctx.store.write_frame(
            SYNTH_TRACKS,
            synth_tracks(
                settings.synth,
                ctx.road,
                settings.smoothing.ts_data,
                settings.seed,
            ),
        )
        return

    table = synth_instances(settings.synth, settings.features, settings.seed)
    names = [
        FEATURE_NAMES[i]
        for i in feature_columns(settings.features.feature_set)
    ]
    ctx.store.write_frame(FEATURES, table[META_COLUMNS + names])
    ctx.store.write_json(
        FEATURES_META,
        {
            "names": names,
            "n_past": 0,
            "step_gap": 1,
            "feature_set": settings.features.feature_set,
            "source": "synth_instances",
        },
    )


def stage_ingest(ctx: Context) -> None:
    settings = ctx.settings
    store = ctx.store

    if settings.paths.data:
        paths = [store.require_external(p) for p in settings.paths.data]
        schema = settings.schema
    else:
        logger.info("No data paths configured, using %s", SYNTH_TRACKS)
        paths = [store.require(SYNTH_TRACKS)]
        schema = INTERNAL_SCHEMA

    result = load_tracks(
        paths,
        schema,
        settings.smoothing.ts_data,
        max_gap_frames=settings.smoothing.max_gap_frames,
    )
    smoothed = [smooth_track(t, settings.smoothing) for t in result.tracks]
    export_tracks(smoothed, store.path(TRACKS), INTERNAL_SCHEMA)
    store.mark_written(TRACKS)
    store.write_json(
        INGEST_REPORT,
        {
            "tracks": len(smoothed),
            "vehicles": len({t.vehicle_id for t in smoothed}),
            "samples": sum(t.n_samples for t in smoothed),
            "duplicates_dropped": result.duplicates_dropped,
            "segments_split": result.splits,
            "interpolated_frames": {
                str(k): len(v) for k, v in sorted(result.interpolated.items())
            },
        },
    )


def stage_label(ctx: Context) -> None:
    settings = ctx.settings
    tracks = _load_tracks(ctx)
    dataset = build_dataset(
        tracks,
        ctx.road,
        SceneIndex(tracks, ctx.road),
        settings.events,
        np.random.default_rng(settings.seed),
        sensing_range=settings.features.sensing_range,
    )
    ctx.store.write_frame(
        INSTANCES,
        pd.DataFrame(
            [
                (i.vehicle_id, i.frame, str(i.label), i.event_frame)
                for i in dataset.instances
            ],
            columns=[*META_COLUMNS, "event_frame"],
        ),
    )
    ctx.store.write_frame(
        EVENTS,
        pd.DataFrame(
            [
                (
                    e.vehicle_id,
                    e.crossing_frame,
                    e.initiation_frame,
                    str(e.direction),
                    e.low_confidence,
                    e.excluded,
                    str(e.reason) if e.reason is not None else "",
                )
                for e in dataset.events
            ],
            columns=[
                "vehicle_id",
                "crossing_frame",
                "initiation_frame",
                "direction",
                "low_confidence",
                "excluded",
                "reason",
            ],
        ),
    )
    ctx.store.write_json(
        EXCLUSIONS,
        {
            "events": len(dataset.events),
            "retained": sum(not e.excluded for e in dataset.events),
            "instances": len(dataset.instances),
            "excluded": exclusion_summary(dataset.events),
        },
    )


def stage_featurize(ctx: Context) -> None:
    settings = ctx.settings.features
    built = build_feature_table(
        _load_tracks(ctx),
        ctx.road,
        ctx.store.read_frame(INSTANCES),
        settings,
        settings.n_past,
        settings.step_gap,
    )
    ctx.store.write_frame(FEATURES, built.table)
    ctx.store.write_json(
        FEATURES_META,
        {
            "names": list(built.names),
            "n_past": settings.n_past,
            "step_gap": settings.step_gap,
            "feature_set": settings.feature_set,
            "skipped": built.skipped,
            "source": INSTANCES,
        },
    )


def stage_train(ctx: Context) -> None:
    names, n_past, step_gap = _feature_meta(ctx)
    table = ctx.store.read_frame(FEATURES)
    forest, metrics, train_rows, test_rows = _train_and_score(
        ctx,
        table,
        names,
        (n_past, step_gap),
    )
    save_forest(forest, ctx.store.path(FOREST))
    ctx.store.mark_written(FOREST)
    ids = table["vehicle_id"].to_numpy(dtype=np.int64)
    ctx.store.write_json(
        SPLIT,
        {
            "train_vehicles": sorted({int(i) for i in ids[train_rows]}),
            "test_vehicles": sorted({int(i) for i in ids[test_rows]}),
        },
    )
    ctx.store.write_json(
        TRAIN_METRICS,
        {
            "n_train": len(train_rows),
            "n_test": len(test_rows),
            "oob_accuracy": forest.oob_accuracy,
            "holdout_accuracy": metrics.accuracy,
        },
    )
    ctx.store.write_frame(
        IMPORTANCE,
        pd.DataFrame(
            feature_importance(forest),
            columns=["feature", "importance"],
        ),
    )


def stage_eval(ctx: Context) -> None:
    forest = load_forest(ctx.store.require(FOREST))
    table = ctx.store.read_frame(FEATURES)
    split = ctx.store.read_json(SPLIT)
    test = table[table["vehicle_id"].isin(split["test_vehicles"])]
    metrics = evaluate(
        forest,
        test[list(forest.feature_names)].to_numpy(dtype=np.float64),
        test["label"].to_numpy(),
    )
    ctx.store.write_json(
        METRICS,
        {**metrics.as_dict(), "n_test": len(test)},
    )


def stage_history(ctx: Context) -> None:
    settings = ctx.settings.features
    tracks = _load_tracks(ctx)
    instances = ctx.store.read_frame(INSTANCES)
    rows: list[dict[str, object]] = []

    for n_past in settings.grid_n_past:
        for step_gap in settings.grid_step_gap:
            built = build_feature_table(
                tracks,
                ctx.road,
                instances,
                settings,
                n_past,
                step_gap,
            )
            row: dict[str, object] = {
                "n_past": n_past,
                "step_gap": step_gap,
                "n_instances": len(built.table),
            }

            try:
                _, metrics, _, _ = _train_and_score(
                    ctx,
                    built.table,
                    built.names,
                    (n_past, step_gap),
                )
            except (
                DegenerateForestError,
                ParameterError,
                ShapeError,
            ) as exc:
                logger.warning(
                    "History cell n_past=%d step_gap=%d failed: %s",
                    n_past,
                    step_gap,
                    exc,
                )
                row |= {"accuracy": None, "precision": None, "recall": None}
            else:
                row |= {
                    "accuracy": metrics.accuracy,
                    "precision": metrics.precision,
                    "recall": metrics.recall,
                }

            rows.append(row)

    ctx.store.write_frame(HISTORY, pd.DataFrame(rows))


def _scenario(ctx: Context, tracks: tuple[VehicleTrack, ...]) -> Scenario:
    sim = ctx.settings.sim

    if sim.ego_id is None:
        return scenario_from_events(
            tracks,
            _events_from_frame(ctx.store.read_frame(EVENTS)),
            ctx.road,
        )

    owned = [t for t in tracks if t.vehicle_id == sim.ego_id]

    if not owned:
        raise ScenarioError(f"Vehicle {sim.ego_id} is not in {TRACKS}")

    return Scenario(
        ego_id=sim.ego_id,
        start_frame=(
            sim.start_frame
            if sim.start_frame is not None
            else owned[0].first_frame
        ),
        end_frame=(
            sim.end_frame if sim.end_frame is not None else owned[0].last_frame
        ),
        tracks=tracks,
        road=ctx.road,
    )


def stage_simulate(ctx: Context) -> None:
    settings = ctx.settings
    tracks = _load_tracks(ctx)
    forest = load_forest(ctx.store.require(FOREST))
    scenario = _scenario(ctx, tracks)
    steps = replay_simulate(
        scenario,
        forest,
        settings.planner,
        settings.features,
        threshold=settings.sim.threshold,
        completion_tol=settings.sim.completion_tol,
    )
    ctx.store.write_frame(SIM_LOG_CSV, steps_frame(steps))
    ctx.store.write_json(SIM_LOG_JSON, steps_records(steps))
    comparison = compare_to_ground_truth(
        steps,
        ego_track(scenario),
        ctx.road,
        settings.events,
        completion_tol=settings.sim.completion_tol,
    )
    ctx.store.write_json(
        COMPARISON,
        {
            "ego_id": scenario.ego_id,
            "start_frame": scenario.start_frame,
            "end_frame": scenario.end_frame,
            **comparison_dict(comparison),
        },
    )


def stage_sweep(ctx: Context) -> None:
    sim = ctx.settings.sim
    forest = load_forest(ctx.store.require(FOREST))
    table = ctx.store.read_frame(FEATURES)
    changes = table[table["label"] == str(Manoeuvre.LANE_CHANGE)]

    if changes.empty:
        raise ParameterError("No lane-change instance to freeze features at")

    frozen = changes[list(forest.feature_names)].to_numpy(np.float64)[0]
    frame = sensitivity_sweep(
        forest,
        frozen,
        sim.sweep_feature,
        sim.sweep_lo,
        sim.sweep_hi,
        sim.sweep_step,
    )
    logger.info(
        "Spearman correlation of %s with p(lane_change): %.3f",
        sim.sweep_feature,
        sweep_correlation(frame),
    )
    ctx.store.write_frame(SWEEP, frame)


STAGES: dict[str, Callable[[Context], None]] = {
    "ingest": stage_ingest,
    "label": stage_label,
    "featurize": stage_featurize,
    "train": stage_train,
    "eval": stage_eval,
    "history": stage_history,
    "simulate": stage_simulate,
    "sweep": stage_sweep,
}


def _run_stage(
    name: str,
    settings: Settings,
    road: RoadGeometry,
    action: Callable[[Context], None],
) -> None:
    ctx = Context(settings, ArtifactStore(settings.paths.out), road)
    logger.info("Running %s into %s", name, settings.paths.out)
    action(ctx)
    ctx.store.write_manifest(name, settings, settings.seed)


def execute(
    subcommand: str,
    settings: Settings,
    *,
    kind: str = "tracks",
) -> None:
    road = road_from_settings(settings.road)

    match subcommand:
        case "synth":
            _run_stage(
                subcommand,
                settings,
                road,
                lambda ctx: stage_synth(ctx, kind),
            )
        case "all":
            for name in PIPELINE:
                try:
                    _run_stage(name, settings, road, STAGES[name])
                except ScenarioError as exc:
                    if name != "simulate" or settings.sim.ego_id is not None:
                        raise

                    logger.warning("Skipping simulation: %s", exc)
        case name if name in STAGES:
            _run_stage(name, settings, road, STAGES[name])
        case _:
            raise ParameterError(f"Unknown subcommand: {subcommand}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config",
        default=None,
        help="Path to config.toml (defaults apply when omitted)",
    )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=pathlib.Path, default=None)


def _add_ingest(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--data",
        type=pathlib.Path,
        action="append",
        default=None,
        help="Trajectory CSV; repeat for several sites",
    )
    parser.add_argument("--schema", choices=sorted(SCHEMA_PRESETS))


def _add_featurize(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--n-past", type=int, default=None)
    parser.add_argument("--step-gap", type=int, default=None)
    parser.add_argument(
        "--feature-set",
        choices=("full", "baseline"),
        default=None,
    )


def _add_train(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--trees", type=int, default=None)


def _add_simulate(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ego-id", type=int, default=None)
    parser.add_argument("--start", type=int, default=None)
    parser.add_argument("--end", type=int, default=None)
    parser.add_argument("--threshold", type=float, default=None)


def _add_sweep(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--feature", default=None)
    parser.add_argument("--lo", type=float, default=None)
    parser.add_argument("--hi", type=float, default=None)
    parser.add_argument("--step", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lanechange")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    extras: dict[str, list[Callable[[argparse.ArgumentParser], None]]] = {
        "synth": [],
        "ingest": [_add_ingest],
        "label": [],
        "featurize": [_add_featurize],
        "train": [_add_train],
        "eval": [],
        "history": [_add_train],
        "simulate": [_add_simulate],
        "sweep": [_add_sweep],
        "all": [
            _add_ingest,
            _add_featurize,
            _add_train,
            _add_simulate,
            _add_sweep,
        ],
    }

    for name, adders in extras.items():
        sub = subparsers.add_parser(name)
        _add_common(sub)

        for add in adders:
            add(sub)

        if name == "synth":
            sub.add_argument(
                "--kind",
                choices=("tracks", "instances"),
                default="tracks",
            )
            sub.add_argument("--n-vehicles", type=int, default=None)
            sub.add_argument("--n-instances", type=int, default=None)

    return parser


def _load_config(path: str | None) -> Settings:
    if path is None:
        default = pathlib.Path("config.toml")

        return load_settings(default if default.is_file() else None)

    config_path = pathlib.Path(path)

    if not config_path.is_file():
        raise DependencyError(f"Config file {config_path} does not exist")

    return load_settings(config_path)


def apply_overrides(settings: Settings, args: argparse.Namespace) -> Settings:
    """Command-line flags take precedence over the config file."""

    def given(name: str) -> Any:
        return getattr(args, name, None)

    if given("seed") is not None:
        settings = settings._replace(
            seed=given("seed"),
            forest=settings.forest._replace(seed=given("seed")),
        )

    paths = settings.paths

    if given("out") is not None:
        paths = paths._replace(out=given("out"))

    if given("data"):
        paths = paths._replace(data=tuple(given("data")))

    features = settings.features._replace(
        **{
            field: given(flag)
            for field, flag in (
                ("n_past", "n_past"),
                ("step_gap", "step_gap"),
                ("feature_set", "feature_set"),
            )
            if given(flag) is not None
        },
    )
    forest = settings.forest

    if given("trees") is not None:
        forest = forest._replace(n_trees=given("trees"))

    sim = settings.sim._replace(
        **{
            field: given(flag)
            for field, flag in (
                ("ego_id", "ego_id"),
                ("start_frame", "start"),
                ("end_frame", "end"),
                ("threshold", "threshold"),
                ("sweep_feature", "feature"),
                ("sweep_lo", "lo"),
                ("sweep_hi", "hi"),
                ("sweep_step", "step"),
            )
            if given(flag) is not None
        },
    )
    synth = settings.synth._replace(
        **{
            field: given(field)
            for field in ("n_vehicles", "n_instances")
            if given(field) is not None
        },
    )

    return settings._replace(
        paths=paths,
        schema=(
            SCHEMA_PRESETS[given("schema")]
            if given("schema") is not None
            else settings.schema
        ),
        features=features,
        forest=forest,
        sim=sim,
        synth=synth,
    )


def _report(exc: Exception, out: pathlib.Path | None) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    text = dumps(payload)
    logger.error("%s: %s", payload["error"], payload["message"])
    print(text, file=sys.stderr)

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / ERROR_REPORT).write_text(text + "\n", encoding="utf-8")


def run(argv: Sequence[str] | None = None) -> int:
    """
    Run one subcommand and return its exit status: 0 on success, 1 on a
    validation failure, 2 on a usage error, 3 on a missing input.
    """
    args = build_parser().parse_args(argv)
    out: pathlib.Path | None = None

    try:
        settings = apply_overrides(_load_config(args.config), args)
        out = settings.paths.out
        configure_logging(settings.logging, component=args.subcommand)
        execute(
            args.subcommand,
            settings,
            kind=getattr(args, "kind", "tracks"),
        )
    except DependencyError as exc:
        _report(exc, out)
        return EXIT_DEPENDENCY
    except (LaneChangeError, tomllib.TOMLDecodeError) as exc:
        _report(exc, out)
        return EXIT_VALIDATION

    return EXIT_OK
