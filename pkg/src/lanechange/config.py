from __future__ import annotations

import os
import pathlib
import tomllib
from typing import Any, NamedTuple, cast

from lanechange.errors import ParameterError

DATA_ROOT_ENV = "LANECHANGE_DATA_ROOT"


class TrackSchema(NamedTuple):
    """Column names for each ``RawSample`` field plus unit conventions."""
    vehicle_id: str
    frame: str
    x: str
    y: str
    speed: str
    lane_id: str
    length: str
    width: str
    # Positions, speeds and sizes are recorded in feet.
    feet: bool
    # "front" when x marks the front bumper rather than the centre.
    reference: str


INTERNAL_SCHEMA = TrackSchema(
    vehicle_id="vehicle_id",
    frame="frame",
    x="x",
    y="y",
    speed="speed",
    lane_id="lane_id",
    length="length",
    width="width",
    feet=False,
    reference="centre",
)

# NGSIM records Local_Y along the road and Local_X across it.
NGSIM_SCHEMA = TrackSchema(
    vehicle_id="Vehicle_ID",
    frame="Frame_ID",
    x="Local_Y",
    y="Local_X",
    speed="v_Vel",
    lane_id="Lane_ID",
    length="v_Length",
    width="v_Width",
    feet=True,
    reference="front",
)

SCHEMA_PRESETS = {"internal": INTERNAL_SCHEMA, "ngsim": NGSIM_SCHEMA}


class PathSettings(NamedTuple):
    data: tuple[pathlib.Path, ...]
    out: pathlib.Path


class RoadSettings(NamedTuple):
    lane_count: int
    lane_width: float
    # Lateral position of the leftmost marking.
    origin: float
    ramp_zones: tuple[tuple[float, float], ...]


class EkfConfig(NamedTuple):
    wheelbase: float
    # Variances for (x, y, steering disturbance, speed).
    process_noise: tuple[float, float, float, float]
    measurement_noise: tuple[float, float]
    initial_covariance: tuple[float, float, float, float]


class SmoothingSettings(NamedTuple):
    ts_data: float
    alpha: float
    max_gap_frames: int
    ekf: EkfConfig


class EventSettings(NamedTuple):
    threshold: float
    min_run_s: float
    merge_window_s: float
    headway_min: float
    ramp_margin: float
    warmup_s: float
    margin_s: float
    keep_per_event: int


class FeatureSettings(NamedTuple):
    gap_sentinel: float
    rel_speed_sentinel: float
    ttc_max: float
    sensing_range: float
    # Lead gaps below this are floored before entering the utility sum.
    min_lead_gap: float
    n_past: int
    step_gap: int
    feature_set: str
    grid_n_past: tuple[int, ...]
    grid_step_gap: tuple[int, ...]


class TrainConfig(NamedTuple):
    n_trees: int = 100
    # None means ceil(sqrt(d)).
    mtry: int | None = None
    bootstrap: bool = True
    seed: int = 0
    min_samples_split: int = 2
    max_depth: int | None = None
    test_fraction: float = 0.2


class PlannerSettings(NamedTuple):
    horizon: int
    ts: float
    q: tuple[float, float, float]
    r: tuple[float, float]
    terminal_scale: float
    v_pref: float
    t_hw: float
    gap_min: float
    edge_margin: float
    wheelbase: float
    delta_bounds: tuple[float, float]
    ax_bounds: tuple[float, float]
    v_bounds: tuple[float, float]
    psi_bounds: tuple[float, float]
    # Floor on the linearization speed so the lateral channel stays
    # controllable at standstill.
    min_speed: float
    max_iter: int
    tol: float


class SimSettings(NamedTuple):
    threshold: float
    completion_tol: float
    ego_id: int | None
    start_frame: int | None
    end_frame: int | None
    sweep_feature: str
    sweep_lo: float
    sweep_hi: float
    sweep_step: float


class SynthSettings(NamedTuple):
    n_vehicles: int
    duration_s: float
    noise_std: float
    truck_fraction: float
    n_instances: int
    label_noise: float
    gap_accept_lo: float
    gap_accept_hi: float


class LoggingSettings(NamedTuple):
    file_path: pathlib.Path
    level: str


class Settings(NamedTuple):
    seed: int
    paths: PathSettings
    schema: TrackSchema
    road: RoadSettings
    smoothing: SmoothingSettings
    events: EventSettings
    features: FeatureSettings
    forest: TrainConfig
    planner: PlannerSettings
    sim: SimSettings
    synth: SynthSettings
    logging: LoggingSettings


def _as_dict(value: object) -> dict[str, Any] | None:
    if isinstance(value, dict):
        return cast(dict[str, Any], value)

    return None


def _as_list(value: object) -> list[object] | None:
    if isinstance(value, list):
        return cast(list[object], value)

    return None


def _section(data: dict[str, Any], name: str) -> dict[str, Any]:
    return _as_dict(data.get(name)) or {}


def _float(
    section: dict[str, Any],
    name: str,
    key: str,
    default: float,
) -> float:
    value = section.get(key, default)

    if isinstance(value, bool) or not isinstance(value, int | float):
        raise ParameterError(f"[{name}].{key} must be a number")

    return float(value)


def _int(section: dict[str, Any], name: str, key: str, default: int) -> int:
    value = section.get(key, default)

    if isinstance(value, bool) or not isinstance(value, int):
        raise ParameterError(f"[{name}].{key} must be an integer")

    return value


def _optional_int(section: dict[str, Any], name: str, key: str) -> int | None:
    if section.get(key) is None:
        return None

    return _int(section, name, key, 0)


def _bool(
    section: dict[str, Any],
    name: str,
    key: str,
    *,
    default: bool,
) -> bool:
    value = section.get(key, default)

    if not isinstance(value, bool):
        raise ParameterError(f"[{name}].{key} must be true or false")

    return value


def _floats(
    section: dict[str, Any],
    name: str,
    key: str,
    default: tuple[float, ...],
) -> tuple[float, ...]:
    items = _as_list(section.get(key, list(default)))

    if items is None or len(items) != len(default):
        raise ParameterError(
            f"[{name}].{key} must be a list of {len(default)} numbers",
        )

    parsed: list[float] = []

    for item in items:
        if isinstance(item, bool) or not isinstance(item, int | float):
            raise ParameterError(f"[{name}].{key} must contain numbers")

        parsed.append(float(item))

    return tuple(parsed)


def _ints(
    section: dict[str, Any],
    name: str,
    key: str,
    default: tuple[int, ...],
) -> tuple[int, ...]:
    items = _as_list(section.get(key, list(default))) or []
    parsed = tuple(
        x for x in items if isinstance(x, int) and not isinstance(x, bool)
    )

    if not parsed or len(parsed) != len(items):
        raise ParameterError(f"[{name}].{key} must be a list of integers")

    return parsed


def _pair(values: tuple[float, ...]) -> tuple[float, float]:
    return values[0], values[1]


def _parse_path(value: object) -> pathlib.Path | None:
    if not isinstance(value, str):
        return None

    trimmed = value.strip()

    if not trimmed:
        return None

    return pathlib.Path(trimmed).expanduser()


def resolve_data_path(path: pathlib.Path) -> pathlib.Path:
    """Resolve a relative data path against ``LANECHANGE_DATA_ROOT``."""
    root = os.environ.get(DATA_ROOT_ENV, "").strip()

    if path.is_absolute() or not root:
        return path

    return pathlib.Path(root).expanduser() / path


def _parse_paths(data: dict[str, Any]) -> PathSettings:
    section = _section(data, "paths")
    raw = section.get("data", [])
    items = [raw] if isinstance(raw, str) else (_as_list(raw) or [])
    data_paths = tuple(
        resolve_data_path(path)
        for path in (_parse_path(item) for item in items)
        if path is not None
    )

    return PathSettings(
        data=data_paths,
        out=_parse_path(section.get("out")) or pathlib.Path("out"),
    )


def _parse_schema(data: dict[str, Any]) -> TrackSchema:
    section = _section(data, "schema")
    preset = str(section.get("preset", "internal")).strip().lower()

    if preset not in SCHEMA_PRESETS:
        raise ParameterError(
            f"[schema].preset must be one of {sorted(SCHEMA_PRESETS)}",
        )

    schema = SCHEMA_PRESETS[preset]
    columns = {
        field: str(section[field])
        for field in TrackSchema._fields
        if field in section and field not in ("feet", "reference")
    }
    schema = schema._replace(**columns)

    if "feet" in section:
        schema = schema._replace(
            feet=_bool(section, "schema", "feet", default=schema.feet),
        )

    reference = str(section.get("reference", schema.reference)).lower()

    if reference not in ("front", "centre"):
        raise ParameterError('[schema].reference must be "front" or "centre"')

    return schema._replace(reference=reference)


def _parse_road(data: dict[str, Any]) -> RoadSettings:
    section = _section(data, "road")
    zones: list[tuple[float, float]] = []

    for item in _as_list(section.get("ramp_zones", [])) or []:
        match item:
            case [int() | float() as start, int() | float() as end] if (
                start < end
            ):
                zones.append((float(start), float(end)))
            case _:
                raise ParameterError(
                    "[road].ramp_zones entries must be [start, end] pairs",
                )

    return RoadSettings(
        lane_count=_int(section, "road", "lane_count", 3),
        lane_width=_float(section, "road", "lane_width", 3.7),
        origin=_float(section, "road", "origin", 0.0),
        ramp_zones=tuple(zones),
    )


def _parse_smoothing(data: dict[str, Any]) -> SmoothingSettings:
    section = _section(data, "smoothing")
    process = _floats(
        section,
        "smoothing",
        "process_noise",
        (0.05, 0.05, 0.01, 0.2),
    )
    measurement = _floats(
        section,
        "smoothing",
        "measurement_noise",
        (0.25, 0.25),
    )
    initial = _floats(
        section,
        "smoothing",
        "initial_covariance",
        (1.0, 1.0, 0.1, 1.0),
    )

    if min(process + measurement + initial) <= 0:
        raise ParameterError("[smoothing] variances must all be positive")

    ekf = EkfConfig(
        wheelbase=_float(section, "smoothing", "wheelbase", 2.7),
        process_noise=(process[0], process[1], process[2], process[3]),
        measurement_noise=_pair(measurement),
        initial_covariance=(initial[0], initial[1], initial[2], initial[3]),
    )

    return SmoothingSettings(
        ts_data=_float(section, "smoothing", "ts_data", 0.1),
        alpha=_float(section, "smoothing", "alpha", 0.3),
        max_gap_frames=_int(section, "smoothing", "max_gap_frames", 5),
        ekf=ekf,
    )


def _parse_events(data: dict[str, Any]) -> EventSettings:
    section = _section(data, "events")

    return EventSettings(
        threshold=_float(section, "events", "threshold", 0.1),
        min_run_s=_float(section, "events", "min_run_s", 0.5),
        merge_window_s=_float(section, "events", "merge_window_s", 2.0),
        headway_min=_float(section, "events", "headway_min", 2.0),
        ramp_margin=_float(section, "events", "ramp_margin", 100.0),
        warmup_s=_float(section, "events", "warmup_s", 3.0),
        margin_s=_float(section, "events", "margin_s", 1.0),
        keep_per_event=_int(section, "events", "keep_per_event", 1),
    )


def _parse_features(data: dict[str, Any]) -> FeatureSettings:
    section = _section(data, "features")
    feature_set = str(section.get("feature_set", "full")).strip().lower()

    if feature_set not in ("full", "baseline"):
        raise ParameterError(
            '[features].feature_set must be "full" or "baseline"',
        )

    return FeatureSettings(
        gap_sentinel=_float(section, "features", "gap_sentinel", 200.0),
        rel_speed_sentinel=_float(
            section,
            "features",
            "rel_speed_sentinel",
            0.0,
        ),
        ttc_max=_float(section, "features", "ttc_max", 60.0),
        sensing_range=_float(section, "features", "sensing_range", 100.0),
        min_lead_gap=_float(section, "features", "min_lead_gap", 0.5),
        n_past=_int(section, "features", "n_past", 0),
        step_gap=_int(section, "features", "step_gap", 5),
        feature_set=feature_set,
        grid_n_past=_ints(section, "features", "grid_n_past", (0, 1, 2, 3)),
        grid_step_gap=_ints(section, "features", "grid_step_gap", (2, 5, 10)),
    )


def _parse_forest(data: dict[str, Any], seed: int) -> TrainConfig:
    section = _section(data, "forest")
    config = TrainConfig(
        n_trees=_int(section, "forest", "n_trees", 100),
        mtry=_optional_int(section, "forest", "mtry"),
        bootstrap=_bool(section, "forest", "bootstrap", default=True),
        seed=seed,
        min_samples_split=_int(section, "forest", "min_samples_split", 2),
        max_depth=_optional_int(section, "forest", "max_depth"),
        test_fraction=_float(section, "forest", "test_fraction", 0.2),
    )

    if config.n_trees < 1:
        raise ParameterError("[forest].n_trees must be at least 1")

    if not 0 < config.test_fraction < 1:
        raise ParameterError("[forest].test_fraction must be in (0, 1)")

    return config


def _parse_planner(data: dict[str, Any]) -> PlannerSettings:
    section = _section(data, "planner")
    q = _floats(section, "planner", "q", (1e3, 1e-2, 1e-2))
    settings = PlannerSettings(
        horizon=_int(section, "planner", "horizon", 30),
        ts=_float(section, "planner", "ts", 0.1),
        q=(q[0], q[1], q[2]),
        r=_pair(_floats(section, "planner", "r", (10.0, 1e-2))),
        terminal_scale=_float(section, "planner", "terminal_scale", 1e3),
        v_pref=_float(section, "planner", "v_pref", 30.0),
        t_hw=_float(section, "planner", "t_hw", 2.0),
        gap_min=_float(section, "planner", "gap_min", 5.0),
        edge_margin=_float(section, "planner", "edge_margin", 0.2),
        wheelbase=_float(section, "planner", "wheelbase", 2.7),
        delta_bounds=_pair(
            _floats(section, "planner", "delta_bounds", (-0.1, 0.1)),
        ),
        ax_bounds=_pair(_floats(section, "planner", "ax_bounds", (-4.0, 3.0))),
        v_bounds=_pair(_floats(section, "planner", "v_bounds", (0.0, 40.0))),
        psi_bounds=_pair(
            _floats(section, "planner", "psi_bounds", (-0.2, 0.2)),
        ),
        min_speed=_float(section, "planner", "min_speed", 1.0),
        max_iter=_int(section, "planner", "max_iter", 500),
        tol=_float(section, "planner", "tol", 1e-6),
    )

    if settings.horizon < 1:
        raise ParameterError("[planner].horizon must be at least 1")

    if settings.ts <= 0:
        raise ParameterError("[planner].ts must be positive")

    return settings


def _parse_sim(data: dict[str, Any]) -> SimSettings:
    section = _section(data, "sim")

    return SimSettings(
        threshold=_float(section, "sim", "threshold", 0.8),
        completion_tol=_float(section, "sim", "completion_tol", 0.2),
        ego_id=_optional_int(section, "sim", "ego_id"),
        start_frame=_optional_int(section, "sim", "start_frame"),
        end_frame=_optional_int(section, "sim", "end_frame"),
        sweep_feature=str(section.get("sweep_feature", "x_FL")),
        sweep_lo=_float(section, "sim", "sweep_lo", 0.0),
        sweep_hi=_float(section, "sim", "sweep_hi", 25.0),
        sweep_step=_float(section, "sim", "sweep_step", 1.0),
    )


def _parse_synth(data: dict[str, Any]) -> SynthSettings:
    section = _section(data, "synth")

    return SynthSettings(
        n_vehicles=_int(section, "synth", "n_vehicles", 30),
        duration_s=_float(section, "synth", "duration_s", 60.0),
        noise_std=_float(section, "synth", "noise_std", 0.05),
        truck_fraction=_float(section, "synth", "truck_fraction", 0.25),
        n_instances=_int(section, "synth", "n_instances", 1200),
        label_noise=_float(section, "synth", "label_noise", 0.05),
        gap_accept_lo=_float(section, "synth", "gap_accept_lo", 9.0),
        gap_accept_hi=_float(section, "synth", "gap_accept_hi", 11.0),
    )


def _parse_logging(data: dict[str, Any]) -> LoggingSettings:
    section = _section(data, "logging")
    file_path = _parse_path(section.get("file"))

    if file_path is None:
        file_path = pathlib.Path("logs")

    level = str(section.get("level", "INFO")).strip().upper()

    if not level:
        level = "INFO"

    return LoggingSettings(file_path=file_path, level=level)


def parse_settings(data: dict[str, Any]) -> Settings:
    seed = _int(data, "root", "seed", 0)

    return Settings(
        seed=seed,
        paths=_parse_paths(data),
        schema=_parse_schema(data),
        road=_parse_road(data),
        smoothing=_parse_smoothing(data),
        events=_parse_events(data),
        features=_parse_features(data),
        forest=_parse_forest(data, seed),
        planner=_parse_planner(data),
        sim=_parse_sim(data),
        synth=_parse_synth(data),
        logging=_parse_logging(data),
    )


def load_settings(path: str | pathlib.Path | None = "config.toml") -> Settings:
    if path is None:
        return parse_settings({})

    config_path = pathlib.Path(path)

    with config_path.open("rb") as file:
        data = tomllib.load(file)

    return parse_settings(data)
