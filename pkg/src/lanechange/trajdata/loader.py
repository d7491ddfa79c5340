from __future__ import annotations

import logging
import pathlib
from collections.abc import Iterator, Sequence
from typing import NamedTuple

import numpy as np
import pandas as pd

from lanechange.config import TrackSchema
from lanechange.errors import ParameterError, ParseError, SchemaError
from lanechange.model import (
    BoolArray,
    FloatArray,
    IntArray,
    RawSample,
)

logger = logging.getLogger(__name__)

FEET_TO_METRES = 0.3048
# Vehicle ids from the n-th input file are offset by n times this.
SITE_ID_OFFSET = 1_000_000

_FIELDS = RawSample._fields
_LENGTH_FIELDS = ("x", "y", "speed", "length", "width")


class VehicleTrack(NamedTuple):
    """
    One vehicle's trace on a uniform time base of ``ts`` seconds.

    A vehicle whose recording has a long gap is split into segments that
    share its ``vehicle_id``.
    """
    vehicle_id: int
    segment: int
    ts: float
    frames: IntArray
    x: FloatArray
    y: FloatArray
    speed: FloatArray
    lane_id: IntArray
    length: float
    width: float
    heading: FloatArray
    # Positive toward decreasing lane_id (leftward).
    lateral_speed: FloatArray
    longitudinal_speed: FloatArray
    interpolated: BoolArray

    @property
    def n_samples(self) -> int:
        return int(self.frames.shape[0])

    @property
    def first_frame(self) -> int:
        return int(self.frames[0])

    @property
    def last_frame(self) -> int:
        return int(self.frames[-1])

    def has_frame(self, frame: int) -> bool:
        return self.first_frame <= frame <= self.last_frame

    def index_of(self, frame: int) -> int:
        if not self.has_frame(frame):
            raise ParameterError(
                f"Frame {frame} is outside vehicle {self.vehicle_id}'s track",
            )

        return frame - self.first_frame

    def samples(self) -> Iterator[RawSample]:
        for k in range(self.n_samples):
            yield RawSample(
                vehicle_id=self.vehicle_id,
                frame=int(self.frames[k]),
                x=float(self.x[k]),
                y=float(self.y[k]),
                speed=float(self.speed[k]),
                lane_id=int(self.lane_id[k]),
                length=self.length,
                width=self.width,
            )


class LoadResult(NamedTuple):
    tracks: tuple[VehicleTrack, ...]
    duplicates_dropped: int
    # Gap-filled frames per vehicle id.
    interpolated: dict[int, tuple[int, ...]]
    splits: int


def finite_difference(values: FloatArray, ts: float) -> FloatArray:
    """Central difference, one-sided at the endpoints."""
    if values.shape[0] < 2:
        return np.zeros_like(values)

    return np.asarray(np.gradient(values, ts), dtype=np.float64)


def _read_table(
    path: pathlib.Path,
    schema: TrackSchema,
    *,
    extra: Sequence[str] = (),
) -> pd.DataFrame:
    try:
        raw = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=[*_FIELDS, *extra])

    columns = {field: getattr(schema, field) for field in _FIELDS}
    columns.update({name: name for name in extra})
    missing = [col for col in columns.values() if col not in raw.columns]

    if missing:
        raise SchemaError(
            f"{path} is missing mapped columns: {', '.join(missing)}",
        )

    table = pd.DataFrame(index=raw.index)

    for field, column in columns.items():
        converted = pd.to_numeric(raw[column], errors="coerce")
        bad = np.flatnonzero(converted.isna().to_numpy())

        if bad.size:
            raise ParseError(
                f"Non-numeric value in column {column} of {path}",
                row=int(bad[0]),
            )

        table[field] = converted.astype(np.float64)

    if schema.feet:
        speeds = [name for name in extra if name == "lateral_speed"]

        for field in (*_LENGTH_FIELDS, *speeds):
            table[field] *= FEET_TO_METRES

    if schema.reference == "front":
        table["x"] -= table["length"] / 2

    return table


def _interp_column(
    group: pd.DataFrame,
    name: str,
    index: IntArray,
    full: IntArray,
) -> FloatArray:
    known = group["frame"].to_numpy(dtype=np.int64)[index]
    values = group[name].to_numpy(dtype=np.float64)[index]

    return np.interp(full, known, values)


def _build_segments(
    vehicle_id: int,
    group: pd.DataFrame,
    ts: float,
    max_gap_frames: int,
) -> tuple[list[VehicleTrack], list[int]]:
    frames = group["frame"].to_numpy(dtype=np.int64)
    breaks = np.flatnonzero(np.diff(frames) - 1 > max_gap_frames) + 1
    tracks: list[VehicleTrack] = []
    filled: list[int] = []

    for segment, index in enumerate(np.split(np.arange(len(frames)), breaks)):
        known = frames[index]
        full = np.arange(known[0], known[-1] + 1, dtype=np.int64)
        interpolated = ~np.isin(full, known)

        # Filled frames keep the lane of the previous recorded sample.
        previous = np.searchsorted(known, full, side="right") - 1
        lanes = group["lane_id"].to_numpy(dtype=np.int64)[index][previous]
        x = _interp_column(group, "x", index, full)
        y = _interp_column(group, "y", index, full)
        lateral = (
            _interp_column(group, "lateral_speed", index, full)
            if "lateral_speed" in group.columns
            else -finite_difference(y, ts)
        )
        tracks.append(
            VehicleTrack(
                vehicle_id=vehicle_id,
                segment=segment,
                ts=ts,
                frames=full,
                x=x,
                y=y,
                speed=_interp_column(group, "speed", index, full),
                lane_id=lanes,
                length=float(np.median(group["length"].to_numpy()[index])),
                width=float(np.median(group["width"].to_numpy()[index])),
                heading=np.arctan2(
                    finite_difference(y, ts),
                    np.maximum(finite_difference(x, ts), 1e-6),
                ),
                lateral_speed=lateral,
                longitudinal_speed=finite_difference(x, ts),
                interpolated=interpolated,
            ),
        )
        filled.extend(int(f) for f in full[interpolated])

    return tracks, filled


def tracks_from_table(
    table: pd.DataFrame,
    ts_data: float,
    *,
    max_gap_frames: int = 5,
) -> LoadResult:
    if ts_data <= 0:
        raise ParameterError("ts_data must be positive")

    table = table.sort_values(["vehicle_id", "frame"], kind="mergesort")
    duplicated = table.duplicated(["vehicle_id", "frame"], keep="first")
    table = table.loc[~duplicated]
    tracks: list[VehicleTrack] = []
    interpolated: dict[int, tuple[int, ...]] = {}
    splits = 0

    for raw_id, group in table.groupby("vehicle_id", sort=True):
        vehicle_id = int(raw_id)  # type: ignore[arg-type]
        segments, filled = _build_segments(
            vehicle_id,
            group,
            ts_data,
            max_gap_frames,
        )
        tracks.extend(segments)
        splits += len(segments) - 1

        if filled:
            interpolated[vehicle_id] = tuple(filled)
            logger.warning(
                "Interpolated %d frames for vehicle %d",
                len(filled),
                vehicle_id,
            )

    return LoadResult(
        tracks=tuple(tracks),
        duplicates_dropped=int(duplicated.sum()),
        interpolated=interpolated,
        splits=splits,
    )


def load_tracks(
    paths: str | pathlib.Path | Sequence[str | pathlib.Path],
    schema: TrackSchema,
    ts_data: float,
    *,
    max_gap_frames: int = 5,
) -> LoadResult:
    """
    Read one or more recordings into uniform-rate tracks.

    Gaps of up to ``max_gap_frames`` missing frames are linearly
    interpolated; longer gaps split the track.
    """
    if isinstance(paths, str | pathlib.Path):
        paths = [paths]

    tables: list[pd.DataFrame] = []

    for site, path in enumerate(paths):
        table = _read_table(pathlib.Path(path), schema)
        table["vehicle_id"] += site * SITE_ID_OFFSET
        tables.append(table)

    if not tables:
        return LoadResult((), 0, {}, 0)

    result = tracks_from_table(
        pd.concat(tables, ignore_index=True),
        ts_data,
        max_gap_frames=max_gap_frames,
    )
    logger.info(
        "Loaded %d tracks from %d files (%d duplicates dropped)",
        len(result.tracks),
        len(tables),
        result.duplicates_dropped,
    )

    return result


def read_smoothed_tracks(
    path: str | pathlib.Path,
    schema: TrackSchema,
    ts_data: float,
) -> tuple[VehicleTrack, ...]:
    """Read tracks written by ``export_tracks`` without re-smoothing."""
    table = _read_table(
        pathlib.Path(path),
        schema,
        extra=("lateral_speed", "segment"),
    )
    tracks: list[VehicleTrack] = []

    for _, group in table.groupby(["vehicle_id", "segment"], sort=True):
        result = tracks_from_table(
            group.drop(columns="segment"),
            ts_data,
            max_gap_frames=0,
        )
        segment = int(group["segment"].iloc[0])
        tracks.extend(
            track._replace(segment=segment) for track in result.tracks
        )

    return tuple(tracks)


def export_tracks(
    tracks: Sequence[VehicleTrack],
    path: str | pathlib.Path,
    schema: TrackSchema,
) -> None:
    """Write tracks in ``schema``'s columns and units plus lateral_speed."""
    scale = 1 / FEET_TO_METRES if schema.feet else 1.0
    frames: list[pd.DataFrame] = []

    for track in tracks:
        n = track.n_samples
        x = track.x + (track.length / 2 if schema.reference == "front" else 0)
        frames.append(
            pd.DataFrame(
                {
                    schema.vehicle_id: np.full(n, track.vehicle_id),
                    "segment": np.full(n, track.segment),
                    schema.frame: track.frames,
                    schema.x: x * scale,
                    schema.y: track.y * scale,
                    schema.speed: track.speed * scale,
                    schema.lane_id: track.lane_id,
                    schema.length: np.full(n, track.length * scale),
                    schema.width: np.full(n, track.width * scale),
                    "lateral_speed": track.lateral_speed * scale,
                },
            ),
        )

    columns = [getattr(schema, field) for field in _FIELDS]
    columns[1:1] = ["segment"]
    table = (
        pd.concat(frames, ignore_index=True)
        if frames
        else pd.DataFrame(columns=[*columns, "lateral_speed"])
    )
    table.to_csv(path, index=False)
