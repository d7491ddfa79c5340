from __future__ import annotations

import datetime
import hashlib
import json
import logging
import math
import pathlib
from typing import Any, NamedTuple, cast

import numpy as np
import pandas as pd

from lanechange.errors import DependencyError

logger = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """JSON-ready copy: tuples to lists, paths to strings, NaN to null."""
    if isinstance(value, tuple) and hasattr(value, "_asdict"):
        return _plain(cast(NamedTuple, value)._asdict())

    if isinstance(value, dict):
        mapping = cast(dict[Any, Any], value)

        return {str(k): _plain(v) for k, v in mapping.items()}

    if isinstance(value, list | tuple):
        return [_plain(v) for v in cast(list[Any], value)]

    if isinstance(value, np.ndarray):
        return _plain(cast(list[Any], value.tolist()))

    if isinstance(value, np.generic):
        return _plain(value.item())

    if isinstance(value, pathlib.Path):
        return value.as_posix()

    if isinstance(value, float) and not math.isfinite(value):
        return None

    return value


def dumps(data: Any) -> str:
    return json.dumps(_plain(data), sort_keys=True, indent=2, allow_nan=False)


def sha256_file(path: pathlib.Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_hash(settings: Any) -> str:
    return hashlib.sha256(dumps(settings).encode("utf-8")).hexdigest()


class ArtifactStore:
    """
    Reads and writes the files of one output directory, remembering what
    a stage consumed and produced for its manifest.
    """

    def __init__(self, root: pathlib.Path) -> None:
        self.root = root
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}

    def path(self, name: str) -> pathlib.Path:
        return self.root / name

    def exists(self, name: str) -> bool:
        return self.path(name).is_file()

    def require(self, name: str) -> pathlib.Path:
        path = self.path(name)

        if not path.is_file():
            raise DependencyError(
                f"Missing upstream artifact {path}; run the stage that "
                "produces it first",
            )

        self.inputs[name] = sha256_file(path)

        return path

    def require_external(self, path: pathlib.Path) -> pathlib.Path:
        """Check and hash an input file that lives outside the store."""
        if not path.is_file():
            raise DependencyError(f"Missing input file {path}")

        self.inputs[path.name] = sha256_file(path)

        return path

    def _written(self, name: str) -> pathlib.Path:
        path = self.path(name)
        self.outputs[name] = sha256_file(path)
        logger.info("Wrote %s", path)

        return path

    def write_text(self, name: str, text: str) -> pathlib.Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")

        return self._written(name)

    def write_json(self, name: str, data: Any) -> pathlib.Path:
        return self.write_text(name, dumps(data) + "\n")

    def write_frame(self, name: str, frame: pd.DataFrame) -> pathlib.Path:
        path = self.path(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(
            path,
            index=False,
            lineterminator="\n",
            encoding="utf-8",
        )

        return self._written(name)

    def mark_written(self, name: str) -> pathlib.Path:
        """Record a file written by another module."""
        return self._written(name)

    def read_json(self, name: str) -> Any:
        return json.loads(self.require(name).read_text(encoding="utf-8"))

    def read_frame(self, name: str) -> pd.DataFrame:
        return pd.read_csv(self.require(name), encoding="utf-8")

    def write_manifest(
        self,
        subcommand: str,
        settings: Any,
        seed: int,
    ) -> pathlib.Path:
        """
        Write ``manifest.<subcommand>.json`` and its timestamp sidecar.
        The manifest itself depends only on the inputs.
        """
        manifest = {
            "subcommand": subcommand,
            "config_hash": config_hash(settings),
            "seed": seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
        }
        path = self.path(f"manifest.{subcommand}.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(manifest) + "\n", encoding="utf-8")
        meta = {
            "manifest": path.name,
            "written_at": datetime.datetime.now(datetime.UTC).isoformat(),
        }
        self.path(f"manifest.{subcommand}.meta.json").write_text(
            dumps(meta) + "\n",
            encoding="utf-8",
        )

        return path
