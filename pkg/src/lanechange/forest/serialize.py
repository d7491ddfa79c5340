from __future__ import annotations

import json
import logging
import pathlib
from typing import Any, cast

from lanechange.config import TrainConfig
from lanechange.errors import ParseError
from lanechange.forest.ensemble import Forest
from lanechange.forest.tree import LABELS, Leaf, Split, TreeNode
from lanechange.model import Manoeuvre

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _node_to_json(node: TreeNode) -> dict[str, Any]:
    match node:
        case Leaf(label=label):
            return {"class": str(LABELS[label])}
        case Split():
            return {
                "feature": node.feature,
                "threshold": node.threshold,
                "decrease": node.decrease,
                "left": _node_to_json(node.left),
                "right": _node_to_json(node.right),
            }


def _node_from_json(value: Any, tree: int) -> TreeNode:
    if not isinstance(value, dict):
        raise ParseError("Tree node must be an object", row=tree)

    node = cast(dict[str, Any], value)

    if "class" in node:
        try:
            return Leaf(LABELS.index(Manoeuvre(node["class"])))
        except ValueError as exc:
            raise ParseError(
                f"Unknown leaf class: {node['class']!r}",
                row=tree,
            ) from exc

    try:
        return Split(
            feature=int(node["feature"]),
            threshold=float(node["threshold"]),
            left=_node_from_json(node["left"], tree),
            right=_node_from_json(node["right"], tree),
            decrease=float(node.get("decrease", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"Malformed split node: {exc}", row=tree) from exc


def forest_to_json(forest: Forest) -> dict[str, Any]:
    return {
        "version": FORMAT_VERSION,
        "feature_names": list(forest.feature_names),
        "train_config": forest.train_config._asdict(),
        "importances": list(forest.importances),
        "oob_accuracy": forest.oob_accuracy,
        "history": list(forest.history),
        "trees": [_node_to_json(tree) for tree in forest.trees],
    }


def forest_from_json(data: dict[str, Any]) -> Forest:
    version = data.get("version")

    if version != FORMAT_VERSION:
        raise ParseError(f"Unsupported forest version: {version!r}", row=0)

    try:
        trees = cast(list[Any], data["trees"])
        n_past, step_gap = cast(list[int], data.get("history", [0, 1]))
        config = TrainConfig(**cast(dict[str, Any], data["train_config"]))
        oob = data.get("oob_accuracy")

        return Forest(
            trees=tuple(
                _node_from_json(tree, i) for i, tree in enumerate(trees)
            ),
            feature_names=tuple(
                str(name) for name in cast(list[Any], data["feature_names"])
            ),
            train_config=config,
            importances=tuple(
                float(x) for x in cast(list[Any], data["importances"])
            ),
            oob_accuracy=float(oob) if oob is not None else None,
            history=(int(n_past), int(step_gap)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise

        raise ParseError(f"Malformed forest: {exc}", row=0) from exc


def save_forest(forest: Forest, path: pathlib.Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps(forest_to_json(forest), sort_keys=True, indent=1),
        encoding="utf-8",
    )
    logger.info("Saved %d trees to %s", len(forest.trees), path)


def load_forest(path: pathlib.Path) -> Forest:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(
            f"{path} is not valid JSON: {exc.msg}",
            row=exc.lineno,
        ) from exc

    if not isinstance(data, dict):
        raise ParseError(f"{path} does not hold a forest object", row=0)

    return forest_from_json(cast(dict[str, Any], data))
