from __future__ import annotations

import logging

import numpy as np
import pandas as pd
import scipy.stats

from lanechange.errors import ParameterError, ShapeError
from lanechange.forest.ensemble import Forest, predict_proba_batch
from lanechange.model import FloatArray

logger = logging.getLogger(__name__)


def sweep_values(lo: float, hi: float, step: float) -> FloatArray:
    if lo >= hi or step <= 0:
        raise ParameterError(
            f"Sweep needs lo < hi and step > 0, got {lo}, {hi}, {step}",
        )

    return np.arange(lo, hi + step / 2, step)


def sensitivity_sweep(
    forest: Forest,
    frozen: FloatArray,
    feature: str,
    lo: float = 0.0,
    hi: float = 25.0,
    step: float = 1.0,
) -> pd.DataFrame:
    """Class probabilities as one feature varies and the rest stay fixed."""
    if feature not in forest.feature_names:
        raise ParameterError(f"Forest has no feature named {feature}")

    base = np.asarray(frozen, dtype=np.float64)

    if base.shape != (forest.n_features,):
        raise ShapeError(
            f"Frozen vector has shape {base.shape}, expected "
            f"({forest.n_features},)",
        )

    values = sweep_values(lo, hi, step)
    rows = np.tile(base, (values.size, 1))
    rows[:, forest.feature_names.index(feature)] = values
    probabilities = predict_proba_batch(forest, rows)
    logger.info(
        "Swept %s over %d values in [%g, %g]",
        feature,
        values.size,
        lo,
        hi,
    )

    return pd.DataFrame(
        {
            "value": values,
            "lane_keep": probabilities[:, 0],
            "lane_change": probabilities[:, 1],
        },
    )


def sweep_correlation(frame: pd.DataFrame) -> float:
    """Spearman rank correlation of the swept value with p(lane_change)."""
    change = frame["lane_change"].to_numpy(np.float64)

    if change.size < 2 or np.ptp(change) == 0:
        return float("nan")

    result = scipy.stats.spearmanr(
        frame["value"].to_numpy(np.float64),
        change,
    )

    return float(result.statistic)
