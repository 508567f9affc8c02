"""Regression metrics reported per epoch and per benchmark cell."""
from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError

METRIC_NAMES = ("rmse", "mae", "r2", "se")


def compute_metrics(preds, targets) -> dict[str, float | None]:
    """RMSE, MAE, R^2 and SE.

    SE is the standard error of the absolute errors, std(|e|)/sqrt(n) with the
    population std. R^2 is ``None`` when the targets are constant.
    """
    p = np.asarray(preds, dtype=np.float64).reshape(-1)
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if p.shape != t.shape or p.size == 0:
        raise DimensionError(f"metrics need equal non-empty lengths, got {p.size} and {t.size}")
    err = p - t
    abs_err = np.abs(err)
    ss_res = float(np.sum(err**2))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    return {
        "rmse": math.sqrt(ss_res / t.size),
        "mae": float(abs_err.mean()),
        "r2": None if np.all(t == t[0]) else 1.0 - ss_res / ss_tot,
        "se": float(abs_err.std() / math.sqrt(t.size)),
    }


def mean_metrics(rows: list[dict]) -> dict[str, float | None]:
    """Arithmetic mean of each metric over rows; a metric missing in any row stays missing."""
    out = {}
    for k in METRIC_NAMES:
        vals = [r[k] for r in rows]
        out[k] = None if any(v is None for v in vals) else float(np.mean(vals))
    return out
