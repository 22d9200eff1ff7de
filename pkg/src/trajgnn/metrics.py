"""Displacement-error metrics.

DE_tau = sqrt((xh_tau - x_tau)^2 + (yh_tau - y_tau)^2)
ADE    = mean of DE_tau over tau = 1..T_f   (mean of roots, not RMSE)
FDE    = DE at the final step

All three are plain meters on [T,2] trajectories.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ShapeError


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"trajectory shapes differ: {pred.shape} vs {gt.shape}")
    if pred.ndim != 2 or pred.shape[1] != 2:
        raise ShapeError(f"trajectories must be [T,2], got {pred.shape}")
    return pred, gt


def displacement_series(pred, gt) -> np.ndarray:
    """DE_tau for every step, shape [T]."""
    pred, gt = _check_pair(pred, gt)
    d = pred - gt
    return np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)


def de_tau(pred, gt, tau: int) -> float:
    """Euclidean error at 1-based step tau."""
    pred, gt = _check_pair(pred, gt)
    if not 1 <= tau <= len(pred):
        raise ContractError(f"tau {tau} outside 1..{len(pred)}")
    return float(displacement_series(pred, gt)[tau - 1])


def ade(pred, gt) -> float:
    """Average displacement error over the whole horizon."""
    return float(displacement_series(pred, gt).mean())


def fde(pred, gt) -> float:
    """Final displacement error."""
    pred, gt = _check_pair(pred, gt)
    return de_tau(pred, gt, len(pred))


@dataclass
class SampleResult:
    """Per-sample evaluation record: scene id plus the DE series."""

    scene_id: int
    de: np.ndarray

    @classmethod
    def from_pair(cls, scene_id: int, pred, gt) -> "SampleResult":
        return cls(scene_id=scene_id, de=displacement_series(pred, gt))


def horizon_seconds(t_f: int, frames_per_second: int = 10) -> list[int]:
    """Whole seconds representable within a t_f-frame horizon, capped at 5."""
    return [k for k in range(1, 6) if k * frames_per_second <= t_f]


def _truncated_stats(de_rows: np.ndarray, seconds: list[int],
                     fps: int = 10) -> dict[str, float]:
    out: dict[str, float] = {}
    for k in seconds:
        steps = k * fps
        out[f"ade_{k}s"] = float(de_rows[:, :steps].mean())
        out[f"fde_{k}s"] = float(de_rows[:, steps - 1].mean())
    out["ade"] = float(de_rows.mean())
    out["fde"] = float(de_rows[:, -1].mean())
    return out


def aggregate(results, group_key: str = "scene") -> list[dict]:
    """Group per-sample results into an ADE/FDE table.

    ``group_key="scene"``: one row per scene id, truncated-horizon ADE
    and the DE at k seconds for every whole second k the horizon covers.
    ``group_key="horizon"``: one row per horizon second, pooled over all
    samples. Groups that end up empty are dropped with a warning.
    """
    results = list(results)
    if not results:
        raise ContractError("aggregate needs at least one result")
    if group_key not in ("scene", "horizon"):
        raise ContractError(f"unknown group key {group_key!r}")
    t_f = len(results[0].de)
    for r in results:
        if len(r.de) != t_f:
            raise ShapeError("all results must share one prediction horizon")
    seconds = horizon_seconds(t_f)

    if group_key == "scene":
        table = []
        for scene in sorted({r.scene_id for r in results}):
            rows = np.stack([r.de for r in results if r.scene_id == scene])
            if rows.size == 0:
                warnings.warn(f"scene {scene} has no results; omitted")
                continue
            entry: dict = {"scene": scene, "n": len(rows)}
            entry.update(_truncated_stats(rows, seconds))
            table.append(entry)
        return table

    rows = np.stack([r.de for r in results])
    table = []
    for k in seconds:
        steps = k * 10
        table.append({
            "horizon_s": k,
            "n": len(rows),
            "ade": float(rows[:, :steps].mean()),
            "fde": float(rows[:, steps - 1].mean()),
        })
    return table


def table_to_csv(table: list[dict]) -> str:
    """Render an aggregate table as comma-separated text."""
    if not table:
        return ""
    cols = list(table[0].keys())
    lines = [",".join(cols)]
    for row in table:
        lines.append(",".join(repr(row[c]) if isinstance(row[c], float)
                              else str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"
