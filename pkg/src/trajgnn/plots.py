"""Figure rendering for reports: SVG files plus numeric CSV sidecars.

Figures are written, never shown. The SVG output is byte-reproducible:
fixed hash salt, no embedded creation date.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "trajgnn"

import matplotlib.pyplot as plt
import numpy as np

from .errors import ContractError
from .geometry import RASTER_HALF_EXTENT, Sample, from_target_frame
from .metrics import horizon_seconds


def _save(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path


def _sidecar(out_path, header: list[str], rows: list[list]) -> Path:
    sidecar = Path(out_path).with_suffix(".csv")
    sidecar.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row))
    sidecar.write_text("\n".join(lines) + "\n")
    return sidecar


def horizon_curve(records, out_path) -> Path:
    """Displacement error against horizon seconds, one line per run."""
    if not records:
        raise ContractError("no run records to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    rows = []
    for record in records:
        seconds = [k for k in range(1, 6) if f"de_{k}s" in record.val_metrics]
        if not seconds:
            raise ContractError(f"run {record.name} has no horizon metrics")
        values = [record.val_metrics[f"de_{k}s"] for k in seconds]
        ax.plot(seconds, values, marker="o", label=record.name)
        for k, v in zip(seconds, values):
            rows.append([record.name, k, v])
    ax.set_xlabel("prediction horizon (s)")
    ax.set_ylabel("displacement error (m)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _sidecar(out_path, ["run", "horizon_s", "de_m"], rows)
    return _save(fig, out_path)


def ablation_bars(records, out_path) -> Path:
    """Validation ADE/FDE per run as grouped bars."""
    if not records:
        raise ContractError("no run records to plot")
    names = [r.name for r in records]
    ades = [r.val_metrics.get("ade", np.nan) for r in records]
    fdes = [r.val_metrics.get("fde", np.nan) for r in records]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6, len(names) * 1.2), 4))
    ax.bar(x - 0.2, ades, width=0.4, label="ADE")
    ax.bar(x + 0.2, fdes, width=0.4, label="FDE")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("error (m)")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    _sidecar(out_path, ["run", "ade_m", "fde_m"],
             [[n, a, f] for n, a, f in zip(names, ades, fdes)])
    return _save(fig, out_path)


def trajectory_overlay(sample: Sample, prediction: np.ndarray, out_path) -> Path:
    """History, ground truth and prediction in the world frame.

    The dashed square is the extent of the model's map crop. The CSV
    sidecar carries the same points.
    """
    pred_world = from_target_frame(np.asarray(prediction), sample.pose)
    gt_world = from_target_frame(sample.future, sample.pose)
    hist_world = from_target_frame(sample.histories[0][:, :2], sample.pose)

    e = RASTER_HALF_EXTENT
    corners = np.array([[-e, -e], [e, -e], [e, e], [-e, e], [-e, -e]])
    box = from_target_frame(corners, sample.pose)

    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(
        sample.raster.grid, cmap="gray_r", alpha=0.25,
        extent=(-e, e, -e, e), origin="upper",
        transform=_raster_transform(sample, ax),
    )
    ax.plot(box[:, 0], box[:, 1], "k--", lw=0.8, label="map crop")
    ax.plot(hist_world[:, 0], hist_world[:, 1], "o-", color="tab:gray",
            ms=2, lw=1, label="history")
    ax.plot(gt_world[:, 0], gt_world[:, 1], "g.-", ms=3, lw=1, label="ground truth")
    ax.plot(pred_world[:, 0], pred_world[:, 1], "r.-", ms=3, lw=1, label="prediction")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(fontsize=8)
    fig.tight_layout()

    rows = []
    for kind, pts in (("history", hist_world), ("ground_truth", gt_world),
                      ("prediction", pred_world)):
        for i, (x, y) in enumerate(pts):
            rows.append([kind, i, float(x), float(y)])
    _sidecar(out_path, ["kind", "step", "x_m", "y_m"], rows)
    return _save(fig, out_path)


def _raster_transform(sample: Sample, ax):
    from matplotlib import transforms

    x0, y0, psi0 = sample.pose
    return (transforms.Affine2D().rotate(psi0).translate(x0, y0)
            + ax.transData)


def loss_curves(records, out_path) -> Path:
    """Per-epoch training loss for each run."""
    if not records:
        raise ContractError("no run records to plot")
    fig, ax = plt.subplots(figsize=(6, 4))
    rows = []
    for record in records:
        epochs = np.arange(1, len(record.train_losses) + 1)
        ax.plot(epochs, record.train_losses, label=record.name)
        for e, v in zip(epochs, record.train_losses):
            rows.append([record.name, int(e), v])
    ax.set_xlabel("epoch")
    ax.set_ylabel("train ADE (m)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _sidecar(out_path, ["run", "epoch", "loss_m"], rows)
    return _save(fig, out_path)
