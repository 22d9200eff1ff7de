"""Training loop, evaluation and the experiment grid.

One optimizer step per mini-batch, Adam with the halving learning-rate
schedule, loss = batch-mean ADE in the target frame. The checkpoint at
the best validation ADE is kept. Everything is deterministic given the
seeds: parameter init comes from the model seed, data order from the
train seed, and all kernels are deterministic.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ContractError, TrainingDiverged
from .geometry import Sample
from .layers import Adam, lr_at_epoch
from .metrics import SampleResult, aggregate, horizon_seconds
from .model import Model, ModelConfig, ade_loss, config_from_dict, config_to_dict


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    epochs: int = 10
    batch_size: int = 32
    base_lr: float = 1e-3
    lr_milestones: tuple[int, ...] = (1, 2, 4, 6)
    seed: int = 0

    def __post_init__(self):
        self.lr_milestones = tuple(self.lr_milestones)
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")

    def hash(self) -> str:
        raw = json.dumps(
            {"model": config_to_dict(self.model), "epochs": self.epochs,
             "batch_size": self.batch_size, "base_lr": self.base_lr,
             "lr_milestones": list(self.lr_milestones), "seed": self.seed},
            sort_keys=True,
        )
        return hashlib.sha256(raw.encode()).hexdigest()[:16]

    def run_name(self) -> str:
        m = self.model
        return (f"{m.variant}-d{m.state_dims}-th{m.history_len}-tf{m.future_len}"
                f"-{m.gnn_kind}-{m.rnn_kind}-s{self.seed}")


@dataclass
class RunRecord:
    name: str
    config_hash: str
    train_losses: list[float]
    val_ade_per_epoch: list[float]
    val_metrics: dict
    checkpoint_path: str
    wall_time_s: float
    epochs: int
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(config: TrainConfig, train_samples: list[Sample],
          val_samples: list[Sample], out_dir) -> RunRecord:
    """Train per config; returns the record and leaves files in out_dir.

    Writes ``<run>.ckpt`` (best validation ADE) and ``<run>.json``.
    Raises TrainingDiverged naming the epoch and batch on a
    non-finite loss.
    """
    if not train_samples:
        raise ContractError("training set is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = config.run_name()
    ckpt_path = out_dir / f"{name}.ckpt"

    started = time.perf_counter()
    model = Model(config.model)
    optimizer = Adam(model.parameters())
    rng = np.random.default_rng(np.random.PCG64(config.seed))

    futures = {id(s): np.asarray(s.future) for s in train_samples}
    train_losses: list[float] = []
    val_curve: list[float] = []
    best_ade = np.inf

    for epoch in range(1, config.epochs + 1):
        lr = lr_at_epoch(epoch, config.base_lr, config.lr_milestones)
        order = rng.permutation(len(train_samples))
        total, count = 0.0, 0
        for batch_no, idx in enumerate(_batches(len(train_samples),
                                                config.batch_size, order)):
            batch = [train_samples[i] for i in idx]
            pred = model.forward_batch(batch, training=True)
            loss = ade_loss(pred, np.stack([futures[id(s)] for s in batch]))
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss in epoch {epoch}, batch {batch_no} "
                    f"(samples {idx.tolist()})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr)
            total += value * len(batch)
            count += len(batch)
        train_losses.append(total / count)

        if val_samples:
            summary, _ = evaluate(model, val_samples)
            val_curve.append(summary["ade"])
            is_best = summary["ade"] < best_ade
            if is_best:
                best_ade = summary["ade"]
        else:
            is_best = epoch == config.epochs  # no val set: keep the final state
        if is_best:
            save_checkpoint(ckpt_path, model)

    best = load_checkpoint(ckpt_path)
    if val_samples:
        val_metrics, _ = evaluate(best, val_samples)
    else:
        val_metrics = {}
    record = RunRecord(
        name=name,
        config_hash=config.hash(),
        train_losses=train_losses,
        val_ade_per_epoch=val_curve,
        val_metrics=val_metrics,
        checkpoint_path=str(ckpt_path),
        wall_time_s=time.perf_counter() - started,
        epochs=config.epochs,
        config=json.loads(json.dumps(
            {"model": config_to_dict(config.model), "epochs": config.epochs,
             "batch_size": config.batch_size, "base_lr": config.base_lr,
             "lr_milestones": list(config.lr_milestones), "seed": config.seed}
        )),
    )
    (out_dir / f"{name}.json").write_text(record.to_json())
    return record


def evaluate(model_or_path, samples: list[Sample],
             batch_size: int = 64) -> tuple[dict, list[SampleResult]]:
    """Frozen-parameter metrics over samples.

    Returns (summary, per-sample results). The summary carries overall
    ade/fde plus DE at each whole second the horizon covers.
    """
    model = (model_or_path if isinstance(model_or_path, Model)
             else load_checkpoint(model_or_path))
    if not samples:
        raise ContractError("evaluation set is empty")
    results: list[SampleResult] = []
    for start in range(0, len(samples), batch_size):
        batch = samples[start : start + batch_size]
        pred = model.forward_batch(batch, training=False).data
        for s, p in zip(batch, pred):
            results.append(SampleResult.from_pair(s.scene_id, p, s.future))
    de_rows = np.stack([r.de for r in results])
    summary = {"n": len(results),
               "ade": float(de_rows.mean()),
               "fde": float(de_rows[:, -1].mean())}
    for k in horizon_seconds(de_rows.shape[1]):
        summary[f"ade_{k}s"] = float(de_rows[:, : k * 10].mean())
        summary[f"de_{k}s"] = float(de_rows[:, k * 10 - 1].mean())
    return summary, results


def per_scene_table(results: list[SampleResult]) -> list[dict]:
    return aggregate(results, "scene")


def run_grid(cells: list[TrainConfig], train_samples: list[Sample],
             val_samples: list[Sample], out_dir) -> list[RunRecord]:
    """Train and evaluate every cell on one shared split.

    Samples are adapted per cell (history suffix, future prefix, state
    slice), so one preprocessed set at the largest horizons serves the
    whole grid. Writes ``grid_manifest.json`` indexing the records.
    """
    from .geometry import adapt_samples

    if not cells:
        raise ContractError("empty grid")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for config in cells:
        m = config.model
        records.append(train(
            config,
            adapt_samples(train_samples, m.history_len, m.future_len, m.state_dims),
            adapt_samples(val_samples, m.history_len, m.future_len, m.state_dims),
            out_dir,
        ))
    manifest = [{
        "name": r.name, "config_hash": r.config_hash,
        "record": f"{r.name}.json", "checkpoint": Path(r.checkpoint_path).name,
        "val_ade": r.val_metrics.get("ade"), "val_fde": r.val_metrics.get("fde"),
    } for r in records]
    (out_dir / "grid_manifest.json").write_text(json.dumps(manifest, indent=2))
    return records


def load_grid_records(manifest_path) -> list[RunRecord]:
    manifest_path = Path(manifest_path)
    entries = json.loads(manifest_path.read_text())
    return [
        RunRecord.from_json((manifest_path.parent / e["record"]).read_text())
        for e in entries
    ]
