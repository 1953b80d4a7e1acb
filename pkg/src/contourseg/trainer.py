"""Deterministic training and evaluation harness.

Adam with bias correction, the two learning-rate schedules, per-sample
gradient accumulation, best-validation-DSC checkpointing and a seeded
ablation driver. Every random draw comes from generators seeded by
``TrainConfig.seed``, so a run is a pure function of (config, data).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Manifest, Sample, augment
from .losses import LOSSES, NEEDS_CONTOURS, LossConfig, contour_maps_for
from .metrics import MetricReport, dsc_masks, evaluate_labels
from .network import ModelParams, NetworkConfig, check_params, init_model, load_checkpoint, pdanet_forward, save_checkpoint
from .tensor import NonFiniteError, Tensor, no_grad
from .validation import LabelVolume

log = logging.getLogger(__name__)

SCHEDULES = ("halve", "linear")


class TrainingDivergedError(FloatingPointError):
    """Loss or gradients became non-finite."""

    def __init__(self, epoch: int, step: int, detail: str):
        super().__init__(f"training diverged at epoch {epoch}, step {step}: {detail}")
        self.epoch, self.step = epoch, step


# -- optimiser ------------------------------------------------------------------
@dataclass
class AdamMoments:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays: Dict[str, np.ndarray]) -> "AdamMoments":
        return cls({k: np.zeros_like(a) for k, a in arrays.items()},
                   {k: np.zeros_like(a) for k, a in arrays.items()}, 0)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], moments: AdamMoments, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> Tuple[Dict[str, np.ndarray], AdamMoments]:
    """One bias-corrected Adam update; returns new parameter arrays and moments (step ``t + 1``)."""
    if set(params) != set(grads):
        raise ValueError("params and grads must have the same names")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter has {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {k!r}")
    t = moments.t + 1
    c1, c2 = 1.0 - beta1 ** t, 1.0 - beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = beta1 * moments.m[k] + (1.0 - beta1) * g
        v = beta2 * moments.v[k] + (1.0 - beta2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamMoments(new_m, new_v, t)


# -- schedules --------------------------------------------------------------------
def learning_rate(epoch: int, base_lr: float, kind: str = "halve", epochs: int = 60,
                  milestones: Sequence[int] = (20, 40), decay_start: int = 20, final_lr: float = 1e-6) -> float:
    """Learning rate for the 0-based ``epoch``.

    ``"halve"`` halves once for every milestone already reached.
    ``"linear"`` holds ``base_lr`` until ``decay_start`` and then falls
    linearly to ``final_lr`` at the last epoch.
    """
    if kind == "halve":
        return base_lr * 0.5 ** sum(epoch >= m for m in milestones)
    if kind == "linear":
        last = epochs - 1
        if epoch < decay_start or last <= decay_start:
            return base_lr
        frac = (epoch - decay_start) / (last - decay_start)
        return base_lr + (final_lr - base_lr) * frac
    raise ValueError(f"unknown schedule {kind!r}; choose from {SCHEDULES}")


# -- configuration ------------------------------------------------------------------
@dataclass(frozen=True)
class TrainConfig:
    loss: str = "cwcd"
    loss_config: LossConfig = field(default_factory=LossConfig)
    network: NetworkConfig = field(default_factory=lambda: NetworkConfig(1, 5, base_channels=4))
    epochs: int = 30
    batch_size: int = 2
    lr: float = 3e-4
    schedule: str = "halve"
    milestones: Tuple[int, ...] = (20, 40)
    decay_start: int = 20
    final_lr: float = 1e-6
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {sorted(LOSSES)}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}; choose from {SCHEDULES}")
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))

    def lr_at(self, epoch: int) -> float:
        return learning_rate(epoch, self.lr, self.schedule, self.epochs, self.milestones,
                             self.decay_start, self.final_lr)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_config"] = self.loss_config.to_dict()
        d["network"] = self.network.to_dict()
        d["milestones"] = list(self.milestones)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["loss_config"] = LossConfig(**d.get("loss_config", {}))
        if "network" in d:
            d["network"] = NetworkConfig.from_dict(d["network"])
        if "milestones" in d:
            d["milestones"] = tuple(d["milestones"])
        return cls(**d)


@dataclass
class TrainRun:
    params: ModelParams
    moments: AdamMoments
    epoch: int = 0
    best_dsc: float = -math.inf
    best_epoch: int = -1
    history: List[dict] = field(default_factory=list)


# -- forward helpers --------------------------------------------------------------
def _batch(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.intensity for s in samples])
    y = np.stack([s.labels.labels for s in samples])
    return x, y


def sample_loss(params: ModelParams, cfg: TrainConfig, sample: Sample) -> Tensor:
    x, y = _batch([sample])
    logits = pdanet_forward(Tensor(x), params, cfg.network)
    maps = contour_maps_for(y, cfg.network.num_classes, cfg.loss_config) if cfg.loss in NEEDS_CONTOURS else None
    return LOSSES[cfg.loss](logits, y, maps, cfg.loss_config)


def predict_labels(params: ModelParams, net: NetworkConfig, intensity: np.ndarray) -> np.ndarray:
    """Arg-max class per voxel for a ``[N, C, D, H, W]`` batch (one sample at a time)."""
    out = []
    with no_grad():
        for i in range(intensity.shape[0]):
            logits = pdanet_forward(Tensor(intensity[i:i + 1]), params, net).data
            out.append(np.argmax(logits[0], axis=0))
    return np.stack(out)


def per_class_dsc(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    return np.array([dsc_masks(pred == c, gt == c) for c in range(1, num_classes)])


def validation_dsc(params: ModelParams, net: NetworkConfig, samples: Sequence[Sample]) -> np.ndarray:
    """``[num_samples, M - 1]`` foreground DSC on un-augmented samples."""
    rows = []
    for s in samples:
        pred = predict_labels(params, net, s.intensity[None])[0]
        rows.append(per_class_dsc(pred, s.labels.labels, net.num_classes))
    return np.array(rows)


# -- training loop ----------------------------------------------------------------
def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def train(cfg: TrainConfig, train_samples: Sequence[Sample], val_samples: Sequence[Sample],
          out_dir=None, init: Optional[ModelParams] = None) -> TrainRun:
    """Train from scratch (or ``init``) and keep the epoch with the best mean validation DSC.

    With ``out_dir`` set, writes ``metrics.csv`` (one row per epoch),
    ``best.ckpt`` and ``summary.json``.
    """
    net = cfg.network
    for s in list(train_samples) + list(val_samples):
        if s.num_classes != net.num_classes:
            raise ValueError(f"sample has {s.num_classes} classes, network expects {net.num_classes}")
    if not train_samples or not val_samples:
        raise ValueError("train and validation splits must be non-empty")
    params = init if init is not None else init_model(net, cfg.seed)
    check_params(params, net)
    run = TrainRun(params, AdamMoments.zeros_like(params.arrays()))
    order_rng = np.random.default_rng([cfg.seed, 1])
    aug_rng = np.random.default_rng([cfg.seed, 2])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    writer = None
    csv_file = None
    header = ["epoch", "lr", "loss", "val_mean_dsc"] + [f"val_dsc_{c}" for c in range(1, net.num_classes)]
    names = list(params)
    try:
        if out is not None:
            csv_file = open(out / "metrics.csv", "w", newline="")
            writer = csv.writer(csv_file, lineterminator="\n")
            writer.writerow(header)
        for epoch in range(cfg.epochs):
            lr = cfg.lr_at(epoch)
            order = order_rng.permutation(len(train_samples))
            losses = []
            for step, start in enumerate(range(0, len(order), cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                acc = {k: np.zeros_like(params[k].data) for k in names}
                for i in idx:
                    s = train_samples[i]
                    if cfg.augment:
                        s = augment(s, aug_rng)
                    params.zero_grad()
                    try:
                        loss = sample_loss(params, cfg, s)
                        if not math.isfinite(loss.item()):
                            raise NonFiniteError("loss is not finite")
                        loss.backward()
                    except NonFiniteError as exc:
                        raise TrainingDivergedError(epoch, step, str(exc)) from None
                    losses.append(loss.item())
                    for k in names:
                        if params[k].grad is not None:
                            acc[k] += params[k].grad
                grads = {k: a / len(idx) for k, a in acc.items()}
                try:
                    new, run.moments = adam_step(params.arrays(), grads, run.moments, lr)
                except FloatingPointError as exc:
                    raise TrainingDivergedError(epoch, step, str(exc)) from None
                for k in names:
                    params[k].data[...] = new[k]
            params.zero_grad()
            val = validation_dsc(params, net, val_samples).mean(axis=0)
            mean_dsc = float(val.mean())
            row = {"epoch": epoch, "lr": lr, "loss": float(np.mean(losses)), "val_mean_dsc": mean_dsc}
            row.update({f"val_dsc_{c}": float(v) for c, v in enumerate(val, start=1)})
            run.history.append(row)
            run.epoch = epoch + 1
            if writer is not None:
                writer.writerow([_fmt(row[h]) for h in header])
                csv_file.flush()
            # ties keep the earlier epoch
            if mean_dsc > run.best_dsc:
                run.best_dsc, run.best_epoch = mean_dsc, epoch
                if out is not None:
                    save_checkpoint(out / "best.ckpt", params, net,
                                    {"epoch": epoch, "val_mean_dsc": mean_dsc, "train": cfg.to_dict()})
            log.info("epoch %d lr %.3g loss %.5f val dsc %.4f", epoch, lr, row["loss"], mean_dsc)
    finally:
        if csv_file is not None:
            csv_file.close()
    if out is not None:
        summary = {"config": cfg.to_dict(), "best_epoch": run.best_epoch, "best_val_mean_dsc": run.best_dsc,
                   "epochs_run": run.epoch, "final": run.history[-1]}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return run


def train_from_manifest(cfg: TrainConfig, manifest: Manifest, out_dir=None) -> TrainRun:
    return train(cfg, manifest.load("train"), manifest.load("val"), out_dir)


# -- evaluation ---------------------------------------------------------------------
@dataclass
class Evaluation:
    reports: List[MetricReport]

    def per_class(self, metric: str = "dsc") -> np.ndarray:
        """``[num_samples, num_fg_classes]`` values (NaN where undefined)."""
        return np.array([[getattr(m, metric) for _, m in sorted(r.per_class.items())] for r in self.reports])

    def summary(self) -> dict:
        out = {}
        for metric in ("dsc", "hd95", "assd"):
            vals = self.per_class(metric)
            classes = sorted(self.reports[0].per_class)
            per = {}
            for j, c in enumerate(classes):
                col = vals[:, j][~np.isnan(vals[:, j])]
                per[str(c)] = {"mean": float(col.mean()) if col.size else None,
                               "std": float(col.std()) if col.size else None, "n": int(col.size)}
            means = [v["mean"] for v in per.values() if v["mean"] is not None]
            out[metric] = {"per_class": per, "mean": float(np.mean(means)) if means else None}
        return out


def evaluate(params: ModelParams, net: NetworkConfig, samples: Sequence[Sample]) -> Evaluation:
    check_params(params, net)
    reports = []
    for s in samples:
        if s.num_classes != net.num_classes:
            raise ValueError(f"sample has {s.num_classes} classes, checkpoint network expects {net.num_classes}")
        if s.intensity.shape[0] != net.in_channels:
            raise ValueError(f"sample has {s.intensity.shape[0]} channels, network expects {net.in_channels}")
        pred = predict_labels(params, net, s.intensity[None])[0]
        reports.append(evaluate_labels(LabelVolume(pred, net.num_classes), s.labels))
    return Evaluation(reports)


def evaluate_checkpoint(path, samples: Sequence[Sample]) -> Evaluation:
    params, net, _ = load_checkpoint(path)
    return evaluate(params, net, samples)
