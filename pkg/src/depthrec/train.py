"""Training loop: random unroll depth per batch, loss at the final step only (silent) or
averaged over every step (intermediate)."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import checkpoint
from .core import StepTrace
from .model import ReasonerModel
from .perception import Batch, collate
from .readout import silent_loss
from .tasks import generate

log = logging.getLogger(__name__)

# Subsystem keys mixed into the root seed so streams never collide.
SEED_INIT, SEED_TRAIN, SEED_EVAL, SEED_GEN = 0, 1, 2, 3

DEFAULT_STEP_RANGE = {"graph": (5, 8), "logic": (4, 16), "family": (1, 12)}
DEFAULT_COMPLEXITY_RANGE = {"graph": (1, 5), "logic": (1, 8), "family": (2, 5)}
DEFAULT_BATCH = {"graph": 128, "logic": 128, "family": 64}
METRIC_COLUMNS = ("step", "loss", "train_acc", "sampled_T", "wallclock")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    task: str = "graph"
    t_lo: int = 5
    t_hi: int = 8
    complexity_lo: int = 1
    complexity_hi: int = 5
    batch_size: int = 128
    lr: float = 3e-4
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    warmup: int = 500
    lr_schedule: str = "constant"  # or "cosine"
    total_steps: int = 10000
    seed: int = 0
    mode: str = "silent"  # or "intermediate"
    log_every: int = 50
    checkpoint_every: int = 0  # 0: only at the end
    graph_nodes: int = 16

    def validate(self, t_max: int) -> None:
        if self.mode not in ("silent", "intermediate"):
            raise ValueError(f"mode must be silent or intermediate, got {self.mode!r}")
        if not 1 <= self.t_lo <= self.t_hi:
            raise ValueError(f"step range [{self.t_lo}, {self.t_hi}] is empty")
        if self.t_hi > t_max:
            raise ValueError(f"t_hi={self.t_hi} exceeds t_max={t_max}")
        if self.complexity_lo > self.complexity_hi:
            raise ValueError("complexity range is empty")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def default_train_config(task: str, **overrides) -> TrainConfig:
    t_lo, t_hi = DEFAULT_STEP_RANGE[task]
    c_lo, c_hi = DEFAULT_COMPLEXITY_RANGE[task]
    base = TrainConfig(task=task, t_lo=t_lo, t_hi=t_hi, complexity_lo=c_lo, complexity_hi=c_hi,
                       batch_size=DEFAULT_BATCH[task])
    for k, v in overrides.items():
        setattr(base, k, v)
    return base


def batch_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, SEED_TRAIN, step])


def sample_training_batch(cfg: TrainConfig, step: int, id_pool: int) -> tuple[int, Batch]:
    rng = batch_rng(cfg.seed, step)
    T = int(rng.integers(cfg.t_lo, cfg.t_hi + 1))
    cx = rng.integers(cfg.complexity_lo, cfg.complexity_hi + 1, size=cfg.batch_size).tolist()
    kw = {"n": cfg.graph_nodes, "id_pool": id_pool} if cfg.task == "graph" else {}
    return T, collate(cfg.task, generate(cfg.task, cx, rng, **kw))


def lr_at(cfg: TrainConfig, step: int) -> float:
    warm = min(1.0, (step + 1) / cfg.warmup) if cfg.warmup > 0 else 1.0
    if cfg.lr_schedule == "cosine" and cfg.total_steps > cfg.warmup:
        progress = max(0.0, (step - cfg.warmup) / (cfg.total_steps - cfg.warmup))
        return cfg.lr * warm * 0.5 * (1 + math.cos(math.pi * min(1.0, progress)))
    return cfg.lr * warm


def compute_loss(model: ReasonerModel, batch: Batch, T: int, mode: str,
                 trace: Optional[StepTrace] = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Return (loss, final-step logits)."""
    if mode == "silent":
        logits = model(batch, T, trace=trace)
        return silent_loss(logits, batch.labels), logits
    per_step = model(batch, T, per_step=True, trace=trace)
    loss = torch.stack([silent_loss(lg, batch.labels) for lg in per_step]).mean()
    return loss, per_step[-1]


def make_optimizer(model: torch.nn.Module, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


@dataclass
class TrainResult:
    model: ReasonerModel
    metrics: list[dict] = field(default_factory=list)
    steps_done: int = 0


def _dump_divergence(out_dir: Optional[Path], info: dict) -> None:
    if out_dir is not None:
        checkpoint.atomic_write_text(out_dir / "divergence.json", json.dumps(info, indent=2))


def train(
    cfg: TrainConfig,
    model: ReasonerModel,
    out_dir: str | Path | None = None,
    resume: bool = True,
    on_log: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    cfg.validate(model.cfg.t_max)
    if cfg.task != model.task:
        raise ValueError(f"train config is for {cfg.task!r} but model is for {model.task!r}")
    out = Path(out_dir) if out_dir is not None else None
    opt = make_optimizer(model, cfg)
    start, metrics = 0, []
    if out is not None and resume and (out / "model.ckpt").exists():
        meta = checkpoint.load_into(out / "model.ckpt", model)
        opt.load_state_dict(torch.load(out / "optimizer.pt", weights_only=False))
        start = int(meta.get("step", 0))
        metrics = _read_metrics(out / "metrics.csv")
        metrics = [m for m in metrics if m["step"] <= start]
        log.info("resumed from step %d", start)

    model.train()
    acc_loss = acc_hits = acc_n = acc_T = acc_batches = 0
    t0 = time.time() - (metrics[-1]["wallclock"] if metrics else 0.0)
    for step in range(start, cfg.total_steps):
        T, batch = sample_training_batch(cfg, step, model.cfg.id_pool)
        for g in opt.param_groups:
            g["lr"] = lr_at(cfg, step)
        try:
            loss, logits = compute_loss(model, batch, T, cfg.mode)
        except FloatingPointError:
            loss = logits = torch.tensor(float("nan"))
        if not torch.isfinite(loss):
            trace = StepTrace()
            with torch.no_grad():
                try:
                    compute_loss(model, batch, T, cfg.mode, trace=trace)
                except FloatingPointError:
                    pass
            info = {"step": step, "T": T, "loss": float(loss), "state_norms": trace.state_norms,
                    "gate_means": trace.gate_means}
            _dump_divergence(out, info)
            raise TrainingDiverged(f"non-finite loss at step {step} (T={T}); gate means {trace.gate_means}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()

        acc_loss += loss.item() * len(batch)
        acc_hits += int((logits.argmax(-1) == batch.labels).sum())
        acc_n += len(batch)
        acc_T += T
        acc_batches += 1
        done = step + 1
        if done % cfg.log_every == 0 or done == cfg.total_steps:
            row = {"step": done, "loss": acc_loss / acc_n, "train_acc": acc_hits / acc_n,
                   "sampled_T": acc_T / acc_batches, "wallclock": time.time() - t0}
            metrics.append(row)
            if on_log is not None:
                on_log(row)
            log.info("step %d loss %.4f acc %.3f", done, row["loss"], row["train_acc"])
            acc_loss = acc_hits = acc_n = acc_T = acc_batches = 0
        if out is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0 and done < cfg.total_steps:
            _save_state(out, model, opt, cfg, done, metrics)

    if out is not None:
        _save_state(out, model, opt, cfg, cfg.total_steps, metrics)
    model.eval()
    return TrainResult(model, metrics, cfg.total_steps)


def _save_state(out: Path, model, opt, cfg: TrainConfig, step: int, metrics: list[dict]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    meta = {"step": step, "model": model.cfg.to_dict(), "train": cfg.to_dict()}
    checkpoint.save(out / "model.ckpt", model, meta)
    buf = io.BytesIO()
    torch.save(opt.state_dict(), buf)
    checkpoint.atomic_write_bytes(out / "optimizer.pt", buf.getvalue())
    checkpoint.atomic_write_text(out / "metrics.csv", metrics_csv(metrics))


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in METRIC_COLUMNS})
    return buf.getvalue()


def _read_metrics(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path) as fh:
        return [{"step": int(r["step"]), "loss": float(r["loss"]), "train_acc": float(r["train_acc"]),
                 "sampled_T": float(r["sampled_T"]), "wallclock": float(r["wallclock"])}
                for r in csv.DictReader(fh)]
