"""Accuracy sweeps over (thinking steps x complexity) and frontier statistics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .checkpoint import atomic_write_text
from .model import ReasonerModel
from .perception import collate
from .tasks import generate
from .tasks.graph import nodes_for
from .train import SEED_EVAL

FRONTIER_THRESHOLD = 0.9
MIN_CELL = 500
CSV_COLUMNS = ("steps", "complexity", "accuracy", "n")


@dataclass
class HeatmapReport:
    task: str
    steps: list[int]
    complexities: list[int]
    accuracy: list[list[float]]  # [step index][complexity index]
    counts: list[list[int]]
    train_steps: Optional[tuple[int, int]] = None
    train_complexity: Optional[tuple[int, int]] = None
    meta: dict = field(default_factory=dict)

    def acc(self, T: int, c: int) -> float:
        return self.accuracy[self.steps.index(T)][self.complexities.index(c)]

    def column(self, c: int) -> list[float]:
        j = self.complexities.index(c)
        return [row[j] for row in self.accuracy]

    def validate(self, min_count: int = 1) -> None:
        if not self.steps or not self.complexities:
            raise ValueError("empty heatmap grid")
        for row, crow in zip(self.accuracy, self.counts):
            for a, n in zip(row, crow):
                if not 0.0 <= a <= 1.0:
                    raise ValueError(f"accuracy {a} outside [0, 1]")
                if n < min_count:
                    raise ValueError(f"cell has {n} samples, fewer than {min_count}")

    def to_dict(self) -> dict:
        return asdict(self)


def eval_rng(seed: int, complexity: int) -> np.random.Generator:
    return np.random.default_rng([seed, SEED_EVAL, complexity])


def eval_instances(task: str, complexity: int, count: int, seed: int, id_pool: int = 32) -> list:
    rng = eval_rng(seed, complexity)
    kw = {"n": nodes_for(complexity), "id_pool": id_pool} if task == "graph" else {}
    return generate(task, [complexity] * count, rng, **kw)


@torch.no_grad()
def correct_by_step(model: ReasonerModel, instances: Sequence, T_max: int, chunk: int = 250) -> np.ndarray:
    """Correct-prediction counts after every step 1..T_max over ``instances``."""
    hits = np.zeros(T_max, dtype=np.int64)
    for i in range(0, len(instances), chunk):
        batch = collate(model.task, instances[i:i + chunk])
        for t, logits in enumerate(model(batch, T_max, per_step=True)):
            hits[t] += int((logits.argmax(-1) == batch.labels).sum())
    return hits


def sweep(
    model: ReasonerModel,
    steps: Sequence[int],
    complexities: Sequence[int],
    n_per_cell: int = MIN_CELL,
    seed: int = 0,
    train_steps: Optional[tuple[int, int]] = None,
    train_complexity: Optional[tuple[int, int]] = None,
) -> HeatmapReport:
    """Evaluate each complexity on fresh instances at every requested step count.

    One unroll to ``max(steps)`` serves every column, since the state after ``T`` steps
    does not depend on how many steps follow.
    """
    steps = sorted(int(s) for s in steps)
    if not steps or not complexities:
        raise ValueError("sweep needs at least one step count and one complexity")
    if steps[0] < 1 or steps[-1] > model.cfg.t_max:
        raise ValueError(f"step counts must lie in 1..{model.cfg.t_max}")
    was_training = model.training
    model.eval()
    acc = [[0.0] * len(complexities) for _ in steps]
    cnt = [[0] * len(complexities) for _ in steps]
    for j, c in enumerate(complexities):
        inst = eval_instances(model.task, c, n_per_cell, seed, model.cfg.id_pool)
        hits = correct_by_step(model, inst, steps[-1])
        for i, T in enumerate(steps):
            acc[i][j] = hits[T - 1] / n_per_cell
            cnt[i][j] = n_per_cell
    model.train(was_training)
    return HeatmapReport(model.task, list(steps), [int(c) for c in complexities], acc, cnt,
                         train_steps, train_complexity, {"seed": seed, "n_per_cell": n_per_cell})


@dataclass
class Frontier:
    complexity: int
    min_steps: Optional[int]
    sharpness: Optional[float]


def frontier_stats(report: HeatmapReport, threshold: float = FRONTIER_THRESHOLD) -> list[Frontier]:
    """Smallest step count reaching ``threshold`` per complexity, and the accuracy jump
    from the preceding step count on the axis."""
    out = []
    for j, c in enumerate(report.complexities):
        col = [row[j] for row in report.accuracy]
        hit = next((i for i, a in enumerate(col) if a >= threshold), None)
        if hit is None:
            out.append(Frontier(c, None, None))
        else:
            out.append(Frontier(c, report.steps[hit], col[hit] - col[hit - 1] if hit > 0 else None))
    return out


# -- output -------------------------------------------------------------------

def report_csv(report: HeatmapReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for i, T in enumerate(report.steps):
        for j, c in enumerate(report.complexities):
            w.writerow([T, c, repr(float(report.accuracy[i][j])), report.counts[i][j]])
    return buf.getvalue()


def read_report_csv(text: str, task: str = "") -> HeatmapReport:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty report")
    steps = sorted({int(r["steps"]) for r in rows})
    cx = sorted({int(r["complexity"]) for r in rows})
    acc = [[0.0] * len(cx) for _ in steps]
    cnt = [[0] * len(cx) for _ in steps]
    for r in rows:
        i, j = steps.index(int(r["steps"])), cx.index(int(r["complexity"]))
        acc[i][j] = float(r["accuracy"])
        cnt[i][j] = int(r["n"])
    return HeatmapReport(task, steps, cx, acc, cnt)


def emit(report: HeatmapReport, out_dir: str | Path, stem: Optional[str] = None,
         image_format: str = "png") -> dict[str, Path]:
    """Write ``<stem>.csv``, ``<stem>.json`` (grid plus annotations) and a heatmap image."""
    from .plotting import render_heatmap

    report.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{report.task}_heatmap"
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json", "image": out / f"{stem}.{image_format}"}
    atomic_write_text(paths["csv"], report_csv(report))
    atomic_write_text(paths["json"], json.dumps(report.to_dict(), indent=1))
    render_heatmap(report, paths["image"])
    return paths
