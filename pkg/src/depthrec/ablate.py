"""Silent vs. intermediate supervision on the same task, data stream and seed."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from .checkpoint import atomic_write_text
from .evaluate import correct_by_step, eval_instances
from .model import ModelConfig, ReasonerModel, build_model
from .train import TrainConfig, train

ABLATION_COLUMNS = ("mode", "step1_deep_acc", "sufficient_ood_acc", "sufficient_steps", "n")
MODES = ("silent", "intermediate")


@dataclass
class AblationRow:
    mode: str
    step1_deep_acc: float
    sufficient_ood_acc: float
    sufficient_steps: int
    n: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def probe(model: ReasonerModel, deep: Sequence[int], ood: Sequence[int], sufficient_steps: int,
          n_per_cell: int, seed: int) -> tuple[float, float]:
    """Step-1 accuracy pooled over ``deep``, and sufficient-step accuracy over ``ood``.

    A complexity-``c`` instance is given "sufficient" steps at any ``T`` in
    ``[c, sufficient_steps]``; the best such ``T`` is taken per complexity and the
    results are averaged.
    """
    model.eval()
    deep_hits = 0
    for c in deep:
        deep_hits += int(correct_by_step(model, eval_instances(model.task, c, n_per_cell, seed, model.cfg.id_pool), 1)[0])
    ood_acc = []
    for c in ood:
        if c > sufficient_steps:
            raise ValueError(f"sufficient_steps={sufficient_steps} is below OOD complexity {c}")
        hits = correct_by_step(model, eval_instances(model.task, c, n_per_cell, seed, model.cfg.id_pool), sufficient_steps)
        ood_acc.append(float(hits[c - 1:].max()) / n_per_cell)
    return deep_hits / (n_per_cell * len(deep)), sum(ood_acc) / len(ood_acc)


def run_ablation(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    deep: Sequence[int],
    ood: Sequence[int],
    sufficient_steps: int,
    n_per_cell: int = 500,
    seed: int = 0,
    out_dir: Optional[str | Path] = None,
    on_log: Optional[Callable[[str, dict], None]] = None,
) -> list[AblationRow]:
    if sufficient_steps > model_cfg.t_max:
        raise ValueError(f"sufficient_steps={sufficient_steps} exceeds t_max={model_cfg.t_max}")
    rows = []
    for mode in MODES:
        cfg = TrainConfig(**{**train_cfg.to_dict(), "mode": mode, "seed": seed})
        model = build_model(model_cfg, seed=seed)
        sub = Path(out_dir) / mode if out_dir is not None else None
        train(cfg, model, sub, on_log=(lambda r, m=mode: on_log(m, r)) if on_log else None)
        s1, ood_acc = probe(model, deep, ood, sufficient_steps, n_per_cell, seed)
        rows.append(AblationRow(mode, s1, ood_acc, sufficient_steps, n_per_cell))
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        w.writerow([r.mode, repr(float(r.step1_deep_acc)), repr(float(r.sufficient_ood_acc)), r.sufficient_steps, r.n])
    return buf.getvalue()


def emit_ablation(rows: Sequence[AblationRow], out_dir: str | Path, meta: Optional[dict] = None,
                  image_format: str = "png") -> dict[str, Path]:
    from .plotting import render_ablation

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "ablation.csv", "json": out / "ablation.json", "image": out / f"ablation.{image_format}"}
    atomic_write_text(paths["csv"], ablation_csv(rows))
    atomic_write_text(paths["json"], json.dumps({"rows": [r.to_dict() for r in rows], "meta": meta or {}}, indent=1))
    render_ablation([r.to_dict() for r in rows], paths["image"])
    return paths
