"""End-to-end gradient check of a tiny model on each perception interface."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from .core import AttnContext
from .model import ModelConfig, build_model
from .numerics import GradCheckReport, grad_check
from .perception import FAMILY_VOCAB, Batch, collate
from .readout import silent_loss
from .tasks import generate


@dataclass
class GradCheckConfig:
    d: int = 32
    n_heads: int = 2
    d_ff: int = 64
    steps: int = 3
    max_len: int = 8
    batch: int = 4
    n_samples: int = 64
    h: float = 1e-3
    tol: float = 1e-2
    precision: str = "f32"  # f32: float32 autograd vs float64 differences; f64: both float64
    seed: int = 0


def tiny_batch(task: str, cfg: GradCheckConfig, rng: np.random.Generator) -> Batch:
    if task == "graph":
        n = min(cfg.max_len, 6)
        return collate("graph", generate("graph", [2, 3] * (cfg.batch // 2) + [2] * (cfg.batch % 2), rng, n=n))
    if task == "logic":
        # depth-2 expressions, at most max_len tokens including [CLS]
        inst = []
        while len(inst) < cfg.batch:
            e = generate("logic", [2], rng)[0]
            if len(e.src) + 1 <= cfg.max_len:
                inst.append(e)
        return collate("logic", inst)
    # kinship documents are far longer than max_len; draw random word ids through the
    # same RoPE + pointer path instead
    L = cfg.max_len
    tokens = torch.from_numpy(rng.integers(2, len(FAMILY_VOCAB), size=(cfg.batch, L)))
    pair = torch.from_numpy(np.stack([rng.choice(L, size=2, replace=False) for _ in range(cfg.batch)]))
    labels = torch.from_numpy(rng.integers(0, 5, size=cfg.batch))
    return Batch(tokens, AttnContext(rope=True), labels, torch.zeros(cfg.batch, dtype=torch.long), pair)


def tiny_model_config(task: str, cfg: GradCheckConfig) -> ModelConfig:
    if task == "graph":
        return ModelConfig("graph", cfg.d, cfg.n_heads, cfg.d_ff, max(cfg.steps, 4))
    return ModelConfig(task, cfg.d, cfg.n_heads, cfg.d_ff, max(cfg.steps, 4), rope=True, layerscale=True)


def check_interface(task: str, cfg: GradCheckConfig = GradCheckConfig()) -> GradCheckReport:
    rng = np.random.default_rng([cfg.seed, 7])
    model = build_model(tiny_model_config(task, cfg), seed=cfg.seed)
    batch = tiny_batch(task, cfg, rng)
    if cfg.precision == "f64":
        model = model.double()
    oracle = copy.deepcopy(model).double()

    def loss_of(m):
        return lambda: silent_loss(m(batch, cfg.steps), batch.labels)

    oracle_params = dict(oracle.named_parameters())
    return grad_check(loss_of(model), list(model.named_parameters()), h=cfg.h, n_samples=cfg.n_samples,
                      seed=cfg.seed, oracle_f=loss_of(oracle), oracle_params=oracle_params)


def check_all(cfg: GradCheckConfig = GradCheckConfig()) -> dict[str, GradCheckReport]:
    return {task: check_interface(task, cfg) for task in ("graph", "logic", "family")}
