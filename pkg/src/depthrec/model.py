"""Perception embedding + shared recurrent core + task readout, wired per task."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
from torch import nn

from .core import AttnContext, ReasoningCore, StepTrace
from .perception import FAMILY_VOCAB, LOGIC_VOCAB, Batch
from .readout import ClsHead, PairMLP
from .tasks.family import RELATIONS
from .tasks.graph import DEFAULT_ID_POOL

TASKS = ("graph", "logic", "family")
INTERFACE = {"graph": "topological", "logic": "hierarchical", "family": "unstructured"}
N_CLASSES = {"graph": 2, "logic": 2, "family": len(RELATIONS)}


@dataclass
class ModelConfig:
    task: str = "graph"
    d: int = 128
    n_heads: int = 4
    d_ff: int = 256
    t_max: int = 20
    rope: bool = False
    layerscale: bool = False
    layerscale_init: float = 1e-4
    gate_bias: float = -2.0
    id_pool: int = DEFAULT_ID_POOL
    embed_init: str = "normal"  # or "orthogonal": rows (or columns) orthogonal, scaled to norm ~sqrt(d)
    final_norm: bool = False  # LayerNorm on the final state before the readout head

    def __post_init__(self):
        if self.embed_init not in ("normal", "orthogonal"):
            raise ValueError(f"embed_init must be normal or orthogonal, got {self.embed_init!r}")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} must be divisible by n_heads={self.n_heads}")
        if self.rope and (self.d // self.n_heads) % 2:
            raise ValueError("RoPE needs an even head dimension")
        if self.task == "graph" and self.rope:
            raise ValueError("the topological interface does not use RoPE")
        if self.task != "graph" and not self.rope:
            raise ValueError(f"the {INTERFACE[self.task]} interface needs rope: true")

    def to_dict(self) -> dict:
        return asdict(self)


def default_model_config(task: str) -> ModelConfig:
    """Architecture defaults per experiment (width, heads, FFN, RoPE, LayerScale, T_max)."""
    if task == "graph":
        return ModelConfig("graph", 128, 4, 256, 20, rope=False, layerscale=False, embed_init="orthogonal")
    if task == "logic":
        return ModelConfig("logic", 256, 8, 1024, 28, rope=True, layerscale=True)
    if task == "family":
        return ModelConfig("family", 256, 8, 1024, 20, rope=True, layerscale=True)
    raise ValueError(f"unknown task {task!r}")


def vocab_size(cfg: ModelConfig) -> int:
    if cfg.task == "graph":
        return cfg.id_pool + 1
    return len(LOGIC_VOCAB) if cfg.task == "logic" else len(FAMILY_VOCAB)


class ReasonerModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(vocab_size(cfg), cfg.d)
        if cfg.embed_init == "orthogonal":
            # well-separated surface ids make set membership easier to read out
            with torch.no_grad():
                nn.init.orthogonal_(self.embed.weight)
                self.embed.weight.mul_(cfg.d ** 0.5)
        self.core = ReasoningCore(cfg.d, cfg.n_heads, cfg.d_ff, cfg.t_max, layerscale=cfg.layerscale,
                                  layerscale_init=cfg.layerscale_init, gate_bias=cfg.gate_bias)
        self.final_ln = nn.LayerNorm(cfg.d) if cfg.final_norm else None
        if cfg.task == "logic":
            self.head = ClsHead(cfg.d, N_CLASSES["logic"])
        else:
            self.head = PairMLP(cfg.d, N_CLASSES[cfg.task])

    @property
    def task(self) -> str:
        return self.cfg.task

    def initial_state(self, batch: Batch) -> torch.Tensor:
        return self.embed(batch.tokens)

    def readout(self, h: torch.Tensor, batch: Batch) -> torch.Tensor:
        if self.final_ln is not None:
            h = self.final_ln(h)
        if self.cfg.task == "logic":
            return self.head(h)
        return self.head(h, batch.pair[:, 0], batch.pair[:, 1])

    def forward(self, batch: Batch, T: int, per_step: bool = False, trace: Optional[StepTrace] = None):
        """Logits after ``T`` steps, or the list of logits after every step 1..T."""
        h0 = self.initial_state(batch)
        if not per_step:
            return self.readout(self.core.unroll(h0, T, batch.ctx, trace=trace), batch)
        logits: list[torch.Tensor] = []
        self.core.unroll(h0, T, batch.ctx, on_step=lambda t, h: logits.append(self.readout(h, batch)), trace=trace)
        return logits

    def states(self, batch: Batch, T: int) -> list[torch.Tensor]:
        out: list[torch.Tensor] = []
        self.core.unroll(self.initial_state(batch), T, batch.ctx, on_step=lambda t, h: out.append(h))
        return out


def build_model(cfg: ModelConfig, seed: int = 0) -> ReasonerModel:
    torch.manual_seed(seed)
    return ReasonerModel(cfg)


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
