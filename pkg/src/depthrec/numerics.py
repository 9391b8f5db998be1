"""Differentiable primitives used by the model, plus a finite-difference gradient checker.

Tensors are plain ``torch.Tensor`` objects and the computation tape is torch autograd.
Every op here is a thin, shape-checked wrapper so that the model only ever reaches
for this small, tested surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import torch
import torch.nn.functional as F

# Additive stand-in for -inf; masked probabilities are zeroed explicitly afterwards.
MASK_VALUE = -1e9
LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class MaskError(RuntimeError):
    """Raised when a softmax row has every position masked out."""


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions differ, {tuple(a.shape)} x {tuple(b.shape)}")
    return torch.matmul(a, b)


def blocked_positions(mask: torch.Tensor) -> torch.Tensor:
    return torch.isneginf(mask) | (mask <= MASK_VALUE)


def prepare_mask(additive_mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Split an additive 0 / -inf mask into a finite additive part and a boolean blocked part."""
    blocked = blocked_positions(additive_mask)
    if bool(blocked.all(dim=-1).any()):
        raise MaskError("softmax row has every position masked (missing self-loop?)")
    finite = torch.where(blocked, torch.full_like(additive_mask, MASK_VALUE), additive_mask)
    return finite, blocked


def softmax_lastdim(
    x: torch.Tensor,
    additive_mask: Optional[torch.Tensor] = None,
    prepared: Optional[tuple[torch.Tensor, torch.Tensor]] = None,
) -> torch.Tensor:
    """Stable softmax over the last axis.

    ``additive_mask`` holds 0 for allowed and -inf (or anything at or below ``MASK_VALUE``)
    for blocked positions. Blocked positions come out as exactly 0.0. ``prepared`` is the
    output of ``prepare_mask`` for the same mask, to skip recomputing it.
    """
    if additive_mask is None:
        return torch.softmax(x, dim=-1)
    try:
        torch.broadcast_shapes(additive_mask.shape, x.shape)
    except RuntimeError as exc:
        raise ShapeError(f"mask {tuple(additive_mask.shape)} not broadcastable to {tuple(x.shape)}") from exc
    finite, blocked = prepared if prepared is not None else prepare_mask(additive_mask)
    probs = torch.softmax(x + finite.to(x.dtype), dim=-1)
    return probs.masked_fill(blocked, 0.0)


def layernorm(
    x: torch.Tensor,
    weight: Optional[torch.Tensor] = None,
    bias: Optional[torch.Tensor] = None,
    eps: float = LN_EPS,
) -> torch.Tensor:
    return F.layer_norm(x, x.shape[-1:], weight, bias, eps)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def embedding_gather(table: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise IndexError(f"embedding id outside table of {table.shape[0]} rows")
    return F.embedding(ids, table)


def cross_entropy(logits: torch.Tensor, label: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    if label.numel() and (int(label.min()) < 0 or int(label.max()) >= logits.shape[-1]):
        raise IndexError(f"label outside {logits.shape[-1]} classes")
    return F.cross_entropy(logits, label, reduction=reduction)


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    finite: bool = True
    worst: Optional[tuple[str, int, float, float]] = None  # name, flat index, analytic, numeric
    entries: list[tuple[str, int, float, float, float]] = field(default_factory=list)
    message: str = ""

    def passed(self, tol: float) -> bool:
        return self.finite and self.max_rel_err < tol


def relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], torch.Tensor],
    params: Sequence[tuple[str, torch.Tensor]] | dict[str, torch.Tensor],
    h: float = 1e-3,
    n_samples: int = 64,
    seed: int = 0,
    floor: float = 1e-6,
    oracle_f: Optional[Callable[[], torch.Tensor]] = None,
    oracle_params: Optional[dict[str, torch.Tensor]] = None,
) -> GradCheckReport:
    """Compare autograd gradients of scalar ``f()`` against central differences.

    Entries are drawn by cycling over the ``requires_grad`` tensors in ``params`` in
    random order and picking a random element of each, preferring elements with a
    nonzero analytic gradient. By default the differences are taken on ``f`` itself. Passing
    ``oracle_f``/``oracle_params`` (same names, typically a float64 copy of the model)
    takes them there instead, which keeps float32 rounding out of the reference
    values. Relative error uses ``max(|analytic|, |numeric|, floor)`` as denominator.
    """
    named = list(params.items()) if isinstance(params, dict) else list(params)
    with torch.enable_grad():
        out = f()
    if out.numel() != 1:
        raise ShapeError("grad_check needs a scalar-valued function")
    if not torch.isfinite(out).all():
        return GradCheckReport(math.inf, 0, finite=False, message="non-finite function value")
    trainable = [(n, p) for n, p in named if p.requires_grad]
    grads = torch.autograd.grad(out, [p for _, p in trainable], allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for (_, p), g in zip(trainable, grads)]

    num_f = oracle_f or f
    num_params = oracle_params or dict(trainable)
    gen = torch.Generator().manual_seed(seed)
    picks = []
    order: list[int] = []
    for _ in range(n_samples):
        if not order:
            order = torch.randperm(len(trainable), generator=gen).tolist()
        k = order.pop()
        # prefer entries that actually receive gradient (e.g. embedding rows in use)
        live = torch.nonzero(grads[k].reshape(-1)).flatten()
        if live.numel():
            picks.append((k, int(live[torch.randint(live.numel(), (1,), generator=gen)])))
        else:
            picks.append((k, int(torch.randint(grads[k].numel(), (1,), generator=gen))))

    report = GradCheckReport(0.0, 0)
    with torch.no_grad():
        for k, idx in picks:
            name = trainable[k][0]
            view = num_params[name].view(-1)
            orig = view[idx].item()
            view[idx] = orig + h
            fp = num_f().item()
            view[idx] = orig - h
            fm = num_f().item()
            view[idx] = orig
            numeric = (fp - fm) / (2 * h)
            analytic = grads[k].view(-1)[idx].item()
            if not (math.isfinite(numeric) and math.isfinite(analytic)):
                report.finite = False
                report.message = f"non-finite gradient at {name}[{idx}]"
                report.max_rel_err = math.inf
                report.worst = (name, idx, analytic, numeric)
                break
            err = relative_error(analytic, numeric, floor)
            report.entries.append((name, idx, analytic, numeric, err))
            report.n_checked += 1
            if err >= report.max_rel_err:
                report.max_rel_err = err
                report.worst = (name, idx, analytic, numeric)
    return report
