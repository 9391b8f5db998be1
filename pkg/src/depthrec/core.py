"""Shared-weight recurrent block: depth embedding, Pre-LN attention/FFN with LayerScale,
and the identity-biased gate, unrolled for a caller-chosen number of steps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import torch
from torch import nn

from . import numerics as nx


class NumericFault(FloatingPointError):
    pass


@dataclass
class AttnContext:
    """How attention is shaped for one batch.

    ``mask`` is an additive (B, L, L) or (L, L) matrix of 0 / -inf; ``rope`` turns on
    rotary embeddings on queries and keys at ``positions`` (defaults to 0..L-1).
    """

    mask: Optional[torch.Tensor] = None
    rope: bool = False
    positions: Optional[torch.Tensor] = None
    # per-batch constants reused by every step of an unroll
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def prepared_mask(self, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        key = ("mask", mask.dim())
        if key not in self._cache:
            self._cache[key] = nx.prepare_mask(mask)
        return self._cache[key]

    def rope_tables(self, positions: torch.Tensor, dim: int, base: float) -> tuple[torch.Tensor, torch.Tensor]:
        key = ("rope", dim, base, tuple(positions.shape))
        if key not in self._cache:
            self._cache[key] = rope_angles(positions, dim, base)
        return self._cache[key]


@dataclass
class StepTrace:
    state_norms: list[float] = field(default_factory=list)
    gate_means: list[float] = field(default_factory=list)


def rope_angles(positions: torch.Tensor, dim: int, base: float = 10000.0) -> tuple[torch.Tensor, torch.Tensor]:
    inv_freq = 1.0 / (base ** (torch.arange(0, dim, 2, dtype=torch.float64) / dim))
    ang = positions.to(torch.float64)[..., None] * inv_freq
    return ang.cos().float(), ang.sin().float()


def apply_rope(x: torch.Tensor, positions: torch.Tensor, base: float = 10000.0,
               tables: Optional[tuple[torch.Tensor, torch.Tensor]] = None) -> torch.Tensor:
    """Rotate consecutive (even, odd) channel pairs of ``x`` (..., L, dk) by position."""
    dk = x.shape[-1]
    if dk % 2:
        raise nx.ShapeError("RoPE needs an even head dimension")
    cos, sin = tables if tables is not None else rope_angles(positions, dk, base)
    cos, sin = cos.to(x.dtype), sin.to(x.dtype)
    x_even, x_odd = x[..., 0::2], x[..., 1::2]
    out = torch.stack((x_even * cos - x_odd * sin, x_even * sin + x_odd * cos), dim=-1)
    return out.flatten(-2)


class ReasoningCore(nn.Module):
    def __init__(
        self,
        d: int,
        n_heads: int,
        d_ff: int,
        t_max: int,
        layerscale: bool = True,
        layerscale_init: float = 1e-4,
        gate_bias: float = -2.0,
        rope_base: float = 10000.0,
    ):
        super().__init__()
        if d % n_heads:
            raise ValueError(f"d={d} not divisible by n_heads={n_heads}")
        self.d, self.n_heads, self.d_k, self.t_max = d, n_heads, d // n_heads, t_max
        self.rope_base = rope_base
        self.debug = False

        self.ln_attn = nn.LayerNorm(d, eps=nx.LN_EPS)
        self.ln_ffn = nn.LayerNorm(d, eps=nx.LN_EPS)
        self.w_q = nn.Linear(d, d, bias=False)
        self.w_k = nn.Linear(d, d, bias=False)
        self.w_v = nn.Linear(d, d, bias=False)
        self.w_o = nn.Linear(d, d, bias=False)
        self.ffn_in = nn.Linear(d, d_ff)
        self.ffn_out = nn.Linear(d_ff, d)
        if layerscale:
            self.gamma_attn = nn.Parameter(torch.full((d,), layerscale_init))
            self.gamma_ffn = nn.Parameter(torch.full((d,), layerscale_init))
        else:
            self.register_buffer("gamma_attn", torch.ones(d))
            self.register_buffer("gamma_ffn", torch.ones(d))
        self.gate = nn.Linear(2 * d, d)
        nn.init.xavier_uniform_(self.gate.weight)
        nn.init.constant_(self.gate.bias, gate_bias)
        self.depth_embed = nn.Parameter(torch.zeros(t_max, d))

    # -- single-step pieces -------------------------------------------------

    def add_depth_embedding(self, h: torch.Tensor, t: int) -> torch.Tensor:
        if not 1 <= t <= self.t_max:
            raise IndexError(f"step {t} outside depth table 1..{self.t_max}")
        return h + self.depth_embed[t - 1]

    def attention(self, x: torch.Tensor, ctx: AttnContext, return_probs: bool = False):
        *lead, L, d = x.shape
        q = self.w_q(x).view(*lead, L, self.n_heads, self.d_k).transpose(-2, -3)
        k = self.w_k(x).view(*lead, L, self.n_heads, self.d_k).transpose(-2, -3)
        v = self.w_v(x).view(*lead, L, self.n_heads, self.d_k).transpose(-2, -3)
        if ctx.rope:
            pos = ctx.positions if ctx.positions is not None else torch.arange(L)
            if pos.dim() == 2:
                pos = pos[:, None, :]
            tables = ctx.rope_tables(pos, self.d_k, self.rope_base)
            q = apply_rope(q, pos, self.rope_base, tables)
            k = apply_rope(k, pos, self.rope_base, tables)
        scores = nx.matmul(q, k.transpose(-1, -2)) / math.sqrt(self.d_k)
        mask = ctx.mask
        if mask is not None and mask.dim() == 3:
            mask = mask[:, None]
        probs = nx.softmax_lastdim(scores, mask, ctx.prepared_mask(mask) if mask is not None else None)
        out = nx.matmul(probs, v).transpose(-2, -3).reshape(*lead, L, d)
        out = self.w_o(out)
        return (out, probs) if return_probs else out

    def ffn(self, x: torch.Tensor) -> torch.Tensor:
        return self.ffn_out(nx.gelu(self.ffn_in(x)))

    def block_forward(self, h_hat: torch.Tensor, ctx: AttnContext, step: Optional[int] = None) -> torch.Tensor:
        h1 = h_hat + self.gamma_attn * self.attention(self.ln_attn(h_hat), ctx)
        self._check_finite(h1, step, "attention")
        h2 = h1 + self.gamma_ffn * self.ffn(self.ln_ffn(h1))
        self._check_finite(h2, step, "ffn")
        return h2

    def gate_values(self, h_prev: torch.Tensor, cand: torch.Tensor) -> torch.Tensor:
        return nx.sigmoid(self.gate(torch.cat([cand, h_prev], dim=-1)))

    def gated_update(self, h_prev: torch.Tensor, cand: torch.Tensor) -> torch.Tensor:
        if h_prev.shape != cand.shape:
            raise nx.ShapeError(f"gate inputs differ: {tuple(h_prev.shape)} vs {tuple(cand.shape)}")
        z = self.gate_values(h_prev, cand)
        # z*cand + (1-z)*h_prev, written so that cand == h_prev returns h_prev bit-exactly
        return h_prev + z * (cand - h_prev)

    def step(self, h: torch.Tensor, t: int, ctx: AttnContext) -> torch.Tensor:
        cand = self.block_forward(self.add_depth_embedding(h, t), ctx, step=t)
        return self.gated_update(h, cand)

    # -- recurrence ---------------------------------------------------------

    def unroll(
        self,
        h0: torch.Tensor,
        T: int,
        ctx: AttnContext,
        on_step: Optional[Callable[[int, torch.Tensor], None]] = None,
        trace: Optional[StepTrace] = None,
    ) -> torch.Tensor:
        """Apply the shared block ``T`` times; ``on_step(t, H_t)`` sees every intermediate state."""
        if not 1 <= T <= self.t_max:
            raise ValueError(f"T={T} outside 1..{self.t_max}")
        h = h0
        for t in range(1, T + 1):
            if trace is not None or self.debug:
                cand = self.block_forward(self.add_depth_embedding(h, t), ctx, step=t)
                z = self.gate_values(h, cand)
                h = h + z * (cand - h)
                if trace is not None:
                    trace.state_norms.append(float(h.detach().norm()))
                    trace.gate_means.append(float(z.detach().mean()))
            else:
                h = self.step(h, t, ctx)
            if on_step is not None:
                on_step(t, h)
        return h

    def _check_finite(self, x: torch.Tensor, step: Optional[int], where: str) -> None:
        if not torch.isfinite(x).all():
            raise NumericFault(f"non-finite values after {where} sub-layer at step {step}")
