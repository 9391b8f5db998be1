"""Heads that decode the final hidden state, and the final-step loss."""

from __future__ import annotations

import torch
from torch import nn

from . import numerics as nx


def _gather_rows(h: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= h.shape[-2]):
        raise IndexError(f"readout position outside sequence of length {h.shape[-2]}")
    if h.dim() == 2:
        return h[idx]
    return h[torch.arange(h.shape[0]), idx]


class PairMLP(nn.Module):
    """Concatenate two rows of H and classify with a one-hidden-layer GELU MLP.

    Used both as the pairwise node head (graphs) and the latent pointer head (kinship).
    """

    def __init__(self, d: int, n_classes: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or d
        self.fc1 = nn.Linear(2 * d, hidden)
        self.fc2 = nn.Linear(hidden, n_classes)

    def forward(self, h: torch.Tensor, first: torch.Tensor, second: torch.Tensor) -> torch.Tensor:
        x = torch.cat([_gather_rows(h, first), _gather_rows(h, second)], dim=-1)
        return self.fc2(nx.gelu(self.fc1(x)))


class ClsHead(nn.Module):
    def __init__(self, d: int, n_classes: int = 2):
        super().__init__()
        self.fc = nn.Linear(d, n_classes)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.fc(h[..., 0, :])


def pairwise_readout(head: PairMLP, h: torch.Tensor, s, t) -> torch.Tensor:
    s, t = torch.as_tensor(s), torch.as_tensor(t)
    if bool((s == t).any()):
        raise ValueError("pairwise readout needs distinct source and target")
    return head(h, s, t)


def cls_readout(head: ClsHead, h: torch.Tensor) -> torch.Tensor:
    return head(h)


def pointer_readout(head: PairMLP, h: torch.Tensor, p, q) -> torch.Tensor:
    return head(h, torch.as_tensor(p), torch.as_tensor(q))


def silent_loss(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of the step-T logits, averaged over the batch."""
    if logits.dim() == 1:
        logits, y = logits[None], torch.as_tensor(y).reshape(1)
    return nx.cross_entropy(logits, y)
