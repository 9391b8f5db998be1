"""Turn task instances into an initial hidden state plus the attention context.

Three interfaces:
  topological  - graph nodes, additive adjacency mask with self-loops, no RoPE
  hierarchical - character tokens of a boolean expression after [CLS], RoPE
  unstructured - word tokens of a shuffled kinship document, RoPE, query positions
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from . import numerics as nx
from .core import AttnContext
from .tasks.family import FamilyInstance, Vocab, family_vocab, tokenize
from .tasks.graph import GraphInstance
from .tasks.logic import ALPHABET

NEG_INF = float("-inf")
PAD = 0

LOGIC_VOCAB = Vocab(["[PAD]", "[CLS]"] + list(ALPHABET))
FAMILY_VOCAB = family_vocab()


class TokenizationError(ValueError):
    pass


class QueryError(ValueError):
    pass


@dataclass
class Batch:
    tokens: torch.Tensor  # (B, L) ids into the embedding table
    ctx: AttnContext
    labels: torch.Tensor  # (B,)
    complexity: torch.Tensor  # (B,)
    pair: Optional[torch.Tensor] = None  # (B, 2) positions read by pairwise/pointer heads

    def __len__(self) -> int:
        return self.tokens.shape[0]


def adjacency_mask(n: int, edges: Sequence[tuple[int, int]]) -> torch.Tensor:
    allowed = np.eye(n, dtype=bool)
    for u, v in edges:
        allowed[u, v] = True
    return torch.from_numpy(np.where(allowed, 0.0, NEG_INF).astype(np.float32))


def padding_mask(lengths: Sequence[int], L: int) -> torch.Tensor:
    """(B, L, L) additive mask: pad keys blocked, except each pad query sees itself."""
    lengths_t = torch.tensor(lengths)
    valid = torch.arange(L)[None, :] < lengths_t[:, None]
    allowed = valid[:, None, :] | torch.eye(L, dtype=torch.bool)[None]
    return torch.zeros(allowed.shape).masked_fill(~allowed, NEG_INF)


# -- single-instance encoders --------------------------------------------------

def encode_graph(g: GraphInstance, table: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    ids = torch.tensor(g.ids if g.ids else list(range(1, g.n + 1)))
    return nx.embedding_gather(table, ids), adjacency_mask(g.n, g.edges)


def tokenize_boolexpr(src: str, vocab: Vocab = LOGIC_VOCAB) -> list[int]:
    bad = [c for c in src if c not in ALPHABET]
    if bad:
        raise TokenizationError(f"unknown characters {''.join(sorted(set(bad)))!r} in {src!r}")
    return vocab.encode(["[CLS]", *src])


def encode_boolexpr(src: str, table: torch.Tensor, vocab: Vocab = LOGIC_VOCAB) -> tuple[torch.Tensor, AttnContext]:
    ids = torch.tensor(tokenize_boolexpr(src, vocab))
    return nx.embedding_gather(table, ids), AttnContext(rope=True)


def tokenize_family(inst: FamilyInstance, vocab: Vocab = FAMILY_VOCAB) -> tuple[list[int], tuple[int, int]]:
    toks = tokenize(inst.document())
    a, b = inst.query
    # the query clause closes the document: "how is B related to A ?"
    q_start = len(toks) - 7
    pos_b, pos_a = q_start + 2, q_start + 5
    if toks[pos_a] != a or toks[pos_b] != b:
        raise QueryError(f"query entities {a!r}, {b!r} not found in the query clause")
    if sum(t == a for t in toks[:q_start]) == 0 or sum(t == b for t in toks[:q_start]) == 0:
        raise QueryError("query entity missing from the fact sentences")
    return vocab.encode(toks), (pos_a, pos_b)


def encode_family(inst: FamilyInstance, table: torch.Tensor, vocab: Vocab = FAMILY_VOCAB):
    ids, positions = tokenize_family(inst, vocab)
    return nx.embedding_gather(table, torch.tensor(ids)), AttnContext(rope=True), positions


# -- batch collation ------------------------------------------------------------

def _pad(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, list[int]]:
    lengths = [len(s) for s in seqs]
    L = max(lengths)
    out = np.full((len(seqs), L), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return torch.from_numpy(out), lengths


def collate_graph(instances: Sequence[GraphInstance]) -> Batch:
    n_max = max(g.n for g in instances)
    B = len(instances)
    ids = np.full((B, n_max), PAD, dtype=np.int64)
    allowed = np.zeros((B, n_max, n_max), dtype=bool)
    allowed[:, np.arange(n_max), np.arange(n_max)] = True
    for i, g in enumerate(instances):
        ids[i, : g.n] = g.ids if g.ids else np.arange(1, g.n + 1)
        if g.edges:
            e = np.asarray(g.edges)
            allowed[i, e[:, 0], e[:, 1]] = True
    mask = torch.from_numpy(np.where(allowed, 0.0, NEG_INF).astype(np.float32))
    return Batch(
        tokens=torch.from_numpy(ids),
        ctx=AttnContext(mask=mask),
        labels=torch.tensor([g.label for g in instances]),
        complexity=torch.tensor([g.hops for g in instances]),
        pair=torch.tensor([[g.s, g.t] for g in instances]),
    )


def collate_logic(instances, vocab: Vocab = LOGIC_VOCAB) -> Batch:
    tokens, lengths = _pad([tokenize_boolexpr(e.src, vocab) for e in instances])
    mask = None if len(set(lengths)) == 1 else padding_mask(lengths, tokens.shape[1])
    return Batch(
        tokens=tokens,
        ctx=AttnContext(mask=mask, rope=True),
        labels=torch.tensor([e.label for e in instances]),
        complexity=torch.tensor([e.depth for e in instances]),
    )


def collate_family(instances: Sequence[FamilyInstance], vocab: Vocab = FAMILY_VOCAB) -> Batch:
    encoded = [tokenize_family(f, vocab) for f in instances]
    tokens, lengths = _pad([ids for ids, _ in encoded])
    mask = None if len(set(lengths)) == 1 else padding_mask(lengths, tokens.shape[1])
    return Batch(
        tokens=tokens,
        ctx=AttnContext(mask=mask, rope=True),
        labels=torch.tensor([f.label_index for f in instances]),
        complexity=torch.tensor([f.depth for f in instances]),
        pair=torch.tensor([pos for _, pos in encoded]),
    )


def collate(task: str, instances: Sequence) -> Batch:
    if task == "graph":
        return collate_graph(instances)
    if task == "logic":
        return collate_logic(instances)
    if task == "family":
        return collate_family(instances)
    raise ValueError(f"unknown task {task!r}")
