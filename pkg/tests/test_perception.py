import numpy as np
import pytest
import torch

from depthrec.core import AttnContext
from depthrec.model import ModelConfig, build_model
from depthrec.perception import (FAMILY_VOCAB, LOGIC_VOCAB, QueryError, TokenizationError, adjacency_mask,
                                 collate, encode_boolexpr, encode_family, encode_graph, padding_mask,
                                 tokenize_boolexpr, tokenize_family)
from depthrec.tasks import generate
from depthrec.tasks.family import FamilyInstance
from depthrec.tasks.graph import GraphInstance, gen_graph, k_hop_reach


def test_adjacency_mask_entries():
    m = adjacency_mask(4, [(0, 1), (2, 3)])
    allowed = torch.isfinite(m)
    expect = torch.eye(4, dtype=torch.bool)
    expect[0, 1] = expect[2, 3] = True
    assert torch.equal(allowed, expect)
    assert (m[allowed] == 0).all()


def test_padding_mask_blocks_pad_keys_but_keeps_rows_alive():
    m = padding_mask([2, 4], 4)
    assert m.shape == (2, 4, 4)
    assert torch.isinf(m[0, 0, 2]) and torch.isinf(m[0, 1, 3])
    assert m[0, 3, 3] == 0  # pad query sees itself
    assert torch.isfinite(m[1]).all()


def test_encode_graph_uses_surface_ids():
    g = GraphInstance(3, [(0, 1)], 0, 1, 1, 1, ids=[5, 9, 2])
    table = torch.randn(10, 4)
    h0, mask = encode_graph(g, table)
    assert torch.equal(h0, table[[5, 9, 2]])
    assert torch.isinf(mask[1, 0]) and mask[0, 1] == 0


def test_tokenize_boolexpr_and_errors():
    ids = tokenize_boolexpr("(T&!F)")
    assert LOGIC_VOCAB.decode(ids) == ["[CLS]", "(", "T", "&", "!", "F", ")"]
    with pytest.raises(TokenizationError):
        tokenize_boolexpr("(T^F)")
    h0, ctx = encode_boolexpr("!T", torch.randn(len(LOGIC_VOCAB), 4))
    assert h0.shape == (3, 4) and ctx.rope and ctx.mask is None


def test_tokenize_family_pointer_positions(rng):
    for inst in generate("family", [2, 3, 4, 5], rng):
        ids, (pa, pb) = tokenize_family(inst)
        toks = FAMILY_VOCAB.decode(ids)
        assert toks[pa] == inst.query[0] and toks[pb] == inst.query[1]
        assert toks[-1] == "?"


def test_tokenize_family_rejects_bad_query(rng):
    inst = generate("family", [2], rng)[0]
    bad = FamilyInstance(inst.facts, inst.distractors, inst.sentences, ("Nobody", inst.query[1]),
                         inst.label, inst.depth, inst.a, inst.b)
    with pytest.raises((QueryError, KeyError)):
        tokenize_family(bad)


def test_encode_family_rope_no_mask(rng):
    inst = generate("family", [3], rng)[0]
    h0, ctx, pos = encode_family(inst, torch.randn(len(FAMILY_VOCAB), 4))
    assert ctx.rope and ctx.mask is None and len(pos) == 2


@pytest.mark.parametrize("task,cx,kw", [("graph", [1, 2, 3, 4], {"n": None}),
                                        ("logic", [1, 2, 3, 4], {}),
                                        ("family", [2, 3, 4, 5], {})])
def test_batched_equals_single(task, cx, kw, rng):
    """Padding never leaks into real positions: batched logits equal one-at-a-time logits."""
    cfg = ModelConfig(task, 16, 2, 32, 6, rope=task != "graph", layerscale=task != "graph")
    model = build_model(cfg, seed=3)
    with torch.no_grad():
        model.core.depth_embed.normal_(0, 0.1)
    inst = generate(task, cx, rng, **kw) if task == "graph" else generate(task, cx, rng)
    together = model(collate(task, inst), 4)
    for i, x in enumerate(inst):
        alone = model(collate(task, [x]), 4)
        assert torch.allclose(together[i], alone[0], atol=1e-5), i


def test_graph_locality_small():
    """Node state after k steps ignores edges that lie wholly outside its k-ball."""
    rng = np.random.default_rng(0)
    model = build_model(ModelConfig("graph", 16, 2, 32, 6), seed=0)
    for _ in range(10):
        g = gen_graph(3, n=12, rng=rng)
        k = int(rng.integers(1, 4))
        ball = k_hop_reach(g.n, g.edges, g.s, k)
        outside = [v for v in range(g.n) if v not in ball]
        edges2 = [e for e in g.edges if e[0] in ball or e[1] in ball]
        for _ in range(6):
            if len(outside) >= 2:
                u, v = rng.choice(outside, 2, replace=False)
                edges2.append((int(u), int(v)))
        g2 = GraphInstance(g.n, sorted(set(edges2)), g.s, g.t, g.label, g.hops, g.ids)
        h1 = model.states(collate("graph", [g]), k)[-1][0, g.s]
        h2 = model.states(collate("graph", [g2]), k)[-1][0, g.s]
        assert (h1 - h2).abs().max().item() < 1e-6


def test_state_flow_needs_k_steps():
    # chain 0 -> 1 -> 2 -> 3: node 0 first sees node 3's identity at step 3
    g = GraphInstance(4, [(0, 1), (1, 2), (2, 3)], 0, 3, 1, 3, ids=[1, 2, 3, 4])
    g_alt = GraphInstance(4, g.edges, 0, 3, 1, 3, ids=[1, 2, 3, 7])
    model = build_model(ModelConfig("graph", 16, 2, 32, 6), seed=0)
    a = model.states(collate("graph", [g]), 3)
    b = model.states(collate("graph", [g_alt]), 3)
    assert torch.equal(a[1][0, 0], b[1][0, 0])  # after 2 steps
    assert not torch.allclose(a[2][0, 0], b[2][0, 0])  # after 3 steps
