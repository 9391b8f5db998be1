import csv
import json
import math

import pytest
import torch

from depthrec.model import ModelConfig, build_model
from depthrec.train import (METRIC_COLUMNS, TrainConfig, TrainingDiverged, compute_loss, default_train_config,
                            lr_at, sample_training_batch, train)


def tiny_model(task="graph", seed=0, t_max=6):
    return build_model(ModelConfig(task, 16, 2, 32, t_max, rope=task != "graph", layerscale=task != "graph"), seed)


def tiny_cfg(task="graph", **kw):
    base = dict(task=task, t_lo=1, t_hi=3, complexity_lo=1, complexity_hi=3 if task != "family" else 3,
                batch_size=8, total_steps=12, log_every=4, warmup=3)
    if task == "family":
        base["complexity_lo"] = 2
    base.update(kw)
    return TrainConfig(**base)


def params(m):
    return {k: v.clone() for k, v in m.state_dict().items()}


@pytest.mark.parametrize("task", ["graph", "logic", "family"])
def test_same_seed_bit_identical(task):
    a, b = tiny_model(task), tiny_model(task)
    ra = train(tiny_cfg(task), a)
    rb = train(tiny_cfg(task), b)
    for k, v in params(a).items():
        assert torch.equal(v, params(b)[k]), k
    strip = lambda rows: [{k: r[k] for k in METRIC_COLUMNS if k != "wallclock"} for r in rows]  # noqa: E731
    assert strip(ra.metrics) == strip(rb.metrics)


def test_different_seed_differs():
    a, b = tiny_model(), tiny_model()
    train(tiny_cfg(seed=0), a)
    train(tiny_cfg(seed=1), b)
    assert not torch.equal(a.core.gate.weight, b.core.gate.weight)


def test_resume_matches_uninterrupted(tmp_path):
    full = tiny_model()
    train(tiny_cfg(total_steps=12), full)
    part = tiny_model()
    train(tiny_cfg(total_steps=6), part, tmp_path)
    resumed = tiny_model(seed=42)  # weights come from the checkpoint
    res = train(tiny_cfg(total_steps=12), resumed, tmp_path)
    for k, v in params(full).items():
        assert torch.equal(v, params(resumed)[k]), k
    assert [r["step"] for r in res.metrics] == [4, 6, 8, 12]


def test_outputs_written(tmp_path):
    train(tiny_cfg(), tiny_model(), tmp_path)
    assert (tmp_path / "model.ckpt").exists() and (tmp_path / "optimizer.pt").exists()
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert [int(r["step"]) for r in rows] == [4, 8, 12]
    assert all(1 <= float(r["sampled_T"]) <= 3 for r in rows)


def test_intermediate_equals_silent_at_one_step():
    m = tiny_model()
    _, batch = sample_training_batch(tiny_cfg(), 0, m.cfg.id_pool)
    ls, _ = compute_loss(m, batch, 1, "silent")
    li, _ = compute_loss(m, batch, 1, "intermediate")
    assert torch.equal(ls, li)


def test_intermediate_averages_every_step():
    m = tiny_model()
    _, batch = sample_training_batch(tiny_cfg(), 0, m.cfg.id_pool)
    per = [torch.nn.functional.cross_entropy(lg, batch.labels) for lg in m(batch, 4, per_step=True)]
    li, _ = compute_loss(m, batch, 4, "intermediate")
    assert torch.allclose(li, torch.stack(per).mean())


def test_readout_counts_per_mode():
    m = tiny_model()
    _, batch = sample_training_batch(tiny_cfg(), 0, m.cfg.id_pool)
    calls = []
    hook = m.head.register_forward_hook(lambda *a: calls.append(1))
    compute_loss(m, batch, 5, "silent")
    assert len(calls) == 1
    compute_loss(m, batch, 5, "intermediate")
    assert len(calls) == 1 + 5
    hook.remove()


def test_initial_loss_near_ln2():
    m = tiny_model()
    _, batch = sample_training_batch(tiny_cfg(batch_size=256), 0, m.cfg.id_pool)
    loss, _ = compute_loss(m, batch, 3, "intermediate")
    assert abs(loss.item() - math.log(2)) < 0.1


def test_unused_depth_rows_get_zero_gradient():
    m = tiny_model(task="logic")
    _, batch = sample_training_batch(tiny_cfg("logic"), 0, m.cfg.id_pool)
    loss, _ = compute_loss(m, batch, 3, "silent")
    loss.backward()
    g = m.core.depth_embed.grad
    assert torch.count_nonzero(g[3:]) == 0
    assert torch.count_nonzero(g[:3]) > 0


def test_lr_schedule():
    cfg = TrainConfig(lr=1e-3, warmup=10, total_steps=110, lr_schedule="cosine")
    assert lr_at(cfg, 0) == pytest.approx(1e-4)
    assert lr_at(cfg, 9) == pytest.approx(1e-3)
    assert lr_at(cfg, 60) == pytest.approx(0.5e-3, rel=0.05)
    assert lr_at(cfg, 110) == pytest.approx(0.0, abs=1e-12)
    assert lr_at(TrainConfig(lr=1e-3, warmup=10), 500) == 1e-3


def test_config_validation():
    with pytest.raises(ValueError):
        train(tiny_cfg(t_hi=9), tiny_model(t_max=6))
    with pytest.raises(ValueError):
        train(tiny_cfg(mode="loud"), tiny_model())
    with pytest.raises(ValueError):
        train(tiny_cfg(task="logic"), tiny_model("graph"))
    assert default_train_config("logic").t_hi == 16
    assert default_train_config("family").batch_size == 64


def test_divergence_dumps_diagnostics(tmp_path):
    m = tiny_model()
    with torch.no_grad():
        m.core.ffn_out.bias.fill_(float("inf"))
    with pytest.raises(TrainingDiverged):
        train(tiny_cfg(), m, tmp_path)
    info = json.loads((tmp_path / "divergence.json").read_text())
    assert info["step"] == 0 and 1 <= info["T"] <= 3


def test_sampled_T_in_range():
    cfg = tiny_cfg(t_lo=2, t_hi=5)
    seen = {sample_training_batch(cfg, s, 32)[0] for s in range(60)}
    assert seen == {2, 3, 4, 5}
