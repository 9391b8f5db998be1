import math

import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from depthrec import numerics as nx


def test_matmul_shape_error():
    with pytest.raises(nx.ShapeError):
        nx.matmul(torch.zeros(2, 3), torch.zeros(4, 2))
    assert nx.matmul(torch.ones(2, 3), torch.ones(3, 4)).shape == (2, 4)


@given(st.integers(1, 6), st.integers(1, 9), st.floats(-50, 50))
def test_softmax_rows_sum_to_one(rows, cols, shift):
    x = torch.randn(rows, cols, dtype=torch.float64) * 10 + shift
    p = nx.softmax_lastdim(x)
    assert torch.allclose(p.sum(-1), torch.ones(rows, dtype=torch.float64))
    # shift invariance
    assert torch.allclose(nx.softmax_lastdim(x + 123.0), p)


def test_softmax_masked_entries_exactly_zero():
    torch.manual_seed(0)
    x = torch.randn(5, 5) * 30
    mask = torch.where(torch.rand(5, 5) < 0.5, float("-inf"), 0.0)
    mask.fill_diagonal_(0.0)
    p = nx.softmax_lastdim(x, mask)
    assert (p[torch.isinf(mask)] == 0.0).all()
    assert torch.allclose(p.sum(-1), torch.ones(5))


def test_softmax_matches_reference_on_allowed():
    x = torch.tensor([[1.0, 2.0, 3.0]])
    mask = torch.tensor([[0.0, float("-inf"), 0.0]])
    p = nx.softmax_lastdim(x, mask)
    e1, e3 = math.exp(1.0), math.exp(3.0)
    assert p[0, 0].item() == pytest.approx(e1 / (e1 + e3), rel=1e-6)
    assert p[0, 2].item() == pytest.approx(e3 / (e1 + e3), rel=1e-6)


def test_softmax_fully_masked_row_raises():
    mask = torch.zeros(3, 3)
    mask[1] = float("-inf")
    with pytest.raises(nx.MaskError):
        nx.softmax_lastdim(torch.zeros(3, 3), mask)


def test_softmax_mask_shape_error():
    with pytest.raises(nx.ShapeError):
        nx.softmax_lastdim(torch.zeros(3, 3), torch.zeros(4, 4))


def test_layernorm_zero_mean_unit_var():
    x = torch.randn(4, 16, dtype=torch.float64) * 5 + 2
    y = nx.layernorm(x)
    assert torch.allclose(y.mean(-1), torch.zeros(4, dtype=torch.float64), atol=1e-12)
    var = y.var(-1, unbiased=False)
    expect = x.var(-1, unbiased=False) / (x.var(-1, unbiased=False) + nx.LN_EPS)
    assert torch.allclose(var, expect)


def test_gelu_and_sigmoid_reference_values():
    x = torch.tensor([-1.0, 0.0, 1.0], dtype=torch.float64)
    ref = x * 0.5 * (1 + torch.erf(x / math.sqrt(2)))
    assert torch.allclose(nx.gelu(x), ref)
    assert nx.sigmoid(torch.tensor(-2.0)).item() == pytest.approx(1 / (1 + math.exp(2)), abs=1e-7)


def test_embedding_gather_range_check():
    table = torch.randn(5, 3)
    assert torch.equal(nx.embedding_gather(table, torch.tensor([4, 0])), table[[4, 0]])
    with pytest.raises(IndexError):
        nx.embedding_gather(table, torch.tensor([5]))
    with pytest.raises(IndexError):
        nx.embedding_gather(table, torch.tensor([-1]))


def test_cross_entropy_reference_and_label_check():
    logits = torch.tensor([[2.0, 0.0]], dtype=torch.float64)
    expect = -math.log(math.exp(2) / (math.exp(2) + 1))
    assert nx.cross_entropy(logits, torch.tensor([0])).item() == pytest.approx(expect)
    with pytest.raises(IndexError):
        nx.cross_entropy(logits, torch.tensor([2]))


def test_relative_error_floor():
    assert nx.relative_error(0.0, 0.0, 1e-6) == 0.0
    assert nx.relative_error(1e-9, 0.0, 1e-6) == pytest.approx(1e-3)
    assert nx.relative_error(2.0, 1.0, 1e-6) == pytest.approx(0.5)


def test_grad_check_on_analytic_function():
    w = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    x = torch.randn(3, dtype=torch.float64)
    rep = nx.grad_check(lambda: torch.tanh(w @ x).pow(2).sum(), [("w", w)], n_samples=12)
    assert rep.n_checked == 12
    assert rep.passed(1e-6)


def test_grad_check_detects_wrong_gradient():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x.pow(2)

        @staticmethod
        def backward(ctx, g):
            return g * 3.0  # wrong on purpose

    w = torch.tensor([0.7, -1.3], dtype=torch.float64, requires_grad=True)
    rep = nx.grad_check(lambda: Bad.apply(w).sum(), [("w", w)], n_samples=4)
    assert not rep.passed(1e-2)
    assert rep.worst is not None and rep.worst[0] == "w"


def test_grad_check_reports_non_finite():
    w = torch.tensor([1.0], requires_grad=True)
    rep = nx.grad_check(lambda: (w / 0.0).sum(), [("w", w)], n_samples=1)
    assert not rep.finite and not rep.passed(1.0)


def test_grad_check_rejects_non_scalar():
    w = torch.ones(3, requires_grad=True)
    with pytest.raises(nx.ShapeError):
        nx.grad_check(lambda: w * 2, [("w", w)])


def test_grad_check_restores_parameters():
    w = torch.randn(6, dtype=torch.float64, requires_grad=True)
    before = w.detach().clone()
    nx.grad_check(lambda: (w ** 3).sum(), {"w": w}, n_samples=6)
    assert torch.equal(w.detach(), before)
