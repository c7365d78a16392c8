import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrbridge import tensor as T
from corrbridge.gradcheck import (FULL_LOSS_CASES, OP_CASES, check_scalar_fn,
                                  finite_difference_grad, run_gradcheck)
from corrbridge.tensor import Tensor


def test_fd_quadratic():
    x = Tensor([3.0], dtype=np.float64)
    (g,) = finite_difference_grad(lambda: float(x.data[0]) ** 2, [x], eps=1e-4)
    assert abs(g[0] - 6.0) < 1e-6


def test_fd_constant_function():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 2)), dtype=np.float64)
    (g,) = finite_difference_grad(lambda: 1.25, [x])
    np.testing.assert_array_equal(g, np.zeros((3, 2)))


def test_fd_requires_positive_eps():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda: 0.0, [Tensor([1.0])], eps=0.0)


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_family_matches_finite_differences(name):
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(1000 + seed)
        params, build_loss = OP_CASES[name](rng)
        worst = max(worst, check_scalar_fn(build_loss, params))
    assert worst <= 1e-4, f"{name}: worst rel err {worst}"


@pytest.mark.parametrize("name", sorted(FULL_LOSS_CASES))
def test_full_losses_match_finite_differences(name):
    for seed in range(3):
        rng = np.random.default_rng(2000 + seed)
        params, build_loss = FULL_LOSS_CASES[name](rng)
        assert check_scalar_fn(build_loss, params) <= 1e-4


def test_composite_graph_matches_finite_differences():
    rng = np.random.default_rng(7)
    w1 = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype=np.float64)
    w2 = Tensor(rng.normal(size=(4, 2)), requires_grad=True, dtype=np.float64)
    b = Tensor(rng.normal(size=2), requires_grad=True, dtype=np.float64)
    x = T.constant(rng.normal(size=(5, 3)))

    def build_loss():
        h = T.tanh(T.matmul(x, w1))
        out = T.softmax(T.add(T.matmul(h, w2), b))
        return T.tmean(T.log(out))

    assert check_scalar_fn(build_loss, [w1, w2, b]) <= 1e-4


def test_run_gradcheck_covers_required_families():
    results = run_gradcheck(seeds=2)
    names = {name for name, _, _ in results}
    assert len(names) >= 14  # 12-op floor plus the two composite losses
    assert "loss_correlation" in names and "loss_sequence_nll" in names
    assert all(ok for _, _, ok in results)


def test_gradcheck_catches_corrupted_backward(monkeypatch):
    # fault injection: break tanh's backward rule and expect a named failure
    real_tanh = T.tanh

    def broken_tanh(x):
        x = T.as_tensor(x)
        y = np.tanh(x.data)

        def bwd(g):
            return (g * (1.0 - y),)  # wrong derivative

        return T._finalize("tanh", y, (x,), bwd)

    monkeypatch.setattr(T, "tanh", broken_tanh)
    try:
        results = run_gradcheck(seeds=1)
    finally:
        monkeypatch.setattr(T, "tanh", real_tanh)
    failures = {name for name, _, ok in results if not ok}
    assert "tanh" in failures


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=-30, max_value=30), min_size=2, max_size=8))
def test_softmax_rows_sum_to_one(row):
    out = T.softmax(Tensor([row, row]))
    np.testing.assert_allclose(out.data.sum(axis=-1), [1.0, 1.0], atol=1e-6)
    assert np.all(out.data >= 0)
