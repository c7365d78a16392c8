import numpy as np
import pytest

from corrbridge import tensor as T
from corrbridge.optim import Adam, clip_global_norm
from corrbridge.tensor import ShapeMismatchError, Tape, Tensor, backward


def test_zero_gradient_is_a_noop():
    p = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    before = p.data.copy()
    opt = Adam({"p": p}, alpha=0.5)
    p.grad = np.zeros(3)
    for _ in range(5):
        opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_first_step_analytic():
    # fresh state, scalar g=1: bias correction gives m_hat = v_hat = 1,
    # so the step is alpha / (1 + eps) ~= alpha
    p = Tensor(np.array([0.0]), requires_grad=True, dtype=np.float64)
    opt = Adam({"p": p}, alpha=0.01, epsilon=1e-8)
    p.grad = np.array([1.0])
    opt.step()
    assert p.data[0] == pytest.approx(-0.01, abs=1e-9)
    assert opt.state.t == 1


def _reference_scalar_adam(x0, grad_fn, alpha, steps, beta1=0.9, beta2=0.999,
                           eps=1e-8):
    # independent plain-float implementation used as the oracle
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x -= alpha * m_hat / (v_hat ** 0.5 + eps)
    return x


def test_hundred_steps_on_quadratic_matches_reference():
    expected = _reference_scalar_adam(1.0, lambda x: 2.0 * x, alpha=0.1, steps=100)
    assert abs(expected) < 0.1  # frozen from the reference run

    p = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    opt = Adam({"p": p}, alpha=0.1)
    for _ in range(100):
        with Tape() as tape:
            loss = T.tsum(T.mul(p, p))
        backward(tape, loss)
        opt.step()
        opt.zero_grad()
    assert abs(p.data[0]) < 0.1
    assert p.data[0] == pytest.approx(expected, abs=1e-12)


def test_shape_mismatch_rejected():
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam({"p": p})
    p.grad = np.zeros(4)
    with pytest.raises(ShapeMismatchError):
        opt.step()


def test_step_counter_increments_by_one():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam({"p": p})
    for expected in range(1, 4):
        p.grad = np.ones(2)
        opt.step()
        assert opt.state.t == expected


def test_clip_global_norm():
    a = Tensor(np.zeros(2), requires_grad=True)
    b = Tensor(np.zeros(2), requires_grad=True)
    a.grad = np.array([3.0, 0.0])
    b.grad = np.array([0.0, 4.0])
    norm = clip_global_norm([a, b], max_norm=2.5)
    assert norm == pytest.approx(5.0)
    total = np.sqrt((a.grad ** 2).sum() + (b.grad ** 2).sum())
    assert total == pytest.approx(2.5)
    # below the cap nothing changes
    norm = clip_global_norm([a, b], max_norm=10.0)
    assert norm == pytest.approx(2.5)
    assert np.sqrt((a.grad ** 2).sum() + (b.grad ** 2).sum()) == pytest.approx(2.5)


def test_state_tensors_roundtrip():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True, dtype=np.float32)
    opt = Adam({"w": p}, alpha=0.05)
    p.grad = np.array([0.5, -0.5], dtype=np.float32)
    opt.step()
    saved = {k: v.copy() for k, v in opt.state_tensors().items()}
    other = Adam({"w": Tensor(p.data.copy(), requires_grad=True, dtype=np.float32)},
                 alpha=0.05)
    other.load_state_tensors(saved, t=opt.state.t)
    assert other.state.t == 1
    np.testing.assert_array_equal(other.state.m[0], opt.state.m[0])
    np.testing.assert_array_equal(other.state.v[0], opt.state.v[0])
