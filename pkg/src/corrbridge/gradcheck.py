"""Finite-difference gradient checking for every differentiable op family.

The central-difference oracle here is deliberately independent of the tape:
it only ever calls the forward path. ``run_gradcheck`` drives one check per
op family (plus the two full training losses) and reports the worst relative
error seen per entry.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tape, Tensor, backward


def finite_difference_grad(f, params, eps=1e-4):
    """Central-difference gradient of scalar ``f`` w.r.t. each tensor in ``params``.

    ``f`` must be deterministic and must not mutate its inputs. Returns one
    numpy array per parameter, matching shapes. The default eps balances
    truncation against roundoff for loss values of order 1-100 at 64-bit.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads = []
    for p in params:
        flat = p.data.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f())
            flat[i] = orig - eps
            lo = float(f())
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * eps)
        grads.append(g.reshape(p.data.shape))
    return grads


def relative_error(a, b, floor=1e-7):
    """max |a-b| / max(|a|, |b|, floor), elementwise.

    The floor makes components below the finite-difference noise scale an
    absolute comparison (they must agree to floor * tolerance).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_scalar_fn(build_loss, params, eps=1e-4):
    """Compare tape gradients of ``build_loss()`` against finite differences.

    ``build_loss`` must construct the loss from ``params`` from scratch on
    every call (it runs once under a tape and many times for the stencil).
    Returns the worst relative error across all parameters.
    """
    with Tape() as tape:
        loss = build_loss()
    backward(tape, loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    numeric = finite_difference_grad(lambda: build_loss().item(), params, eps=eps)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def _rand(rng, *shape):
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=True, dtype=np.float64)


def _proj(rng, shape):
    # random linear functional turns any op output into a scalar loss
    return T.constant(rng.uniform(-1.0, 1.0, size=shape), dtype=np.float64)


# Each entry builds (params, build_loss) for one op family.

def _case_matmul(rng):
    a, b = _rand(rng, 3, 4), _rand(rng, 4, 5)
    w = _proj(rng, (3, 5))
    return [a, b], lambda: T.tsum(T.mul(T.matmul(a, b), w))


def _case_add_broadcast(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 3)
    w = _proj(rng, (4, 3))
    return [a, b], lambda: T.tsum(T.mul(T.add(a, b), w))


def _case_sub_broadcast(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 3)
    w = _proj(rng, (4, 3))
    return [a, b], lambda: T.tsum(T.mul(T.sub(a, b), w))


def _case_mul(rng):
    a, b = _rand(rng, 4, 3), _rand(rng, 4, 3)
    w = _proj(rng, (4, 3))
    return [a, b], lambda: T.tsum(T.mul(T.mul(a, b), w))


def _case_div_broadcast(rng):
    a = _rand(rng, 4, 3)
    b = Tensor(rng.uniform(0.5, 2.0, size=(3,)), requires_grad=True, dtype=np.float64)
    w = _proj(rng, (4, 3))
    return [a, b], lambda: T.tsum(T.mul(T.div(a, b), w))


def _case_tanh(rng):
    x = _rand(rng, 4, 3)
    w = _proj(rng, (4, 3))
    return [x], lambda: T.tsum(T.mul(T.tanh(x), w))


def _case_sigmoid(rng):
    x = _rand(rng, 4, 3)
    w = _proj(rng, (4, 3))
    return [x], lambda: T.tsum(T.mul(T.sigmoid(x), w))


def _case_softmax(rng):
    x = _rand(rng, 4, 5)
    w = _proj(rng, (4, 5))
    return [x], lambda: T.tsum(T.mul(T.softmax(x), w))


def _case_log(rng):
    x = Tensor(rng.uniform(0.2, 3.0, size=(4, 3)), requires_grad=True, dtype=np.float64)
    w = _proj(rng, (4, 3))
    return [x], lambda: T.tsum(T.mul(T.log(x), w))


def _case_log_softmax(rng):
    x = _rand(rng, 4, 5)
    w = _proj(rng, (4, 5))
    return [x], lambda: T.tsum(T.mul(T.log(T.softmax(x)), w))


def _case_gather_rows(rng):
    m = _rand(rng, 6, 3)
    ids = rng.integers(0, 6, size=5)
    w = _proj(rng, (5, 3))
    return [m], lambda: T.tsum(T.mul(T.gather_rows(m, ids), w))


def _case_pick(rng):
    x = _rand(rng, 5, 4)
    ids = rng.integers(0, 4, size=5)
    w = _proj(rng, (5,))
    return [x], lambda: T.tsum(T.mul(T.pick(x, ids), w))


def _case_concat(rng):
    a, b = _rand(rng, 4, 2), _rand(rng, 4, 3)
    w = _proj(rng, (4, 5))
    return [a, b], lambda: T.tsum(T.mul(T.concat([a, b], axis=-1), w))


def _case_sum_axis(rng):
    x = _rand(rng, 4, 3)
    w = _proj(rng, (4,))
    return [x], lambda: T.tsum(T.mul(T.tsum(x, axis=1), w))


def _case_mean(rng):
    x = _rand(rng, 4, 3)
    w = _proj(rng, (3,))
    return [x], lambda: T.tsum(T.mul(T.tmean(x, axis=0), w))


def _case_scale(rng):
    x = _rand(rng, 4, 3)
    w = _proj(rng, (4, 3))
    return [x], lambda: T.tsum(T.mul(T.scale(x, -0.37), w))


OP_CASES = {
    "matmul": _case_matmul,
    "add_broadcast": _case_add_broadcast,
    "sub_broadcast": _case_sub_broadcast,
    "mul": _case_mul,
    "div_broadcast": _case_div_broadcast,
    "tanh": _case_tanh,
    "sigmoid": _case_sigmoid,
    "softmax": _case_softmax,
    "log": _case_log,
    "log_softmax": _case_log_softmax,
    "gather_rows": _case_gather_rows,
    "pick": _case_pick,
    "concat": _case_concat,
    "sum_axis": _case_sum_axis,
    "mean_axis": _case_mean,
    "scale": _case_scale,
}


def _case_correlation_loss(rng):
    # full objective through two sequence encoders on a padded batch
    from .data import _pad_matrix
    from .losses import StandardizationStats, correlation_loss
    from .networks import SequenceEncoder

    dim, vocab = 4, 6
    enc_a = SequenceEncoder(rng, vocab, dim, dim, dtype=np.float64)
    enc_b = SequenceEncoder(rng, vocab, dim, dim, dtype=np.float64)
    seqs_a = [list(rng.integers(0, vocab, size=rng.integers(2, 5))) for _ in range(3)]
    seqs_b = [list(rng.integers(0, vocab, size=rng.integers(2, 5))) for _ in range(3)]
    ids_a, mask_a = _pad_matrix(seqs_a)
    ids_b, mask_b = _pad_matrix(seqs_b)
    stats_a = StandardizationStats(rng.normal(size=dim), rng.uniform(0.5, 2.0, size=dim))
    stats_b = StandardizationStats(rng.normal(size=dim), rng.uniform(0.5, 2.0, size=dim))
    params = list(enc_a.parameters().values()) + list(enc_b.parameters().values())

    def build_loss():
        ha = enc_a.encode_batch(ids_a, mask_a)
        hb = enc_b.encode_batch(ids_b, mask_b)
        return correlation_loss(ha, hb, stats_a, stats_b, 0.7)

    return params, build_loss


def _case_sequence_nll(rng):
    # full teacher-forced NLL through the decoder, including the representation
    from .losses import sequence_nll
    from .networks import BOS, EOS, Decoder

    dim, vocab = 4, 6
    dec = Decoder(rng, vocab, dim, dim, dtype=np.float64)
    rep = Tensor(rng.uniform(-0.5, 0.5, size=(1, dim)), requires_grad=True,
                 dtype=np.float64)
    target = [BOS] + list(rng.integers(4, vocab, size=3)) + [EOS]
    params = [rep] + list(dec.parameters().values())
    return params, lambda: sequence_nll(dec, rep, target)


FULL_LOSS_CASES = {
    "loss_correlation": _case_correlation_loss,
    "loss_sequence_nll": _case_sequence_nll,
}


def run_gradcheck(seeds=20, tolerance=1e-4, extra_cases=None):
    """Check every op family over ``seeds`` random instances.

    ``extra_cases`` maps name -> case builder with the same signature as the
    op cases (used for the full composite losses). Returns a list of
    (name, worst_rel_err, passed) sorted by name.
    """
    cases = dict(OP_CASES)
    cases.update(FULL_LOSS_CASES)
    if extra_cases:
        cases.update(extra_cases)
    results = []
    for name, builder in sorted(cases.items()):
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng(seed * 7919 + 13)
            params, build_loss = builder(rng)
            err = check_scalar_fn(build_loss, params)
            worst = max(worst, err)
        results.append((name, worst, worst <= tolerance))
    return results
