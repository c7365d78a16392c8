"""Training objectives: standardized-correlation loss and sequence cross-entropy.

The correlation objective operates on standardized representations. The
mean/variance statistics are constants within an epoch (no gradient flows
through them) and are recomputed over all training representations at each
epoch boundary, starting from mean 0 / variance 1 in the first epoch.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .networks import BOS, EOS
from .tensor import ShapeMismatchError


class StandardizationStats:
    """Per-dimension mean and variance for one encoder's representations.

    ``var`` is floored at ``var_floor`` and is what the training-time
    standardization divides by; ``raw_var`` keeps the unfloored measurement
    (needed when re-expressing one encoder's representations under another's
    distribution at inference time).
    """

    def __init__(self, mean, var, var_floor=1e-6, raw_var=None):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.raw_var = np.asarray(var if raw_var is None else raw_var,
                                  dtype=np.float64)
        self.var = np.maximum(np.asarray(var, dtype=np.float64), var_floor)
        self.var_floor = var_floor

    @classmethod
    def initial(cls, dim, var_floor=1e-6):
        return cls(np.zeros(dim), np.ones(dim), var_floor)

    @classmethod
    def from_representations(cls, reps, var_floor=1e-6):
        """Population mean/variance over rows of ``reps`` (accumulated at 64-bit)."""
        reps = np.asarray(reps, dtype=np.float64)
        if reps.ndim != 2 or reps.shape[0] < 1:
            raise ValueError("need a non-empty [n, dim] matrix of representations")
        return cls(reps.mean(axis=0), reps.var(axis=0), var_floor)

    @property
    def dim(self):
        return self.mean.shape[0]

    def to_dict(self):
        return {"mean": self.mean.tolist(), "var": self.var.tolist(),
                "var_floor": self.var_floor, "raw_var": self.raw_var.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mean"], d["var"], d["var_floor"], raw_var=d.get("raw_var"))


def standardize(h, stats):
    """(h - mean) / sqrt(var) per dimension; differentiable w.r.t. ``h`` only."""
    if h.shape[-1] != stats.dim:
        raise ShapeMismatchError("standardize", h.shape, (stats.dim,))
    dtype = h.dtype
    mean = T.constant(stats.mean.astype(dtype))
    std = T.constant(np.sqrt(stats.var).astype(dtype))
    return T.div(T.sub(h, mean), std)


def correlation_loss(hx, hz, stats_x, stats_z, corr_weight):
    """Negative scaled correlation between two standardized representation batches.

    corr = sum_i <s(hx_i), s(hz_i)> / (batch * dim), so with exact batch
    statistics the value lies in [-1, 1]; the loss is -corr_weight * corr.
    """
    if hx.shape != hz.shape:
        raise ShapeMismatchError("correlation_loss", hx.shape, hz.shape)
    if hx.ndim != 2 or hx.shape[0] < 1:
        raise ShapeMismatchError("correlation_loss", hx.shape)
    batch, dim = hx.shape
    sx = standardize(hx, stats_x)
    sz = standardize(hz, stats_z)
    corr = T.scale(T.tsum(T.mul(sx, sz)), 1.0 / (batch * dim))
    return T.scale(corr, -float(corr_weight))


def exact_batch_correlation(hx, hz, var_floor=1e-6):
    """Normalized correlation using the batch's own statistics (measurement only)."""
    hx = np.asarray(hx, dtype=np.float64)
    hz = np.asarray(hz, dtype=np.float64)
    sx = (hx - hx.mean(axis=0)) / np.sqrt(np.maximum(hx.var(axis=0), var_floor))
    sz = (hz - hz.mean(axis=0)) / np.sqrt(np.maximum(hz.var(axis=0), var_floor))
    return float((sx * sz).sum() / (hx.shape[0] * hx.shape[1]))


def _check_wrapped(target_ids):
    ids = list(target_ids)
    if len(ids) < 2:
        raise ValueError("target sequence is empty after BOS/EOS wrapping")
    if ids[0] != BOS or ids[-1] != EOS:
        raise ValueError("target sequence must be wrapped as [BOS, ..., EOS]")
    return ids


def sequence_nll(decoder, rep, target_ids):
    """Teacher-forced negative log-likelihood of one wrapped target sequence.

    ``target_ids`` is [BOS, y_1, ..., y_L, EOS]; BOS is fed as the first
    decoder input and not scored, every following token (EOS included) is.
    The value is a sum over tokens, not length-normalized.
    """
    ids = _check_wrapped(target_ids)
    h = rep
    total = None
    for i in range(len(ids) - 1):
        logits, h = decoder.step(np.array([ids[i]]), h)
        logp = T.log(T.softmax(logits))
        picked = T.pick(logp, np.array([ids[i + 1]]))
        total = picked if total is None else T.add(total, picked)
    return T.scale(T.tsum(total), -1.0)


def batch_cross_entropy(decoder, reps, targets, mask):
    """Mean over examples of per-example teacher-forced NLL on a padded batch.

    ``targets`` is the wrapped [B, L] id matrix, ``mask`` marks its real
    tokens. Scored positions are targets[:, 1:] where the mask is set.
    """
    targets = np.asarray(targets)
    mask = np.asarray(mask)
    if targets.shape != mask.shape or targets.ndim != 2:
        raise ShapeMismatchError("batch_cross_entropy", targets.shape, mask.shape)
    if reps.shape[0] != targets.shape[0]:
        raise ShapeMismatchError("batch_cross_entropy", reps.shape, targets.shape)
    score_mask = mask[:, 1:]
    if not score_mask.any(axis=1).all():
        raise ValueError("batch contains an all-PAD target row")
    batch, length = targets.shape
    h = reps
    total = None  # [B] accumulated log-likelihood
    for i in range(length - 1):
        active = score_mask[:, i]
        if not active.any():
            break
        logits, h = decoder.step(targets[:, i], h)
        logp = T.log(T.softmax(logits))
        picked = T.pick(logp, targets[:, i + 1])
        masked = T.mul(picked, T.constant(active.astype(picked.dtype)))
        total = masked if total is None else T.add(total, masked)
    return T.scale(T.tmean(total), -1.0)
