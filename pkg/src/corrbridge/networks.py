"""Encoders, decoder, and their configuration.

All components share the same conditioning scheme: an encoder produces one
hidden vector per input, and the decoder starts from that vector as its
initial recurrent state. Special token ids are fixed so checkpoints stay
portable across runs.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3

INIT_SCALE = 0.08


class ConfigError(ValueError):
    """Invalid model or training configuration."""


class ModelConfig:
    """Shared dimensions and decode bounds for one encoder-decoder component.

    embed_dim must equal hidden_dim (tied sizes) unless ``allow_unequal_dims``
    is set explicitly.
    """

    def __init__(self, embed_dim, hidden_dim, max_decode_len=16, beam_width=1,
                 cell_type="gru", allow_unequal_dims=False):
        if cell_type != "gru":
            raise ConfigError(f"unsupported cell_type {cell_type!r}; only 'gru' is available")
        if embed_dim != hidden_dim and not allow_unequal_dims:
            raise ConfigError(
                f"embed_dim ({embed_dim}) must equal hidden_dim ({hidden_dim}); "
                "pass allow_unequal_dims=True to override")
        if embed_dim < 1 or hidden_dim < 1:
            raise ConfigError("dimensions must be positive")
        if max_decode_len < 1 or beam_width < 1:
            raise ConfigError("max_decode_len and beam_width must be >= 1")
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.max_decode_len = max_decode_len
        self.beam_width = beam_width
        self.cell_type = cell_type
        self.allow_unequal_dims = allow_unequal_dims

    def to_dict(self):
        return {
            "embed_dim": self.embed_dim,
            "hidden_dim": self.hidden_dim,
            "max_decode_len": self.max_decode_len,
            "beam_width": self.beam_width,
            "cell_type": self.cell_type,
            "allow_unequal_dims": self.allow_unequal_dims,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def init_matrix(rng, rows, cols, dtype):
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=(rows, cols)),
                  requires_grad=True, dtype=dtype)


def init_bias(rng, n, dtype):
    return Tensor(np.zeros(n), requires_grad=True, dtype=dtype)


class GRUCell:
    """Single-layer gated recurrent cell over concatenated [input, state]."""

    def __init__(self, rng, input_dim, hidden_dim, dtype):
        d = input_dim + hidden_dim
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w_reset = init_matrix(rng, d, hidden_dim, dtype)
        self.w_update = init_matrix(rng, d, hidden_dim, dtype)
        self.w_cand = init_matrix(rng, d, hidden_dim, dtype)
        self.b_reset = init_bias(rng, hidden_dim, dtype)
        self.b_update = init_bias(rng, hidden_dim, dtype)
        self.b_cand = init_bias(rng, hidden_dim, dtype)

    def parameters(self):
        return {
            "w_reset": self.w_reset, "w_update": self.w_update, "w_cand": self.w_cand,
            "b_reset": self.b_reset, "b_update": self.b_update, "b_cand": self.b_cand,
        }

    def step(self, x, h):
        """One recurrence step. x: [B, input_dim], h: [B, hidden_dim] -> [B, hidden_dim]."""
        xh = T.concat([x, h], axis=-1)
        reset = T.sigmoid(T.add(T.matmul(xh, self.w_reset), self.b_reset))
        update = T.sigmoid(T.add(T.matmul(xh, self.w_update), self.b_update))
        xrh = T.concat([x, T.mul(reset, h)], axis=-1)
        cand = T.tanh(T.add(T.matmul(xrh, self.w_cand), self.b_cand))
        # update gate interpolates between carried state and candidate
        one_minus = T.sub(T.constant(np.ones(1, dtype=update.dtype)), update)
        return T.add(T.mul(update, h), T.mul(one_minus, cand))


class SequenceEncoder:
    """Token embedding + GRU; the final state is the sequence representation."""

    def __init__(self, rng, vocab_size, embed_dim, hidden_dim, dtype=np.float32):
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.embedding = init_matrix(rng, vocab_size, embed_dim, dtype)
        self.cell = GRUCell(rng, embed_dim, hidden_dim, dtype)
        self.dtype = np.dtype(dtype)
        self.calls = 0  # instrumentation: bumped on every encode

    def parameters(self):
        out = {"embedding": self.embedding}
        out.update({f"gru.{k}": v for k, v in self.cell.parameters().items()})
        return out

    def encode(self, ids):
        """Encode one id sequence to a [1, hidden_dim] representation."""
        self.calls += 1
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size == 0:
            raise ValueError("cannot encode an empty sequence")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise IndexError(f"token id out of range for vocab of {self.vocab_size}")
        h = T.constant(np.zeros((1, self.hidden_dim)), dtype=self.dtype)
        for t in range(ids.size):
            x = T.gather_rows(self.embedding, ids[t:t + 1])
            h = self.cell.step(x, h)
        return h

    def encode_batch(self, id_matrix, mask):
        """Encode padded [B, L] ids; mask freezes the state on PAD steps."""
        self.calls += 1
        batch, length = id_matrix.shape
        h = T.constant(np.zeros((batch, self.hidden_dim)), dtype=self.dtype)
        for t in range(length):
            x = T.gather_rows(self.embedding, id_matrix[:, t])
            h_new = self.cell.step(x, h)
            m = T.constant(mask[:, t:t + 1].astype(self.dtype))
            h = T.add(h, T.mul(m, T.sub(h_new, h)))
        return h


class VectorEncoder:
    """Affine map + tanh over fixed-length feature vectors (non-text views)."""

    def __init__(self, rng, feature_dim, hidden_dim, dtype=np.float32):
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.weight = init_matrix(rng, feature_dim, hidden_dim, dtype)
        self.bias = init_bias(rng, hidden_dim, dtype)
        self.dtype = np.dtype(dtype)
        self.calls = 0

    def parameters(self):
        return {"weight": self.weight, "bias": self.bias}

    def encode(self, feats):
        self.calls += 1
        feats = np.atleast_2d(np.asarray(feats, dtype=self.dtype))
        if feats.shape[1] != self.feature_dim:
            raise T.ShapeMismatchError("encode_vector", feats.shape, (self.feature_dim,))
        return T.tanh(T.add(T.matmul(T.constant(feats), self.weight), self.bias))

    def encode_batch(self, feats, mask=None):
        return self.encode(feats)


class Decoder:
    """Target embedding + GRU + output projection to target vocab logits."""

    def __init__(self, rng, vocab_size, embed_dim, hidden_dim, dtype=np.float32):
        self.vocab_size = vocab_size
        self.hidden_dim = hidden_dim
        self.embedding = init_matrix(rng, vocab_size, embed_dim, dtype)
        self.cell = GRUCell(rng, embed_dim, hidden_dim, dtype)
        self.w_out = init_matrix(rng, hidden_dim, vocab_size, dtype)
        self.b_out = init_bias(rng, vocab_size, dtype)
        self.dtype = np.dtype(dtype)

    def parameters(self):
        out = {"embedding": self.embedding, "w_out": self.w_out, "b_out": self.b_out}
        out.update({f"gru.{k}": v for k, v in self.cell.parameters().items()})
        return out

    def step(self, prev_ids, h):
        """Advance one step. prev_ids: [B] token ids, h: [B, H] -> (logits [B, V], h')."""
        x = T.gather_rows(self.embedding, np.asarray(prev_ids, dtype=np.intp))
        h_new = self.cell.step(x, h)
        logits = T.add(T.matmul(h_new, self.w_out), self.b_out)
        return logits, h_new


def collect_parameters(components):
    """Flatten {component_name: obj} into {"name.param": Tensor} in stable order."""
    out = {}
    for comp_name, comp in components.items():
        for pname, p in comp.parameters().items():
            out[f"{comp_name}.{pname}"] = p
    return out
