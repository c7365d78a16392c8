"""Parameter bundles for the two pipelines.

``EncoderDecoder`` is one stage of the two-stage system (and the whole model
for a single view pair). ``BridgeModel`` holds the source encoder, the shared
pivot encoder, and the target decoder of the correlational system, plus the
standardization statistics for both encoders.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .data import Vocab
from .decoding import decode_beam, decode_greedy
from .losses import StandardizationStats, batch_cross_entropy
from .networks import (Decoder, ModelConfig, SequenceEncoder, VectorEncoder,
                       collect_parameters)


def _make_encoder(rng, kind, vocab_size, feature_dim, config, dtype):
    if kind == "vector":
        if feature_dim is None:
            raise ValueError("vector encoders need feature_dim")
        return VectorEncoder(rng, feature_dim, config.hidden_dim, dtype)
    return SequenceEncoder(rng, vocab_size, config.embed_dim, config.hidden_dim, dtype)


class EncoderDecoder:
    """One encoder + decoder pair over a (source vocab, target vocab)."""

    def __init__(self, rng, source_vocab, target_vocab, config,
                 source_kind="text", feature_dim=None, dtype=np.float32):
        self.config = config
        self.source_vocab = source_vocab
        self.target_vocab = target_vocab
        self.source_kind = source_kind
        self.feature_dim = feature_dim
        self.dtype = np.dtype(dtype)
        self.encoder = _make_encoder(rng, source_kind, len(source_vocab),
                                     feature_dim, config, dtype)
        self.decoder = Decoder(rng, len(target_vocab), config.embed_dim,
                               config.hidden_dim, dtype)

    def parameters(self):
        return collect_parameters({"encoder": self.encoder, "decoder": self.decoder})

    def encode_batch(self, batch):
        if self.source_kind == "vector":
            return self.encoder.encode_batch(batch.source_vectors)
        return self.encoder.encode_batch(batch.source, batch.source_mask)

    def batch_loss(self, batch):
        reps = self.encode_batch(batch)
        return batch_cross_entropy(self.decoder, reps, batch.target, batch.target_mask)

    def encode_one(self, source):
        if self.source_kind == "vector":
            return self.encoder.encode(source)
        return self.encoder.encode(source)

    def generate_ids(self, source, beam_width=None):
        """Decode output ids for one source (id sequence or feature vector)."""
        rep = self.encode_one(source)
        width = self.config.beam_width if beam_width is None else beam_width
        if width == 1:
            return decode_greedy(self.decoder, rep, self.config.max_decode_len)
        return decode_beam(self.decoder, rep, width, self.config.max_decode_len)


class BridgeModel:
    """Correlational bundle: source/pivot encoders sharing one hidden space
    and a target decoder conditioned on the pivot representation."""

    def __init__(self, rng, source_vocab, pivot_vocab, target_vocab, config,
                 source_kind="text", feature_dim=None, dtype=np.float32,
                 var_floor=1e-6):
        self.config = config
        self.source_vocab = source_vocab
        self.pivot_vocab = pivot_vocab
        self.target_vocab = target_vocab
        self.source_kind = source_kind
        self.feature_dim = feature_dim
        self.dtype = np.dtype(dtype)
        self.source_encoder = _make_encoder(rng, source_kind, len(source_vocab),
                                            feature_dim, config, dtype)
        self.pivot_encoder = SequenceEncoder(rng, len(pivot_vocab), config.embed_dim,
                                             config.hidden_dim, dtype)
        self.target_decoder = Decoder(rng, len(target_vocab), config.embed_dim,
                                      config.hidden_dim, dtype)
        self.stats_source = StandardizationStats.initial(config.hidden_dim, var_floor)
        self.stats_pivot = StandardizationStats.initial(config.hidden_dim, var_floor)

    def parameters(self):
        return collect_parameters({
            "source_encoder": self.source_encoder,
            "pivot_encoder": self.pivot_encoder,
            "target_decoder": self.target_decoder,
        })

    def pivot_parameters(self):
        return {f"pivot_encoder.{k}": v
                for k, v in self.pivot_encoder.parameters().items()}

    def encode_source_batch(self, batch):
        if self.source_kind == "vector":
            return self.source_encoder.encode_batch(batch.source_vectors)
        return self.source_encoder.encode_batch(batch.source, batch.source_mask)

    def pivot_target_loss(self, batch):
        reps = self.pivot_encoder.encode_batch(batch.source, batch.source_mask)
        return batch_cross_entropy(self.target_decoder, reps, batch.target,
                                   batch.target_mask)

    def _decode(self, rep, beam_width):
        width = self.config.beam_width if beam_width is None else beam_width
        if width == 1:
            return decode_greedy(self.target_decoder, rep, self.config.max_decode_len)
        return decode_beam(self.target_decoder, rep, width, self.config.max_decode_len)

    def bridge_ids(self, source, beam_width=None, representation="raw"):
        """Source -> target ids directly; never touches the pivot encoder.

        ``representation`` selects what feeds the decoder: "raw" (the trained
        default) or "pivot_aligned", which standardizes the source
        representation and re-expresses it under the pivot-side distribution
        (unfloored variances: this is a distribution map, not the training
        objective).
        """
        rep = self.source_encoder.encode(source)
        if representation == "pivot_aligned":
            dtype = rep.dtype
            sx_scale = np.sqrt(np.maximum(self.stats_source.raw_var, 1e-12))
            pz_scale = np.sqrt(np.maximum(self.stats_pivot.raw_var, 1e-12))
            sx = (rep.data - self.stats_source.mean.astype(dtype)) / \
                sx_scale.astype(dtype)
            aligned = self.stats_pivot.mean.astype(dtype) + \
                sx * pz_scale.astype(dtype)
            rep = T.constant(aligned.astype(dtype))
        elif representation != "raw":
            raise ValueError(f"unknown inference representation {representation!r}")
        return self._decode(rep, beam_width)

    def pivot_to_target_ids(self, pivot_ids, beam_width=None):
        """Pivot -> target ids (the validation/tuning path)."""
        rep = self.pivot_encoder.encode(pivot_ids)
        return self._decode(rep, beam_width)
