"""Scikit-learn style estimators for the two pivot-generation pipelines.

``TwoStageEncoderDecoder`` chains two independently trained encoder-decoders
(source -> pivot, then pivot -> target) at prediction time.
``CorrelationalEncoderDecoder`` trains a source encoder and a pivot encoder
to produce correlated representations while a decoder learns pivot -> target;
prediction encodes the source and decodes the target directly, never touching
pivot data.

Both follow the fit/predict/get_params contract, so they compose with
scikit-learn tooling (cloning, grid utilities).
"""

from __future__ import annotations

import itertools

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import tensor as T
from ._version import __version__ as _pkg_version
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .data import Vocab, corpus_from_pairs, detokenize, tokenize
from .decoding import decode_beam, decode_greedy
from .losses import StandardizationStats
from .metrics import compute_accuracy
from .models import BridgeModel, EncoderDecoder
from .networks import UNK, ConfigError, ModelConfig
from .optim import Adam
from .trainer import (LoopState, TrainConfig, finalize_best, holdout_correlation,
                      joint_train_epoch, run_epochs, single_train_epoch,
                      snapshot_params)


class GuardError(RuntimeError):
    """A data-hygiene rule was violated (forbidden view pair touched)."""


# ---------------------------------------------------------------------------
# input validation helpers
# ---------------------------------------------------------------------------

def check_string_pairs(pairs, name):
    """Validate a corpus of (source, target) non-empty string pairs."""
    if pairs is None or len(pairs) == 0:
        raise ValueError(f"{name}: corpus is empty")
    for i, item in enumerate(pairs):
        if not (isinstance(item, (tuple, list)) and len(item) == 2):
            raise ValueError(f"{name}[{i}]: expected a (source, target) pair")
        a, b = item
        if not isinstance(a, str) or not isinstance(b, str) or not a or not b:
            raise ValueError(f"{name}[{i}]: both sides must be non-empty strings")
    return [(a, b) for a, b in pairs]


def check_vector_pairs(pairs, name):
    """Validate a corpus of (feature vector, target string) pairs."""
    if pairs is None or len(pairs) == 0:
        raise ValueError(f"{name}: corpus is empty")
    feats, targets = [], []
    dim = None
    for i, item in enumerate(pairs):
        if not (isinstance(item, (tuple, list)) and len(item) == 2):
            raise ValueError(f"{name}[{i}]: expected a (features, target) pair")
        vec = np.asarray(item[0], dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0 or not np.all(np.isfinite(vec)):
            raise ValueError(f"{name}[{i}]: features must be a finite 1-d vector")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise ValueError(f"{name}[{i}]: feature dim {vec.size} != {dim}")
        if not isinstance(item[1], str) or not item[1]:
            raise ValueError(f"{name}[{i}]: target must be a non-empty string")
        feats.append(vec)
        targets.append(item[1])
    return np.asarray(feats), targets


def check_texts(X, name="X"):
    if X is None or len(X) == 0:
        raise ValueError(f"{name}: no inputs")
    for i, s in enumerate(X):
        if not isinstance(s, str) or not s:
            raise ValueError(f"{name}[{i}]: expected a non-empty string")
    return list(X)


def _split_validation(pairs, fraction, seed):
    """Deterministic held-out split used when no validation set is given."""
    n = len(pairs)
    k = max(1, int(round(n * fraction)))
    if k >= n:
        raise ValueError("corpus too small to carve a validation split")
    idx = np.random.default_rng(seed).permutation(n)
    valid = [pairs[i] for i in idx[:k]]
    train = [pairs[i] for i in idx[k:]]
    return train, valid


def _default_decode_len(source_lengths, target_lengths):
    # transliteration-style outputs scale near-linearly with input length
    if source_lengths:
        return max(16, 2 * max(source_lengths))
    return max(16, 2 * max(target_lengths))


def _decode_text(vocab, ids, mode):
    return detokenize(vocab.decode(ids), mode)


def _greedy_eval_accuracy(generate, valid_pairs):
    hyps = [generate(src) for src, _ in valid_pairs]
    return compute_accuracy(hyps, [ref for _, ref in valid_pairs])


def _batched_greedy_accuracy(encoder, decoder, source_vocab, target_vocab,
                             tokenizer, valid_pairs, max_decode_len,
                             batch_size=256):
    """Epoch-validation fast path: batched encode + batched greedy decode."""
    from .data import _pad_matrix
    from .decoding import decode_greedy_batch
    seqs = [source_vocab.encode(tokenize(s, tokenizer)) for s, _ in valid_pairs]
    order = sorted(range(len(seqs)), key=lambda i: -len(seqs[i]))
    hyps = [None] * len(seqs)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        ids, mask = _pad_matrix([seqs[i] for i in idx])
        reps = encoder.encode_batch(ids, mask)
        outs = decode_greedy_batch(decoder, reps, max_decode_len)
        for i, out in zip(idx, outs):
            hyps[i] = detokenize(target_vocab.decode(out), tokenizer)
    return compute_accuracy(hyps, [ref for _, ref in valid_pairs])


class _FittedMixin:
    def _require_fitted(self):
        if not getattr(self, "_is_fitted", False):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    def _train_config(self, **overrides):
        base = dict(
            corr_weight=getattr(self, "corr_weight", 0.5),
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.seed,
            var_floor=getattr(self, "var_floor", 1e-6),
            grad_clip=self.grad_clip,
            allow_corr_weight_outside_range=getattr(
                self, "allow_corr_weight_outside_range", False),
        )
        base.update(overrides)
        return TrainConfig(**base)

    def _model_config(self, max_decode_len):
        embed = self.hidden_dim if self.embed_dim is None else self.embed_dim
        return ModelConfig(
            embed_dim=embed, hidden_dim=self.hidden_dim,
            max_decode_len=self.max_decode_len or max_decode_len,
            beam_width=self.beam_width,
            allow_unequal_dims=self.allow_unequal_dims)

    @property
    def _np_dtype(self):
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be 'float32' or 'float64', got {self.dtype!r}")
        return np.float32 if self.dtype == "float32" else np.float64


def _loop_meta(state):
    return {
        "epochs_done": state.epochs_done,
        "best_metric": state.best_metric,
        "best_epoch": state.best_epoch,
        "bad_epochs": state.bad_epochs,
        "stopped": state.stopped,
        "history": state.history,
    }


def _loop_from_meta(meta):
    state = LoopState(
        epochs_done=meta["epochs_done"], best_metric=meta["best_metric"],
        best_epoch=meta["best_epoch"], bad_epochs=meta["bad_epochs"],
        stopped=meta["stopped"])
    state.history = list(meta["history"])
    return state


class TwoStageEncoderDecoder(BaseEstimator, _FittedMixin):
    """Baseline pipeline: source->pivot and pivot->target trained independently.

    Parameters mirror the shared training regime; the embedding size is tied
    to ``hidden_dim`` unless ``embed_dim``/``allow_unequal_dims`` say
    otherwise. ``predict`` runs the stages sequentially, re-tokenizing the
    intermediate pivot string under the second stage's vocabulary.
    """

    def __init__(self, hidden_dim=64, embed_dim=None, learning_rate=1e-3,
                 batch_size=32, max_epochs=30, patience=5, seed=0, beam_width=1,
                 max_decode_len=None, grad_clip=5.0, tokenizer="char",
                 source_view="sequence", valid_fraction=0.1,
                 allow_unequal_dims=False, dtype="float32"):
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.beam_width = beam_width
        self.max_decode_len = max_decode_len
        self.grad_clip = grad_clip
        self.tokenizer = tokenizer
        self.source_view = source_view
        self.valid_fraction = valid_fraction
        self.allow_unequal_dims = allow_unequal_dims
        self.dtype = dtype

    def fit(self, source_pivot, pivot_target, source_pivot_valid=None,
            pivot_target_valid=None, resume=False):
        """Train both stages on their own corpora and validation splits."""
        if self.source_view != "sequence":
            raise ConfigError("two-stage training supports sequence sources only")
        d1 = check_string_pairs(source_pivot, "source_pivot")
        d2 = check_string_pairs(pivot_target, "pivot_target")
        if source_pivot_valid is None:
            d1, d1_valid = _split_validation(d1, self.valid_fraction, self.seed + 101)
        else:
            d1_valid = check_string_pairs(source_pivot_valid, "source_pivot_valid")
        if pivot_target_valid is None:
            d2, d2_valid = _split_validation(d2, self.valid_fraction, self.seed + 202)
        else:
            d2_valid = check_string_pairs(pivot_target_valid, "pivot_target_valid")

        if not resume:
            # one pivot vocabulary shared by stage1 targets and stage2 sources
            pivot_vocab = Vocab()
            for _, z in d1:
                for t in tokenize(z, self.tokenizer):
                    pivot_vocab.add(t)
            for z, _ in d2:
                for t in tokenize(z, self.tokenizer):
                    pivot_vocab.add(t)
            corpus1 = corpus_from_pairs(d1, self.tokenizer, target_vocab=pivot_vocab)
            corpus2 = corpus_from_pairs(d2, self.tokenizer, source_vocab=pivot_vocab)
            cfg1 = self._model_config(_default_decode_len(
                [len(s) for s, _ in corpus1.pairs], [len(t) for _, t in corpus1.pairs]))
            cfg2 = self._model_config(_default_decode_len(
                [len(s) for s, _ in corpus2.pairs], [len(t) for _, t in corpus2.pairs]))
            rng = np.random.default_rng(self.seed)
            self.stage1_ = EncoderDecoder(rng, corpus1.source_vocab, pivot_vocab,
                                          cfg1, dtype=self._np_dtype)
            self.stage2_ = EncoderDecoder(rng, pivot_vocab, corpus2.target_vocab,
                                          cfg2, dtype=self._np_dtype)
            self._states = [LoopState(), LoopState()]
            self._optimizers = [None, None]
        else:
            self._require_fitted()
            corpus1 = corpus_from_pairs(d1, self.tokenizer,
                                        source_vocab=self.stage1_.source_vocab,
                                        target_vocab=self.stage1_.target_vocab)
            corpus2 = corpus_from_pairs(d2, self.tokenizer,
                                        source_vocab=self.stage2_.source_vocab,
                                        target_vocab=self.stage2_.target_vocab)
            for name, stage in (("stage1", self.stage1_), ("stage2", self.stage2_)):
                snap = self._live_params.get(name)
                if snap:
                    for pname, p in stage.parameters().items():
                        p.data[...] = snap[pname]

        histories = []
        for i, (stage, corpus, valid, role) in enumerate([
                (self.stage1_, corpus1, d1_valid, 11),
                (self.stage2_, corpus2, d2_valid, 12)]):
            cfg = self._train_config(seed=self.seed + role)
            optimizer = self._optimizers[i] or Adam(stage.parameters(),
                                                    alpha=self.learning_rate)
            self._optimizers[i] = optimizer

            state = run_epochs(
                stage,
                lambda epoch, stage=stage, corpus=corpus, cfg=cfg, opt=optimizer:
                    single_train_epoch(stage, corpus, cfg, opt, epoch),
                lambda stage=stage, valid=valid: _batched_greedy_accuracy(
                    stage.encoder, stage.decoder, stage.source_vocab,
                    stage.target_vocab, self.tokenizer, valid,
                    stage.config.max_decode_len),
                cfg, state=self._states[i])
            self._states[i] = state
            histories.append(state.history)

        self._live_params = {"stage1": snapshot_params(self.stage1_),
                             "stage2": snapshot_params(self.stage2_)}
        finalize_best(self.stage1_, self._states[0])
        finalize_best(self.stage2_, self._states[1])
        self.history_ = {"stage1": histories[0], "stage2": histories[1]}
        self.validation_accuracy_ = {
            "stage1": self._states[0].best_metric,
            "stage2": self._states[1].best_metric,
        }
        self._is_fitted = True
        return self

    # -- inference ---------------------------------------------------------

    def _predict_one(self, text, beam_width):
        ids = self.stage1_.source_vocab.encode(tokenize(text, self.tokenizer))
        pivot_ids = self.stage1_.generate_ids(ids, beam_width=beam_width)
        pivot_text = _decode_text(self.stage1_.target_vocab, pivot_ids, self.tokenizer)
        flags = []
        if not pivot_text:
            # decode from the zero representation with only BOS context
            flags.append("empty_pivot")
            rep = T.constant(np.zeros((1, self.stage2_.config.hidden_dim)),
                             dtype=self.stage2_.dtype)
            width = beam_width or self.stage2_.config.beam_width
            if width == 1:
                out_ids = decode_greedy(self.stage2_.decoder, rep,
                                        self.stage2_.config.max_decode_len)
            else:
                out_ids = decode_beam(self.stage2_.decoder, rep, width,
                                      self.stage2_.config.max_decode_len)
        else:
            retok = self.stage2_.source_vocab.encode(tokenize(pivot_text, self.tokenizer))
            if any(t == UNK for t in retok):
                flags.append("pivot_unk_fallback")
            out_ids = self.stage2_.generate_ids(retok, beam_width=beam_width)
        return {
            "output": _decode_text(self.stage2_.target_vocab, out_ids, self.tokenizer),
            "pivot": pivot_text,
            "flags": flags,
        }

    def predict_detailed(self, X, beam_width=None):
        self._require_fitted()
        return [self._predict_one(x, beam_width) for x in check_texts(X)]

    def predict(self, X, beam_width=None):
        """Source texts -> target texts through the decoded pivot."""
        return [r["output"] for r in self.predict_detailed(X, beam_width)]

    def predict_pivot(self, X, beam_width=None):
        """Stage-1 only: source texts -> pivot texts."""
        self._require_fitted()
        out = []
        for x in check_texts(X):
            ids = self.stage1_.source_vocab.encode(tokenize(x, self.tokenizer))
            out.append(_decode_text(self.stage1_.target_vocab,
                                    self.stage1_.generate_ids(ids, beam_width=beam_width),
                                    self.tokenizer))
        return out

    def predict_from_pivot(self, Z, beam_width=None):
        """Stage-2 only: pivot texts -> target texts."""
        self._require_fitted()
        out = []
        for z in check_texts(Z, "Z"):
            ids = self.stage2_.source_vocab.encode(tokenize(z, self.tokenizer))
            out.append(_decode_text(self.stage2_.target_vocab,
                                    self.stage2_.generate_ids(ids, beam_width=beam_width),
                                    self.tokenizer))
        return out

    def score(self, X, y, beam_width=None):
        """Exact-match accuracy of ``predict(X)`` against references ``y``."""
        return compute_accuracy(self.predict(X, beam_width=beam_width), list(y))

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        self._require_fitted()
        tensors = {}
        meta_stages = {}
        for name, stage, state, opt in (
                ("stage1", self.stage1_, self._states[0], self._optimizers[0]),
                ("stage2", self.stage2_, self._states[1], self._optimizers[1])):
            params = stage.parameters()
            live = self._live_params.get(name) or snapshot_params(stage)
            best = state.best_params or snapshot_params(stage)
            for pname in params:
                tensors[f"{name}.live.{pname}"] = live[pname]
                tensors[f"{name}.best.{pname}"] = best[pname]
            if opt is not None:
                for tname, arr in opt.state_tensors().items():
                    tensors[f"{name}.{tname}"] = arr
            meta_stages[name] = {
                "model_config": stage.config.to_dict(),
                "source_vocab": stage.source_vocab.tokens[4:],
                "target_vocab": stage.target_vocab.tokens[4:],
                "loop": _loop_meta(state),
                "adam_t": opt.state.t if opt else 0,
            }
        metadata = {
            "kind": "two-stage",
            "package_version": _pkg_version,
            "estimator_params": self.get_params(),
            "stages": meta_stages,
            "rng": {"seed": self.seed,
                    "epochs_done": [s.epochs_done for s in self._states]},
        }
        save_checkpoint(path, metadata, tensors)

    @classmethod
    def load(cls, path):
        metadata, tensors = load_checkpoint(path)
        if metadata.get("kind") != "two-stage":
            raise CheckpointFormatError(
                f"checkpoint holds a {metadata.get('kind')!r} model, not two-stage")
        est = cls(**metadata["estimator_params"])
        rng = np.random.default_rng(0)  # placeholder init, overwritten below
        stages = []
        states = []
        optimizers = []
        live_params = {}
        for name in ("stage1", "stage2"):
            m = metadata["stages"][name]
            src_vocab = Vocab(m["source_vocab"])
            tgt_vocab = Vocab(m["target_vocab"])
            stage = EncoderDecoder(rng, src_vocab, tgt_vocab,
                                   ModelConfig.from_dict(m["model_config"]),
                                   dtype=est._np_dtype)
            params = stage.parameters()
            live = {}
            best = {}
            for pname, p in params.items():
                live[pname] = np.array(tensors[f"{name}.live.{pname}"], dtype=p.dtype)
                best[pname] = np.array(tensors[f"{name}.best.{pname}"], dtype=p.dtype)
                if best[pname].shape != p.data.shape:
                    raise CheckpointFormatError(
                        f"{name}.{pname}: shape {best[pname].shape} disagrees "
                        f"with config {p.data.shape}")
                p.data[...] = best[pname]
            state = _loop_from_meta(m["loop"])
            state.best_params = best
            opt = Adam(params, alpha=est.learning_rate)
            opt.load_state_tensors(
                {k.removeprefix(f"{name}."): v for k, v in tensors.items()
                 if k.startswith(f"{name}.adam.")}, m["adam_t"])
            stages.append(stage)
            states.append(state)
            optimizers.append(opt)
            live_params[name] = live
        est.stage1_, est.stage2_ = stages
        est._states = states
        est._optimizers = optimizers
        est._live_params = live_params
        est.history_ = {"stage1": states[0].history, "stage2": states[1].history}
        est.validation_accuracy_ = {"stage1": states[0].best_metric,
                                    "stage2": states[1].best_metric}
        est._is_fitted = True
        return est


class CorrelationalEncoderDecoder(BaseEstimator, _FittedMixin):
    """Jointly trained bridge model.

    ``fit`` alternates correlation batches over the source-pivot corpus with
    cross-entropy batches over the pivot-target corpus; early stopping uses
    pivot->target validation accuracy only. ``predict`` encodes the source
    and decodes the target directly; touching the pivot encoder there is a
    guarded error.
    """

    def __init__(self, hidden_dim=64, embed_dim=None, corr_weight=0.5,
                 learning_rate=1e-3, batch_size=32, max_epochs=30, patience=5,
                 seed=0, beam_width=1, max_decode_len=None, grad_clip=5.0,
                 var_floor=1e-6, tokenizer="char", source_view="sequence",
                 valid_fraction=0.1, inference_representation="raw",
                 allow_corr_weight_outside_range=False, allow_unequal_dims=False,
                 dtype="float32"):
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.corr_weight = corr_weight
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.beam_width = beam_width
        self.max_decode_len = max_decode_len
        self.grad_clip = grad_clip
        self.var_floor = var_floor
        self.tokenizer = tokenizer
        self.source_view = source_view
        self.valid_fraction = valid_fraction
        self.inference_representation = inference_representation
        self.allow_corr_weight_outside_range = allow_corr_weight_outside_range
        self.allow_unequal_dims = allow_unequal_dims
        self.dtype = dtype

    def _prepare_corpora(self, d1, d2, pivot_vocab=None, source_vocab=None,
                         target_vocab=None):
        """Source-pivot pairs feed two encoders (plain ids both sides);
        pivot-target pairs feed encoder + decoder (wrapped targets)."""
        if self.source_view == "vector":
            feats, pivots = d1
            corpus1 = corpus_from_pairs([("x", z) for z in pivots], self.tokenizer,
                                        source_vocab=Vocab(),
                                        target_vocab=pivot_vocab,
                                        wrap_targets=False)
            corpus1.source_kind = "vector"
            corpus1.source_vectors = feats
            corpus1.pairs = [(None, z) for _, z in corpus1.pairs]
        else:
            corpus1 = corpus_from_pairs(d1, self.tokenizer,
                                        source_vocab=source_vocab,
                                        target_vocab=pivot_vocab,
                                        wrap_targets=False)
        corpus2 = corpus_from_pairs(d2, self.tokenizer,
                                    source_vocab=corpus1.target_vocab,
                                    target_vocab=target_vocab)
        return corpus1, corpus2

    def fit(self, source_pivot, pivot_target, source_pivot_valid=None,
            pivot_target_valid=None, resume=False):
        """Joint training; validation never sees source-target pairs."""
        vector_view = self.source_view == "vector"
        if vector_view:
            d1 = check_vector_pairs(source_pivot, "source_pivot")
        else:
            d1 = check_string_pairs(source_pivot, "source_pivot")
        d2 = check_string_pairs(pivot_target, "pivot_target")
        if pivot_target_valid is None:
            d2, d2_valid = _split_validation(d2, self.valid_fraction, self.seed + 303)
        else:
            d2_valid = check_string_pairs(pivot_target_valid, "pivot_target_valid")

        if not resume:
            # shared pivot vocabulary across both corpora, first-appearance order
            pivot_vocab = Vocab()
            pivot_iter = d1[1] if vector_view else [z for _, z in d1]
            for z in pivot_iter:
                for t in tokenize(z, self.tokenizer):
                    pivot_vocab.add(t)
            for z, _ in d2:
                for t in tokenize(z, self.tokenizer):
                    pivot_vocab.add(t)
            corpus1, corpus2 = self._prepare_corpora(d1, d2, pivot_vocab=pivot_vocab)
            src_lens = [] if vector_view else [len(s) for s, _ in corpus1.pairs]
            cfg = self._model_config(_default_decode_len(
                src_lens, [len(t) for _, t in corpus2.pairs]))
            rng = np.random.default_rng(self.seed)
            self.model_ = BridgeModel(
                rng, corpus1.source_vocab, pivot_vocab, corpus2.target_vocab, cfg,
                source_kind="vector" if vector_view else "text",
                feature_dim=d1[0].shape[1] if vector_view else None,
                dtype=self._np_dtype, var_floor=self.var_floor)
            self._state = LoopState()
            self._optimizer = None
        else:
            self._require_fitted()
            corpus1, corpus2 = self._prepare_corpora(
                d1, d2, pivot_vocab=self.model_.pivot_vocab,
                source_vocab=self.model_.source_vocab,
                target_vocab=self.model_.target_vocab)
            if self._live_params:
                for pname, p in self.model_.parameters().items():
                    p.data[...] = self._live_params[pname]
                self.model_.stats_source = StandardizationStats.from_dict(
                    self._live_stats["source"])
                self.model_.stats_pivot = StandardizationStats.from_dict(
                    self._live_stats["pivot"])

        train_cfg = self._train_config()
        optimizer = self._optimizer or Adam(self.model_.parameters(),
                                            alpha=self.learning_rate)
        self._optimizer = optimizer
        d1_valid_corpus = None
        if source_pivot_valid is not None:
            if vector_view:
                v = check_vector_pairs(source_pivot_valid, "source_pivot_valid")
            else:
                v = check_string_pairs(source_pivot_valid, "source_pivot_valid")
            d1_valid_corpus, _ = self._prepare_corpora(
                v, d2[:1], pivot_vocab=self.model_.pivot_vocab,
                source_vocab=self.model_.source_vocab,
                target_vocab=self.model_.target_vocab)

        from .trainer import holdout_correlation

        def run_one(epoch):
            report = joint_train_epoch(self.model_, corpus1, corpus2, train_cfg,
                                       optimizer, epoch)
            if d1_valid_corpus is not None:
                report["holdout_correlation"] = holdout_correlation(
                    self.model_, d1_valid_corpus)
            return report

        def evaluate():
            return _batched_greedy_accuracy(
                self.model_.pivot_encoder, self.model_.target_decoder,
                self.model_.pivot_vocab, self.model_.target_vocab,
                self.tokenizer, d2_valid, self.model_.config.max_decode_len)

        if not resume and d1_valid_corpus is not None:
            # reference point before any training
            self.initial_holdout_correlation_ = holdout_correlation(
                self.model_, d1_valid_corpus)

        state = run_epochs(self.model_, run_one, evaluate, train_cfg,
                           state=self._state)
        self._state = state
        self._live_params = snapshot_params(self.model_)
        self._live_stats = {"source": self.model_.stats_source.to_dict(),
                            "pivot": self.model_.stats_pivot.to_dict()}
        finalize_best(self.model_, state)
        self.history_ = state.history
        self.validation_accuracy_ = state.best_metric
        self._is_fitted = True
        return self

    # -- inference ---------------------------------------------------------

    def _source_ids(self, x):
        return self.model_.source_vocab.encode(tokenize(x, self.tokenizer))

    def _pivot_to_target_text(self, z, beam_width=None):
        ids = self.model_.pivot_vocab.encode(tokenize(z, self.tokenizer))
        out = self.model_.pivot_to_target_ids(ids, beam_width=beam_width)
        return _decode_text(self.model_.target_vocab, out, self.tokenizer)

    def predict(self, X, beam_width=None):
        """Source -> target directly; the pivot encoder must stay untouched."""
        self._require_fitted()
        if self.source_view == "vector":
            X = np.asarray(X, dtype=np.float64)
            inputs = list(X)
        else:
            inputs = [self._source_ids(x) for x in check_texts(X)]
        before = self.model_.pivot_encoder.calls
        outputs = []
        for item in inputs:
            ids = self.model_.bridge_ids(item, beam_width=beam_width,
                                         representation=self.inference_representation)
            outputs.append(_decode_text(self.model_.target_vocab, ids, self.tokenizer))
        if self.model_.pivot_encoder.calls != before:
            raise GuardError("bridge prediction invoked the pivot encoder")
        return outputs

    def predict_from_pivot(self, Z, beam_width=None):
        """Pivot -> target (the path validation and tuning are allowed to use)."""
        self._require_fitted()
        return [self._pivot_to_target_text(z, beam_width=beam_width)
                for z in check_texts(Z, "Z")]

    def score(self, X, y, beam_width=None):
        return compute_accuracy(self.predict(X, beam_width=beam_width), list(y))

    # -- persistence ---------------------------------------------------------

    def save(self, path):
        self._require_fitted()
        model = self.model_
        params = model.parameters()
        live = self._live_params or snapshot_params(model)
        best = self._state.best_params or snapshot_params(model)
        tensors = {}
        for pname in params:
            tensors[f"live.{pname}"] = live[pname]
            tensors[f"best.{pname}"] = best[pname]
        if self._optimizer is not None:
            tensors.update(self._optimizer.state_tensors())
        metadata = {
            "kind": "correlational",
            "package_version": _pkg_version,
            "estimator_params": self.get_params(),
            "model_config": model.config.to_dict(),
            "source_vocab": model.source_vocab.tokens[4:],
            "pivot_vocab": model.pivot_vocab.tokens[4:],
            "target_vocab": model.target_vocab.tokens[4:],
            "feature_dim": model.feature_dim,
            "stats_live": self._live_stats,
            "stats_best": self._state.best_stats or self._live_stats,
            "loop": _loop_meta(self._state),
            "adam_t": self._optimizer.state.t if self._optimizer else 0,
            "rng": {"seed": self.seed, "epochs_done": self._state.epochs_done},
        }
        save_checkpoint(path, metadata, tensors)

    @classmethod
    def load(cls, path):
        metadata, tensors = load_checkpoint(path)
        if metadata.get("kind") != "correlational":
            raise CheckpointFormatError(
                f"checkpoint holds a {metadata.get('kind')!r} model, not correlational")
        est = cls(**metadata["estimator_params"])
        rng = np.random.default_rng(0)
        model = BridgeModel(
            rng, Vocab(metadata["source_vocab"]), Vocab(metadata["pivot_vocab"]),
            Vocab(metadata["target_vocab"]),
            ModelConfig.from_dict(metadata["model_config"]),
            source_kind="vector" if est.source_view == "vector" else "text",
            feature_dim=metadata["feature_dim"], dtype=est._np_dtype,
            var_floor=est.var_floor)
        params = model.parameters()
        live, best = {}, {}
        for pname, p in params.items():
            live[pname] = np.array(tensors[f"live.{pname}"], dtype=p.dtype)
            best[pname] = np.array(tensors[f"best.{pname}"], dtype=p.dtype)
            if best[pname].shape != p.data.shape:
                raise CheckpointFormatError(
                    f"{pname}: shape {best[pname].shape} disagrees with config "
                    f"{p.data.shape}")
            p.data[...] = best[pname]
        stats_best = metadata["stats_best"]
        model.stats_source = StandardizationStats.from_dict(stats_best["source"])
        model.stats_pivot = StandardizationStats.from_dict(stats_best["pivot"])
        est.model_ = model
        state = _loop_from_meta(metadata["loop"])
        state.best_params = best
        state.best_stats = stats_best
        est._state = state
        est._live_params = live
        est._live_stats = metadata["stats_live"]
        est._optimizer = Adam(params, alpha=est.learning_rate)
        est._optimizer.load_state_tensors(
            {k: v for k, v in tensors.items() if k.startswith("adam.")},
            metadata["adam_t"])
        est.history_ = state.history
        est.validation_accuracy_ = state.best_metric
        est._is_fitted = True
        return est


def load_any(path):
    """Load whichever pipeline a checkpoint contains."""
    metadata, _ = load_checkpoint(path)
    kind = metadata.get("kind")
    if kind == "two-stage":
        return TwoStageEncoderDecoder.load(path)
    if kind == "correlational":
        return CorrelationalEncoderDecoder.load(path)
    raise CheckpointFormatError(f"unknown checkpoint kind {kind!r}")


def grid_search_bridge(param_grid, source_pivot, pivot_target,
                       pivot_target_valid, validation_views=("pivot", "target"),
                       base_params=None):
    """Train one bridge per grid point and select by pivot->target accuracy.

    ``validation_views`` declares which view pair the validation corpus
    connects; a source-target pair is rejected outright, since tuning must
    never observe such data.
    """
    views = tuple(v.strip().lower() for v in validation_views)
    if set(views) == {"source", "target"}:
        raise GuardError("bridge tuning must not use source-target data")
    if not param_grid:
        raise ValueError("empty parameter grid")
    keys = sorted(param_grid)
    combos = [dict(zip(keys, values))
              for values in itertools.product(*(param_grid[k] for k in keys))]
    report = []
    best = None
    for combo in combos:
        params = dict(base_params or {})
        params.update(combo)
        est = CorrelationalEncoderDecoder(**params)
        est.fit(source_pivot, pivot_target, pivot_target_valid=pivot_target_valid)
        entry = {"params": combo, "validation_accuracy": est.validation_accuracy_}
        report.append(entry)
        if best is None or est.validation_accuracy_ > best[1]:
            best = (est, est.validation_accuracy_, combo)
    return {"best_params": best[2], "best_validation_accuracy": best[1],
            "grid": report}, best[0]
