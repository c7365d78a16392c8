"""Training loops: alternating joint epochs, plain cross-entropy epochs,
end-of-epoch statistics refresh, and early stopping on pivot-target accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import _pad_matrix, make_batches
from .losses import StandardizationStats, correlation_loss, exact_batch_correlation
from .networks import ConfigError
from .optim import Adam, clip_global_norm
from .tensor import Tape, backward


class TrainingError(RuntimeError):
    """Training diverged (non-finite loss) or was misconfigured."""


@dataclass
class TrainConfig:
    """Hyperparameters shared by both pipelines.

    ``corr_weight`` scales the correlation loss so it is commensurate with
    the cross-entropy term; it must stay in [0.1, 1.0] unless explicitly
    overridden.
    """

    corr_weight: float = 0.5
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    seed: int = 0
    var_floor: float = 1e-6
    grad_clip: float = 5.0
    allow_corr_weight_outside_range: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if not self.allow_corr_weight_outside_range and not 0.1 <= self.corr_weight <= 1.0:
            raise ConfigError(
                f"corr_weight={self.corr_weight} outside [0.1, 1.0]; "
                "set allow_corr_weight_outside_range to override")

    def to_dict(self):
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def derive_seed(base, *parts):
    """Stable per-epoch/per-role seed; avoids carrying live RNG state."""
    return int(np.random.SeedSequence([int(base) & 0x7FFFFFFF, *parts]).generate_state(1)[0])


def _step_batch(loss, optimizer, params, grad_clip, where):
    if not math.isfinite(loss.item()):
        raise TrainingError(f"non-finite loss at {where}: {loss.item()}")
    norm = clip_global_norm(params, grad_clip)
    optimizer.step()
    optimizer.zero_grad()
    return norm


def single_train_epoch(model, corpus, cfg, optimizer, epoch):
    """One teacher-forced cross-entropy epoch over a parallel corpus."""
    if len(corpus) == 0:
        raise TrainingError("empty corpus")
    batches = make_batches(corpus, cfg.batch_size, derive_seed(cfg.seed, 1, epoch))
    params = list(model.parameters().values())
    total, count = 0.0, 0
    for step, batch in enumerate(batches):
        with Tape() as tape:
            loss = model.batch_loss(batch)
        backward(tape, loss)
        _step_batch(loss, optimizer, params, cfg.grad_clip,
                    f"epoch {epoch} step {step}")
        total += loss.item() * len(batch)
        count += len(batch)
    return {"epoch": epoch, "steps": len(batches), "examples": count,
            "cross_entropy_loss": total / count}


def update_epoch_stats(encoder, inputs, var_floor, batch_size=256):
    """Recompute standardization statistics over all training instances.

    ``inputs`` is a list of plain id sequences for sequence encoders or an
    [n, feature_dim] array for vector encoders. Accumulation happens at
    64-bit regardless of the model dtype.
    """
    if len(inputs) == 0:
        raise ValueError("cannot compute statistics over an empty corpus")
    reps = []
    if getattr(encoder, "feature_dim", None) is not None:
        mat = np.asarray(inputs)
        for start in range(0, len(mat), batch_size):
            reps.append(encoder.encode_batch(mat[start:start + batch_size]).data.astype(np.float64))
    else:
        order = sorted(range(len(inputs)), key=lambda i: -len(inputs[i]))
        rows = np.empty((len(inputs), encoder.hidden_dim), dtype=np.float64)
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            ids, mask = _pad_matrix([inputs[i] for i in idx])
            out = encoder.encode_batch(ids, mask).data.astype(np.float64)
            rows[idx] = out
        reps.append(rows)
    return StandardizationStats.from_representations(np.concatenate(reps, axis=0), var_floor)


def _cycled(corpus, cfg, epoch, role, n_batches_needed):
    """Yield batches, reshuffling and cycling once a pass is exhausted."""
    produced = 0
    cycle = 0
    while produced < n_batches_needed:
        batches = make_batches(corpus, cfg.batch_size,
                               derive_seed(cfg.seed, role, epoch, cycle))
        for b in batches:
            yield b
            produced += 1
            if produced == n_batches_needed:
                return
        cycle += 1


def joint_train_epoch(bridge, corr_corpus, decode_corpus, cfg, optimizer, epoch):
    """One alternating epoch of the correlational model.

    Strictly alternates one correlation batch (gradients into both encoders)
    with one cross-entropy batch (gradients into the pivot encoder and the
    decoder) until both corpora are exhausted; the shorter corpus cycles with
    a fresh shuffle per cycle. Statistics are refreshed at the end.
    """
    if len(corr_corpus) == 0 or len(decode_corpus) == 0:
        raise TrainingError("empty corpus")
    n1 = math.ceil(len(corr_corpus) / cfg.batch_size)
    n2 = math.ceil(len(decode_corpus) / cfg.batch_size)
    pairs = max(n1, n2)
    corr_iter = _cycled(corr_corpus, cfg, epoch, 2, pairs)
    ce_iter = _cycled(decode_corpus, cfg, epoch, 3, pairs)
    params = list(bridge.parameters().values())
    pivot_params = list(bridge.pivot_parameters().values())
    corr_total = ce_total = 0.0
    pivot_gnorm = {"correlation": 0.0, "cross_entropy": 0.0}
    schedule = []
    for k in range(pairs):
        batch = next(corr_iter)
        with Tape() as tape:
            hx = bridge.encode_source_batch(batch)
            hz = bridge.pivot_encoder.encode_batch(batch.target, batch.target_mask)
            loss = correlation_loss(hx, hz, bridge.stats_source, bridge.stats_pivot,
                                    cfg.corr_weight)
        backward(tape, loss)
        pivot_gnorm["correlation"] += _grad_norm(pivot_params)
        _step_batch(loss, optimizer, params, cfg.grad_clip,
                    f"epoch {epoch} correlation step {k}")
        corr_total += loss.item()
        schedule.append("correlation")

        batch = next(ce_iter)
        with Tape() as tape:
            loss = bridge.pivot_target_loss(batch)
        backward(tape, loss)
        pivot_gnorm["cross_entropy"] += _grad_norm(pivot_params)
        _step_batch(loss, optimizer, params, cfg.grad_clip,
                    f"epoch {epoch} cross-entropy step {k}")
        ce_total += loss.item()
        schedule.append("cross_entropy")

    _refresh_bridge_stats(bridge, corr_corpus, decode_corpus, cfg.var_floor)
    return {
        "epoch": epoch,
        "steps": 2 * pairs,
        "correlation_batches": pairs,
        "cross_entropy_batches": pairs,
        "correlation_loss": corr_total / pairs,
        "cross_entropy_loss": ce_total / pairs,
        "pivot_grad_norm": pivot_gnorm,
        "schedule": schedule,
    }


def _grad_norm(params):
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    return total ** 0.5


def _refresh_bridge_stats(bridge, corr_corpus, decode_corpus, var_floor):
    # source encoder sees its view only through the correlation corpus;
    # the pivot encoder appears in both corpora, so both contribute
    if bridge.source_kind == "vector":
        src_inputs = corr_corpus.source_vectors
    else:
        src_inputs = [s for s, _ in corr_corpus.pairs]
    pivot_inputs = [z for _, z in corr_corpus.pairs] + [z for z, _ in decode_corpus.pairs]
    bridge.stats_source = update_epoch_stats(bridge.source_encoder, src_inputs, var_floor)
    bridge.stats_pivot = update_epoch_stats(bridge.pivot_encoder, pivot_inputs, var_floor)


def holdout_correlation(bridge, corr_corpus, limit=512):
    """Exact-stats normalized correlation on (a slice of) a held-out corpus.

    A pure measurement: standardizes with the slice's own statistics and a
    negligible variance floor, independent of the training-time var_floor.
    """
    take = min(len(corr_corpus), limit)
    idx = list(range(take))
    if bridge.source_kind == "vector":
        hx = bridge.source_encoder.encode_batch(corr_corpus.source_vectors[idx]).data
    else:
        ids, mask = _pad_matrix([corr_corpus.pairs[i][0] for i in idx])
        hx = bridge.source_encoder.encode_batch(ids, mask).data
    ids, mask = _pad_matrix([corr_corpus.pairs[i][1] for i in idx])
    hz = bridge.pivot_encoder.encode_batch(ids, mask).data
    return exact_batch_correlation(hx, hz, var_floor=1e-12)


# ---------------------------------------------------------------------------
# epoch loops with early stopping
# ---------------------------------------------------------------------------

@dataclass
class LoopState:
    """Resumable early-stopping bookkeeping."""

    epochs_done: int = 0
    best_metric: float = -1.0
    best_epoch: int = -1
    best_params: dict = None
    best_stats: dict = None
    bad_epochs: int = 0
    stopped: bool = False
    history: list = field(default_factory=list)


def snapshot_params(model):
    return {name: p.data.copy() for name, p in model.parameters().items()}


def restore_params(model, snap):
    for name, p in model.parameters().items():
        p.data[...] = snap[name]


def run_epochs(model, run_one_epoch, evaluate, cfg, state=None, on_epoch=None):
    """Drive epochs with greedy-accuracy early stopping.

    ``run_one_epoch(epoch)`` trains and returns the epoch report;
    ``evaluate()`` returns validation accuracy in [0, 1]. The best-scoring
    parameters are snapshotted into the returned state; the model itself is
    left at its live (last-epoch) parameters so training can resume exactly.
    Call ``finalize_best`` afterwards to load the winning snapshot.
    """
    state = state or LoopState()
    while state.epochs_done < cfg.max_epochs and not state.stopped:
        epoch = state.epochs_done
        report = run_one_epoch(epoch)
        acc = evaluate()
        report["validation_accuracy"] = acc
        state.epochs_done += 1
        # ties go to the later epoch: same selection metric, more training
        if acc >= state.best_metric:
            if acc > state.best_metric:
                state.bad_epochs = 0
            else:
                state.bad_epochs += 1
            state.best_metric = acc
            state.best_epoch = epoch
            state.best_params = snapshot_params(model)
            if hasattr(model, "stats_source"):
                state.best_stats = {"source": model.stats_source.to_dict(),
                                    "pivot": model.stats_pivot.to_dict()}
        else:
            state.bad_epochs += 1
        report["best_validation_accuracy"] = state.best_metric
        report.pop("schedule", None)  # per-step detail; too bulky to persist
        state.history.append(report)
        if on_epoch:
            on_epoch(report, state)
        if state.bad_epochs > cfg.patience or state.best_metric >= 1.0:
            state.stopped = True
    return state


def finalize_best(model, state):
    """Load the best-epoch snapshot (parameters and statistics) into the model."""
    if state.best_params is not None:
        restore_params(model, state.best_params)
        if state.best_stats is not None:
            model.stats_source = StandardizationStats.from_dict(state.best_stats["source"])
            model.stats_pivot = StandardizationStats.from_dict(state.best_stats["pivot"])


def make_optimizer(model, cfg):
    return Adam(model.parameters(), alpha=cfg.learning_rate)
