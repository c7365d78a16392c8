"""corrbridge: pivot-based sequence generation without direct parallel data.

Two pipelines over three views (source, pivot, target): a two-stage chain of
independent encoder-decoders, and a correlational encoder-decoder that learns
a shared representation space for source and pivot while decoding targets
from it. Both are exposed as scikit-learn style estimators; the numeric core
is a small tape-based reverse-mode autodiff engine.
"""

from ._version import __version__
from .data import (ParallelCorpus, SyntheticSpec, Vocab, gen_synthetic_pivot,
                   join_on_pivot, load_parallel_tsv, make_batches)
from .estimators import (CorrelationalEncoderDecoder, GuardError,
                         TwoStageEncoderDecoder, grid_search_bridge, load_any)
from .gradcheck import finite_difference_grad, run_gradcheck
from .losses import (StandardizationStats, batch_cross_entropy,
                     correlation_loss, sequence_nll, standardize)
from .metrics import compute_accuracy
from .networks import ModelConfig
from .optim import Adam, clip_global_norm
from .tensor import (NumericError, ShapeMismatchError, Tape, Tensor, backward)
from .trainer import TrainConfig

__all__ = [
    "__version__",
    "Adam", "clip_global_norm",
    "CorrelationalEncoderDecoder", "TwoStageEncoderDecoder",
    "GuardError", "grid_search_bridge", "load_any",
    "ModelConfig", "TrainConfig",
    "NumericError", "ShapeMismatchError", "Tape", "Tensor", "backward",
    "ParallelCorpus", "SyntheticSpec", "Vocab",
    "gen_synthetic_pivot", "join_on_pivot", "load_parallel_tsv", "make_batches",
    "StandardizationStats", "batch_cross_entropy", "correlation_loss",
    "sequence_nll", "standardize",
    "compute_accuracy",
    "finite_difference_grad", "run_gradcheck",
]
