"""Multi-filter residual convolutional network for multi-label text
classification, implemented on plain numpy with hand-derived gradients."""

from .errors import ConfigError, DataError, MultiResCNNError, NumericError
from .metrics import MetricsReport, auc_scores, compute_report, f1_scores, precision_at_k
from .model import (
    ModelConfig,
    ModelParams,
    backward,
    backward_batch,
    bce_loss,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .pipeline import Document, Vocabulary, build_vocab, synth_corpus, tokenize
from .training import TrainConfig, evaluate, predict_scores, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "Document",
    "MetricsReport",
    "ModelConfig",
    "ModelParams",
    "MultiResCNNError",
    "NumericError",
    "TrainConfig",
    "Vocabulary",
    "__version__",
    "auc_scores",
    "backward",
    "backward_batch",
    "bce_loss",
    "build_vocab",
    "compute_report",
    "evaluate",
    "f1_scores",
    "forward",
    "forward_batch",
    "init_params",
    "load_checkpoint",
    "param_count",
    "precision_at_k",
    "predict_scores",
    "save_checkpoint",
    "synth_corpus",
    "tokenize",
    "train",
]
