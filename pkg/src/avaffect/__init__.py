"""Continuous-time audiovisual affect regression.

Compares three fusion architectures (stacked LSTMs, transformer-style
self-attention, and cross-modal attention) for per-timestep valence/arousal
estimation, built on a minimal reverse-mode autodiff tensor engine. Includes
the composite CCC/MSE/cross-entropy objective with a 24-class polar label
discretizer, a windowed multimodal data pipeline with dilated/interleaved
sampling, AdamW with cosine warm restarts, ASHA hyperparameter search, a
synthetic fusion benchmark, an sklearn-style estimator facade, and a CLI.
"""

from .tensor import Tensor, grad_check, no_grad
from .layers import LayerSpec, param_count, positional_encoding
from .losses import (
    LossWeights, ccc, ccc_loss, class_weights, discretize_va,
    evaluate_predictions, mse_loss, total_loss, weighted_cross_entropy,
)
from .data import (
    Corpus, MultimodalWindow, augment_audio, corpus_windows,
    extract_audio_clip, load_corpus, synth_generate, temporal_context,
    window_sequences, write_corpus,
)
from .models import (
    ModelConfig, ModelOutput, build_model, count_parameters,
    read_checkpoint, save_checkpoint,
)
from .sequence import scaled_dot_product_attention
from .training import (
    AdamW, TrainConfig, cosine_warm_restart_lr, evaluate_model, train,
)
from .tuning import SearchSpace, TrialResult, tune
from .config import PRESETS, format_config, load_config, parse_config, preset
from .estimator import AffectSequenceRegressor

__version__ = "0.1.0"

__all__ = [
    "AdamW", "AffectSequenceRegressor", "Corpus", "LayerSpec", "LossWeights",
    "ModelConfig", "ModelOutput", "MultimodalWindow", "PRESETS", "SearchSpace",
    "Tensor", "TrainConfig", "TrialResult", "augment_audio", "build_model",
    "ccc", "ccc_loss", "class_weights", "corpus_windows", "cosine_warm_restart_lr",
    "count_parameters", "discretize_va", "evaluate_model",
    "evaluate_predictions", "extract_audio_clip", "format_config",
    "grad_check", "load_config", "load_corpus", "mse_loss", "no_grad",
    "param_count", "parse_config", "positional_encoding", "preset",
    "read_checkpoint", "save_checkpoint", "scaled_dot_product_attention",
    "synth_generate", "temporal_context", "total_loss", "train", "tune",
    "weighted_cross_entropy", "window_sequences", "write_corpus",
]
