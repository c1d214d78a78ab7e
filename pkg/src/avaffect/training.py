"""Optimization stack: AdamW with decoupled weight decay, cosine annealing
with warm restarts (period counted in optimizer steps), gradient clipping,
and the epoch loop with validation-CCC model selection.

Training is deterministic given (seed, config): the shuffle, dropout and
augmentation streams are spawned from one seed sequence, and batches are
visited in a fixed order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor
from .data import MultimodalWindow, window_clips
from .losses import (
    LossWeights, N_CLASSES, EvalResult, discretize_va, class_weights,
    evaluate_predictions, total_loss,
)
from .models import FusionModel


class OptimizerError(RuntimeError):
    """Raised when an update step receives non-finite gradients."""


class TrainingFailed(RuntimeError):
    """Raised when a training run produces a non-finite loss."""


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 0.023
    lambda_mse: float = 0.84
    lambda_ce: float = 0.88
    batch_size: int = 64
    scheduler_period: int = 200
    lr_min: float = 0.0
    max_epochs: int = 50
    patience: int = 10
    grad_clip: float = 5.0          # 0 disables clipping
    dilation: int = 1
    seed: int = 0
    audio_noise_sigma: float = 0.0
    target_metric: float | None = None  # stop once validation average CCC reaches this

    def validate(self) -> "TrainConfig":
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.lambda_mse < 0 or self.lambda_ce < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.scheduler_period < 1:
            raise ValueError(f"scheduler_period must be >= 1, got {self.scheduler_period}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {self.dilation}")
        return self


def cosine_warm_restart_lr(step: int, lr_max: float, lr_min: float = 0.0, period: int = 200) -> float:
    """lr_min + (lr_max - lr_min) * (1 + cos(pi * s / period)) / 2 with
    s = step mod period, restarting to lr_max every ``period`` steps."""
    if period < 1:
        raise ValueError("period must be >= 1")
    if step < 0:
        raise ValueError("step must be >= 0")
    s = step % period
    return float(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * s / period)))


class AdamW:
    """Bias-corrected Adam with decoupled weight decay:
    p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p."""

    def __init__(self, params: Sequence, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.isfinite(g).all():
                raise OptimizerError(f"non-finite gradient in parameter of shape {p.shape}")
            m = self._m[i] = self.beta1 * self._m[i] + (1.0 - self.beta1) * g
            v = self._v[i] = self.beta2 * self._v[i] + (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - lr * update - lr * self.weight_decay * p.data


def clip_grad_norm(params: Sequence, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    grads = [p.grad for p in params if p.grad is not None]
    for g in grads:
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


# -- batching ---------------------------------------------------------------------


def collate_windows(windows: Sequence[MultimodalWindow], audio_source: str) -> dict:
    """Stack windows into dense batch arrays keyed visual/audio/labels."""
    batch = {
        "visual": np.stack([w.visual for w in windows]),
        "labels": np.stack([w.labels for w in windows]),
    }
    if audio_source == "waveform":
        batch["audio"] = np.stack([window_clips(w) for w in windows])
    else:
        if windows[0].audio_features is None:
            batch["audio"] = None
        else:
            batch["audio"] = np.stack([w.audio_features for w in windows])
    return batch


def predict_windows(model: FusionModel, windows: Sequence[MultimodalWindow],
                    batch_size: int = 64) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Evaluation-mode predictions over windows.

    Returns (predictions, labels) flattened to (n_frames, 2), plus the video
    id of every frame (for per-video reporting).
    """
    preds, labels, vids = [], [], []
    cfg = model.config
    for start in range(0, len(windows), batch_size):
        chunk = windows[start : start + batch_size]
        batch = collate_windows(chunk, cfg.audio_source)
        scores = model.predict(
            visual=batch["visual"] if cfg.uses_visual else None,
            audio=batch["audio"] if cfg.uses_audio else None,
        )
        preds.append(scores.reshape(-1, 2))
        labels.append(batch["labels"].reshape(-1, 2))
        for w in chunk:
            vids.extend([w.video_id] * len(w))
    if not preds:
        raise ValueError("empty split: no windows to evaluate")
    return np.concatenate(preds), np.concatenate(labels), vids


def evaluate_model(model: FusionModel, windows: Sequence[MultimodalWindow],
                   batch_size: int = 64) -> EvalResult:
    preds, labels, _ = predict_windows(model, windows, batch_size)
    return evaluate_predictions(preds, labels)


def per_video_evaluation(model: FusionModel, windows: Sequence[MultimodalWindow],
                         batch_size: int = 64) -> dict[str, EvalResult]:
    preds, labels, vids = predict_windows(model, windows, batch_size)
    vids = np.asarray(vids)
    out = {}
    for vid in sorted(set(vids.tolist())):
        mask = vids == vid
        out[vid] = evaluate_predictions(preds[mask], labels[mask])
    return out


def label_histogram(windows: Sequence[MultimodalWindow]) -> np.ndarray:
    """Counts of the 24 polar classes over all window frames."""
    counts = np.zeros(N_CLASSES, dtype=np.int64)
    for w in windows:
        cls = discretize_va(np.clip(w.labels[:, 0], -1, 1), np.clip(w.labels[:, 1], -1, 1))
        counts += np.bincount(np.atleast_1d(cls), minlength=N_CLASSES)
    return counts


# -- the epoch loop ----------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = -np.inf
    best_eval: EvalResult | None = None
    best_state: dict[str, np.ndarray] | None = None
    status: str = "completed"          # completed | failed
    failure: str | None = None
    epochs_run: int = 0


class TrainingRun:
    """Epoch-by-epoch training driver, resumable between epochs (the
    hyperparameter tuner advances runs rung by rung)."""

    def __init__(self, model: FusionModel, train_windows: Sequence[MultimodalWindow],
                 val_windows: Sequence[MultimodalWindow], cfg: TrainConfig):
        cfg.validate()
        if not train_windows:
            raise ValueError("empty split: no training windows")
        if not val_windows:
            raise ValueError("empty split: no validation windows")
        self.model = model
        self.train_windows = list(train_windows)
        self.val_windows = list(val_windows)
        self.cfg = cfg
        seq = np.random.SeedSequence(cfg.seed)
        shuffle_seed, dropout_seed, noise_seed = seq.spawn(3)
        self._shuffle_rng = np.random.default_rng(shuffle_seed)
        self._noise_rng = np.random.default_rng(noise_seed)
        model.set_rng(np.random.default_rng(dropout_seed))
        self.class_weights = class_weights(label_histogram(self.train_windows))
        self.loss_weights = LossWeights(cfg.lambda_mse, cfg.lambda_ce)
        self.optimizer = AdamW(model.trainable_parameters(), lr=cfg.learning_rate,
                               weight_decay=cfg.weight_decay)
        self.global_step = 0
        self.result = TrainResult()

    def run_epoch(self) -> dict:
        cfg = self.cfg
        model = self.model
        mcfg = model.config
        order = self._shuffle_rng.permutation(len(self.train_windows))
        sums = {"total": 0.0, "ccc": 0.0, "mse": 0.0, "ce": 0.0}
        n_batches = 0
        lr = cfg.learning_rate
        started = time.perf_counter()
        model.train(True)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = collate_windows([self.train_windows[i] for i in idx], mcfg.audio_source)
            audio = batch["audio"]
            if audio is not None and cfg.audio_noise_sigma > 0:
                audio = audio + self._noise_rng.normal(
                    0.0, cfg.audio_noise_sigma, size=audio.shape).astype(audio.dtype)
            out = model.forward(
                visual=batch["visual"] if mcfg.uses_visual else None,
                audio=audio if mcfg.uses_audio else None,
            )
            labels = Tensor(np.asarray(batch["labels"], dtype=mcfg.np_dtype))
            parts = total_loss(out.va_scores, labels, out.class_logits,
                               self.loss_weights, self.class_weights)
            value = float(parts.total.data)
            if not np.isfinite(value):
                self.result.status = "failed"
                self.result.failure = f"non-finite loss at epoch {self.result.epochs_run}"
                raise TrainingFailed(self.result.failure)
            model.zero_grad()
            parts.total.backward()
            if cfg.grad_clip > 0:
                clip_grad_norm(self.optimizer.params, cfg.grad_clip)
            lr = cosine_warm_restart_lr(self.global_step, cfg.learning_rate,
                                        cfg.lr_min, cfg.scheduler_period)
            self.optimizer.step(lr)
            self.global_step += 1
            n_batches += 1
            sums["total"] += value
            sums["ccc"] += parts.ccc
            sums["mse"] += parts.mse
            sums["ce"] += parts.ce

        evaluation = evaluate_model(model, self.val_windows, cfg.batch_size)
        epoch = self.result.epochs_run
        record = {
            "epoch": epoch,
            "loss_total": sums["total"] / n_batches,
            "loss_ccc": sums["ccc"] / n_batches,
            "loss_mse": sums["mse"] / n_batches,
            "loss_ce": sums["ce"] / n_batches,
            "lr": lr,
            "val_ccc_valence": evaluation.ccc_valence,
            "val_ccc_arousal": evaluation.ccc_arousal,
            "val_ccc_average": evaluation.average,
            "seconds": time.perf_counter() - started,
        }
        self.result.history.append(record)
        self.result.epochs_run += 1
        if evaluation.average > self.result.best_metric:
            self.result.best_metric = evaluation.average
            self.result.best_epoch = epoch
            self.result.best_eval = evaluation
            self.result.best_state = {k: v.copy() for k, v in model.state_arrays().items()}
        return record

    def finish(self) -> TrainResult:
        if self.result.best_state is not None:
            self.model.load_state_arrays(self.result.best_state)
        return self.result


def train(model: FusionModel, train_windows: Sequence[MultimodalWindow],
          val_windows: Sequence[MultimodalWindow], cfg: TrainConfig,
          sink: Callable[[dict], None] | None = None) -> TrainResult:
    """Full training loop with best-validation-CCC checkpointing, early
    stopping on patience, and an optional target metric."""
    run = TrainingRun(model, train_windows, val_windows, cfg)
    try:
        for _ in range(cfg.max_epochs):
            record = run.run_epoch()
            if sink is not None:
                sink(record)
            if cfg.target_metric is not None and run.result.best_metric >= cfg.target_metric:
                break
            if cfg.patience > 0 and run.result.epochs_run - 1 - run.result.best_epoch >= cfg.patience:
                break
    except TrainingFailed:
        return run.result
    return run.finish()
