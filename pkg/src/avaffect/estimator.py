"""scikit-learn style estimator facade over the fusion models.

``AffectSequenceRegressor`` exposes the usual fit/predict/score surface (and
clones cleanly via get_params/set_params), so the models drop into sklearn
tooling such as cross-validation loops or joblib pipelines. X is one window
array per modality: visual (n, T, 512), audio (n, T, 128), passed either as
a tuple (visual, audio) for audiovisual models or a single array for
unimodal ones; y is (n, T, 2) valence/arousal in [-1, 1].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .data import MultimodalWindow
from .models import AUDIO_WIDTH, VISUAL_WIDTH, ModelConfig, build_model
from .training import TrainConfig, evaluate_model, train
from .validation import check_consistent_lengths, check_labels, check_sequence_array


class AffectSequenceRegressor(BaseEstimator, RegressorMixin):
    """Per-timestep valence/arousal regressor with a selectable fusion core.

    Parameters mirror the run-configuration keys; ``score`` returns the mean
    of the valence and arousal concordance correlation coefficients (not R^2).
    """

    def __init__(self, arch="rnn", modality="audiovisual", n_layers=1, d_model=64,
                 activation="selu", dropout=0.5, d_hidden=64,
                 context_aggregation="unidirectional", n_heads=4, d_feedforward=256,
                 n_layers_v_to_a=1, n_layers_a_to_v=1, front_end="dense",
                 learning_rate=2e-4, weight_decay=0.023, lambda_mse=0.84,
                 lambda_ce=0.88, batch_size=64, max_epochs=20, patience=10,
                 scheduler_period=200, validation_fraction=0.2, seed=0):
        self.arch = arch
        self.modality = modality
        self.n_layers = n_layers
        self.d_model = d_model
        self.activation = activation
        self.dropout = dropout
        self.d_hidden = d_hidden
        self.context_aggregation = context_aggregation
        self.n_heads = n_heads
        self.d_feedforward = d_feedforward
        self.n_layers_v_to_a = n_layers_v_to_a
        self.n_layers_a_to_v = n_layers_a_to_v
        self.front_end = front_end
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.lambda_mse = lambda_mse
        self.lambda_ce = lambda_ce
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.scheduler_period = scheduler_period
        self.validation_fraction = validation_fraction
        self.seed = seed

    # -- helpers -----------------------------------------------------------

    def _split_inputs(self, X) -> tuple[np.ndarray | None, np.ndarray | None]:
        audiovisual = self.modality == "audiovisual"
        if audiovisual:
            if not isinstance(X, (tuple, list)) or len(X) != 2:
                raise ValueError("audiovisual models take X = (visual, audio)")
            visual = check_sequence_array(X[0], "visual", width=VISUAL_WIDTH)
            audio = check_sequence_array(X[1], "audio", width=AUDIO_WIDTH)
            check_consistent_lengths(visual, audio)
            return visual, audio
        arr = X[0] if isinstance(X, (tuple, list)) and len(X) == 1 else X
        if self.modality == "visual":
            return check_sequence_array(arr, "visual", width=VISUAL_WIDTH), None
        return None, check_sequence_array(arr, "audio", width=AUDIO_WIDTH)

    def _windows(self, visual, audio, labels) -> list[MultimodalWindow]:
        n, t = labels.shape[0], labels.shape[1]
        d_v = VISUAL_WIDTH
        windows = []
        for i in range(n):
            windows.append(MultimodalWindow(
                video_id=f"window{i:05d}",
                frame_indices=np.arange(t),
                visual=visual[i] if visual is not None else np.zeros((t, d_v), dtype=np.float32),
                labels=labels[i],
                timestamps=np.arange(t, dtype=np.float64) / 30.0,
                audio_features=audio[i] if audio is not None else None,
            ))
        return windows

    def _configs(self) -> tuple[ModelConfig, TrainConfig]:
        model_cfg = ModelConfig(
            arch=self.arch, modality=self.modality, n_layers=self.n_layers,
            d_model=self.d_model, activation=self.activation, dropout=self.dropout,
            front_end=self.front_end, d_hidden=self.d_hidden,
            context_aggregation=self.context_aggregation, n_heads=self.n_heads,
            d_feedforward=self.d_feedforward, n_layers_v_to_a=self.n_layers_v_to_a,
            n_layers_a_to_v=self.n_layers_a_to_v,
        ).validate()
        train_cfg = TrainConfig(
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            lambda_mse=self.lambda_mse, lambda_ce=self.lambda_ce,
            batch_size=self.batch_size, scheduler_period=self.scheduler_period,
            max_epochs=self.max_epochs, patience=self.patience, seed=self.seed,
        ).validate()
        return model_cfg, train_cfg

    # -- estimator surface ----------------------------------------------------

    def fit(self, X, y):
        visual, audio = self._split_inputs(X)
        ref = visual if visual is not None else audio
        labels = check_labels(y, ref.shape[0], ref.shape[1])
        windows = self._windows(visual, audio, labels)

        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        n_val = max(1, int(round(len(windows) * self.validation_fraction)))
        if n_val >= len(windows):
            raise ValueError("too few windows for the requested validation fraction")
        order = np.random.default_rng(self.seed).permutation(len(windows))
        val_idx = set(order[:n_val].tolist())
        train_windows = [w for i, w in enumerate(windows) if i not in val_idx]
        val_windows = [windows[i] for i in sorted(val_idx)]

        model_cfg, train_cfg = self._configs()
        self.model_ = build_model(model_cfg, seed=self.seed)
        result = train(self.model_, train_windows, val_windows, train_cfg)
        if result.status != "completed":
            raise RuntimeError(f"training failed: {result.failure}")
        self.history_ = result.history
        self.best_score_ = result.best_metric
        self.n_windows_in_ = len(windows)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")
        visual, audio = self._split_inputs(X)
        return self.model_.predict(visual=visual, audio=audio)

    def score(self, X, y) -> float:
        """Mean concordance correlation over valence and arousal."""
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before score")
        visual, audio = self._split_inputs(X)
        ref = visual if visual is not None else audio
        labels = check_labels(y, ref.shape[0], ref.shape[1])
        windows = self._windows(visual, audio, labels)
        return evaluate_model(self.model_, windows, batch_size=self.batch_size).average
