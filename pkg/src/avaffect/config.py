"""Flat key=value run configuration: one file fully determines a model and
its training run.

Unknown keys are rejected, and every parse error names the offending key and
its expected domain. The shipped presets are the best end-to-end audiovisual
configurations per architecture, transcribed field for field.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .models import ModelConfig
from .training import TrainConfig


class ConfigParseError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(raw)


def _parse_optional_float(raw: str):
    if raw.strip().lower() in ("none", ""):
        return None
    return float(raw)


# key -> (target, parser, domain description)
_SCHEMA: dict[str, tuple[str, object, str]] = {
    "arch": ("model", str, "rnn | sa | cma"),
    "modality": ("model", str, "audio | visual | audiovisual"),
    "n_layers": ("model", int, "integer >= 1"),
    "d_model": ("model", int, "positive even integer (search space: 64, 128, 256)"),
    "activation": ("model", str, "gelu | selu"),
    "dropout": ("model", float, "float in [0, 1)"),
    "front_end": ("model", str, "dense | conv1d"),
    "front_end_kernel": ("model", int, "integer >= 1"),
    "front_end_bias": ("model", _parse_bool, "true | false"),
    "d_hidden": ("model", int, "positive integer (search space: 64, 128, 256)"),
    "context_aggregation": ("model", str, "unidirectional | bidirectional"),
    "n_heads": ("model", int, "divisor of d_model (search space: 2, 4, 8)"),
    "d_feedforward": ("model", int, "positive integer (search space: 64, 128, 256)"),
    "n_layers_v_to_a": ("model", int, "integer in [1, 5]"),
    "n_layers_a_to_v": ("model", int, "integer in [1, 5]"),
    "visual_source": ("model", str, "precomputed | stub"),
    "audio_source": ("model", str, "precomputed | waveform"),
    "end_to_end": ("model", _parse_bool, "true | false"),
    "dtype": ("model", str, "float32 | float64"),
    "learning_rate": ("train", float, "positive float (search space: [1e-5, 1e-2])"),
    "weight_decay": ("train", float, "nonnegative float (search space: [1e-3, 1e-1])"),
    "lambda_mse": ("train", float, "float in [0, 1]"),
    "lambda_ce": ("train", float, "float in [0, 1]"),
    "batch_size": ("train", int, "integer >= 1"),
    "scheduler_period": ("train", int, "integer >= 1 (steps per warm restart)"),
    "lr_min": ("train", float, "nonnegative float"),
    "max_epochs": ("train", int, "integer >= 1"),
    "patience": ("train", int, "integer >= 0 (0 disables early stopping)"),
    "grad_clip": ("train", float, "nonnegative float (0 disables clipping)"),
    "dilation": ("train", int, "integer >= 1"),
    "seed": ("train", int, "integer"),
    "audio_noise_sigma": ("train", float, "nonnegative float"),
    "target_metric": ("train", _parse_optional_float, "float or none"),
}

_MODEL_ACTIVATIONS = ("gelu", "selu")


def parse_entries(entries: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    """Build validated configs from raw key -> string entries."""
    model_kwargs: dict = {}
    train_kwargs: dict = {}
    for key, raw in entries.items():
        if key not in _SCHEMA:
            raise ConfigParseError(f"unknown key {key!r}; known keys: {', '.join(sorted(_SCHEMA))}")
        target, parser, domain = _SCHEMA[key]
        try:
            value = parser(raw) if isinstance(raw, str) else raw
        except (TypeError, ValueError):
            raise ConfigParseError(f"key {key!r}: cannot parse {raw!r}; expected {domain}") from None
        (model_kwargs if target == "model" else train_kwargs)[key] = value

    if "activation" in model_kwargs and model_kwargs["activation"] not in _MODEL_ACTIVATIONS:
        raise ConfigParseError(
            f"key 'activation': got {model_kwargs['activation']!r}; expected gelu | selu")
    try:
        model = ModelConfig(**model_kwargs).validate()
        train = TrainConfig(**train_kwargs).validate()
    except ValueError as exc:
        raise ConfigParseError(str(exc)) from None
    return model, train


def parse_config(text: str) -> tuple[ModelConfig, TrainConfig]:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigParseError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key in entries:
            raise ConfigParseError(f"line {lineno}: duplicate key {key!r}")
        entries[key] = raw.strip()
    return parse_entries(entries)


def load_config(path) -> tuple[ModelConfig, TrainConfig]:
    return parse_config(Path(path).read_text())


def format_config(model: ModelConfig, train: TrainConfig) -> str:
    """Serialize configs back to the flat key=value syntax (re-parseable)."""
    lines = []
    for cfg in (model, train):
        for f in fields(cfg):
            value = getattr(cfg, f.name)
            if value is None:
                value = "none"
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


# -- shipped presets -----------------------------------------------------------

PRESETS: dict[str, dict[str, str]] = {
    "e2e-av-rnn": {
        "arch": "rnn",
        "modality": "audiovisual",
        "n_layers": "1",
        "d_model": "64",
        "activation": "selu",
        "dropout": "0.5",
        "learning_rate": "0.0002",
        "weight_decay": "0.023",
        "lambda_mse": "0.84",
        "lambda_ce": "0.88",
        "context_aggregation": "unidirectional",
        "d_hidden": "64",
        "end_to_end": "true",
    },
    "e2e-av-sa": {
        "arch": "sa",
        "modality": "audiovisual",
        "n_layers": "3",
        "d_model": "64",
        "activation": "gelu",
        "dropout": "0.5",
        "learning_rate": "0.002",
        "weight_decay": "0.008",
        "lambda_mse": "0.78",
        "lambda_ce": "0.27",
        "d_feedforward": "256",
        "n_heads": "8",
        "end_to_end": "true",
    },
    "e2e-av-cma": {
        "arch": "cma",
        "modality": "audiovisual",
        "n_layers": "4",
        "d_model": "256",
        "activation": "gelu",
        "dropout": "0.6",
        "learning_rate": "0.0001",
        "weight_decay": "0.06",
        "lambda_mse": "0.18",
        "lambda_ce": "0.76",
        "d_feedforward": "256",
        "n_heads": "4",
        "n_layers_v_to_a": "3",
        "n_layers_a_to_v": "1",
        "end_to_end": "true",
    },
}


def preset(name: str, overrides: dict[str, str] | None = None) -> tuple[ModelConfig, TrainConfig]:
    if name not in PRESETS:
        raise ConfigParseError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    entries = dict(PRESETS[name])
    if overrides:
        entries.update({k: str(v) for k, v in overrides.items()})
    return parse_entries(entries)
