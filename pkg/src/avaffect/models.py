"""Model zoo: audio/visual encoders, front-end projections, the three
sequence cores, and the two output heads, assembled from a ModelConfig.

Topology, by architecture:
  rnn / sa, audiovisual   per-modality front-end to d_model/2, concatenated
                          (visual, audio) to d_model, then the LSTM stack or
                          positional encoding + self-attention stack.
  cma                     per-modality front-end to d_model, positional
                          encoding, two directed cross-modal stacks in
                          parallel, concatenation (2*d_model) projected back
                          to d_model, then a self-attention stack.
  unimodal rnn / sa       single front-end straight to d_model, no fusion.

Both heads share the trunk output: a tanh-bounded regression head of width 2
and a classification head of width 24.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .layers import (
    Activation, Conv1d, Conv2d, Dense, Identity, Module, positional_encoding,
)
from .losses import N_CLASSES
from .sequence import CrossModalStack, EncoderStack, LSTM

ARCHS = ("rnn", "sa", "cma")
MODALITIES = ("audio", "visual", "audiovisual")
VISUAL_WIDTH = 512
AUDIO_WIDTH = 128
AUDIO_CLIP_SAMPLES = 8000

# Four conv/pool feature-learning blocks of the audio encoder: kernel sizes
# and output channels, each followed by maxpool(2, 2) (pool plan pinned here;
# see the parameter-count tests).
AUDIO_KERNELS = (3, 3, 3, 3)
AUDIO_CHANNELS = (64, 64, 128, 128)


class ConfigError(ValueError):
    """Raised for invalid ModelConfig combinations."""


@dataclass
class ModelConfig:
    """Architecture kind plus every hyperparameter that determines a model."""

    arch: str = "rnn"
    modality: str = "audiovisual"
    n_layers: int = 1
    d_model: int = 64
    activation: str = "selu"
    dropout: float = 0.1
    front_end: str = "dense"            # dense | conv1d
    front_end_kernel: int = 3
    front_end_bias: bool = True
    # recurrent core
    d_hidden: int = 64
    context_aggregation: str = "unidirectional"
    # attention cores
    n_heads: int = 4
    d_feedforward: int = 256
    # cross-modal stacks: n_layers_v_to_a is the depth of the stack whose
    # source is visual and target is audio (and vice versa)
    n_layers_v_to_a: int = 1
    n_layers_a_to_v: int = 1
    # encoders
    visual_source: str = "precomputed"  # precomputed | stub
    audio_source: str = "precomputed"   # precomputed | waveform
    end_to_end: bool = False
    dtype: str = "float32"

    def validate(self) -> "ModelConfig":
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.modality not in MODALITIES:
            raise ConfigError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.arch == "cma" and self.modality != "audiovisual":
            raise ConfigError("cma requires modality=audiovisual")
        if not 1 <= self.n_layers:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d_model <= 0 or self.d_model % 2 != 0:
            raise ConfigError(f"d_model must be positive and even, got {self.d_model}")
        if self.arch in ("sa", "cma") and self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.front_end not in ("dense", "conv1d"):
            raise ConfigError(f"front_end must be dense or conv1d, got {self.front_end!r}")
        if self.front_end_kernel < 1:
            raise ConfigError(f"front_end_kernel must be >= 1, got {self.front_end_kernel}")
        if self.context_aggregation not in ("unidirectional", "bidirectional"):
            raise ConfigError(f"context_aggregation must be unidirectional or bidirectional, "
                              f"got {self.context_aggregation!r}")
        if self.visual_source not in ("precomputed", "stub"):
            raise ConfigError(f"visual_source must be precomputed or stub, got {self.visual_source!r}")
        if self.audio_source not in ("precomputed", "waveform"):
            raise ConfigError(f"audio_source must be precomputed or waveform, got {self.audio_source!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.arch == "cma" and (self.n_layers_v_to_a < 1 or self.n_layers_a_to_v < 1):
            raise ConfigError("cross-modal stack depths must be >= 1")
        return self

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def uses_visual(self) -> bool:
        return self.modality in ("visual", "audiovisual")

    @property
    def uses_audio(self) -> bool:
        return self.modality in ("audio", "audiovisual")


@dataclass
class ModelOutput:
    """Per-timestep predictions: tanh-bounded scores and raw class logits."""

    va_scores: Tensor   # (B, T, 2) in [-1, 1]
    class_logits: Tensor  # (B, T, 24)


class AudioEncoder(Module):
    """1-D CNN on raw 0.5 s clips: four conv/pool blocks then global average
    pooling to a 128-dimensional embedding per clip."""

    def __init__(self, rng=None, dtype=np.float32):
        super().__init__()
        c_in = 1
        convs = []
        for k, c_out in zip(AUDIO_KERNELS, AUDIO_CHANNELS):
            convs.append(Conv1d(c_in, c_out, k, stride=1, padding=k // 2, rng=rng, dtype=dtype))
            c_in = c_out
        self.conv1, self.conv2, self.conv3, self.conv4 = convs

    def forward(self, clips: Tensor) -> Tensor:
        """(N, 1, 8000) -> (N, 128)."""
        if clips.ndim != 3 or clips.shape[1] != 1 or clips.shape[2] != AUDIO_CLIP_SAMPLES:
            raise T.ShapeMismatch("audio_encoder", clips.shape,
                                  detail=f"expect (N, 1, {AUDIO_CLIP_SAMPLES})")
        h = clips
        for conv in (self.conv1, self.conv2, self.conv3, self.conv4):
            h = T.maxpool1d(T.relu(conv(h)), 2, 2)
        return T.tmean(h, axis=-1)


class StubVisualEncoder(Module):
    """Small trainable stand-in for a face CNN: two strided conv layers on
    tiny images, pooled and projected to the 512-d feature contract."""

    def __init__(self, channels: int = 3, rng=None, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(channels, 8, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(8, 16, 3, stride=2, padding=1, rng=rng, dtype=dtype)
        self.proj = Dense(16, VISUAL_WIDTH, rng=rng, dtype=dtype)

    def forward(self, images: Tensor) -> Tensor:
        """(N, C, H, W) -> (N, 512)."""
        h = T.relu(self.conv1(images))
        h = T.relu(self.conv2(h))
        pooled = T.tmean(h, axis=(-2, -1))
        return self.proj(pooled)


class FrontEnd(Module):
    """Dimension-reducing projection (dense or temporal conv1d), followed by
    the configured activation. Regularization stays inside the sequence
    cores (attention/feedforward sublayers, LSTM inter-layer dropout)."""

    def __init__(self, d_in: int, d_out: int, kind: str, kernel: int, activation: str,
                 bias: bool = True, rng=None, dtype=np.float32):
        super().__init__()
        self.kind = kind
        if kind == "dense":
            self.proj = Dense(d_in, d_out, bias=bias, rng=rng, dtype=dtype)
        else:
            self.proj = Conv1d(d_in, d_out, kernel, padding="same", bias=bias, rng=rng, dtype=dtype)
        self.act = Activation(activation)

    def forward(self, x: Tensor) -> Tensor:
        if self.kind == "dense":
            h = self.proj(x)
        else:
            h = T.transpose(self.proj(T.transpose(x, (0, 2, 1))), (0, 2, 1))
        return self.act(h)


class FusionModel(Module):
    """One configured architecture with its encoders, trunk, and heads."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        dtype = config.np_dtype
        self._pe_cache: dict[int, np.ndarray] = {}

        self.visual_encoder = Identity()
        self.audio_encoder = Identity()
        if config.uses_visual and config.visual_source == "stub":
            self.visual_encoder = StubVisualEncoder(rng=rng, dtype=dtype)
        if config.uses_audio and config.audio_source == "waveform":
            self.audio_encoder = AudioEncoder(rng=rng, dtype=dtype)

        d = config.d_model
        fused_width = d // 2 if (config.modality == "audiovisual" and config.arch != "cma") else d

        def front(d_in):
            return FrontEnd(d_in, fused_width, config.front_end, config.front_end_kernel,
                            config.activation, bias=config.front_end_bias,
                            rng=rng, dtype=dtype)

        if config.uses_visual:
            self.front_visual = front(VISUAL_WIDTH)
        if config.uses_audio:
            self.front_audio = front(AUDIO_WIDTH)

        if config.arch == "rnn":
            bidir = config.context_aggregation == "bidirectional"
            self.core = LSTM(d, config.d_hidden, config.n_layers, bidirectional=bidir,
                             dropout=config.dropout, rng=rng, dtype=dtype)
            trunk_width = self.core.d_out
        elif config.arch == "sa":
            self.core = EncoderStack(config.n_layers, d, config.n_heads, config.d_feedforward,
                                     config.dropout, config.activation, rng=rng, dtype=dtype)
            trunk_width = d
        else:  # cma
            def stack(depth):
                return CrossModalStack(depth, d, config.n_heads, config.d_feedforward,
                                       config.dropout, config.activation, rng=rng, dtype=dtype)

            self.cross_v_to_a = stack(config.n_layers_v_to_a)  # visual source -> audio target
            self.cross_a_to_v = stack(config.n_layers_a_to_v)  # audio source -> visual target
            self.fuse_proj = Dense(2 * d, d, rng=rng, dtype=dtype)
            self.core = EncoderStack(config.n_layers, d, config.n_heads, config.d_feedforward,
                                     config.dropout, config.activation, rng=rng, dtype=dtype)
            trunk_width = d

        self.head_va = Dense(trunk_width, 2, rng=rng, dtype=dtype)
        self.head_cls = Dense(trunk_width, N_CLASSES, rng=rng, dtype=dtype)

        if not config.end_to_end:
            self.visual_encoder.set_trainable(False)
            self.audio_encoder.set_trainable(False)

    # -- encoders ----------------------------------------------------------

    def _encode_visual(self, visual: np.ndarray) -> Tensor:
        dtype = self.config.np_dtype
        if self.config.visual_source == "precomputed":
            if visual.ndim != 3 or visual.shape[-1] != VISUAL_WIDTH:
                raise T.ShapeMismatch("visual_encoder", visual.shape,
                                      detail=f"precomputed features must be (B, T, {VISUAL_WIDTH})")
            return self.visual_encoder(Tensor(np.asarray(visual, dtype=dtype)))
        if visual.ndim != 5:
            raise T.ShapeMismatch("visual_encoder", visual.shape, detail="stub expects (B, T, H, W, C)")
        b, t, h, w, c = visual.shape
        images = Tensor(np.asarray(visual, dtype=dtype).transpose(0, 1, 4, 2, 3).reshape(b * t, c, h, w))
        return T.reshape(self.visual_encoder(images), (b, t, VISUAL_WIDTH))

    def _encode_audio(self, audio: np.ndarray) -> Tensor:
        dtype = self.config.np_dtype
        if self.config.audio_source == "precomputed":
            if audio.ndim != 3 or audio.shape[-1] != AUDIO_WIDTH:
                raise T.ShapeMismatch("audio_encoder", audio.shape,
                                      detail=f"precomputed features must be (B, T, {AUDIO_WIDTH})")
            return self.audio_encoder(Tensor(np.asarray(audio, dtype=dtype)))
        if audio.ndim != 3 or audio.shape[-1] != AUDIO_CLIP_SAMPLES:
            raise T.ShapeMismatch("audio_encoder", audio.shape,
                                  detail=f"waveform clips must be (B, T, {AUDIO_CLIP_SAMPLES})")
        b, t, s = audio.shape
        clips = Tensor(np.asarray(audio, dtype=dtype).reshape(b * t, 1, s))
        return T.reshape(self.audio_encoder(clips), (b, t, AUDIO_WIDTH))

    def _add_positions(self, x: Tensor) -> Tensor:
        t = x.shape[1]
        table = self._pe_cache.get(t)
        if table is None or table.dtype != x.dtype:
            table = positional_encoding(t, x.shape[2], dtype=x.dtype)
            self._pe_cache[t] = table
        return x + Tensor(table)

    # -- trunk ---------------------------------------------------------------

    def forward(self, visual: np.ndarray | None = None, audio: np.ndarray | None = None) -> ModelOutput:
        cfg = self.config
        if cfg.uses_visual and visual is None:
            raise ConfigError(f"{cfg.arch} with modality={cfg.modality} needs visual input")
        if cfg.uses_audio and audio is None:
            raise ConfigError(f"{cfg.arch} with modality={cfg.modality} needs audio input")

        v = self.front_visual(self._encode_visual(visual)) if cfg.uses_visual else None
        a = self.front_audio(self._encode_audio(audio)) if cfg.uses_audio else None

        if cfg.arch == "cma":
            v = self._add_positions(v)
            a = self._add_positions(a)
            enriched_audio = self.cross_v_to_a(a, v)
            enriched_visual = self.cross_a_to_v(v, a)
            fused = self.fuse_proj(T.concat([enriched_visual, enriched_audio], axis=2))
            trunk = self.core(fused)
        else:
            if cfg.modality == "audiovisual":
                fused = T.concat([v, a], axis=2)
            else:
                fused = v if v is not None else a
            if cfg.arch == "sa":
                fused = self._add_positions(fused)
            trunk = self.core(fused)

        va = T.tanh(self.head_va(trunk))
        logits = self.head_cls(trunk)
        return ModelOutput(va_scores=va, class_logits=logits)

    def predict(self, visual: np.ndarray | None = None, audio: np.ndarray | None = None) -> np.ndarray:
        """Deterministic evaluation-mode scores as a numpy array (B, T, 2)."""
        was_training = self.training
        self.eval()
        try:
            with T.no_grad():
                out = self.forward(visual=visual, audio=audio)
        finally:
            self.train(was_training)
        return out.va_scores.data.copy()

    def encoder_parameters(self) -> list:
        return self.visual_encoder.parameters() + self.audio_encoder.parameters()

    def trainable_parameters(self) -> list:
        return [p for p in self.parameters() if p.requires_grad]


def build_model(config: ModelConfig, seed: int = 0) -> FusionModel:
    """Deterministically construct and initialize a model from its config.

    The model carries a seeded dropout rng so training-mode forwards work
    standalone; the training loop installs its own stream via set_rng.
    """
    model = FusionModel(config, np.random.default_rng(seed))
    model.set_rng(np.random.default_rng(seed + 1))
    return model


def count_parameters(model: FusionModel) -> dict[str, int]:
    """Structural parameter counts: the sequence part (front-ends, core,
    heads) and the total including encoders. Freezing does not change them."""
    total = model.parameter_count()
    encoders = sum(p.size for p in model.encoder_parameters())
    return {"sequence": total - encoders, "total": total}


def audio_encoder_param_count() -> int:
    """Analytic size of the audio encoder: sum of k*c_in*c_out + c_out."""
    total = 0
    c_in = 1
    for k, c_out in zip(AUDIO_KERNELS, AUDIO_CHANNELS):
        total += k * c_in * c_out + c_out
        c_in = c_out
    return total


# -- checkpoint format ------------------------------------------------------------
#
# magic "AVCK", u32 format version, u32 config length, config echo (UTF-8
# key=value text), u32 parameter count, then per parameter: u32 name length,
# name, u32 ndim, u32 dims..., raw little-endian float32 data.

CHECKPOINT_MAGIC = b"AVCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, config_text: str, model: FusionModel) -> None:
    blob = config_text.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        arrays = model.state_arrays()
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        config_text = fh.read(blob_len).decode("utf-8")
        (n_params,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            payload = fh.read(4 * count)
            if len(payload) != 4 * count:
                raise CheckpointError(f"{path}: truncated data for parameter {name!r}")
            arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return config_text, arrays
