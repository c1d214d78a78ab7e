"""Layer catalogue: affine, 1-D conv, pooling, normalization, dropout,
positional encoding, plus the small Module/Parameter registry everything
is assembled from.

Front-end conv layers default to "same" zero padding (floor(k/2)) so the
sequence length is preserved for the per-timestep losses. Dropout uses
inverted scaling at train time, so evaluation is parameter-free identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {
    "relu": T.relu,
    "gelu": T.gelu,
    "selu": T.selu,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
}


def activation_fn(name: str):
    try:
        return ACTIVATIONS[name.lower()]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


class Parameter(Tensor):
    """Trainable tensor; registered by Module.__setattr__."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    """Minimal parameter registry with train/eval mode and rng plumbing."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "rng", None)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield (f"{prefix}{name}", p)
        for name, child in self._children.items():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_rng(self, rng: np.random.Generator) -> "Module":
        for m in self.modules():
            object.__setattr__(m, "rng", rng)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def set_trainable(self, trainable: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = trainable
        return self

    def to_dtype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in own.items():
            arr = arrays[name]
            if tuple(arr.shape) != p.shape:
                raise ValueError(f"shape mismatch for {name!r}: checkpoint {tuple(arr.shape)} vs model {p.shape}")
            p.data = np.asarray(arr, dtype=p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, items=()):
        super().__init__()
        self._items: list[Module] = []
        for item in items:
            self.append(item)

    def append(self, item: Module) -> None:
        self._children[str(len(self._items))] = item
        self._items.append(item)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Dense(Module):
    """y = x @ W + b over the last axis."""

    def __init__(self, d_in: int, d_out: int, bias: bool = True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Parameter(glorot_uniform(rng, (d_in, d_out), d_in, d_out, dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.ShapeMismatch("dense", x.shape, self.weight.shape, detail="input width mismatch")
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y


class Conv1d(Module):
    """Cross-correlation on (B, C_in, L) with configurable zero padding."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 padding: int | str = 0, bias: bool = True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        if padding == "same":
            padding = kernel // 2
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.stride, self.padding = stride, int(padding)
        fan_in = c_in * kernel
        self.weight = Parameter(glorot_uniform(rng, (c_out, c_in, kernel), fan_in, c_out * kernel, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 padding: int = 0, bias: bool = True, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride, self.padding = stride, padding
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(glorot_uniform(rng, (c_out, c_in, kernel, kernel), fan_in, c_out, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class MaxPool1d(Module):
    def __init__(self, kernel: int, stride: int | None = None):
        super().__init__()
        self.kernel = kernel
        self.stride = kernel if stride is None else stride

    def forward(self, x: Tensor) -> Tensor:
        return T.maxpool1d(x, self.kernel, self.stride)


class LayerNorm(Module):
    """Normalizes the last axis to zero mean / unit variance, then applies a
    learned scale and shift."""

    def __init__(self, d: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.d = d
        self.eps = eps
        self.gamma = Parameter(np.ones(d, dtype=dtype))
        self.beta = Parameter(np.zeros(d, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d:
            raise T.ShapeMismatch("layernorm", x.shape, (self.d,), detail="width mismatch")
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class Dropout(Module):
    """Inverted dropout: zeroes entries with probability p at train time and
    scales survivors by 1/(1-p); identity in evaluation."""

    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout p must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        if self.rng is None:
            raise RuntimeError("dropout in training mode needs an rng (call set_rng)")
        keep = (self.rng.random(x.shape) >= self.p).astype(x.dtype.type)
        mask = Tensor(keep / np.asarray(1.0 - self.p, dtype=x.dtype))
        return x * mask


class Activation(Module):
    def __init__(self, name: str):
        super().__init__()
        self.name = name.lower()
        self.fn = activation_fn(name)

    def forward(self, x: Tensor) -> Tensor:
        return self.fn(x)


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


def positional_encoding(length: int, d: int, dtype=np.float32) -> np.ndarray:
    """Fixed sinusoidal table (length x d): even columns sin, odd columns cos,
    both driven by t / 10000^(2i/d)."""
    if d % 2 != 0:
        raise ValueError(f"positional encoding width must be even, got {d}")
    if length < 1:
        raise ValueError(f"positional encoding length must be >= 1, got {length}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    table = np.empty((length, d), dtype=np.float64)
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dtype)


# -- declarative specs for analytic parameter counting ------------------------


@dataclass(frozen=True)
class LayerSpec:
    """Declarative layer description used for analytic size reporting."""

    kind: str  # dense | conv1d | maxpool1d | layernorm | dropout | activation | positional-encoding
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        a = self.attrs
        if self.kind == "dense" and (a["d_in"] <= 0 or a["d_out"] <= 0):
            raise ValueError("dense widths must be positive")
        if self.kind == "conv1d" and a["kernel"] < 1:
            raise ValueError("conv kernel size must be >= 1")
        if self.kind == "dropout" and not 0.0 <= a["p"] < 1.0:
            raise ValueError("dropout p must be in [0, 1)")


def param_count(spec: LayerSpec) -> int:
    """Analytic parameter count for one layer spec."""
    a = spec.attrs
    if spec.kind == "dense":
        n = a["d_in"] * a["d_out"]
        return n + (a["d_out"] if a.get("bias", True) else 0)
    if spec.kind == "conv1d":
        n = a["kernel"] * a["c_in"] * a["c_out"]
        return n + (a["c_out"] if a.get("bias", True) else 0)
    if spec.kind == "layernorm":
        return 2 * a["d"]
    if spec.kind in ("maxpool1d", "dropout", "activation", "positional-encoding"):
        return 0
    raise ValueError(f"unknown layer kind {spec.kind!r}")
