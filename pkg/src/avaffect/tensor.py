"""Dense tensors with reverse-mode automatic differentiation.

Every model in this package is expressed through the primitives below. A
Tensor wraps a numpy array; primitives record their inputs and a backward
rule on the output, so calling ``backward()`` on a scalar loss walks the
recorded graph in reverse topological order and accumulates gradients into
the participating leaves.

Two precisions are supported: float32 (training default) and float64 (used
by the gradient-check harness, which needs the headroom).
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

DEFAULT_DTYPE = np.float32

# Fixed activation constants (exact Gaussian-CDF GELU; standard SELU pair).
SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeMismatch(ValueError):
    """Raised when operand shapes violate an op's shape rule."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        msg = f"{op}: incompatible shapes {' and '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(ArithmeticError):
    """Raised when an op receives NaN/Inf input with debug checks enabled."""


class GraphError(RuntimeError):
    """Raised for backward() misuse: non-scalar loss or detached loss."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _debug_checks() -> bool:
    return getattr(_state, "debug_checks", False)


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op finiteness validation of inputs (off by default)."""
    _state.debug_checks = enabled


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """n-dimensional real array with optional gradient.

    ``data`` is a numpy array; ``grad`` (same shape) accumulates across
    backward() calls until ``zero_grad()``. Tensors that participate in a
    recorded graph must not be mutated in place.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "inputs", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op: str | None = None
        self.inputs: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    # -- gradient handling ---------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable requires_grad leaf.

        ``self`` must be a scalar (size 1) produced through recorded ops.
        Repeated calls without zeroing accumulate.
        """
        if self.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {self.shape}")
        if self._backward is None and not self.requires_grad:
            raise GraphError("loss is detached from the tape (no recorded inputs)")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._backward is None:
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            for inp, gi in zip(t.inputs, t._backward(g)):
                if gi is None or not _needs_grad(inp):
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _wrap(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order walk: every node's inputs precede it."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for inp in node.inputs:
            if id(inp) not in seen:
                stack.append((inp, False))
    return order


def _result(op: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    if _debug_checks():
        for t in inputs:
            if not np.isfinite(t.data).all():
                raise NonFiniteError(f"{op}: non-finite input values")
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.op = op
    if _grad_enabled() and any(_needs_grad(t) for t in inputs):
        out.requires_grad = True
        out.inputs = tuple(inputs)
        out._backward = backward
    else:
        out.requires_grad = False
        out.inputs = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum out axes that numpy broadcasting expanded, back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeMismatch("add", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", out, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeMismatch("sub", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatch("mul", a.shape, b.shape) from None

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", out, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data / b.data
    except ValueError:
        raise ShapeMismatch("div", a.shape, b.shape) from None

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _result("div", out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


# -- shape manipulation --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul", a.shape, b.shape, detail="operands must be >= 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape, detail="inner dimensions differ")

    if a.ndim > 2 and b.ndim == 2:
        # Collapse leading axes into one large gemm instead of a loop of
        # small batched ones; the same applies to both backward products.
        lead = a.shape[:-1]
        k, m = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(*lead, m)

        def backward(g):
            g2 = g.reshape(-1, m)
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _result("matmul", out, (a, b), backward)

    out = a.data @ b.data

    def backward(g):
        ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    return _result("matmul", out, (a, b), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        if a.ndim < 2:
            raise ShapeMismatch("transpose", a.shape, detail="needs >= 2 axes")
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def backward(g):
        return (g.transpose(inverse),)

    return _result("transpose", out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", a.shape, shape, detail="element counts differ") from None
    in_shape = a.shape

    def backward(g):
        return (g.reshape(in_shape),)

    return _result("reshape", out, (a,), backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeMismatch("broadcast_to", a.shape, shape) from None
    in_shape = a.shape

    def backward(g):
        return (_unbroadcast(g, in_shape),)

    return _result("broadcast_to", out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            i != (axis % len(ref)) and t.shape[i] != ref[i] for i in range(len(ref))
        ):
            raise ShapeMismatch("concat", ref, t.shape, detail=f"axis={axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result("concat", out, tensors, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeMismatch("narrow", a.shape, detail=f"axis={axis} start={start} length={length}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index].copy()
    in_shape = a.shape

    def backward(g):
        full = np.zeros(in_shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _result("narrow", out, (a,), backward)


def split(a: Tensor, size: int, axis: int) -> list[Tensor]:
    """Split into equal chunks of ``size`` along ``axis``."""
    if a.shape[axis] % size != 0:
        raise ShapeMismatch("split", a.shape, detail=f"axis {axis} not divisible by {size}")
    return [narrow(a, axis, s, size) for s in range(0, a.shape[axis], size)]


def flip(a: Tensor, axis: int) -> Tensor:
    out = np.flip(a.data, axis=axis).copy()

    def backward(g):
        return (np.flip(g, axis=axis),)

    return _result("flip", out, (a,), backward)


# -- reductions ------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis_t = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axis_t, keepdims=keepdims)
    in_shape = a.shape

    def backward(g):
        if axis_t is None:
            return (np.broadcast_to(g, in_shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis_t)
        return (np.broadcast_to(gk, in_shape).copy(),)

    return _result("sum", out, (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axis_t = _norm_axis(axis, a.ndim)
    out = a.data.mean(axis=axis_t, keepdims=keepdims)
    in_shape = a.shape
    if axis_t is None:
        count = a.size
    else:
        count = int(np.prod([in_shape[ax] for ax in axis_t]))

    def backward(g):
        if axis_t is None:
            return (np.broadcast_to(g / count, in_shape).copy(),)
        gk = g if keepdims else np.expand_dims(g, axis_t)
        return (np.broadcast_to(gk / count, in_shape).copy(),)

    return _result("mean", out, (a,), backward)


# -- pointwise nonlinearities -----------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)
    return _result("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result("sqrt", out, (a,), lambda g: (g * (0.5 / out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def backward(g):
        return (g * (a.data > 0.0),)

    return _result("relu", out, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-CDF form: x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _result("gelu", out, (a,), backward)


def selu(a: Tensor) -> Tensor:
    x = a.data
    pos = x > 0.0
    expx = np.exp(np.minimum(x, 0.0))
    out = SELU_LAMBDA * np.where(pos, x, SELU_ALPHA * (expx - 1.0))

    def backward(g):
        return (g * SELU_LAMBDA * np.where(pos, 1.0, SELU_ALPHA * expx),)

    return _result("selu", out, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis; rows are nonnegative and sum to 1."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _result("softmax", out, (a,), backward)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Fused normalization of the last axis to zero mean / unit variance,
    then scale and shift. One node instead of the eight-op composite."""
    if a.shape[-1] != gamma.shape[-1] or a.shape[-1] != beta.shape[-1]:
        raise ShapeMismatch("layer_norm", a.shape, gamma.shape)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data
    lead_axes = tuple(range(a.ndim - 1))

    def backward(g):
        dxhat = g * gamma.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        dgamma = (g * xhat).sum(axis=lead_axes)
        dbeta = g.sum(axis=lead_axes)
        return dx, dgamma, dbeta

    return _result("layer_norm", out, (a, gamma, beta), backward)


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _result("log_softmax", out, (a,), backward)


# -- convolution and pooling -------------------------------------------------------


def _windows_1d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """Strided read-only view (B, C, L_out, k) over the last axis."""
    b, c, length = x.shape
    l_out = (length - kernel) // stride + 1
    sb, sc, sl = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(b, c, l_out, kernel), strides=(sb, sc, sl * stride, sl), writeable=False
    )


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation over the last axis.

    x: (B, C_in, L); w: (C_out, C_in, k); b: (C_out,). Zero padding on both
    ends. Output length (L + 2*padding - k) // stride + 1.
    """
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch("conv1d", x.shape, w.shape, detail="expect (B,C,L) and (C_out,C,k)")
    kernel = w.shape[2]
    if x.shape[2] + 2 * padding < kernel:
        raise ShapeMismatch("conv1d", x.shape, w.shape, detail="input shorter than kernel")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    win = _windows_1d(xp, kernel, stride)
    out = np.einsum("bclk,ock->bol", win, w.data, optimize=True)
    if b is not None:
        out = out + b.data[None, :, None]
    l_out = out.shape[2]
    in_shape = x.shape

    def backward(g):
        gw = np.einsum("bclk,bol->ock", win, g, optimize=True)
        gxp = np.zeros_like(xp)
        for kk in range(kernel):
            gxp[:, :, kk : kk + stride * l_out : stride] += np.einsum(
                "bol,oc->bcl", g, w.data[:, :, kk], optimize=True
            )
        gx = gxp[:, :, padding : padding + in_shape[2]] if padding else gxp
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2))
        return gx, gw

    inputs = (x, w) if b is None else (x, w, b)
    return _result("conv1d", out, inputs, backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation on (B, C, H, W) with square stride/padding."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch("conv2d", x.shape, w.shape, detail="expect (B,C,H,W) and (C_out,C,kh,kw)")
    kh, kw = w.shape[2], w.shape[3]
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    bsz, c, hp, wp = xp.shape
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1
    sb, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(bsz, c, h_out, w_out, kh, kw),
        strides=(sb, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    out = np.einsum("bchwij,ocij->bohw", win, w.data, optimize=True)
    if b is not None:
        out = out + b.data[None, :, None, None]
    in_shape = x.shape

    def backward(g):
        gw = np.einsum("bchwij,bohw->ocij", win, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += np.einsum(
                    "bohw,oc->bchw", g, w.data[:, :, i, j], optimize=True
                )
        gx = gxp[:, :, padding : padding + in_shape[2], padding : padding + in_shape[3]] if padding else gxp
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    inputs = (x, w) if b is None else (x, w, b)
    return _result("conv2d", out, inputs, backward)


def maxpool1d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Windowed maximum over the last axis of (B, C, L); no padding."""
    if x.ndim != 3:
        raise ShapeMismatch("maxpool1d", x.shape, detail="expect (B,C,L)")
    if x.shape[2] < kernel:
        raise ShapeMismatch("maxpool1d", x.shape, detail=f"length < kernel {kernel}")
    stride = kernel if stride is None else stride
    win = _windows_1d(x.data, kernel, stride)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0].copy()
    in_shape = x.shape
    l_out = out.shape[2]

    def backward(g):
        gx = np.zeros(in_shape, dtype=g.dtype)
        bi, ci, li = np.indices(idx.shape)
        np.add.at(gx, (bi, ci, li * stride + idx), g)
        return (gx,)

    return _result("maxpool1d", out, (x,), backward)


# -- generic dispatch ---------------------------------------------------------------

PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "matmul": matmul, "transpose": transpose, "reshape": reshape,
    "broadcast_to": broadcast_to, "concat": concat, "narrow": narrow,
    "flip": flip, "sum": tsum, "mean": tmean, "exp": exp, "log": log,
    "sqrt": sqrt, "tanh": tanh, "sigmoid": sigmoid, "relu": relu,
    "gelu": gelu, "selu": selu, "softmax": softmax, "log_softmax": log_softmax,
    "layer_norm": layer_norm, "conv1d": conv1d, "conv2d": conv2d,
    "maxpool1d": maxpool1d,
}


def primitive_forward(op_kind: str, inputs: Sequence[Tensor], attrs: dict | None = None):
    """Dispatch one recorded primitive by name.

    ``concat`` takes its tensors as a list; every other op takes them
    positionally. Keyword attributes (axis, shape, stride, ...) go in
    ``attrs``.
    """
    try:
        op = PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown primitive {op_kind!r}; known: {sorted(PRIMITIVES)}") from None
    attrs = attrs or {}
    if op_kind == "concat":
        return op(list(inputs), **attrs)
    return op(*inputs, **attrs)


# -- verification harness ------------------------------------------------------------


def grad_check(fn, inputs: Iterable[np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps leaf Tensors (built from ``inputs``, promoted to float64) to a
    scalar Tensor. Relative error per entry is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    leaves = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*leaves)
    if out.size != 1:
        raise GraphError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in leaves
    ]
    worst = 0.0
    with no_grad():
        for t, ga in zip(leaves, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = fn(*leaves).item()
                flat[i] = orig - eps
                down = fn(*leaves).item()
                flat[i] = orig
                numeric = (up - down) / (2.0 * eps)
                denom = max(abs(gflat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(gflat[i] - numeric) / denom)
    return worst
