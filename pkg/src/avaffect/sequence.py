"""Temporal cores: stacked uni/bi LSTM, transformer-style self-attention
encoder layers, and cross-modal attention blocks.

Conventions shared by all three:
  - sequences are (B, T, d) with no padding or masking (the data pipeline
    only emits full fixed-length windows);
  - attention weights are row-stochastic in every head of every layer;
  - encoder layers are post-norm (sublayer -> add -> norm).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .layers import Activation, Dense, Dropout, LayerNorm, Module, ModuleList, Parameter


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """softmax(Q K^T / sqrt(d_k)) V on (..., T, d) operands."""
    if q.shape[-1] != k.shape[-1]:
        raise T.ShapeMismatch("attention", q.shape, k.shape, detail="query/key width differs")
    if k.shape[-2] != v.shape[-2]:
        raise T.ShapeMismatch("attention", k.shape, v.shape, detail="key/value length differs")
    d_k = q.shape[-1]
    scores = T.matmul(q, T.transpose(k)) * (1.0 / np.sqrt(d_k))
    weights = T.softmax(scores)
    out = T.matmul(weights, v)
    if return_weights:
        return out, weights
    return out


class MultiHeadAttention(Module):
    """Per-head linear projections of Q/K/V, parallel attention, concat, and
    an output projection back to d_model.

    Regularization acts on the attention probabilities (inverted dropout on
    the softmax weights before they mix the values), the canonical placement
    inside multi-head attention.
    """

    def __init__(self, d_model: int, n_heads: int, bias: bool = True, dropout: float = 0.0,
                 rng=None, dtype=np.float32):
        super().__init__()
        if d_model % n_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.w_q = Dense(d_model, d_model, bias=bias, rng=rng, dtype=dtype)
        self.w_k = Dense(d_model, d_model, bias=bias, rng=rng, dtype=dtype)
        self.w_v = Dense(d_model, d_model, bias=bias, rng=rng, dtype=dtype)
        self.w_o = Dense(d_model, d_model, bias=bias, rng=rng, dtype=dtype)
        self.attn_dropout = Dropout(dropout)

    def _split_heads(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return T.transpose(T.reshape(x, (b, t, self.n_heads, self.d_k)), (0, 2, 1, 3))

    def forward(self, q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
        b, t_q, _ = q.shape
        qh = self._split_heads(self.w_q(q))
        kh = self._split_heads(self.w_k(k))
        vh = self._split_heads(self.w_v(v))
        scores = T.matmul(qh, T.transpose(kh)) * (1.0 / np.sqrt(self.d_k))
        weights = T.softmax(scores)
        attended = T.matmul(self.attn_dropout(weights), vh)
        merged = T.reshape(T.transpose(attended, (0, 2, 1, 3)), (b, t_q, self.d_model))
        out = self.w_o(merged)
        if return_weights:
            return out, weights
        return out


class FeedForward(Module):
    """Position-wise d_model -> d_ff -> d_model with configured activation
    and dropout on the hidden activation."""

    def __init__(self, d_model: int, d_ff: int, activation: str, dropout: float = 0.0,
                 rng=None, dtype=np.float32):
        super().__init__()
        self.lift = Dense(d_model, d_ff, rng=rng, dtype=dtype)
        self.act = Activation(activation)
        self.dropout = Dropout(dropout)
        self.project = Dense(d_ff, d_model, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.project(self.dropout(self.act(self.lift(x))))


class EncoderLayer(Module):
    """Self-attention sublayer then feedforward sublayer, each followed by
    residual add and layer normalization (post-norm).

    Each sublayer is regularized internally: the attention sublayer on its
    attention probabilities, the feedforward sublayer on its hidden
    activation. (Dropping whole sublayer-output channels at the searched
    rates starves short training budgets; see the encoder regression tests.)
    """

    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float,
                 activation: str, rng=None, dtype=np.float32):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, n_heads, dropout=dropout, rng=rng, dtype=dtype)
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.ff = FeedForward(d_model, d_ff, activation, dropout=dropout, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = self.norm1(x + self.attn(x, x, x))
        return self.norm2(h + self.ff(h))


class EncoderStack(Module):
    """Stack of self-attention encoder layers. Positional information, when
    wanted, is added by the caller before the stack."""

    def __init__(self, n_layers: int, d_model: int, n_heads: int, d_ff: int,
                 dropout: float, activation: str, rng=None, dtype=np.float32):
        super().__init__()
        self.layers = ModuleList(
            EncoderLayer(d_model, n_heads, d_ff, dropout, activation, rng=rng, dtype=dtype)
            for _ in range(n_layers)
        )

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class CrossModalBlock(Module):
    """Target sequence queries a source sequence (no self-attention inside).

    Both inputs are layer-normalized before the attention, the attended
    values are added residually on the target path, and a feedforward
    sublayer follows as in the encoder layer.
    """

    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float,
                 activation: str, rng=None, dtype=np.float32):
        super().__init__()
        self.norm_target = LayerNorm(d_model, dtype=dtype)
        self.norm_source = LayerNorm(d_model, dtype=dtype)
        self.attn = MultiHeadAttention(d_model, n_heads, dropout=dropout, rng=rng, dtype=dtype)
        self.norm1 = LayerNorm(d_model, dtype=dtype)
        self.ff = FeedForward(d_model, d_ff, activation, dropout=dropout, rng=rng, dtype=dtype)
        self.norm2 = LayerNorm(d_model, dtype=dtype)

    def forward(self, target: Tensor, source: Tensor) -> Tensor:
        if target.shape[-1] != source.shape[-1]:
            raise T.ShapeMismatch("cross_modal_block", target.shape, source.shape,
                                  detail="modalities must share d_model")
        src = self.norm_source(source)
        attended = self.attn(self.norm_target(target), src, src)
        h = self.norm1(target + attended)
        return self.norm2(h + self.ff(h))


class CrossModalStack(Module):
    """Stack of cross-modal blocks; every layer re-reads the original
    (layer-0) source sequence for its keys and values."""

    def __init__(self, n_layers: int, d_model: int, n_heads: int, d_ff: int,
                 dropout: float, activation: str, rng=None, dtype=np.float32):
        super().__init__()
        self.blocks = ModuleList(
            CrossModalBlock(d_model, n_heads, d_ff, dropout, activation, rng=rng, dtype=dtype)
            for _ in range(n_layers)
        )

    def forward(self, target: Tensor, source: Tensor) -> Tensor:
        for block in self.blocks:
            target = block(target, source)
        return target


class LSTM(Module):
    """Stacked uni/bidirectional LSTM with zero initial states.

    Each layer/direction holds one weight matrix over the concatenated
    [input, hidden] vector and a single bias vector per gate set, in gate
    order (input, forget, candidate, output). The forget-gate bias slice is
    initialized to 1. Bidirectional layers concatenate the forward pass with
    a time-reversed pass, so their output width is 2 * d_hidden.
    """

    def __init__(self, d_in: int, d_hidden: int, n_layers: int = 1,
                 bidirectional: bool = False, dropout: float = 0.0, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.d_in = d_in
        self.d_hidden = d_hidden
        self.n_layers = n_layers
        self.bidirectional = bidirectional
        self.d_out = d_hidden * (2 if bidirectional else 1)
        self.weights = ModuleList()
        self.inter_dropout = Dropout(dropout)
        scale = 1.0 / np.sqrt(d_hidden)
        for layer in range(n_layers):
            layer_in = d_in if layer == 0 else self.d_out
            for _ in range(2 if bidirectional else 1):
                cell = Module()
                cell.weight = Parameter(
                    rng.uniform(-scale, scale, size=(layer_in + d_hidden, 4 * d_hidden)).astype(dtype)
                )
                bias = np.zeros(4 * d_hidden, dtype=dtype)
                bias[d_hidden : 2 * d_hidden] = 1.0
                cell.bias = Parameter(bias)
                self.weights.append(cell)

    def _cell(self, layer: int, direction: int) -> Module:
        return self.weights[layer * (2 if self.bidirectional else 1) + direction]

    def _run_direction(self, x: Tensor, cell: Module) -> Tensor:
        b, t, d_in = x.shape
        d_h = self.d_hidden
        w_x = T.narrow(cell.weight, 0, 0, d_in)
        w_h = T.narrow(cell.weight, 0, d_in, d_h)
        # Input contributions for all timesteps in one matmul.
        xw = T.matmul(x, w_x)
        h = Tensor(np.zeros((b, d_h), dtype=x.dtype))
        c = Tensor(np.zeros((b, d_h), dtype=x.dtype))
        outputs = []
        for step in range(t):
            gates = T.reshape(T.narrow(xw, 1, step, 1), (b, 4 * d_h)) + T.matmul(h, w_h) + cell.bias
            i_gate = T.sigmoid(T.narrow(gates, 1, 0, d_h))
            f_gate = T.sigmoid(T.narrow(gates, 1, d_h, d_h))
            g_cand = T.tanh(T.narrow(gates, 1, 2 * d_h, d_h))
            o_gate = T.sigmoid(T.narrow(gates, 1, 3 * d_h, d_h))
            c = f_gate * c + i_gate * g_cand
            h = o_gate * T.tanh(c)
            outputs.append(T.reshape(h, (b, 1, d_h)))
        return T.concat(outputs, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise T.ShapeMismatch("lstm", x.shape, (self.d_in,), detail="input width mismatch")
        seq = x
        for layer in range(self.n_layers):
            fwd = self._run_direction(seq, self._cell(layer, 0))
            if self.bidirectional:
                bwd = T.flip(self._run_direction(T.flip(seq, 1), self._cell(layer, 1)), 1)
                seq = T.concat([fwd, bwd], axis=2)
            else:
                seq = fwd
            if layer + 1 < self.n_layers:
                seq = self.inter_dropout(seq)
        return seq

    def step(self, x_t: Tensor, h: Tensor, c: Tensor, layer: int = 0, direction: int = 0):
        """One recurrence step (used by the gradient-check harness)."""
        cell = self._cell(layer, direction)
        d_h = self.d_hidden
        gates = T.matmul(T.concat([x_t, h], axis=1), cell.weight) + cell.bias
        i_gate = T.sigmoid(T.narrow(gates, 1, 0, d_h))
        f_gate = T.sigmoid(T.narrow(gates, 1, d_h, d_h))
        g_cand = T.tanh(T.narrow(gates, 1, 2 * d_h, d_h))
        o_gate = T.sigmoid(T.narrow(gates, 1, 3 * d_h, d_h))
        c_new = f_gate * c + i_gate * g_cand
        h_new = o_gate * T.tanh(c_new)
        return h_new, c_new


def lstm_param_count(d_in: int, d_hidden: int, n_layers: int, bidirectional: bool) -> int:
    """4 * ((d_in + d_h) * d_h + d_h) per layer and direction."""
    total = 0
    directions = 2 if bidirectional else 1
    d_out = d_hidden * directions
    for layer in range(n_layers):
        layer_in = d_in if layer == 0 else d_out
        total += directions * 4 * ((layer_in + d_hidden) * d_hidden + d_hidden)
    return total
