"""Layer catalogue: forward semantics, parameter counting, dropout
statistics, positional encoding, gradient checks."""

import numpy as np
import pytest

from avaffect import tensor as T
from avaffect.tensor import Tensor, grad_check
from avaffect.layers import (
    Conv1d, Dense, Dropout, LayerNorm, LayerSpec, MaxPool1d, Module,
    Parameter, param_count, positional_encoding,
)


def rng64(seed=0):
    return np.random.default_rng(seed)


class TestAffineConv:
    def test_dense_identity_weights(self):
        layer = Dense(3, 3, rng=rng64())
        layer.weight.data = np.eye(3, dtype=np.float32)
        layer.bias.data = np.zeros(3, dtype=np.float32)
        x = np.random.default_rng(1).normal(size=(4, 3)).astype(np.float32)
        np.testing.assert_allclose(layer(Tensor(x)).data, x, atol=1e-7)

    def test_dense_width_mismatch(self):
        with pytest.raises(T.ShapeMismatch, match="dense"):
            Dense(3, 2, rng=rng64())(Tensor(np.zeros((4, 5))))

    def test_conv1d_unit_kernel_is_identity(self):
        layer = Conv1d(1, 1, kernel=1, rng=rng64())
        layer.weight.data = np.ones((1, 1, 1), dtype=np.float32)
        layer.bias.data = np.zeros(1, dtype=np.float32)
        x = np.random.default_rng(2).normal(size=(2, 1, 9)).astype(np.float32)
        np.testing.assert_allclose(layer(Tensor(x)).data, x, atol=1e-7)

    def test_conv1d_same_padding_preserves_length(self):
        layer = Conv1d(4, 8, kernel=3, padding="same", rng=rng64())
        out = layer(Tensor(np.zeros((2, 4, 16), dtype=np.float32)))
        assert out.shape == (2, 8, 16)

    def test_conv1d_too_short_without_padding(self):
        layer = Conv1d(1, 1, kernel=5, padding=0, rng=rng64())
        with pytest.raises(T.ShapeMismatch, match="conv1d"):
            layer(Tensor(np.zeros((1, 1, 3))))

    def test_maxpool_direct_definition(self):
        out = MaxPool1d(2, 2)(Tensor(np.array([[[1.0, 3.0, 2.0, 0.0]]])))
        np.testing.assert_array_equal(out.data, [[[3.0, 2.0]]])


class TestNormReg:
    def test_layernorm_constant_row_maps_to_bias(self):
        layer = LayerNorm(3)
        out = layer(Tensor(np.array([[2.0, 2.0, 2.0]])))
        np.testing.assert_allclose(out.data, [[0.0, 0.0, 0.0]], atol=1e-5)

    def test_layernorm_standardizes_last_axis(self):
        layer = LayerNorm(32)
        x = np.random.default_rng(3).normal(loc=5.0, scale=3.0, size=(4, 7, 32))
        out = layer(Tensor(x)).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-3)

    def test_dropout_p0_identity(self):
        layer = Dropout(0.0)
        layer.set_rng(np.random.default_rng(0))
        x = np.random.default_rng(4).normal(size=(5, 5))
        np.testing.assert_array_equal(layer(Tensor(x)).data, x)

    def test_dropout_eval_identity(self):
        layer = Dropout(0.5)
        layer.eval()
        x = np.random.default_rng(5).normal(size=(5, 5))
        np.testing.assert_array_equal(layer(Tensor(x)).data, x)

    def test_dropout_inverted_scaling_unbiased(self):
        layer = Dropout(0.5)
        layer.set_rng(np.random.default_rng(6))
        out = layer(Tensor(np.ones(10_000, dtype=np.float64)))
        assert abs(out.data.mean() - 1.0) < 0.05

    @pytest.mark.parametrize("p", [0.1, 0.5])
    def test_dropout_expectation_within_5pct(self, p):
        layer = Dropout(p)
        layer.set_rng(np.random.default_rng(7))
        x = np.full(20_000, 2.0)
        out = layer(Tensor(x)).data
        assert abs(out.mean() - 2.0) / 2.0 < 0.05

    def test_dropout_invalid_p(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestPositionalEncoding:
    def test_row_zero_alternates_zero_one(self):
        table = positional_encoding(4, 8)
        np.testing.assert_allclose(table[0], [0, 1, 0, 1, 0, 1, 0, 1], atol=1e-7)

    def test_first_column_is_sin_of_position(self):
        for d in (4, 16, 64):
            table = positional_encoding(3, d)
            assert abs(table[1, 0] - np.sin(1.0)) < 1e-6

    def test_range_bounded(self):
        table = positional_encoding(500, 32)
        assert np.abs(table).max() <= 1.0 + 1e-7

    def test_rows_pairwise_distinct(self):
        table = positional_encoding(10_000, 4).astype(np.float64)
        # successive-difference check plus a coarse uniqueness probe
        rounded = np.round(table, 6)
        unique = np.unique(rounded, axis=0)
        assert unique.shape[0] == table.shape[0]

    def test_odd_width_rejected(self):
        with pytest.raises(ValueError):
            positional_encoding(4, 7)


class TestParamCount:
    def test_dense_512_to_64(self):
        spec = LayerSpec("dense", {"d_in": 512, "d_out": 64})
        assert param_count(spec) == 512 * 64 + 64 == 32_832

    def test_conv1d_3_64_128(self):
        spec = LayerSpec("conv1d", {"kernel": 3, "c_in": 64, "c_out": 128})
        assert param_count(spec) == 3 * 64 * 128 + 128 == 24_704

    def test_dropout_parameter_free(self):
        assert param_count(LayerSpec("dropout", {"p": 0.3})) == 0

    def test_counts_match_instantiated_layers(self):
        assert Dense(512, 64, rng=rng64()).parameter_count() == 32_832
        assert Conv1d(64, 128, 3, rng=rng64()).parameter_count() == 24_704
        assert LayerNorm(48).parameter_count() == 96


class TestLayerGradients:
    def test_dense_grad(self):
        layer = Dense(4, 3, rng=rng64()).to_dtype(np.float64)
        x0 = np.random.default_rng(8).normal(size=(2, 4))

        def fn(x, w, b):
            layer.weight.data, layer.bias.data = w.data, b.data
            layer.weight.grad = layer.bias.grad = None
            out = T.tsum(T.tanh(T.matmul(x, w) + b))
            return out

        assert grad_check(fn, [x0, layer.weight.data, layer.bias.data]) < 1e-4

    def test_layernorm_grad(self):
        err = grad_check(
            lambda x, g, b: T.tsum(
                ((x - T.tmean(x, axis=-1, keepdims=True))
                 / T.sqrt(T.tmean((x - T.tmean(x, axis=-1, keepdims=True))
                                  * (x - T.tmean(x, axis=-1, keepdims=True)),
                                  axis=-1, keepdims=True) + 1e-5)) * g + b),
            [np.random.default_rng(9).normal(size=(3, 6)),
             np.random.default_rng(10).normal(size=6),
             np.random.default_rng(11).normal(size=6)])
        assert err < 1e-4


class TestModuleRegistry:
    def test_named_parameters_nested(self):
        class Inner(Module):
            def __init__(self):
                super().__init__()
                self.w = Parameter(np.ones(3))

        class Outer(Module):
            def __init__(self):
                super().__init__()
                self.inner = Inner()
                self.b = Parameter(np.zeros(2))

        names = dict(Outer().named_parameters())
        assert set(names) == {"inner.w", "b"}

    def test_state_round_trip(self):
        layer = Dense(3, 2, rng=rng64())
        state = {k: v.copy() for k, v in layer.state_arrays().items()}
        layer.weight.data = layer.weight.data * 0
        layer.load_state_arrays(state)
        np.testing.assert_array_equal(layer.weight.data, state["weight"])

    def test_load_state_shape_mismatch(self):
        layer = Dense(3, 2, rng=rng64())
        bad = {k: np.zeros((9, 9), dtype=np.float32) for k in layer.state_arrays()}
        with pytest.raises(ValueError, match="shape mismatch"):
            layer.load_state_arrays(bad)

    def test_set_trainable_freezes(self):
        layer = Dense(3, 2, rng=rng64())
        layer.set_trainable(False)
        assert all(not p.requires_grad for p in layer.parameters())
