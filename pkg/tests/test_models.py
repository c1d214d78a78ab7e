"""Model zoo: encoders, assembly, forward contracts, parameter counting,
freezing, and the checkpoint format."""

import numpy as np
import pytest

from avaffect import tensor as T
from avaffect.tensor import Tensor
from avaffect.config import PRESETS, format_config, preset
from avaffect.models import (
    AUDIO_CHANNELS, AUDIO_KERNELS, AudioEncoder, ConfigError, ModelConfig,
    StubVisualEncoder, audio_encoder_param_count, build_model,
    count_parameters, read_checkpoint, save_checkpoint,
)
from avaffect.sequence import lstm_param_count


def rng32(seed=0):
    return np.random.default_rng(seed)


class TestAudioEncoder:
    def test_output_width_128(self):
        enc = AudioEncoder(rng=rng32())
        out = enc(Tensor(rng32(1).normal(size=(3, 1, 8000)).astype(np.float32)))
        assert out.shape == (3, 128)

    def test_zero_clip_zero_biases_gives_zero_embedding(self):
        enc = AudioEncoder(rng=rng32())
        for conv in (enc.conv1, enc.conv2, enc.conv3, enc.conv4):
            conv.bias.data = np.zeros_like(conv.bias.data)
        out = enc(Tensor(np.zeros((2, 1, 8000), dtype=np.float32)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 128), dtype=np.float32))

    def test_wrong_clip_length_rejected(self):
        enc = AudioEncoder(rng=rng32())
        with pytest.raises(T.ShapeMismatch, match="audio_encoder"):
            enc(Tensor(np.zeros((2, 1, 4000))))

    def test_parameter_count_near_88k(self):
        # pinned plan: kernels (3,3,3,3), channels 1->64->64->128->128,
        # maxpool(2, 2) after each block, global average pooling at the end
        enc = AudioEncoder(rng=rng32())
        analytic = audio_encoder_param_count()
        assert enc.parameter_count() == analytic == 86_592
        assert abs(analytic - 88_000) / 88_000 < 0.10

    def test_analytic_formula(self):
        expected = 0
        c_in = 1
        for k, c_out in zip(AUDIO_KERNELS, AUDIO_CHANNELS):
            expected += k * c_in * c_out + c_out
            c_in = c_out
        assert audio_encoder_param_count() == expected


class TestStubVisualEncoder:
    def test_output_width_512(self):
        enc = StubVisualEncoder(rng=rng32())
        out = enc(Tensor(rng32(2).normal(size=(4, 3, 16, 16)).astype(np.float32)))
        assert out.shape == (4, 512)


class TestPrecomputedPassthrough:
    def test_visual_encoder_is_identity_on_features(self):
        model = build_model(ModelConfig(arch="rnn", modality="visual"), seed=0)
        feats = rng32(20).normal(size=(2, 4, 512)).astype(np.float32)
        encoded = model._encode_visual(feats)
        np.testing.assert_array_equal(encoded.data, feats)


class TestModelConfig:
    def test_cma_requires_audiovisual(self):
        with pytest.raises(ConfigError, match="audiovisual"):
            ModelConfig(arch="cma", modality="audio").validate()

    def test_heads_must_divide_d_model(self):
        with pytest.raises(ConfigError, match="divisible"):
            ModelConfig(arch="sa", d_model=64, n_heads=3).validate()

    def test_unknown_arch(self):
        with pytest.raises(ConfigError, match="arch"):
            ModelConfig(arch="gru").validate()


class TestBuildAndForward:
    def test_av_sa_shapes(self):
        cfg = ModelConfig(arch="sa", modality="audiovisual", d_model=64, n_heads=4,
                          n_layers=1, dropout=0.0)
        model = build_model(cfg, seed=0)
        out = model.forward(visual=rng32(3).normal(size=(2, 16, 512)).astype(np.float32),
                            audio=rng32(4).normal(size=(2, 16, 128)).astype(np.float32))
        assert out.va_scores.shape == (2, 16, 2)
        assert out.class_logits.shape == (2, 16, 24)

    def test_va_scores_bounded(self):
        cfg = ModelConfig(arch="rnn", modality="audiovisual", dropout=0.0)
        model = build_model(cfg, seed=1)
        out = model.forward(visual=rng32(5).normal(size=(2, 8, 512)).astype(np.float32) * 10,
                            audio=rng32(6).normal(size=(2, 8, 128)).astype(np.float32) * 10)
        assert np.abs(out.va_scores.data).max() <= 1.0

    def test_missing_modality_rejected(self):
        model = build_model(ModelConfig(arch="rnn", modality="audiovisual"), seed=0)
        with pytest.raises(ConfigError, match="needs audio"):
            model.forward(visual=np.zeros((1, 4, 512), dtype=np.float32))

    def test_wrong_feature_width_rejected(self):
        model = build_model(ModelConfig(arch="rnn", modality="visual"), seed=0)
        with pytest.raises(T.ShapeMismatch, match="512"):
            model.forward(visual=np.zeros((1, 4, 500), dtype=np.float32))

    def test_evaluation_deterministic(self):
        model = build_model(ModelConfig(arch="sa", modality="visual", dropout=0.5,
                                        n_layers=2, d_model=64, n_heads=4), seed=2)
        x = rng32(7).normal(size=(2, 8, 512)).astype(np.float32)
        a = model.predict(visual=x)
        b = model.predict(visual=x)
        np.testing.assert_array_equal(a, b)

    def test_training_mode_dropout_varies(self):
        model = build_model(ModelConfig(arch="sa", modality="visual", dropout=0.5,
                                        n_layers=1, d_model=64, n_heads=4), seed=3)
        model.train(True)
        x = rng32(8).normal(size=(2, 8, 512)).astype(np.float32)
        a = model.forward(visual=x).va_scores.data.copy()
        b = model.forward(visual=x).va_scores.data.copy()
        assert np.abs(a - b).max() > 0

    def test_unimodal_variants_build(self):
        for arch in ("rnn", "sa"):
            for modality in ("audio", "visual"):
                model = build_model(ModelConfig(arch=arch, modality=modality,
                                                d_model=64, n_heads=4), seed=0)
                kwargs = {}
                if modality == "visual":
                    kwargs["visual"] = np.zeros((1, 8, 512), dtype=np.float32)
                else:
                    kwargs["audio"] = np.zeros((1, 8, 128), dtype=np.float32)
                out = model.forward(**kwargs)
                assert out.va_scores.shape == (1, 8, 2)

    def test_waveform_audio_path(self):
        cfg = ModelConfig(arch="rnn", modality="audio", audio_source="waveform",
                          end_to_end=True)
        model = build_model(cfg, seed=0)
        out = model.forward(audio=rng32(9).normal(size=(1, 2, 8000)).astype(np.float32))
        assert out.va_scores.shape == (1, 2, 2)

    def test_stub_visual_path(self):
        cfg = ModelConfig(arch="rnn", modality="visual", visual_source="stub",
                          end_to_end=True)
        model = build_model(cfg, seed=0)
        out = model.forward(visual=rng32(10).normal(size=(1, 3, 12, 12, 3)).astype(np.float32))
        assert out.va_scores.shape == (1, 3, 2)

    def test_same_seed_same_initialization(self):
        cfg = ModelConfig(arch="sa", modality="audiovisual", d_model=64, n_heads=4)
        a = build_model(cfg, seed=5).state_arrays()
        b = build_model(cfg, seed=5).state_arrays()
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])


def analytic_preset_sequence_count(name: str) -> int:
    """Independent arithmetic for the sequence-part size of each preset."""
    def dense(i, o):
        return i * o + o

    def mha(d):
        return 4 * dense(d, d)

    def encoder_layer(d, ff):
        return mha(d) + 2 * d + dense(d, ff) + dense(ff, d) + 2 * d

    def cma_block(d, ff):
        return 2 * d + 2 * d + mha(d) + 2 * d + dense(d, ff) + dense(ff, d) + 2 * d

    if name == "e2e-av-rnn":
        front = dense(512, 32) + dense(128, 32)
        core = lstm_param_count(64, 64, 1, False)
        heads = dense(64, 2) + dense(64, 24)
        return front + core + heads
    if name == "e2e-av-sa":
        front = dense(512, 32) + dense(128, 32)
        core = 3 * encoder_layer(64, 256)
        heads = dense(64, 2) + dense(64, 24)
        return front + core + heads
    if name == "e2e-av-cma":
        front = dense(512, 256) + dense(128, 256)
        cross = 3 * cma_block(256, 256) + 1 * cma_block(256, 256)
        fuse = dense(512, 256)
        core = 4 * encoder_layer(256, 256)
        heads = dense(256, 2) + dense(256, 24)
        return front + cross + fuse + core + heads
    raise ValueError(name)


class TestParameterCounting:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_preset_counts_match_analytic_formulas(self, name):
        model_cfg, train_cfg = preset(name)
        model = build_model(model_cfg, seed=0)
        counts = count_parameters(model)
        assert counts["sequence"] == analytic_preset_sequence_count(name)
        # precomputed features: no encoder parameters on either side
        assert counts["total"] == counts["sequence"]

    def test_waveform_mode_total_adds_audio_encoder_only(self):
        cfg = ModelConfig(arch="rnn", modality="audiovisual", audio_source="waveform")
        counts = count_parameters(build_model(cfg, seed=0))
        assert counts["total"] - counts["sequence"] == audio_encoder_param_count()

    def test_freezing_does_not_change_counts(self):
        cfg_frozen = ModelConfig(arch="rnn", modality="audiovisual",
                                 audio_source="waveform", end_to_end=False)
        cfg_e2e = ModelConfig(arch="rnn", modality="audiovisual",
                              audio_source="waveform", end_to_end=True)
        assert count_parameters(build_model(cfg_frozen, 0)) == \
            count_parameters(build_model(cfg_e2e, 0))

    def test_front_end_dense_512_to_64_contribution(self):
        base = ModelConfig(arch="rnn", modality="visual", d_model=64)
        with_front = count_parameters(build_model(base, 0))["sequence"]
        # replace the visual front-end analytically: dense 512 -> 64 = 32 832
        lstm = lstm_param_count(64, 64, 1, False)
        heads = (64 * 2 + 2) + (64 * 24 + 24)
        assert with_front - lstm - heads == 512 * 64 + 64 == 32_832


class TestFreezeContract:
    def test_frozen_encoders_marked_untrainable(self):
        cfg = ModelConfig(arch="rnn", modality="audiovisual",
                          audio_source="waveform", end_to_end=False)
        model = build_model(cfg, seed=0)
        assert all(not p.requires_grad for p in model.encoder_parameters())
        assert any(p.requires_grad for p in model.parameters())

    def test_end_to_end_encoders_trainable(self):
        cfg = ModelConfig(arch="rnn", modality="audiovisual",
                          audio_source="waveform", end_to_end=True)
        model = build_model(cfg, seed=0)
        assert all(p.requires_grad for p in model.encoder_parameters())


class TestSearchSpaceRoundTrip:
    def test_sampled_configs_build_and_backprop_finitely(self):
        """Any configuration drawn from the search space must build, run a
        forward/backward round trip, and produce finite loss and gradients."""
        from avaffect.config import parse_entries
        from avaffect.losses import LossWeights, total_loss
        from avaffect.tensor import Tensor
        from avaffect.tuning import SearchSpace

        space = SearchSpace()
        rng = np.random.default_rng(33)
        data_rng = np.random.default_rng(34)
        vis = data_rng.normal(size=(2, 8, 512)).astype(np.float32)
        aud = data_rng.normal(size=(2, 8, 128)).astype(np.float32)
        labels = data_rng.uniform(-1, 1, size=(2, 8, 2)).astype(np.float32)
        for arch in ("rnn", "sa", "cma"):
            for _ in range(4):
                entries = space.sample(arch, rng)
                model_cfg, train_cfg = parse_entries(entries)
                model = build_model(model_cfg, seed=35)
                model.train(True)
                out = model.forward(visual=vis, audio=aud)
                parts = total_loss(out.va_scores, Tensor(labels), out.class_logits,
                                   LossWeights(train_cfg.lambda_mse, train_cfg.lambda_ce))
                assert np.isfinite(float(parts.total.data))
                model.zero_grad()
                parts.total.backward()
                for p in model.trainable_parameters():
                    if p.grad is not None:
                        assert np.isfinite(p.grad).all()


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        model_cfg, train_cfg = preset("e2e-av-rnn")
        model = build_model(model_cfg, seed=0)
        text = format_config(model_cfg, train_cfg)
        path = tmp_path / "model.avck"
        save_checkpoint(path, text, model)
        text_back, arrays = read_checkpoint(path)
        assert text_back == text
        for name, arr in model.state_arrays().items():
            np.testing.assert_array_equal(arrays[name], arr)

    def test_loaded_model_predicts_identically(self, tmp_path):
        model_cfg, train_cfg = preset("e2e-av-sa")
        model = build_model(model_cfg, seed=1)
        path = tmp_path / "model.avck"
        save_checkpoint(path, format_config(model_cfg, train_cfg), model)
        text, arrays = read_checkpoint(path)
        from avaffect.config import parse_config
        cfg2, _ = parse_config(text)
        clone = build_model(cfg2, seed=99)
        clone.load_state_arrays(arrays)
        vis = rng32(11).normal(size=(1, 16, 512)).astype(np.float32)
        aud = rng32(12).normal(size=(1, 16, 128)).astype(np.float32)
        np.testing.assert_array_equal(model.predict(visual=vis, audio=aud),
                                      clone.predict(visual=vis, audio=aud))

    def test_shape_mismatch_on_load(self, tmp_path):
        model_cfg, train_cfg = preset("e2e-av-rnn")
        model = build_model(model_cfg, seed=0)
        path = tmp_path / "model.avck"
        save_checkpoint(path, format_config(model_cfg, train_cfg), model)
        _, arrays = read_checkpoint(path)
        other = build_model(ModelConfig(arch="rnn", modality="audiovisual",
                                        d_model=128, d_hidden=128), seed=0)
        with pytest.raises(ValueError):
            other.load_state_arrays(arrays)

    def test_not_a_checkpoint(self, tmp_path):
        bad = tmp_path / "bad.avck"
        bad.write_bytes(b"garbage")
        with pytest.raises(ValueError, match="not a checkpoint"):
            read_checkpoint(bad)
