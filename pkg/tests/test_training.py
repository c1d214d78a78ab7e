"""Optimization stack: AdamW golden first steps, the warm-restart schedule,
clipping, training determinism, checkpoint selection, freeze contract."""

import numpy as np
import pytest

from avaffect.layers import Parameter
from avaffect.data import corpus_windows, synth_generate
from avaffect.models import ModelConfig, build_model
from avaffect.training import (
    AdamW, OptimizerError, TrainConfig, TrainingRun, clip_grad_norm,
    cosine_warm_restart_lr, evaluate_model, label_histogram, train,
)

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


def first_step_closed_form(param, grad, lr, wd):
    """Independent arithmetic for one AdamW step from zero state."""
    m_hat = ((1 - BETA1) * grad) / (1 - BETA1)
    v_hat = ((1 - BETA2) * grad * grad) / (1 - BETA2)
    return param - lr * m_hat / (np.sqrt(v_hat) + EPS) - lr * wd * param


class TestAdamW:
    def test_first_step_no_decay(self):
        p = Parameter(np.array([1.0], dtype=np.float64))
        p.grad = np.array([1.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        opt.step()
        expected = first_step_closed_form(1.0, 1.0, 0.1, 0.0)
        assert abs(p.data[0] - expected) < 1e-12
        assert abs(p.data[0] - 0.9) < 1e-8

    def test_first_step_with_decay(self):
        p = Parameter(np.array([1.0], dtype=np.float64))
        p.grad = np.array([1.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.1)
        opt.step()
        expected = first_step_closed_form(1.0, 1.0, 0.1, 0.1)
        assert abs(p.data[0] - expected) < 1e-12
        assert abs(p.data[0] - 0.89) < 1e-8

    def test_zero_grad_zero_decay_is_fixed_point(self):
        p = Parameter(np.array([2.5], dtype=np.float64))
        p.grad = np.array([0.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        for _ in range(5):
            opt.step()
        assert p.data[0] == 2.5

    def test_nonfinite_gradient_aborts(self):
        p = Parameter(np.array([1.0]))
        p.grad = np.array([np.nan])
        with pytest.raises(OptimizerError, match="non-finite"):
            AdamW([p], lr=0.1).step()

    def test_decay_zero_matches_hand_rolled_adam_on_quadratic(self):
        """AdamW(wd=0) against an independently coded Adam, step for step,
        minimizing 0.5*||x||^2."""
        x = Parameter(np.array([1.0, -2.0, 3.0], dtype=np.float64))
        opt = AdamW([x], lr=0.05, weight_decay=0.0)
        ref = x.data.copy()
        m = np.zeros(3)
        v = np.zeros(3)
        for t in range(1, 51):
            grad = x.data.copy()  # d/dx 0.5 x^2
            x.grad = grad.copy()
            opt.step()
            g = ref.copy()
            m = BETA1 * m + (1 - BETA1) * g
            v = BETA2 * v + (1 - BETA2) * g * g
            ref = ref - 0.05 * (m / (1 - BETA1 ** t)) / (np.sqrt(v / (1 - BETA2 ** t)) + EPS)
            np.testing.assert_allclose(x.data, ref, atol=1e-12)


class TestScheduler:
    def test_step_zero_is_lr_max(self):
        assert cosine_warm_restart_lr(0, 0.002, 0.0, 200) == 0.002

    def test_midpoint(self):
        assert abs(cosine_warm_restart_lr(100, 0.002, 0.0, 200) - 0.001) < 1e-15

    def test_restart(self):
        assert cosine_warm_restart_lr(200, 0.002, 0.0, 200) == 0.002
        assert cosine_warm_restart_lr(400, 0.002, 0.0, 200) == 0.002

    def test_golden_trace_450_steps(self):
        lr_max, lr_min, period = 0.002, 0.0, 200
        for step in range(450):
            s = step % period
            expected = lr_min + 0.5 * (lr_max - lr_min) * (1 + np.cos(np.pi * s / period))
            assert abs(cosine_warm_restart_lr(step, lr_max, lr_min, period) - expected) < 1e-15

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            cosine_warm_restart_lr(1, 0.1, 0.0, 0)
        with pytest.raises(ValueError):
            cosine_warm_restart_lr(-1, 0.1, 0.0, 10)


class TestClipping:
    def test_norm_reduced_to_max(self):
        p = Parameter(np.zeros(4))
        p.grad = np.full(4, 10.0)
        norm = clip_grad_norm([p], 5.0)
        assert norm == pytest.approx(20.0)
        assert np.linalg.norm(p.grad) == pytest.approx(5.0)

    def test_small_gradients_untouched(self):
        p = Parameter(np.zeros(4))
        g = np.full(4, 0.1)
        p.grad = g.copy()
        clip_grad_norm([p], 5.0)
        np.testing.assert_array_equal(p.grad, g)


@pytest.fixture(scope="module")
def tiny_corpus():
    return synth_generate(seed=11, n_videos=6, frames_per_video=96, smoothness=12)


@pytest.fixture(scope="module")
def tiny_windows(tiny_corpus):
    return (corpus_windows(tiny_corpus, "train", 16, 1),
            corpus_windows(tiny_corpus, "validation", 16, 1))


class TestTrainLoop:
    def test_determinism_float64(self, tiny_windows):
        tw, vw = tiny_windows
        cfg = ModelConfig(arch="rnn", modality="audiovisual", dropout=0.3, dtype="float64")
        tc = TrainConfig(max_epochs=3, batch_size=32, seed=4)
        histories = []
        for _ in range(2):
            res = train(build_model(cfg, seed=4), tw, vw, tc)
            histories.append(res.history)
        for a, b in zip(*histories):
            assert abs(a["loss_total"] - b["loss_total"]) < 1e-12
            assert abs(a["val_ccc_average"] - b["val_ccc_average"]) < 1e-12

    def test_determinism_float32_bitwise(self, tiny_windows):
        tw, vw = tiny_windows
        cfg = ModelConfig(arch="sa", modality="audiovisual", d_model=64, n_heads=4,
                          n_layers=1, dropout=0.2)
        tc = TrainConfig(max_epochs=2, batch_size=32, seed=5)
        r1 = train(build_model(cfg, seed=5), tw, vw, tc)
        r2 = train(build_model(cfg, seed=5), tw, vw, tc)
        assert [r["loss_total"] for r in r1.history] == [r["loss_total"] for r in r2.history]
        for k, v in r1.best_state.items():
            np.testing.assert_array_equal(v, r2.best_state[k])

    def test_zero_lambdas_reported_but_unweighted(self, tiny_windows):
        tw, vw = tiny_windows
        cfg = ModelConfig(arch="rnn", modality="audiovisual", dropout=0.0)
        tc = TrainConfig(max_epochs=1, batch_size=32, seed=6, lambda_mse=0.0, lambda_ce=0.0)
        res = train(build_model(cfg, seed=6), tw, vw, tc)
        rec = res.history[0]
        assert rec["loss_mse"] > 0 and rec["loss_ce"] > 0
        assert abs(rec["loss_total"] - rec["loss_ccc"]) < 1e-9

    def test_best_checkpoint_matches_history_max(self, tiny_windows):
        tw, vw = tiny_windows
        cfg = ModelConfig(arch="rnn", modality="audiovisual", dropout=0.2)
        tc = TrainConfig(max_epochs=5, batch_size=32, seed=7)
        model = build_model(cfg, seed=7)
        res = train(model, tw, vw, tc)
        assert res.best_metric == max(r["val_ccc_average"] for r in res.history)
        # the restored model reproduces the recorded best CCC
        evaluation = evaluate_model(model, vw, batch_size=32)
        assert evaluation.average == pytest.approx(res.best_metric, abs=1e-6)

    def test_target_metric_stops_early(self, tiny_windows):
        tw, vw = tiny_windows
        cfg = ModelConfig(arch="rnn", modality="audiovisual", dropout=0.0)
        tc = TrainConfig(max_epochs=50, batch_size=32, seed=8, target_metric=0.2,
                         learning_rate=1e-3)
        res = train(build_model(cfg, seed=8), tw, vw, tc)
        assert res.epochs_run < 50
        assert res.best_metric >= 0.2

    def test_lr_trace_follows_schedule(self, tiny_windows):
        tw, vw = tiny_windows
        cfg = ModelConfig(arch="rnn", modality="audiovisual", dropout=0.0)
        tc = TrainConfig(max_epochs=2, batch_size=32, seed=9, scheduler_period=7)
        res = train(build_model(cfg, seed=9), tw, vw, tc)
        steps_per_epoch = (len(tw) + 31) // 32
        for epoch, rec in enumerate(res.history):
            last_step = (epoch + 1) * steps_per_epoch - 1
            assert rec["lr"] == pytest.approx(
                cosine_warm_restart_lr(last_step, tc.learning_rate, 0.0, 7))

    def test_empty_split_rejected(self, tiny_windows):
        tw, vw = tiny_windows
        cfg = ModelConfig(arch="rnn", modality="audiovisual")
        with pytest.raises(ValueError, match="empty"):
            TrainingRun(build_model(cfg, 0), [], vw, TrainConfig())
        with pytest.raises(ValueError, match="empty"):
            TrainingRun(build_model(cfg, 0), tw, [], TrainConfig())

    def test_class_weights_emphasize_minorities(self, tiny_windows):
        tw, _ = tiny_windows
        hist = label_histogram(tw)
        assert hist.sum() == sum(len(w) for w in tw)
        run = TrainingRun(build_model(ModelConfig(arch="rnn", modality="audiovisual"), 0),
                          tw, tw, TrainConfig())
        present = hist > 0
        if present.sum() > 1:
            rare = np.argmin(np.where(present, hist, np.iinfo(np.int64).max))
            common = np.argmax(hist)
            assert run.class_weights[rare] >= run.class_weights[common]


class TestFreezeContractEndToEnd:
    @pytest.mark.parametrize("end_to_end", [False, True])
    def test_encoder_parameters_over_10_steps(self, end_to_end):
        rng = np.random.default_rng(20)
        corpus = synth_generate(seed=21, n_videos=2, frames_per_video=48, smoothness=8)
        # attach waveforms so the audio encoder actually runs
        for video in corpus.videos:
            video.audio_features = None
            video.waveform = rng.normal(scale=0.1, size=int(48 / 30 * 16000) + 1600).astype(np.float32)
        corpus.videos[0].split = "train"
        corpus.videos[1].split = "validation"
        tw = corpus_windows(corpus, "train", 8, 1)
        vw = corpus_windows(corpus, "validation", 8, 1)
        cfg = ModelConfig(arch="rnn", modality="audiovisual", audio_source="waveform",
                          dropout=0.0, end_to_end=end_to_end)
        model = build_model(cfg, seed=22)
        before = {k: v.copy() for k, v in model.audio_encoder.state_arrays().items()}
        tc = TrainConfig(max_epochs=10, batch_size=4, seed=22, learning_rate=1e-3, patience=0)
        train(model, tw, vw, tc)
        # 10 epochs x 1 batch = 10 optimizer steps; compare best-epoch state
        after = model.audio_encoder.state_arrays()
        changed = any(not np.array_equal(before[k], after[k]) for k in before)
        if end_to_end:
            assert changed
        else:
            for k in before:
                np.testing.assert_array_equal(before[k], after[k])
