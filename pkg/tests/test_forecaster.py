import numpy as np
import pytest

from mvts.codec import BinaryVisionTensor, CodecParams, encode, NumericSeries
from mvts.data import Dataset, WindowSpec, make_windows, noisy_sine, stack_windows
from mvts.forecaster import (ForecastError, PersistencePredictor, PipelineContext, ReferenceNet,
                             ReferenceNetConfig, compare_on_batch, config_digest, decode_rows,
                             evaluate, load_checkpoint, persistence_predict, predict,
                             reference_forward, save_checkpoint, sweep, train)
from mvts.metric import emd_loss_and_grad

from conftest import random_onehot

TINY = ReferenceNetConfig(h=6, lookback=4, horizon=2, hidden=8, seed=3)


def tiny_sample(rng, b=5):
    vx = random_onehot(rng, b, 6, 4).astype(float)
    vy = random_onehot(rng, b, 6, 2).astype(float)
    return vx, vy


class TestPersistence:
    def test_repeats_last_column(self):
        vx = BinaryVisionTensor.from_indices([[0, 3, 2], [1, 1, 4]], 5)
        out = persistence_predict(vx, 4)
        assert out.probs.shape == (2, 5, 4)
        np.testing.assert_array_equal(out.probs.argmax(axis=1), [[2] * 4, [4] * 4])

    def test_rejects_bad_horizon(self):
        with pytest.raises(ForecastError):
            PersistencePredictor(0)


class TestReferenceNet:
    def test_zero_weights_give_uniform_columns(self, rng):
        net = ReferenceNet(TINY, np.zeros(TINY.n_params))
        vx, _ = tiny_sample(rng)
        np.testing.assert_allclose(net.forward_batch(vx), 1 / 6, rtol=0, atol=1e-15)

    def test_output_is_column_stochastic(self, rng):
        vx, _ = tiny_sample(rng)
        p = ReferenceNet(TINY).forward_batch(vx)
        assert p.shape == (5, 6, 2)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_forward_is_deterministic(self, rng):
        vx, _ = tiny_sample(rng)
        t = BinaryVisionTensor(vx[:1].astype(np.uint8))
        a = reference_forward(ReferenceNet(TINY).theta, t, TINY).probs
        b = reference_forward(ReferenceNet(TINY).theta, t, TINY).probs
        assert np.array_equal(a, b)

    def test_wrong_shapes(self, rng):
        net = ReferenceNet(TINY)
        with pytest.raises(ForecastError):
            net.forward_batch(np.zeros((1, 6, 5)))
        with pytest.raises(ForecastError):
            ReferenceNet(TINY, np.zeros(3))

    def test_loss_is_mean_column_emd(self, rng):
        net = ReferenceNet(TINY)
        vx, vy = tiny_sample(rng)
        loss, _ = net.loss_and_grad(vx, vy)
        assert loss == pytest.approx(emd_loss_and_grad(net.forward_batch(vx), vy).loss)

    def test_full_chain_gradient(self, rng):
        step = 1e-6
        checked = 0
        for trial in range(10):
            cfg = ReferenceNetConfig(h=6, lookback=4, horizon=2, hidden=8, seed=trial)
            net = ReferenceNet(cfg)
            vx, vy = tiny_sample(rng, 3)
            theta = net.theta
            _, (x, z1, _, probs) = net._forward(vx, theta)
            cdf = np.cumsum(probs - vy, axis=1)[:, :-1]
            if np.abs(z1).min() < 1e-3 or np.abs(cdf).min() < 1e-3:
                continue
            _, g = net.loss_and_grad(vx, vy, theta)
            num = np.empty_like(theta)
            for i in range(theta.size):
                tp, tm = theta.copy(), theta.copy()
                tp[i] += step
                tm[i] -= step
                num[i] = (net.loss_and_grad(vx, vy, tp)[0] - net.loss_and_grad(vx, vy, tm)[0]) / (2 * step)
            assert np.abs(g - num).max() / np.abs(num).max() < 1e-4
            checked += 1
        assert checked >= 3


def sine_batch(t=600, lookback=24, horizon=6):
    d = noisy_sine(t=t, seed=2)
    return d, stack_windows(make_windows(d, WindowSpec(lookback, horizon), "train", True))


class TestTraining:
    def test_overfits_single_sample(self, rng):
        cfg = ReferenceNetConfig(h=6, lookback=4, horizon=2, hidden=16, lr=0.5, epochs=300, batch_size=1)
        params = CodecParams(6, 2.0)
        x = np.array([[[0.1, -1.5, 0.7, 1.2]]])
        y = np.array([[[-0.4, 1.9]]])
        from mvts.data import WindowBatch
        b = WindowBatch(x, y, np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1), bool),
                        np.zeros(1, int), np.zeros(1, int))
        res = train(b, cfg, params)
        assert res.loss_curve[-1] < 0.05 * res.loss_curve[0]
        net = ReferenceNet(cfg, res.theta)
        got = decode_rows(net.forward_batch(encode(x[0], params).bits[:, :, :].astype(float)), params)
        np.testing.assert_array_equal(got, decode_rows(encode(y[0], params).bits.astype(float), params))

    def test_zero_learning_rate_keeps_weights(self):
        _, batch = sine_batch()
        cfg = ReferenceNetConfig(h=20, lookback=24, horizon=6, hidden=8, lr=0.0, epochs=2)
        res = train(batch, cfg, CodecParams(20, 2.5))
        assert np.array_equal(res.theta, ReferenceNet(cfg).theta)
        # shuffling changes only the summation order
        assert res.loss_curve[0] == pytest.approx(res.loss_curve[1], rel=1e-14)

    def test_seeded_runs_are_identical(self):
        _, batch = sine_batch()
        cfg = ReferenceNetConfig(h=20, lookback=24, horizon=6, hidden=16, epochs=3, seed=7)
        a = train(batch, cfg, CodecParams(20, 2.5))
        b = train(batch, cfg, CodecParams(20, 2.5))
        assert a.loss_curve == b.loss_curve
        assert np.array_equal(a.theta, b.theta)

    def test_loss_goes_down(self):
        _, batch = sine_batch()
        cfg = ReferenceNetConfig(h=20, lookback=24, horizon=6, hidden=32, epochs=5)
        curve = train(batch, cfg, CodecParams(20, 2.5)).loss_curve
        assert curve[-1] < curve[0]

    def test_h_mismatch(self):
        _, batch = sine_batch()
        with pytest.raises(ForecastError):
            train(batch, ReferenceNetConfig(h=20, lookback=24, horizon=6), CodecParams(10, 2.5))


class TestPredict:
    def test_persistence_chain_recovers_last_value(self):
        # window with the last value at its own mean: decodes to the middle bin edge region
        params = CodecParams(200, 3.0)
        sx = np.array([[10.0, 12.0, 14.0, 16.0]])
        out = predict(PersistencePredictor(3), sx, params)
        mu, sd = 13.0, np.std(sx)
        z = (16.0 - mu) / sd
        assert out.values.shape == (1, 3)
        np.testing.assert_allclose(out.values, 16.0, atol=sd * params.ms / params.h * (1 + 1e-9))
        assert abs(out.values[0, 0] - 16.0) <= sd * abs(z - round(z, 12)) + sd * params.bin_width / 2 + 1e-12

    def test_global_context_roundtrip(self):
        params = CodecParams(100, 3.0)
        sx = np.array([[1.0, 3.0, 2.0, 5.0], [0.0, -1.0, -2.0, -1.5]])
        ctx = PipelineContext(np.array([2.0, -1.0]), np.array([4.0, 0.5]))
        a = predict(PersistencePredictor(2), sx, params, ctx)
        b = predict(PersistencePredictor(2), sx, params)
        # in-window normalization makes the global affine map cancel, up to rounding
        np.testing.assert_allclose(a.values, b.values, atol=1e-12)

    def test_keeps_channel_names(self):
        s = NumericSeries([[1.0, 2.0, 3.0]], ("load",))
        assert predict(PersistencePredictor(1), s, CodecParams(10, 2.0)).channel_names == ("load",)

    def test_wrong_length(self):
        net = ReferenceNet(TINY)
        with pytest.raises(ForecastError):
            predict(net, np.zeros((1, 5)), CodecParams(6, 2.0))

    def test_decode_modes(self):
        params = CodecParams(4, 2.0)
        probs = np.array([[[0.1], [0.2], [0.3], [0.4]]])
        assert decode_rows(probs, params)[0, 0] == 1.5
        assert decode_rows(probs, params, "expected")[0, 0] == pytest.approx(
            0.1 * -1.5 + 0.2 * -0.5 + 0.3 * 0.5 + 0.4 * 1.5)
        with pytest.raises(ForecastError):
            decode_rows(probs, params, "median")


class TestEvaluate:
    def test_constant_offset(self):
        t = np.random.default_rng(0).normal(size=(4, 2, 5))
        rep = evaluate(t + 0.25, t)
        assert rep.mae == pytest.approx(0.25) and rep.mse == pytest.approx(0.0625)
        np.testing.assert_allclose(rep.per_horizon_mae, 0.25)

    def test_hand_computed(self):
        rep = evaluate([[1.0, 2.0], [3.0, 4.0]], [[0.0, 2.0], [5.0, 4.0]])
        assert rep.mae == 0.75 and rep.mse == 1.25
        np.testing.assert_array_equal(rep.per_horizon_mae, [1.5, 0.0])

    def test_v_space(self):
        a = BinaryVisionTensor.from_indices([[1, 2]], 6).bits[None]
        b = BinaryVisionTensor.from_indices([[4, 2]], 6).bits[None]
        rep = evaluate(a, b, space="V")
        assert rep.mae == 1.5 and rep.mse == 4.5

    def test_errors(self):
        with pytest.raises(ForecastError):
            evaluate(np.zeros((2, 3)), np.zeros((3, 2)))
        with pytest.raises(ForecastError):
            evaluate(np.zeros(2), np.zeros(2), space="W")

    def test_comparison_floor_is_codec_only(self):
        d = noisy_sine(t=500, seed=1)
        batch = stack_windows(make_windows(d, WindowSpec(24, 6, 6), "test", True))
        params = CodecParams(50, 2.29)
        cmp = compare_on_batch(PersistencePredictor(6), batch, params)
        assert cmp.floor.mae < cmp.persistence.mae
        edges = np.linspace(-params.ms, params.ms, params.h + 1)
        idx = np.clip(np.digitize(batch.y, edges) - 1, 0, params.h - 1)
        mids = (edges[:-1] + edges[1:]) / 2
        expected = np.mean(np.abs(mids[idx] - batch.y) * batch.std[:, :, None])
        assert cmp.floor.mae == pytest.approx(expected, rel=1e-12)


class TestSweep:
    def test_grid_shape_and_monotone_h(self):
        d = Dataset.from_array(np.random.default_rng(0).standard_normal((2, 3000)))
        rows = sweep(d, WindowSpec(96, 24, 24), [2.0, 3.0], [10, 50, 200])
        assert [(r[0], r[1]) for r in rows] == [(m, h) for m in (2.0, 3.0) for h in (10, 50, 200)]
        for m in (2.0, 3.0):
            maes = [r[2] for r in rows if r[0] == m]
            assert maes == sorted(maes, reverse=True)

    def test_unknown_predictor(self):
        d = noisy_sine(t=400)
        with pytest.raises(ForecastError):
            sweep(d, WindowSpec(24, 6), [2.0], [10], predictor="oracle")


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        theta = np.random.default_rng(1).normal(size=37)
        dg = config_digest({"a": 1})
        save_checkpoint(tmp_path / "c.mvck", theta, dg)
        got, got_dg = load_checkpoint(tmp_path / "c.mvck")
        assert np.array_equal(got, theta) and got_dg == dg
        assert (tmp_path / "c.mvck").read_bytes()[:4] == b"MVCK"

    def test_bad_magic_and_truncation(self, tmp_path):
        p = tmp_path / "c.mvck"
        save_checkpoint(p, np.ones(2), config_digest({}))
        raw = p.read_bytes()
        p.write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(ForecastError, match="magic"):
            load_checkpoint(p)
        p.write_bytes(raw[:-3])
        with pytest.raises(ForecastError):
            load_checkpoint(p)
        p.write_bytes(raw[:10])
        with pytest.raises(ForecastError):
            load_checkpoint(p)

    def test_digest_is_order_independent(self):
        assert config_digest({"a": 1, "b": 2}) == config_digest({"b": 2, "a": 1})
        assert config_digest({"a": 1}) != config_digest({"a": 2})
