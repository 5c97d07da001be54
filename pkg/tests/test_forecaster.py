import math
from dataclasses import replace

import numpy as np
import pytest

from tess.autodiff import Tensor
from tess.checkpoint import load_checkpoint, load_thresholds, save_checkpoint
from tess.forecaster import (
    Dataset,
    ModelConfig,
    PrefixForecaster,
    PrimitiveInputs,
    TrainConfig,
    ablation_variant,
    attention,
    build_prefix,
    encode_patches,
    forecast,
    parse_mode,
    predict,
    total_loss,
    train,
)
from tess.gating import GatedPrimitive
from tess.primitives import KINDS, PrimitiveKind, PrimitiveLabel
from tess.series import NormStats, Window

TINY = ModelConfig(L=16, H=4, P=4, S=4, d_model=8, n_layers=1, n_heads=2, ff_width=16, dropout_rate=0.0)


def inputs_for(B, rng, present=True):
    labels = np.stack([rng.integers(0, len(k.candidates), B) for k in KINDS], axis=1)
    return PrimitiveInputs(labels, rng.uniform(0, 3, (B, 4)), np.full((B, 4), present))


def toy_data(rng, n=48, cfg=TINY):
    t = np.arange(cfg.L + cfg.H)
    X, Y = [], []
    for _ in range(n):
        series = rng.normal() * np.sin(t / 3 + rng.uniform(0, 6)) + rng.normal(0, 0.05, t.size)
        X.append(series[: cfg.L])
        Y.append(series[cfg.L :])
    inp = inputs_for(n, rng)
    return Dataset(np.array(X), np.array(Y), inp, inp.labels.copy())


class TestBlocks:
    def test_encode_patches_example(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        E = encode_patches(x, np.eye(2), np.array([[1.0, 2.0], [3.0, 4.0]]), P=2, S=2)
        assert np.array_equal(E.data, [[2.0, 5.0], [5.0, 8.0]])

    def test_encode_patches_shape_error(self):
        with pytest.raises(ValueError, match="do not fit"):
            encode_patches(np.zeros(8), np.eye(3), np.zeros((3, 4)), P=2, S=2)

    def test_build_prefix_order_and_zero_rows(self):
        g = [
            GatedPrimitive(PrimitiveKind.SHAPE, PrimitiveLabel(PrimitiveKind.SHAPE, "peak"), np.ones(3), 0.5, np.full(3, 0.5)),
            GatedPrimitive(PrimitiveKind.MEAN_SHIFT, PrimitiveLabel(PrimitiveKind.MEAN_SHIFT, "stable"), np.ones(3), 1.0, np.ones(3)),
        ]
        rows = build_prefix(g + [None])
        assert rows.shape == (4, 3)
        assert np.array_equal(rows[0], np.ones(3)) and np.array_equal(rows[2], np.full(3, 0.5))
        assert not rows[1].any() and not rows[3].any()
        assert build_prefix([], d_model=5).shape == (4, 5)
        with pytest.raises(ValueError):
            build_prefix([])

    def test_attention_hand_case(self):
        x = Tensor(np.eye(2)[None])
        I, z = np.eye(2), np.zeros(2)
        out, w = attention(x, I, z, I, z, I, z, I, z, n_heads=1)
        p = 1 / (1 + math.exp(-1 / math.sqrt(2)))
        assert np.allclose(w[0, 0], [[p, 1 - p], [1 - p, p]])
        assert np.allclose(out.data[0], [[p, 1 - p], [1 - p, p]])

    def test_single_row_attention_is_one(self, rng):
        x = Tensor(rng.normal(size=(3, 1, 4)))
        W = [rng.normal(size=(4, 4)) if i % 2 == 0 else np.zeros(4) for i in range(8)]
        _, w = attention(x, *W, n_heads=2)
        assert np.array_equal(w, np.ones((3, 2, 1, 1)))

    def test_attention_rows_sum_to_one(self, rng):
        model = PrefixForecaster(TINY)
        model.predict_batch(rng.normal(size=(5, 16)), inputs_for(5, rng))
        for w in model.last_attention:
            assert w.shape == (5, 2, 8, 8)
            assert np.allclose(w.sum(-1), 1.0, atol=1e-12)

    def test_predict_denormalizes(self, rng):
        d, N, H = 4, 3, 2
        params = {
            "head.W1": Tensor(rng.normal(size=(N * d, 5))),
            "head.b1": Tensor(np.zeros(5)),
            "head.W2": Tensor(np.zeros((5, H))),
            "head.b2": Tensor(np.array([1.0, -2.0])),
        }
        Z = rng.normal(size=(N + 4, d))
        y1 = predict(Z, NormStats(10.0, 1.0), params, N)
        y2 = predict(Z, NormStats(10.0, 2.0), params, N)
        assert np.allclose(y1, [11.0, 8.0]) and np.allclose(y2 - 10, 2 * (y1 - 10))
        params["head.b2"] = Tensor(np.zeros(H))
        assert np.array_equal(predict(Z, NormStats(3.5, 7.0), params, N), [3.5, 3.5])

    def test_total_loss_example(self):
        total, l_f, l_g = total_loss(np.ones((1, 2)), np.zeros((1, 2)), Tensor(np.full((1, 1), 0.5)), np.ones((1, 1)), lam=1.0)
        assert l_f.item() == pytest.approx(1.0)
        assert l_g.item() == pytest.approx(math.log(2))
        assert total.item() == pytest.approx(1.6931, abs=1e-4)
        t, _, g = total_loss(np.ones((1, 2)), np.zeros((1, 2)), Tensor(np.full((1, 1), 0.5)), np.ones((1, 1)), lam=0.0)
        assert g is None and t.item() == 1.0


class TestModel:
    def test_config_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(d_model=10, n_heads=4)
        with pytest.raises(ValueError):
            ModelConfig(mode="drop:nonsense")
        with pytest.raises(ValueError):
            ModelConfig(lam=-1)
        assert parse_mode("drop:lag") == ("drop", PrimitiveKind.LAG)

    def test_ablation_shapes(self, rng):
        X = rng.normal(size=(3, 16))
        inp = inputs_for(3, rng)
        for mode in ("full", "no_tess", "no_gating", ("drop_primitive", "shape")):
            model = ablation_variant(TINY, mode)()
            assert model.predict_batch(X, None if model.cfg.K == 0 else inp).shape == (3, 4)
        assert "gate.W_m" not in ablation_variant(TINY, "no_tess")().params
        with pytest.raises(ValueError):
            ablation_variant(TINY, ("drop_primitive", "trend"))

    def test_zero_gate_equals_absent_primitives(self, rng):
        model = PrefixForecaster(TINY)
        X = rng.normal(size=(4, 16)) * 3 + 1
        inp = inputs_for(4, rng)
        absent = PrimitiveInputs(inp.labels, inp.margins, np.zeros((4, 4), bool))
        assert np.array_equal(model.predict_batch(X, inp, gate_override=0.0), model.predict_batch(X, absent))

    def test_no_gating_ignores_margins(self, rng):
        model = PrefixForecaster(replace(TINY, mode="no_gating"))
        X = rng.normal(size=(2, 16))
        a = inputs_for(2, rng)
        b = PrimitiveInputs(a.labels, a.margins + 5, a.present)
        assert np.array_equal(model.predict_batch(X, a), model.predict_batch(X, b))

    def test_dropped_kind_has_no_effect(self, rng):
        model = ablation_variant(TINY, "drop:volatility")()
        X = rng.normal(size=(2, 16))
        a = inputs_for(2, rng)
        labels = a.labels.copy()
        labels[:, 1] = (labels[:, 1] + 1) % 5
        assert np.array_equal(model.predict_batch(X, a), model.predict_batch(X, PrimitiveInputs(labels, a.margins, a.present)))

    def test_forecast_entry_point(self, rng):
        model = PrefixForecaster(TINY)
        w = Window(rng.normal(size=16), rng.normal(size=4))
        assert forecast(model, w).shape == (4,)
        with pytest.raises(ValueError, match="does not match"):
            forecast(model, np.zeros(12))

    def test_input_validation(self, rng):
        model = PrefixForecaster(TINY)
        with pytest.raises(ValueError, match="primitive inputs"):
            model.predict_batch(rng.normal(size=(2, 16)))
        with pytest.raises(ValueError, match="primitive rows"):
            model.predict_batch(rng.normal(size=(2, 16)), inputs_for(3, rng))


class TestTraining:
    def test_deterministic_and_improves(self, rng):
        data = toy_data(rng)
        tc = TrainConfig(epochs=6, batch_size=16, lr=3e-3, seed=7)
        m1, r1 = train(data, TINY, tc)
        m2, r2 = train(data, TINY, tc)
        for k in m1.params:
            assert np.array_equal(m1.params[k].data, m2.params[k].data)
        assert r1.column("loss") == r2.column("loss")
        best = r1.column("best_val_loss")
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        assert r1.column("l_fcst")[-1] < r1.column("l_fcst")[0]
        assert r1.best_val_loss == min(r1.column("val_loss"))

    def test_early_stopping(self, rng):
        _, report = train(toy_data(rng, 16), TINY, TrainConfig(epochs=50, lr=0.0, patience=2))
        assert len(report.epochs) == 3 and report.best_epoch == 0

    def test_data_errors(self, rng):
        data = toy_data(rng, 8)
        with pytest.raises(ValueError, match="misaligned"):
            Dataset(data.X, data.Y, inputs_for(5, rng))
        with pytest.raises(ValueError, match="needs primitive inputs"):
            train(Dataset(data.X, data.Y), TINY)
        with pytest.raises(ValueError, match="empty"):
            Dataset.from_windows([])
        with pytest.raises(ValueError, match="do not match config"):
            train(Dataset(data.X[:, :12], data.Y, data.inputs), TINY)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, rng, tmp_path, thr):
        model = PrefixForecaster(TINY)
        for p in model.params.values():
            p.data[...] = rng.normal(size=p.data.shape)
        path = tmp_path / "m.tess"
        save_checkpoint(path, model, thr, {"note": "x"})
        loaded, header = load_checkpoint(path)
        assert loaded.cfg == model.cfg and header["extra"] == {"note": "x"}
        for k in model.params:
            assert np.array_equal(loaded.params[k].data, model.params[k].data)
        assert load_thresholds(header) == thr
        X = rng.normal(size=(2, 16))
        inp = inputs_for(2, rng)
        assert np.array_equal(loaded.predict_batch(X, inp), model.predict_batch(X, inp))
        assert path.read_bytes()[:8] == b"TESSCKP1"

    def test_rejects_bad_files(self, tmp_path):
        bad = tmp_path / "bad.tess"
        bad.write_bytes(b"NOTACKPT" + bytes(16))
        with pytest.raises(ValueError, match="not a TESS checkpoint"):
            load_checkpoint(bad)
        good = tmp_path / "good.tess"
        save_checkpoint(good, PrefixForecaster(TINY))
        good.write_bytes(good.read_bytes()[:-8])
        with pytest.raises(ValueError, match="values"):
            load_checkpoint(good)
