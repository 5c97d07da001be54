import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tess.baseline import BaselineConfig, BaselineFusionModel, baseline_fusion_forward, token_id, tokenize, train_baseline
from tess.benchmark import (
    DISTRACTOR_BANK,
    TEMPLATE_BANK,
    AnnotatedText,
    BenchmarkConfig,
    RegimeSpec,
    SegmentSpec,
    Variant,
    build_benchmark,
    chronological_bounds,
    describe_features,
    generate_nonstationary_series,
    make_variant,
    read_split,
    render_template,
    signal_lexicon,
    write_benchmark,
)
from tess.diagnostics import (
    DiagnosticReport,
    DiagnosticRow,
    focus_ratio,
    histogram,
    run_attention_diagnostic,
    token_attention,
)
from tess.forecaster import TrainConfig
from tess.primitives import CANDIDATES, KINDS, PrimitiveVector, extract_all

SMALL = BenchmarkConfig(length=700, L=32, H=8, step=4, seed=3)


@pytest.fixture(scope="module")
def bench():
    return build_benchmark(SMALL)


def vector(*values):
    return PrimitiveVector.from_values(values)


class TestTokenizer:
    def test_tokenize(self):
        assert tokenize("Prices, UP 5%!") == ["prices", ",", "up", "5", "%", "!"]

    def test_token_id_case_insensitive_and_bounded(self):
        assert token_id("Surge") == token_id("surge")
        assert 0 <= token_id("anything", 17) < 17


class TestText:
    def test_render_template_flags(self):
        toks, flags = render_template("Prices may [slip slightly] today .")
        assert toks == ["prices", "may", "slip", "slightly", "today", "."]
        assert flags == [False, False, True, True, False, False]

    def test_lexicon_covers_bank_without_collisions(self):
        lex = signal_lexicon()
        n_spans = sum(len(t) for by_label in TEMPLATE_BANK.values() for t in by_label.values())
        assert len(lex) == n_spans
        for kind in KINDS:
            assert set(TEMPLATE_BANK[kind]) == set(CANDIDATES[kind])

    def test_describe_features_provenance(self, rng):
        truth = vector("mild-rise", "calm", "peak", "late")
        t = describe_features(truth, n_redundant=10, rng=rng)
        assert sorted(t.sig_idx + t.red_idx) == list(range(len(t.tokens)))
        assert len(t.sig_idx) < len(t.red_idx)
        lex = signal_lexicon()
        found = {v for k, v in lex.items() if k in " ".join(t.tokens[i] for i in t.sig_idx)}
        assert {(k.value, l.value) for k, l in zip(KINDS, truth.as_tuple())} <= found

    def test_zero_redundant_sentences(self, rng):
        t = describe_features(vector("stable", "stable", "ascend", "diffuse"), n_redundant=0, rng=rng)
        assert len(t.red_idx) < len(t.tokens)
        assert not any(" ".join(tokenize(d)) in t.text for d in DISTRACTOR_BANK)

    def test_describe_errors(self):
        v = vector("stable", "stable", "ascend", "diffuse")
        with pytest.raises(ValueError):
            describe_features(v, n_redundant=-1)
        with pytest.raises(ValueError):
            describe_features(v, templates={})
        with pytest.raises(ValueError):
            describe_features(v, n_redundant=2, distractors=())

    def test_annotated_text_validation(self):
        with pytest.raises(ValueError, match="overlap"):
            AnnotatedText(("a", "b"), (0,), (0, 1))
        with pytest.raises(ValueError, match="cover"):
            AnnotatedText(("a", "b"), (0,), ())
        with pytest.raises(ValueError, match="signal"):
            AnnotatedText(("a",), (), (0,))


class TestSeries:
    def test_constant(self):
        s = generate_nonstationary_series(RegimeSpec((SegmentSpec(2.0, 1.0),)), 40, noise_scale=0.0)
        assert np.array_equal(s.target, np.full(40, 2.0))

    def test_step(self):
        spec = RegimeSpec((SegmentSpec(0.0, 1.0), SegmentSpec(5.0, 1.0)), lengths=(10, 30))
        y = generate_nonstationary_series(spec, 40, noise_scale=0.0).target
        assert np.array_equal(y, np.r_[np.zeros(10), np.full(30, 5.0)])

    def test_seeded(self):
        spec = RegimeSpec((SegmentSpec(0.0, 1.0, "peak", 2.0),), noise_seed=9)
        a = generate_nonstationary_series(spec, 50).target
        assert np.array_equal(a, generate_nonstationary_series(spec, 50).target)

    def test_errors(self):
        with pytest.raises(ValueError):
            SegmentSpec(0.0, 0.0)
        with pytest.raises(ValueError):
            SegmentSpec(0.0, 1.0, "spiral")
        with pytest.raises(ValueError, match="too short"):
            generate_nonstationary_series(RegimeSpec((SegmentSpec(0, 1),) * 3), 20)
        with pytest.raises(ValueError):
            generate_nonstationary_series(RegimeSpec((SegmentSpec(0, 1),) * 2, lengths=(10, 11)), 20)

    def test_bounds(self):
        assert chronological_bounds(10, (0.7, 0.1, 0.2)) == {"train": (0, 7), "val": (7, 8), "test": (8, 10)}
        with pytest.raises(ValueError):
            chronological_bounds(10, (0.5, 0.5, 0.5))


class TestBenchmark:
    def test_truth_matches_primitives(self, bench):
        for split, samples in bench.splits.items():
            assert samples, split
            for s in samples:
                assert s.truth == extract_all(s.window.x_obs, s.window.y_fut, bench.thresholds)

    def test_no_window_crosses_a_split(self, bench):
        for split, samples in bench.splits.items():
            lo, hi = bench.split_bounds[split]
            for s in samples:
                assert lo <= s.window.origin_index and s.window.origin_index + 40 <= hi

    def test_deterministic(self, bench):
        again = build_benchmark(SMALL)
        a, b = bench.splits["test"], again.splits["test"]
        assert [s.text.tokens for s in a] == [s.text.tokens for s in b]
        assert all(np.array_equal(x.window.x_obs, y.window.x_obs) for x, y in zip(a, b))

    def test_signal_is_minority(self, bench):
        ratios = [len(s.text.sig_idx) / len(s.text.tokens) for s in bench.splits["train"]]
        assert max(ratios) < 0.5 and np.mean(ratios) < 0.25

    def test_variants(self, bench):
        s = bench.splits["val"][0]
        full = make_variant(s, Variant.FULL)
        sig = make_variant(s, "signal_only")
        num = make_variant(s, Variant.NUMERICAL)
        assert len(full.tokens) == len(s.text.tokens) and len(sig.tokens) == len(s.text.sig_idx)
        assert num.tokens == () and num.exog.shape[0] > 0
        assert full.exog is None

    def test_jsonl_round_trip(self, bench, tmp_path):
        paths = write_benchmark(bench, tmp_path)
        back = read_split(paths["test"], bench.thresholds)
        assert len(back) == len(bench.splits["test"])
        for x, y in zip(back, bench.splits["test"]):
            assert x.truth == y.truth and x.text == y.text
            assert np.array_equal(x.window.y_fut, y.window.y_fut)
        rec = json.loads(paths["train"].read_text().splitlines()[0])
        assert {"window", "horizon", "tokens", "sig_idx", "red_idx", "truth"} <= set(rec)


class TestBaseline:
    CFG = BaselineConfig(L=16, H=4, P=4, S=4, d_model=8, ff_width=8)

    def test_single_token_gets_all_attention(self, rng):
        _, alpha = baseline_fusion_forward(BaselineFusionModel(self.CFG), rng.normal(size=16), ["only"])
        assert np.array_equal(alpha, np.ones((4, 1)))

    def test_rows_sum_to_one_and_padding_masked(self, rng):
        model = BaselineFusionModel(self.CFG)
        X = rng.normal(size=(2, 16))
        _, alpha = model.predict_batch(X, [["a", "b", "c"], ["d"]])
        assert np.allclose(alpha.sum(-1), 1.0)
        assert np.all(alpha[1, :, 1:] < 1e-300)
        _, alone = model.predict_batch(X[:1], [["a", "b", "c"]])
        assert np.allclose(alone[0], alpha[0])

    def test_empty_tokens_rejected(self, rng):
        with pytest.raises(ValueError, match="non-empty"):
            baseline_fusion_forward(BaselineFusionModel(self.CFG), rng.normal(size=16), [])

    def test_no_text_rows_match_text_free_forward(self, rng):
        model = BaselineFusionModel(self.CFG)
        X = rng.normal(size=(2, 16))
        y_mixed, _ = model.predict_batch(X, [["a"], []])
        y_plain, alpha = model.predict_batch(X, None)
        assert alpha is None and np.allclose(y_mixed[1], y_plain[1])


class TestFocusRatio:
    def test_fixtures(self):
        assert focus_ratio([0.4, 0.4, 0.1, 0.1], [0, 1], [2, 3]) == pytest.approx(math.log(4))
        assert focus_ratio([0.05, 0.5, 0.45], [0], [1]) == pytest.approx(-2.3026, abs=1e-4)
        assert focus_ratio(np.full(6, 1 / 6), [0, 2], [1, 3, 4, 5]) == 0.0

    def test_averages_leading_axes(self):
        alpha = np.array([[[0.8, 0.2]], [[0.6, 0.4]]])
        assert np.allclose(token_attention(alpha), [0.7, 0.3])
        assert focus_ratio(alpha, [0], [1]) == pytest.approx(math.log(7 / 3))

    @settings(max_examples=200)
    @given(st.lists(st.floats(1e-6, 1.0), min_size=2, max_size=30), st.data())
    def test_swap_negates_exactly(self, weights, data):
        n = len(weights)
        k = data.draw(st.integers(1, n - 1))
        perm = data.draw(st.permutations(range(n)))
        sig, red = perm[:k], perm[k:]
        assert focus_ratio(weights, sig, red) == -focus_ratio(weights, red, sig)

    def test_degenerate(self):
        with pytest.warns(RuntimeWarning):
            assert focus_ratio([1.0, 0.0], [0], [1]) == math.inf
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert focus_ratio([0.0, 1.0], [0], [1]) == -math.inf
        with pytest.raises(ValueError):
            focus_ratio([0.5, 0.5], [], [0, 1])
        with pytest.raises(ValueError):
            focus_ratio([-0.1, 1.1], [0], [1])


class TestDiagnostics:
    def test_report_and_histogram(self):
        rows = [DiagnosticRow(i, 2, 4 + i, f, 1.0, 1.0 + g) for i, (f, g) in enumerate([(-1, 0.5), (0.5, 0.1), (-0.2, 0.3)])]
        rep = DiagnosticReport(rows)
        assert rep.fraction_negative == pytest.approx(2 / 3)
        table = rep.gain_by_redundancy(2)
        assert sum(r["count"] for r in table) == 3
        assert [r["count"] for r in table] == [1, 2]
        assert table[0]["mean_gain"] == pytest.approx(0.5) and table[1]["mean_gain"] == pytest.approx(0.2)
        h = histogram([0.0, 1.0, 1.0, math.inf], n_bins=2)
        assert [b["count"] for b in h] == [1, 3]
        assert histogram([math.nan]) == []

    def test_run_on_benchmark(self, bench):
        cfg = BaselineConfig(L=32, H=8, P=8, S=8, d_model=8, ff_width=16)
        samples = bench.splits["train"][:40]
        X = np.stack([s.window.x_obs for s in samples])
        Y = np.stack([s.window.y_fut for s in samples])
        model, report = train_baseline(X, Y, [list(s.text.tokens) for s in samples], cfg, TrainConfig(epochs=2))
        rep = run_attention_diagnostic(model, bench.splits["test"], batch_size=16)
        assert len(rep) == len(bench.splits["test"])
        assert np.all(np.isfinite(rep.focus_values))
        assert rep.rows[0].n_signal == len(bench.splits["test"][0].text.sig_idx)
