import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tess.series import (
    EPS_NORM,
    InsufficientLengthError,
    NormStats,
    PatchGrid,
    TimeSeries,
    Window,
    batch_normalize,
    first_difference,
    instance_normalize,
    inverse_normalize,
    patchify,
    slide_windows,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


class TestTimeSeries:
    def test_rejects_non_increasing_timestamps(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            TimeSeries(np.array([0.0, 1.0, 1.0]), np.zeros(3))

    def test_rejects_count_mismatch(self):
        with pytest.raises(ValueError, match="timestamp count"):
            TimeSeries(np.arange(3.0), np.zeros(4))

    def test_rejects_bad_target_channel(self):
        with pytest.raises(ValueError, match="target_channel"):
            TimeSeries(np.arange(3.0), np.zeros((3, 2)), ("a", "b"), target_channel=2)

    def test_target_selects_channel(self):
        vals = np.arange(6.0).reshape(3, 2)
        ts = TimeSeries(np.arange(3.0), vals, ("a", "b"), target_channel=1)
        assert ts.target.tolist() == [1.0, 3.0, 5.0]

    def test_values_are_read_only(self):
        ts = TimeSeries.from_values(np.arange(5.0))
        with pytest.raises(ValueError):
            ts.values[0, 0] = 9.0


class TestSlideWindows:
    def test_origins_and_count(self):
        ws = slide_windows(TimeSeries.from_values(np.arange(10.0)), L=4, H=2, step=2)
        assert [w.origin_index for w in ws] == [0, 2, 4]
        assert ws[1].x_obs.tolist() == [2, 3, 4, 5]
        assert ws[1].y_fut.tolist() == [6, 7]

    def test_exact_length_gives_one_window(self):
        for step in (1, 3, 10):
            assert len(slide_windows(TimeSeries.from_values(np.arange(6.0)), 4, 2, step)) == 1

    def test_too_short_errors_with_minimum(self):
        with pytest.raises(InsufficientLengthError, match="insufficient length.*6"):
            slide_windows(TimeSeries.from_values(np.arange(5.0)), 4, 2, 1)

    def test_horizon_of_one_rejected(self):
        with pytest.raises(ValueError, match="H must be"):
            slide_windows(TimeSeries.from_values(np.arange(8.0)), 4, 1, 1)

    def test_horizon_zero_omits_future(self):
        ws = slide_windows(TimeSeries.from_values(np.arange(5.0)), 4, 0, 1)
        assert len(ws) == 2 and ws[0].y_fut is None and ws[0].H == 0

    @given(T=st.integers(6, 60), L=st.integers(2, 10), H=st.sampled_from([0, 2, 3, 4, 5]), step=st.integers(1, 7))
    def test_count_formula(self, T, L, H, step):
        if T < L + H:
            return
        ws = slide_windows(TimeSeries.from_values(np.arange(float(T))), L, H, step)
        assert len(ws) == (T - L - H) // step + 1
        assert all(w.origin_index + L + H <= T for w in ws)


class TestNormalization:
    def test_constant_window(self):
        x_norm, stats = instance_normalize(np.full(4, 3.0))
        assert np.all(x_norm == 0) and stats.mu == 3.0 and stats.s == EPS_NORM

    def test_hand_example(self):
        x_norm, stats = instance_normalize(np.array([0.0, 2.0]))
        assert stats == NormStats(1.0, 1.0)
        assert x_norm.tolist() == [-1.0, 1.0]
        assert inverse_normalize(x_norm, stats).tolist() == [0.0, 2.0]

    def test_inverse_of_zero_is_mu(self):
        assert inverse_normalize(np.zeros(3), NormStats(2.5, 4.0)).tolist() == [2.5, 2.5, 2.5]

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            instance_normalize(np.array([0.0, np.nan]))
        with pytest.raises(ValueError, match="non-finite"):
            inverse_normalize(np.array([np.inf]), NormStats(0.0, 1.0))

    def test_norm_stats_positive(self):
        with pytest.raises(ValueError):
            NormStats(0.0, 0.0)

    @given(arrays(float, st.integers(2, 64), elements=finite))
    def test_round_trip_and_moments(self, x):
        x_norm, stats = instance_normalize(x)
        back = inverse_normalize(x_norm, stats)
        scale = max(np.max(np.abs(x)), 1.0)
        assert np.max(np.abs(back - x)) <= 1e-9 * scale
        if stats.s > 1e-3 * scale:
            assert abs(x_norm.mean()) < 1e-9
            assert abs(x_norm.std() - 1) < 1e-6

    def test_batch_matches_rowwise(self, rng):
        X = rng.normal(size=(5, 12)) * 3 + 1
        Xn, mu, s = batch_normalize(X)
        for i in range(5):
            row, st_ = instance_normalize(X[i])
            np.testing.assert_allclose(Xn[i], row, rtol=0, atol=1e-12)
            assert mu[i] == pytest.approx(st_.mu) and s[i] == pytest.approx(st_.s)


class TestPatchify:
    def test_grid_formula(self):
        assert PatchGrid.for_length(48, 16, 8).N == 5

    def test_single_patch(self):
        x = np.arange(6.0)
        assert patchify(x, 6, 3).tolist() == [x.tolist()]

    def test_trailing_dropped(self):
        assert patchify(np.arange(5.0), 2, 2).tolist() == [[0, 1], [2, 3]]

    def test_patch_longer_than_input(self):
        with pytest.raises(ValueError, match="exceeds"):
            patchify(np.arange(3.0), 4, 1)

    def test_batched(self):
        X = np.arange(12.0).reshape(2, 6)
        out = patchify(X, 3, 3)
        assert out.shape == (2, 2, 3) and out[1, 1].tolist() == [9, 10, 11]

    @given(L=st.integers(1, 40), P=st.integers(1, 40), S=st.integers(1, 10))
    def test_no_synthesis(self, L, P, S):
        if P > L:
            return
        x = np.arange(float(L))
        out = patchify(x, P, S)
        assert out.shape == ((L - P) // S + 1, P)
        assert set(out.ravel()) <= set(x)


class TestFirstDifference:
    def test_examples(self):
        assert first_difference(np.full(4, 2.0)).tolist() == [0, 0, 0]
        assert first_difference([0, 1, 0, 1]).tolist() == [1, -1, 1]
        assert first_difference(3.0 * np.arange(5)).tolist() == [3, 3, 3, 3]

    def test_too_short(self):
        with pytest.raises(ValueError):
            first_difference([1.0])

    @given(st.lists(st.integers(-1000, 1000), min_size=1, max_size=30))
    def test_recovers_increments(self, inc):
        v = np.concatenate([[0], np.cumsum(inc)]).astype(float)
        assert first_difference(v).tolist() == [float(i) for i in inc]


def test_window_validation():
    with pytest.raises(ValueError):
        Window(np.array([1.0]))
    with pytest.raises(ValueError):
        Window(np.arange(4.0), np.array([1.0]))
    assert Window(np.arange(4.0), np.arange(2.0)).H == 2
