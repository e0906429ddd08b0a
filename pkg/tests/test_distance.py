import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seriesindex.distance import (EnvelopePaa, build_envelope, dtw, dtw_kernel, envelope_paa,
                                  lb_keogh_paa_sax, lb_keogh_raw, mindist_paa_sax,
                                  reach_from_percent, squared_euclidean)
from seriesindex.summarization import (PaaSummary, SaxWord, build_breakpoints, compute_paa,
                                       paa_to_sax)

TABLE = build_breakpoints(256)


def full_dtw(a, b, r=None):
    """O(n^2) matrix DP, optionally banded."""
    n = len(a)
    r = n if r is None else r
    D = np.full((n + 1, n + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if abs(i - j) > r:
                continue
            c = (float(a[i - 1]) - float(b[j - 1])) ** 2
            D[i, j] = c + min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
    return D[n, n]


def naive_envelope(q, r):
    n = len(q)
    up = [max(q[max(0, i - r):min(n, i + r + 1)]) for i in range(n)]
    lo = [min(q[max(0, i - r):min(n, i + r + 1)]) for i in range(n)]
    return np.array(up), np.array(lo)


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestEuclidean:
    def test_identical(self, rng):
        x = rng.standard_normal(100)
        assert squared_euclidean(x, x) == 0.0

    def test_arithmetic(self):
        assert squared_euclidean([0, 0], [3, 4]) == 25.0

    def test_vs_loop(self, rng):
        a, b = rng.standard_normal((2, 256))
        ref = sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))
        assert squared_euclidean(a, b) == pytest.approx(ref, rel=1e-6)

    def test_float32_widened(self, rng):
        a, b = rng.standard_normal((2, 64)).astype(np.float32)
        assert squared_euclidean(a, b) == squared_euclidean(a.astype(np.float64), b)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            squared_euclidean([1.0, 2.0], [1.0])


class TestMindist:
    def test_own_word_is_zero(self, rng):
        for _ in range(50):
            x = rng.standard_normal(128)
            paa = compute_paa(x, 16)
            for b in (1, 3, 8):
                assert mindist_paa_sax(paa, paa_to_sax(paa, [b] * 16, TABLE), TABLE) == 0.0

    def test_arithmetic(self):
        paa = PaaSummary(np.array([1.0]), 1, 1)
        assert mindist_paa_sax(paa, SaxWord((0,), (1,)), TABLE) == 1.0

    def test_segment_lengths_weight(self):
        paa = PaaSummary(np.array([0.0, 2.0]), 5, 2)  # lengths 2, 3
        word = SaxWord((1, 0), (1, 1))
        assert mindist_paa_sax(paa, word, TABLE) == 3 * 4.0

    def test_lower_bounds_euclidean(self, rng):
        q = rng.standard_normal((10000, 64)).cumsum(axis=1)
        s = rng.standard_normal((10000, 64)).cumsum(axis=1)
        bits = rng.integers(1, 9, size=(10000, 8))
        bad = 0
        for i in range(10000):
            word = paa_to_sax(compute_paa(s[i], 8), bits[i], TABLE)
            if mindist_paa_sax(compute_paa(q[i], 8), word, TABLE) > squared_euclidean(q[i], s[i]):
                bad += 1
        assert bad == 0


class TestEnvelope:
    def test_r0(self, rng):
        q = rng.standard_normal(20)
        env = build_envelope(q, 0)
        assert np.array_equal(env.upper, q) and np.array_equal(env.lower, q)

    def test_forced(self):
        env = build_envelope([0, 1, 0], 1)
        assert env.upper.tolist() == [1, 1, 1] and env.lower.tolist() == [0, 0, 0]

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 40), elements=finite), st.integers(0, 45))
    def test_vs_naive(self, q, r):
        r = min(r, len(q))
        env = build_envelope(q, r)
        up, lo = naive_envelope(q, r)
        assert np.array_equal(env.upper, up) and np.array_equal(env.lower, lo)

    def test_bad_reach(self):
        with pytest.raises(ValueError):
            build_envelope([1.0, 2.0], 3)


class TestLbKeogh:
    def test_inside_is_zero(self, rng):
        q = rng.standard_normal(50)
        env = build_envelope(q, 5)
        c = (env.upper + env.lower) / 2
        assert lb_keogh_raw(env, c) == 0.0
        assert lb_keogh_raw(build_envelope(q, 0), q) == 0.0

    def test_own_word_zero_every_reach(self, rng):
        q = rng.standard_normal(128).cumsum()
        word = paa_to_sax(compute_paa(q, 16), [8] * 16, TABLE)
        for r in (0, 1, 6, 32, 128):
            ep = envelope_paa(build_envelope(q, r), 16)
            assert lb_keogh_paa_sax(ep, word, TABLE) == 0.0

    def test_box_above_envelope(self):
        ep = EnvelopePaa(np.array([-1.0]), np.array([-2.0]), 8, 1)
        word = SaxWord((1,), (1,))  # region [0, inf)
        assert lb_keogh_paa_sax(ep, word, TABLE) == 8 * 1.0

    def test_box_below_envelope(self):
        ep = EnvelopePaa(np.array([3.0]), np.array([2.0]), 4, 1)
        word = SaxWord((0,), (1,))  # region (-inf, 0)
        assert lb_keogh_paa_sax(ep, word, TABLE) == 4 * 4.0

    def test_chain(self, rng):
        n, w = 64, 8
        bad = 0
        for _ in range(10000):
            q = rng.standard_normal(n).cumsum()
            s = rng.standard_normal(n).cumsum()
            r = int(rng.integers(0, n // 4))
            env = build_envelope(q, r)
            word = paa_to_sax(compute_paa(s, w), rng.integers(1, 9, size=w), TABLE)
            a = lb_keogh_paa_sax(envelope_paa(env, w), word, TABLE)
            b = lb_keogh_raw(env, s)
            c = dtw(q, s, r)
            bad += not (a <= b <= c)
        assert bad == 0


class TestDtw:
    def test_identical(self, rng):
        x = rng.standard_normal(40)
        for r in (0, 3, 40):
            assert dtw(x, x, r) == 0.0

    def test_r0_is_euclidean(self, rng):
        for _ in range(50):
            a, b = rng.standard_normal((2, 100))
            assert dtw(a, b, 0) == squared_euclidean(a, b)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 24).flatmap(
        lambda n: st.tuples(arrays(np.float64, n, elements=finite),
                            arrays(np.float64, n, elements=finite), st.integers(0, n))))
    def test_vs_matrix(self, args):
        a, b, r = args
        assert dtw(a, b, r) == pytest.approx(full_dtw(a, b, r), rel=1e-9, abs=1e-9)

    def test_full_band(self, rng):
        a, b = rng.standard_normal((2, 50))
        assert dtw(a, b, 50) == pytest.approx(full_dtw(a, b), rel=1e-12)

    def test_monotone_in_reach(self, rng):
        a, b = rng.standard_normal((2, 60)).cumsum(axis=1)
        vals = [dtw(a, b, r) for r in range(0, 61, 5)]
        assert all(x >= y for x, y in zip(vals, vals[1:]))

    def test_early_abandon(self, rng):
        a, b = rng.standard_normal((2, 60))
        exact = dtw(a, b, 6)
        assert dtw_kernel(a, b, 6, exact) == exact
        assert dtw_kernel(a, b, 6, exact / 4) == np.inf or dtw_kernel(a, b, 6, exact / 4) == exact


def test_reach_from_percent():
    assert reach_from_percent(10, 256) == 25
    assert reach_from_percent(1, 256) == 2
    assert reach_from_percent(0, 256) == 0
    assert reach_from_percent(100, 128) == 128
    with pytest.raises(ValueError):
        reach_from_percent(101, 10)
