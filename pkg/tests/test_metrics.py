import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motionkit import metrics as mt
from motionkit.metrics import FeatureStats


def test_mpjpe_cases(rng):
    P = rng.normal(size=(10, 4, 3))
    assert mt.mpjpe(P, P) == 0.0
    assert mt.mpjpe(P, P + np.array([0.003, 0.0, 0.004])) == pytest.approx(5.0, abs=1e-9)
    Q = rng.normal(size=(10, 4, 3))
    naive = sum(math.dist(P[f, j], Q[f, j]) for f in range(10) for j in range(4)) / 40 * 1000
    assert mt.mpjpe(P, Q) == pytest.approx(naive, abs=1e-9)
    with pytest.raises(mt.MetricError):
        mt.mpjpe(P, Q[:-1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.integers(0, 2**32 - 1))
def test_mpjpe_detects_translation(c, seed):
    P = np.random.default_rng(seed).normal(size=(5, 3, 3))
    assert mt.mpjpe(P, P + np.array(c)) == pytest.approx(np.linalg.norm(c) * 1000, abs=1e-9)


def test_acceleration_cases():
    t = np.arange(20.0)
    lin = np.stack([t, 2 * t, -t], axis=1)[:, None]
    assert mt.acceleration_stats(lin, 30.0) == {"mean": 0.0, "max": 0.0}
    quad = np.stack([t ** 2, 0 * t, 0 * t], axis=1)
    np.testing.assert_allclose(mt.acceleration_series(quad, 1.0), 2.0)
    with pytest.raises(mt.MetricError):
        mt.acceleration_series(quad[:2], 1.0)


def test_jerk_stats_linear_is_zero():
    t = np.arange(30.0)[:, None, None]
    corpus = [(np.concatenate([t * 0.1, t * 0, t * 0.2], axis=-1).repeat(3, axis=1), 30.0)]
    s = mt.jerk_stats(corpus)
    assert s["mean"] == pytest.approx(0.0, abs=1e-9)
    assert s["histogram"]["counts"][0] == s["count"]


def test_jerk_stats_noise_raises_mean(rng):
    t = np.arange(120) / 30.0
    smooth = np.stack([np.sin(t), np.cos(t), t], axis=1)[:, None].repeat(4, axis=1)
    noisy = smooth + rng.normal(0, 0.01, smooth.shape)
    assert mt.jerk_stats([(noisy, 30.0)])["mean"] > mt.jerk_stats([(smooth, 30.0)])["mean"]


def test_jerk_stats_sinusoid_mean():
    fps, A, f = 120.0, 0.2, 1.0
    w = 2 * np.pi * f
    t = np.arange(int(fps * 4) + 3) / fps  # four whole periods of jerk samples
    pos = np.stack([A * np.sin(w * t), 0 * t, 0 * t], axis=1)[:, None]
    s = mt.jerk_stats([(pos, fps)])
    assert s["mean"] == pytest.approx(A * w ** 3 * 2 / np.pi, rel=0.05)


def test_jerk_stats_empty():
    with pytest.raises(mt.MetricError):
        mt.jerk_stats([])


def test_histogram_csv():
    csv = mt.histogram_csv({"edges": [0.0, 0.5, 1.0], "counts": [3, 4]})
    assert csv == "bin_lo,bin_hi,count\n0,0.5,3\n0.5,1,4\n"


# -- Frechet distance -------------------------------------------------------------

def _spd(rng, d):
    M = rng.normal(size=(d, d))
    return M @ M.T + 0.1 * np.eye(d)


def test_fid_identical_is_zero(rng):
    s = FeatureStats(rng.normal(size=5), _spd(rng, 5))
    assert mt.frechet_distance(s, s) == pytest.approx(0.0, abs=1e-8)


def test_fid_mean_shift(rng):
    shift = rng.normal(size=6)
    a = FeatureStats(np.zeros(6), np.eye(6))
    b = FeatureStats(shift, np.eye(6))
    assert mt.frechet_distance(a, b) == pytest.approx(shift @ shift, abs=1e-8)


def test_fid_2x2_closed_form(rng):
    for _ in range(20):
        Sa, Sb = _spd(rng, 2), _spd(rng, 2)
        ma, mb = rng.normal(size=2), rng.normal(size=2)
        # tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)) for a 2x2 M with positive eigenvalues
        M = Sa @ Sb
        tr_sqrt = math.sqrt(np.trace(M) + 2 * math.sqrt(np.linalg.det(M)))
        oracle = np.sum((ma - mb) ** 2) + np.trace(Sa) + np.trace(Sb) - 2 * tr_sqrt
        got = mt.frechet_distance(FeatureStats(ma, Sa), FeatureStats(mb, Sb))
        assert got == pytest.approx(oracle, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_fid_symmetric_nonnegative(seed, d):
    r = np.random.default_rng(seed)
    a = FeatureStats(r.normal(size=d), _spd(r, d))
    b = FeatureStats(r.normal(size=d), _spd(r, d))
    ab, ba = mt.frechet_distance(a, b), mt.frechet_distance(b, a)
    assert ab >= 0 and ab == pytest.approx(ba, rel=1e-8, abs=1e-8)


def test_fid_errors(rng):
    with pytest.raises(mt.MetricError):
        mt.frechet_distance(FeatureStats(np.zeros(2), np.eye(2)), FeatureStats(np.zeros(3), np.eye(3)))
    with pytest.raises(mt.MetricError):
        mt.frechet_distance(FeatureStats(np.zeros(2), np.diag([1.0, -0.5])), FeatureStats(np.zeros(2), np.eye(2)))
    with pytest.raises(mt.MetricError):
        FeatureStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_feature_stats_two_pass_oracle(rng):
    X = rng.normal(3.0, 2.0, size=(40, 4))
    s = FeatureStats.from_samples(X)
    n = X.shape[0]
    mu = [sum(X[i, j] for i in range(n)) / n for j in range(4)]
    cov = [[sum((X[i, a] - mu[a]) * (X[i, b] - mu[b]) for i in range(n)) / n for b in range(4)] for a in range(4)]
    np.testing.assert_allclose(s.mean, mu, atol=1e-9)
    np.testing.assert_allclose(s.cov, cov, atol=1e-9)


def test_feature_stats_duplicated_corpus(rng):
    corpus = [(rng.normal(size=(30, 5, 3)), 30.0) for _ in range(12)]
    full = mt.motion_feature_stats(corpus)
    doubled = mt.motion_feature_stats(corpus + corpus)
    np.testing.assert_allclose(doubled.mean, full.mean, atol=1e-12)
    np.testing.assert_allclose(doubled.cov, full.cov, atol=1e-12)
    assert mt.frechet_distance(full, full) == pytest.approx(0.0, abs=1e-8)


def test_feature_stats_errors():
    with pytest.raises(mt.MetricError):
        mt.motion_feature_stats([])
    with pytest.raises(mt.MetricError):
        mt.motion_feature_stats([np.zeros((8, 4))], extractor="tokenizer-latent")
    with pytest.raises(mt.MetricError):
        mt.motion_feature_stats([np.zeros((8, 4))], extractor="learned")


# -- retrieval ---------------------------------------------------------------------

def brute_force_r_precision(S, k):
    hits = 0
    for i, row in enumerate(S):
        order = sorted(range(len(row)), key=lambda j: (-row[j], j))
        hits += order.index(i) < k
    return hits / len(S)


def test_r_precision_cases():
    assert mt.r_precision(np.eye(8) * 5 + 1, 1) == 1.0
    assert mt.r_precision(-np.eye(8), 3) == 0.0
    assert mt.r_precision(np.zeros((4, 4)), 1) == 0.25  # ties go to the lower column
    for k in (0, 5):
        with pytest.raises(mt.MetricError):
            mt.r_precision(np.eye(4), k)


def test_r_precision_brute_force(rng):
    for _ in range(100):
        S = rng.normal(size=(32, 32))
        S[rng.random((32, 32)) < 0.1] = 0.0  # plant ties
        for k in (1, 2, 3, 10):
            assert mt.r_precision(S, k) == brute_force_r_precision(S, k)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12))
def test_r_precision_monotone(seed, B):
    S = np.random.default_rng(seed).integers(0, 4, size=(B, B)).astype(float)
    vals = [mt.r_precision(S, k) for k in range(1, B + 1)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert vals[-1] == 1.0


def test_batched_r_precision():
    res = mt.batched_r_precision(lambda idx: np.eye(len(idx)), 70, batch=32)
    assert res == {1: 1.0, 2: 1.0, 3: 1.0}
    with pytest.raises(mt.MetricError):
        mt.batched_r_precision(lambda idx: np.eye(len(idx)), 10, batch=32)


def test_format_report():
    out = mt.format_report({"fid": 0.5, "r": {"1": 1.0}, "n": 3})
    assert out.splitlines() == ["fid  0.5", "r.1  1", "n    3"]


def test_jerk_histogram_range_keeps_every_value():
    t = np.arange(40) / 30.0
    pos = np.stack([np.sin(9 * t), 0 * t, 0 * t], axis=1)[:, None]
    s = mt.jerk_stats([(pos, 30.0)], bins=4, range_=(0.0, 1.0))
    assert sum(s["histogram"]["counts"]) == s["count"] == 37
