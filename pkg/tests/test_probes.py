import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm, t as student_t

from varcurv.errors import ParameterError
from varcurv.landscape import CallableObjective, QuadraticLandscape, Spectrum
from varcurv.probes import (BestOfNEstimate, PerturbationBatch, best_of_n, best_of_n_exact, best_of_n_mc,
                            bootstrap_se, estimate_p_improve, generate_batch, saturation_population,
                            summarize_best_of_n, tail_statistics)
from varcurv.stochastics import StreamKey, derive_stream


def _enumerate(pool, N):
    return float(np.mean([max(c) for c in itertools.combinations(pool, N)]))


def test_exact_small_pool():
    assert best_of_n_exact([0.1, -0.2, 0.3], 2) == pytest.approx(0.7 / 3, abs=1e-15)
    assert best_of_n([0.1, -0.2, 0.3], 2, subset_samples=0) == pytest.approx(0.23333, abs=1e-5)


def test_exact_edge_cases():
    pool = np.array([0.3, -1.0, 2.5, 0.7])
    assert best_of_n_exact(pool, 4) == 2.5
    assert best_of_n_exact(pool, 1) == pytest.approx(pool.mean(), rel=1e-15)
    with pytest.raises(ParameterError):
        best_of_n_exact(pool, 5)
    with pytest.raises(ParameterError):
        best_of_n_exact(pool, 0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=10), st.data())
def test_exact_matches_enumeration(pool, data):
    N = data.draw(st.integers(1, len(pool)))
    assert best_of_n_exact(pool, N) == pytest.approx(_enumerate(pool, N), rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=300))
def test_exact_monotone(pool):
    vals = [best_of_n_exact(pool, n) for n in range(1, len(pool) + 1)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == max(pool)


def test_large_pool_lgamma_branch():
    # C(240, 50) exceeds 2^53: log-space weights against a float-free rational evaluation
    from fractions import Fraction
    pool = np.sort(np.random.default_rng(0).normal(size=240))
    M, N = 240, 50
    ref = sum(Fraction(math.comb(j - 1, N - 1)) * Fraction(float(pool[j - 1])) for j in range(N, M + 1))
    ref = float(ref / math.comb(M, N))
    assert best_of_n_exact(pool, N) == pytest.approx(ref, rel=1e-12)


def test_mc_matches_exact():
    rng = np.random.default_rng(1)
    for k, pool in enumerate([rng.normal(size=240), rng.exponential(size=50) - 1, np.arange(12.0)]):
        for N in (1, 5, 10):
            m, se = best_of_n_mc(pool, N, 20000, StreamKey(k).child("N", N))
            assert abs(m - best_of_n_exact(pool, N)) < 3 * se + 1e-15


def test_mc_deterministic_and_requires_stream():
    pool = np.arange(20.0)
    assert best_of_n(pool, 5, 500, StreamKey(3)) == best_of_n(pool, 5, 500, StreamKey(3))
    with pytest.raises(ParameterError):
        best_of_n(pool, 5, 500)


def test_generate_batch_zero_sigma():
    land = QuadraticLandscape(Spectrum([1.0, 0.05]), peak=0.5)
    b = generate_batch(land, np.array([0.2, 0.1]), 0.0, 10, StreamKey(0))
    assert np.all(b.deltas == 0) and b.M == 10 and b.excluded == 0


def test_generate_batch_curvature_penalty():
    land = QuadraticLandscape(Spectrum([1.0, 0.05]))
    b = generate_batch(land, np.zeros(2), 0.1, 20000, StreamKey(1))
    se = b.deltas.std(ddof=1) / math.sqrt(b.M)
    assert abs(b.deltas.mean() - (-0.00525)) < 3 * se
    assert b.R0 == 1.0


def test_generate_batch_offset_improves():
    land = QuadraticLandscape(Spectrum([1.0, 0.05]))
    b = generate_batch(land, np.array([1.0, 0.0]), 0.01, 2000, StreamKey(2))
    assert np.mean(b.deltas > 0) > 0.4


def test_generate_batch_excludes_nonfinite():
    obj = CallableObjective(lambda th: float("nan") if th[0] > 0 else 0.0, 1)
    b = generate_batch(obj, np.zeros(1), 1.0, 200, StreamKey(3))
    assert b.excluded + b.M == 200 and b.excluded > 50
    assert np.all(np.isfinite(b.deltas))


def test_summarize_identical_batches_and_normalization():
    pool = np.random.default_rng(4).normal(size=40)
    est = summarize_best_of_n([PerturbationBatch(0.7, pool, 1.0)] * 2, N_list=(5, 30))
    assert np.all(est.se == 0)
    assert np.allclose(est.normalized, est.mean / 0.3)
    fake = BestOfNEstimate((30,), np.zeros((2, 1)), np.array([0.06]), np.zeros(1), 0.7, None, None, 0)
    assert fake.mean[0] / (1 - fake.R0) == pytest.approx(0.2)
    refused = summarize_best_of_n([PerturbationBatch(1.0, pool, 1.0)] * 2, N_list=(5,))
    assert refused.normalized is None and refused.notes
    assert refused.mean[0] == best_of_n_exact(pool, 5)
    with pytest.raises(ParameterError):
        summarize_best_of_n([PerturbationBatch(0.5, pool, 1.0)])


def test_diminishing_returns_gaussian_deltas():
    rng = np.random.default_rng(5)
    batches = [PerturbationBatch(0.5, rng.normal(-0.01, 0.02, 240), 0.1, s) for s in range(8)]
    est = summarize_best_of_n(batches)
    m = dict(zip(est.N_list, est.mean))
    assert all(b > a for a, b in zip(est.mean, est.mean[1:]))
    assert m[50] - m[30] < m[10] - m[5]
    # batch means track the exact Gaussian order-statistic expectation E[max of N]
    u = (np.arange(240) + 0.5) / 240
    ref = best_of_n_exact(-0.01 + 0.02 * norm.ppf(u), 30)
    assert m[30] == pytest.approx(ref, abs=4 * est.se[est.N_list.index(30)] + 0.002)


def test_saturation_population():
    vals = np.array([0.5, 0.8, 0.92, 0.95, 1.0])
    est = BestOfNEstimate((5, 10, 20, 30, 50), vals[None], vals, np.zeros(5), 0.0, None, None, 0)
    assert saturation_population(est) == 20
    const = BestOfNEstimate((5, 10, 20), np.ones((1, 3)), np.ones(3), np.zeros(3), 0.0, None, None, 0)
    assert saturation_population(const) == 5
    neg = BestOfNEstimate((5, 10), np.zeros((1, 2)), np.array([-0.1, 0.0]), np.zeros(2), 0.0, None, None, 0)
    assert saturation_population(neg) is None


def test_heavy_tail_larger_saturation():
    u = (np.arange(240) + 0.5) / 240
    light = norm.ppf(u)
    heavy = student_t.ppf(u, 2)
    n90 = {}
    for name, pool in (("light", light), ("heavy", heavy)):
        pool = pool - pool.mean()
        n90[name] = saturation_population(summarize_best_of_n([PerturbationBatch(0.5, pool, 1.0)] * 2))
    assert n90["heavy"] > n90["light"]


def test_tail_statistics():
    st_ = tail_statistics(np.arange(1.0, 101.0), 0.95)
    assert st_.quantile == pytest.approx(95.05, abs=1e-12)
    neg = tail_statistics(-np.arange(1.0, 11.0), 0.95)
    assert neg.p_improve == 0 and neg.quantile < 0
    sym = tail_statistics(np.r_[np.arange(1.0, 51.0), -np.arange(1.0, 51.0)], 0.5)
    assert sym.p_improve == 0.5
    b = PerturbationBatch(0.6, np.array([0.1, 0.2, -0.1, 0.4]), 1.0)
    tb = tail_statistics(b, 0.5)
    assert tb.normalized and tb.quantile == pytest.approx(np.quantile(b.deltas / 0.4, 0.5))
    with pytest.raises(ParameterError):
        tail_statistics(PerturbationBatch(1.2, [0.1], 1.0))
    with pytest.raises(ParameterError):
        tail_statistics(b, 1.0)


def test_normalization_order_preserving():
    b = PerturbationBatch(0.3, np.random.default_rng(6).normal(size=50), 1.0)
    assert np.argmax(b.deltas) == np.argmax(b.deltas / (1 - b.R0))


def test_bootstrap_se():
    rng = np.random.default_rng(7)
    pool = rng.normal(0, 2.0, 400)
    se = bootstrap_se(pool, np.mean, 1000, StreamKey(0))
    assert se == pytest.approx(pool.std(ddof=1) / 20, rel=0.15)
    assert bootstrap_se(np.full(30, 0.4), np.mean, 200, StreamKey(1)) == 0.0
    signs = np.r_[np.ones(60), -np.ones(140)]
    se = bootstrap_se(signs, lambda x: np.mean(x > 0), 1000, StreamKey(2))
    assert se == pytest.approx(math.sqrt(0.3 * 0.7 / 200), rel=0.2)
    with pytest.raises(ParameterError):
        bootstrap_se(pool, np.mean, 50, StreamKey(0))


def test_p_improve_at_maximizer_zero():
    land = QuadraticLandscape(Spectrum([1.0, 0.5, 0.1]))
    p, se = estimate_p_improve(land, np.zeros(3), 0.1, 500, StreamKey(0))
    assert p == 0.0 and se == 0.0
    with pytest.raises(ParameterError):
        estimate_p_improve(land, np.zeros(3), 0.1, 50, StreamKey(0))


def test_p_improve_small_sigma_half_space():
    land = QuadraticLandscape(Spectrum([1.0, 0.5]))
    p, se = estimate_p_improve(land, np.array([1.0, 1.0]), 1e-6, 4000, StreamKey(1))
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / 4000)


def test_p_improve_flat_dimension_invariance():
    k, D = 4, 16
    active = np.array([1.0, 0.6, 0.3, 0.1])
    offset_active = np.array([0.4, -0.3, 0.2, 0.5])
    res = {}
    for dim in (D, 4 * D):
        lam = np.r_[active, np.zeros(dim - k)]
        land = QuadraticLandscape(Spectrum(lam))
        theta = np.r_[offset_active, np.zeros(dim - k)]
        res[dim] = estimate_p_improve(land, theta, 0.3, 20000, StreamKey(dim))
    # reference: the k-dimensional active block alone
    res[k] = estimate_p_improve(QuadraticLandscape(Spectrum(active)), offset_active, 0.3, 20000, StreamKey(99))
    for a, b in ((D, 4 * D), (D, k)):
        (p1, s1), (p2, s2) = res[a], res[b]
        assert abs(p1 - p2) < 3 * math.hypot(s1, s2)


def test_batch_validation():
    with pytest.raises(ParameterError):
        PerturbationBatch(0.0, [], 1.0)
    with pytest.raises(ParameterError):
        PerturbationBatch(0.0, [1.0, np.inf], 1.0)
    with pytest.raises(ParameterError):
        generate_batch(QuadraticLandscape(Spectrum([1.0])), np.zeros(1), 0.1, 0, StreamKey(0))
