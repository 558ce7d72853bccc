import math

import numpy as np
import pytest

from varcurv.errors import ParameterError
from varcurv.landscape import DoubleWellLandscape
from varcurv.metastability import (KramersSetup, classify_regime, first_passage_times, hop_probability,
                                   kramers_escape_iters, simulate_double_well)
from varcurv.stochastics import StreamKey


def test_eps_and_ratio():
    s = KramersSetup(DoubleWellLandscape(1.0, 1.0), 0.05, 2.0, 4)
    assert s.eps == pytest.approx(0.05 * 4 / 8)
    assert s.ratio == pytest.approx(0.25 / s.eps)
    s2 = KramersSetup.from_ratio(1.0, 1.0, 0.05, 5.0)
    assert s2.ratio == pytest.approx(5.0, rel=1e-14) and s2.eps == pytest.approx(0.05)


def test_prediction_example():
    pred = kramers_escape_iters(KramersSetup.from_ratio(1.0, 1.0, 0.05, 5.0))
    assert pred.prefactor == pytest.approx(2 * math.pi / (0.05 * math.sqrt(2)), rel=1e-14)
    assert pred.prefactor == pytest.approx(88.86, abs=0.01)
    assert pred.expected_iters == pytest.approx(1.32e4, rel=0.01)
    assert pred.valid


def test_prefactor_from_curvatures():
    for lam, a, alpha in ((1.0, 1.0, 0.05), (2.5, 0.7, 0.01), (0.3, 2.0, 0.2)):
        dw = DoubleWellLandscape(lam, a)
        pred = kramers_escape_iters(KramersSetup(dw, alpha, 1.0, 1))
        # L''(x-) = 2 lam a^2, L''(0) = -lam a^2 from the quartic directly
        h = 1e-4
        l2 = (dw.loss_1d(a + h) - 2 * dw.loss_1d(a) + dw.loss_1d(a - h)) / h**2
        l0 = (dw.loss_1d(h) - 2 * dw.loss_1d(0.0) + dw.loss_1d(-h)) / h**2
        assert l2 == pytest.approx(dw.curvature_min, rel=1e-6) and l0 == pytest.approx(dw.curvature_saddle, rel=1e-6)
        assert pred.prefactor == 2.0 * math.pi / (alpha * math.sqrt(dw.curvature_min * abs(dw.curvature_saddle)))


def test_large_noise_collapses_to_prefactor():
    pred = kramers_escape_iters(KramersSetup.from_ratio(1.0, 1.0, 0.05, 1e-9))
    assert pred.expected_iters == pytest.approx(pred.prefactor, rel=1e-8)
    assert not pred.valid
    assert classify_regime(KramersSetup.from_ratio(1.0, 1.0, 0.05, 1e-9)) == "delocalized"


def test_doubling_N_doubles_exponent():
    dw = DoubleWellLandscape(1.0, 1.0)
    a = kramers_escape_iters(KramersSetup(dw, 0.05, 1.0, 2))
    b = kramers_escape_iters(KramersSetup(dw, 0.05, 1.0, 4))
    assert b.exponent == pytest.approx(2 * a.exponent, rel=1e-14)
    assert b.expected_iters / b.prefactor == pytest.approx((a.expected_iters / a.prefactor) ** 2, rel=1e-12)


def test_hop_probability_values():
    s = KramersSetup.from_ratio(1.0, 1.0, 0.05, 5.0)
    EK = kramers_escape_iters(s).expected_iters
    p, lin = hop_probability(s, EK)
    assert p == pytest.approx(1 - math.exp(-1), rel=1e-14) and lin == pytest.approx(1.0)
    assert hop_probability(s, 1e4)[0] == pytest.approx(0.53, abs=0.01)
    p, lin = hop_probability(KramersSetup.from_ratio(1.0, 1.0, 0.05, 50.0), 1e5)
    assert p < 1e-15 and p == pytest.approx(lin, rel=1e-10)


@pytest.mark.parametrize("ratio,T,regime", [(50.0, 10**5, "metastable"), (0.5, 10**5, "delocalized"),
                                            (11.0, 10**5, "hopping"), (5.0, 10**4, "hopping"),
                                            (3.0, 10**5, "delocalized"), (1.0, 10, "delocalized")])
def test_classify_regime(ratio, T, regime):
    assert classify_regime(KramersSetup.from_ratio(1.0, 1.0, 0.05, ratio), T) == regime


def test_zero_noise_stays_in_well():
    s = KramersSetup(DoubleWellLandscape(1.0, 1.0), 0.05, 0.0, 1, T=2000, replicates=3)
    run = simulate_double_well(s, StreamKey(0))
    assert run.record.hop_fraction == 0.0
    assert np.allclose(run.record.final_x, -1.0, atol=1e-12)
    with pytest.raises(ParameterError):
        kramers_escape_iters(s)


def _boltzmann_well_variance(eps):
    # stationary density exp(-L/eps) restricted to the left well, by quadrature
    from scipy.integrate import quad
    L = lambda x: 0.25 * (x * x - 1) ** 2
    Z = quad(lambda x: np.exp(-L(x) / eps), -3, 0)[0]
    m = quad(lambda x: x * np.exp(-L(x) / eps), -3, 0)[0] / Z
    return quad(lambda x: (x - m) ** 2 * np.exp(-L(x) / eps), -3, 0)[0] / Z


def test_within_well_variance():
    s = KramersSetup.from_ratio(1.0, 1.0, 0.05, 50.0, T=200_000, replicates=2)
    assert s.eps == pytest.approx(0.005)
    run = simulate_double_well(s, StreamKey(1), record_replicates=2, record_every=1)
    var = run.trajectories[:, 20_000:].var()
    assert run.record.hop_fraction == 0.0
    # harmonic value eps/kappa = 0.0025 plus the discrete-step factor 2/(2 - alpha kappa) stays within 5%
    assert var == pytest.approx(0.0025 * 2 / (2 - 0.05 * 2), rel=0.05)
    # the quartic's anharmonic shift accounts for the rest
    assert var == pytest.approx(_boltzmann_well_variance(0.005) * 2 / (2 - 0.05 * 2), rel=0.02)


def test_within_well_variance_small_step():
    s = KramersSetup.from_ratio(1.0, 1.0, 0.005, 50.0, T=400_000, replicates=4)
    run = simulate_double_well(s, StreamKey(10), record_replicates=4, record_every=1)
    assert run.trajectories[:, 40_000:].var() == pytest.approx(0.0025, rel=0.05)


def test_hop_fraction_matches_prediction():
    s = KramersSetup.from_ratio(1.0, 1.0, 0.05, 5.0, T=10_000, replicates=500)
    run = simulate_double_well(s, StreamKey(2))
    assert abs(run.record.hop_fraction - hop_probability(s)[0]) < 0.1
    assert np.all(run.record.first_hop[run.record.hopped] <= s.T)
    assert 0.0 <= run.record.hop_fraction <= 1.0


def test_metastable_never_hops():
    s = KramersSetup.from_ratio(1.0, 1.0, 0.05, 50.0, T=100_000, replicates=20)
    assert first_passage_times(s, StreamKey(3)).hop_fraction == 0.0


def test_delocalized_balanced():
    s = KramersSetup.from_ratio(1.0, 1.0, 0.05, 0.5, T=10_000, replicates=2000)
    run = simulate_double_well(s, StreamKey(4))
    assert abs(run.imbalance) < 0.1
    assert run.hist_counts.sum() == 2000


def test_mirror_symmetry():
    kw = dict(T=10_000, replicates=400)
    left = simulate_double_well(KramersSetup.from_ratio(1.0, 1.0, 0.05, 5.0, **kw), StreamKey(5))
    right = simulate_double_well(KramersSetup.from_ratio(1.0, 1.0, 0.05, 5.0, start=1.0, **kw), StreamKey(6))
    p1, p2 = left.record.hop_fraction, right.record.hop_fraction
    se = math.sqrt(p1 * (1 - p1) / 400 + p2 * (1 - p2) / 400)
    assert abs(p1 - p2) < 3 * se
    assert np.all(left.trajectories[:, 0] == -1.0) and np.all(right.trajectories[:, 0] == 1.0)
    # occupancy of the starting well, reflected
    q1, q2 = np.mean(left.record.final_x < 0), np.mean(right.record.final_x > 0)
    assert abs(q1 - q2) < 3 * math.sqrt(q1 * (1 - q1) / 400 + q2 * (1 - q2) / 400)


def test_first_passage_exponential_sensitivity():
    ratios = (4.0, 6.0, 8.0)
    logs = []
    for r in ratios:
        s = KramersSetup.from_ratio(1.0, 1.0, 0.1, r, replicates=150, T=10**7)
        rec = first_passage_times(s, StreamKey(7).child("ratio", int(r)))
        assert rec.censored == 0
        logs.append(math.log(rec.mfpt))
    slope = np.polyfit(ratios, logs, 1)[0]
    assert slope == pytest.approx(1.0, abs=0.25)


def test_deterministic_across_workers():
    s = KramersSetup.from_ratio(1.0, 1.0, 0.05, 5.0, T=3000, replicates=16)
    a = simulate_double_well(s, StreamKey(9))
    b = simulate_double_well(s, StreamKey(9), workers=4)
    assert np.array_equal(a.record.final_x, b.record.final_x)
    assert np.array_equal(a.trajectories, b.trajectories)
