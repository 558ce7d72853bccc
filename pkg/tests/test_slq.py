import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.stats import ortho_group

from varcurv.errors import NumericError, ParameterError
from varcurv.landscape import DoubleWellLandscape, QuadraticLandscape, Spectrum
from varcurv.slq import (MatVecOperator, density_metrics, hvp_from_objective, lanczos, ritz_pairs, slq_quadrature,
                         slq_trace, spectral_metrics)
from varcurv.stochastics import StreamKey, derive_stream


def _sym(D, seed):
    B = np.random.default_rng(seed).normal(size=(D, D))
    return (B + B.T) / math.sqrt(2 * D)


def test_lanczos_exact_at_full_m():
    op = MatVecOperator.from_matrix(np.diag([1.0, 2.0, 3.0]))
    res = lanczos(op, np.array([1.0, 0.7, -0.4]), 3)
    th, w = ritz_pairs(res)
    assert np.allclose(th, [1, 2, 3], atol=1e-10)
    assert math.fsum(w) == pytest.approx(1.0, abs=1e-14)


def test_lanczos_breakdown_on_eigenvector():
    op = MatVecOperator.from_matrix(np.diag([1.0, 2.0, 3.0]))
    res = lanczos(op, np.array([0.0, 2.0, 0.0]), 3)
    assert res.breakdown and res.steps == 1
    th, w = ritz_pairs(res)
    assert th.tolist() == [2.0] and w.tolist() == [1.0]


def test_lanczos_extremes_random():
    A = _sym(50, 0)
    ev = np.linalg.eigvalsh(A)
    res = lanczos(MatVecOperator.from_matrix(A), np.random.default_rng(1).normal(size=50), 20)
    th, _ = ritz_pairs(res)
    assert th.max() == pytest.approx(ev.max(), rel=0.01)
    assert th.min() == pytest.approx(ev.min(), rel=0.01)
    assert th.min() >= ev.min() - 1e-10 and th.max() <= ev.max() + 1e-10
    assert res.orthogonality_loss < 1e-10


def test_lanczos_errors():
    op = MatVecOperator.from_matrix(np.eye(3))
    with pytest.raises(ParameterError):
        lanczos(op, np.ones(3), 4)
    with pytest.raises(ParameterError):
        lanczos(op, np.zeros(3), 2)
    bad = MatVecOperator(lambda v: v * np.nan, 3)
    with pytest.raises(NumericError):
        lanczos(bad, np.ones(3), 2)


def test_slq_diag_rademacher_exact():
    op = MatVecOperator.from_matrix(np.diag([1.0, 2.0, 3.0]))
    est, se, quad = slq_trace(op, lambda x: x, 8, 3, StreamKey(0), return_quadrature=True)
    tau = quad.tau(lambda x: x)
    assert np.allclose(tau, 6.0, atol=1e-12) and est == pytest.approx(6.0, abs=1e-12) and se < 1e-12
    for z, t in zip(quad.probes, tau):
        assert t == pytest.approx(z @ np.diag([1.0, 2.0, 3.0]) @ z, abs=1e-12)


def test_slq_constant_gives_dimension():
    op = MatVecOperator.from_matrix(_sym(12, 3))
    est, se, quad = slq_trace(op, lambda x: 1.0, 5, 6, StreamKey(1), return_quadrature=True)
    assert est == pytest.approx(12.0, abs=1e-12) and se < 1e-12
    for w in quad.weights:
        assert math.fsum(w) == pytest.approx(1.0, abs=1e-12)


def test_slq_square_trace_random():
    A = _sym(50, 4)
    exact = float(np.sum(np.linalg.eigvalsh(A) ** 2))
    est, se = slq_trace(MatVecOperator.from_matrix(A), lambda x: x * x, 200, 50, StreamKey(2))
    assert abs(est - exact) / exact < 0.05


def test_slq_requires_two_probes():
    with pytest.raises(ParameterError):
        slq_trace(MatVecOperator.from_matrix(np.eye(2)), lambda x: x, 1, 2, StreamKey(0))


def test_asymmetric_operator_rejected():
    A = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ParameterError):
        slq_trace(MatVecOperator.from_matrix(A), lambda x: x, 4, 2, StreamKey(0))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), D=st.integers(2, 24))
def test_quadrature_exact_at_full_krylov(seed, D):
    A = _sym(D, seed)
    ev, U = np.linalg.eigh(A)
    quad = slq_quadrature(MatVecOperator.from_matrix(A), 4, D, StreamKey(seed), probe="gaussian", keep_probes=True)
    fA = U @ np.diag(np.exp(ev)) @ U.T
    for z, t in zip(quad.probes, quad.tau(np.exp)):
        assert t == pytest.approx(z @ fA @ z, rel=1e-8)
    for w in quad.weights:
        assert math.fsum(w) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("name,f", [("x", lambda x: x), ("x2", lambda x: x * x), ("exp", np.exp)])
def test_unbiased_many_probes(name, f):
    A = _sym(20, 7)
    ev = np.linalg.eigvalsh(A)
    exact = float(np.sum(f(ev)))
    assert exact == pytest.approx(np.trace(expm(A)) if name == "exp" else exact, rel=1e-10)
    op = MatVecOperator.from_matrix(A)
    est, se = slq_trace(op, f, 10**4, 6, StreamKey(8), probe="gaussian")
    assert abs(est - exact) < 4 * se


def test_metrics_psd_and_negative_mass():
    m = spectral_metrics(MatVecOperator.from_matrix(np.diag([3.0, 1.0, 0.5, 0.1])), 10, 4, StreamKey(0), seeds=3)
    assert m.negative_mass == 0.0 and m.lambda_min >= -1e-12
    m = spectral_metrics(MatVecOperator.from_matrix(np.diag([-1.0, 2.0, 2.0, 2.0])), 100, 4, StreamKey(1), seeds=5)
    assert m.lambda_min == pytest.approx(-1.0, abs=1e-10)
    assert abs(m.negative_mass - 0.25) < 3 * max(m.se["negative_mass"], 1e-3)


def test_metrics_exact_formulas():
    D = 128
    first = np.r_[np.ones(16), np.full(112, 1e-3)]
    second = np.r_[np.ones(64), np.full(64, 1e-3)]
    w = np.full(D, 1.0 / D)
    a, b = density_metrics(first, w, D), density_metrics(second, w, D)
    for lam, met in ((first, a), (second, b)):
        p = lam / lam.sum()
        assert met["participation_ratio"] == pytest.approx(1 / np.sum(p**2), rel=1e-12)
        assert met["effective_rank"] == pytest.approx(math.exp(-np.sum(p * np.log(p))), rel=1e-12)
    assert a["participation_ratio"] < b["participation_ratio"]
    assert a["effective_rank"] < b["effective_rank"]
    k = density_metrics(np.r_[np.full(5, 2.0), np.zeros(3)], np.full(8, 1 / 8), 8)
    assert k["participation_ratio"] == pytest.approx(5.0) and k["effective_rank"] == pytest.approx(5.0)


def test_metrics_from_slq_track_exact():
    D = 64
    Q = ortho_group.rvs(D, random_state=3)
    lam = np.r_[np.ones(8), np.full(D - 8, 0.01)]
    op = MatVecOperator.from_matrix(Q @ np.diag(lam) @ Q.T)
    m = spectral_metrics(op, 30, 20, StreamKey(3), seeds=3)
    p = lam / lam.sum()
    assert m.participation_ratio == pytest.approx(1 / np.sum(p**2), rel=0.1)
    assert 1 <= m.participation_ratio <= D and 1 <= m.effective_rank <= D


def test_hvp_quadratic_exact():
    land = QuadraticLandscape(Spectrum([1.0, 0.05]))
    op = hvp_from_objective(land, np.array([0.3, -2.0]), 0.1)
    assert np.allclose(op.apply(np.array([1.0, 0.0])), [-1.0, 0.0], atol=1e-12)
    assert np.allclose(op.apply(np.array([0.0, 1.0])), [0.0, -0.05], atol=1e-12)


def test_hvp_double_well_curvature_and_bias():
    dw = DoubleWellLandscape(1.0, 1.0)
    op = hvp_from_objective(dw, np.array([1.0]), 1e-4)
    assert op.apply(np.ones(1))[0] == pytest.approx(-2.0, abs=1e-4)
    wide = hvp_from_objective(dw, np.array([1.0]), 0.5).apply(np.ones(1))[0]
    assert abs(wide + 2.0) / 2.0 > 0.01


def test_hvp_es_route_symmetric():
    from varcurv.es import ESConfig
    land = QuadraticLandscape(Spectrum([1.0, 0.5]), basis=ortho_group.rvs(2, random_state=1))
    op = hvp_from_objective(land, np.zeros(2), 0.1, es_config=ESConfig(0.1, 0.01, 2000, 1, antithetic=True),
                            stream=StreamKey(5))
    assert np.array_equal(op.matrix, op.matrix.T)
    assert np.allclose(op.matrix, -land.matrix(), atol=0.05)
    assert op.symmetry_defect(derive_stream(StreamKey(0))) < 1e-12
