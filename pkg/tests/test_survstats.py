import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gliomorph.errors import ValidationError
from gliomorph.survstats import (
    SurvivalCurve,
    c_index,
    c_index_arrays,
    chisq_sf,
    cox_fit_arrays,
    cox_partial_loglik,
    cox_univariate,
    km_arrays,
    km_curve,
    logrank,
    logrank_arrays,
    median_survival,
    normal_cdf,
    rmst,
)
from gliomorph.volio import SurvivalRecord

from oracles import (
    breslow_loglik,
    c_index_pairs,
    chisq_sf_quad,
    cox_beta_search,
    km_loop,
    logrank_loop,
    normal_cdf_quad,
    rmst_dense,
)


def _cohort(rng, n, beta=0.0, censor=0.3, ties=False):
    x = rng.standard_normal(n)
    t = rng.exponential(1.0 / np.exp(beta * x))
    if ties:
        t = np.ceil(t * 4) / 4 + 0.25
    event = rng.random(n) > censor
    return x, t, event


def _records(t, e):
    return [SurvivalRecord(f"s{i}", float(ti), bool(ei)) for i, (ti, ei) in enumerate(zip(t, e))]


@pytest.mark.parametrize("x", [0.0, 0.5, 1.96, 3.84, 10.0, 40.0])
def test_chisq_sf_against_quadrature(x):
    assert chisq_sf(x) == pytest.approx(chisq_sf_quad(x), rel=1e-7, abs=1e-14)
    assert chisq_sf(x, 3) == pytest.approx(chisq_sf_quad(x, 3), rel=1e-7, abs=1e-14)


@pytest.mark.parametrize("z", [-4.0, -1.0, 0.0, 1.959963984540054, 3.0])
def test_normal_cdf_against_quadrature(z):
    assert normal_cdf(z) == pytest.approx(normal_cdf_quad(z), rel=1e-9)


def test_chisq_known_values():
    assert chisq_sf(3.841458820694124) == pytest.approx(0.05, rel=1e-12)
    with pytest.raises(ValidationError):
        chisq_sf(-1.0)


@pytest.mark.parametrize("seed", range(10))
def test_km_matches_loop(seed):
    rng = np.random.default_rng(seed)
    _, t, e = _cohort(rng, 40, ties=True)
    curve = km_arrays(t, e)
    times, probs = km_loop(list(t), list(e))
    np.testing.assert_allclose(curve.times, times)
    np.testing.assert_allclose(curve.probs, probs, rtol=1e-12)


def test_km_and_median_simple():
    recs = _records([1, 2, 3, 4], [1, 1, 0, 1])
    curve = km_curve(recs)
    assert curve(0.5) == 1.0 and curve(1.0) == 0.75 and curve(2.5) == 0.5
    assert median_survival(recs) == 2.0
    assert median_survival(_records([1, 2, 3], [0, 0, 0])) is None


def test_rmst_against_dense_integration():
    rng = np.random.default_rng(5)
    _, t, e = _cohort(rng, 30)
    curve = km_arrays(t, e)
    for t_max in (0.3, 1.0, float(t.max()) + 1.0):
        assert rmst(curve, t_max) == pytest.approx(rmst_dense(curve, t_max), abs=1e-4)
    assert rmst(SurvivalCurve([], []), 5.0) == 5.0


@pytest.mark.parametrize("seed", range(10))
def test_logrank_matches_loop(seed):
    rng = np.random.default_rng(seed)
    _, t, e = _cohort(rng, 50, ties=True)
    g = rng.random(50) < 0.4
    res = logrank_arrays(t, e, g)
    assert res.chi2 == pytest.approx(logrank_loop(list(t), list(e), list(g)), rel=1e-10)
    assert res.p == pytest.approx(chisq_sf_quad(res.chi2), rel=1e-7, abs=1e-14)


def test_logrank_exactly_symmetric():
    rng = np.random.default_rng(9)
    _, t, e = _cohort(rng, 60, ties=True)
    recs = _records(t, e)
    a, b = recs[:25], recs[25:]
    assert logrank(a, b) == logrank(b, a)


def test_logrank_degenerate_and_errors():
    recs = _records([1, 2, 3, 4], [0, 0, 0, 0])
    assert logrank(recs[:2], recs[2:]).degenerate
    with pytest.raises(ValidationError):
        logrank(recs, [])


@pytest.mark.parametrize("seed", range(10))
def test_cox_matches_search(seed):
    rng = np.random.default_rng(100 + seed)
    x, t, e = _cohort(rng, 40, beta=rng.uniform(-1.5, 1.5), ties=seed % 2 == 0)
    fit = cox_fit_arrays(x, t, e)
    assert fit.converged
    assert fit.beta == pytest.approx(cox_beta_search(x, t, e), abs=1e-4)


def test_cox_loglik_matches_loop_and_gradient():
    rng = np.random.default_rng(7)
    x, t, e = _cohort(rng, 30, ties=True)
    for beta in (-0.7, 0.0, 0.4):
        ll, score, info = cox_partial_loglik(beta, x, t, e)
        assert ll == pytest.approx(breslow_loglik(beta, x, t, e), rel=1e-12)
        h = 1e-5
        fd = (breslow_loglik(beta + h, x, t, e) - breslow_loglik(beta - h, x, t, e)) / (2 * h)
        assert score == pytest.approx(fd, abs=1e-6)
        fd2 = (
            cox_partial_loglik(beta + h, x, t, e)[1] - cox_partial_loglik(beta - h, x, t, e)[1]
        ) / (2 * h)
        assert info == pytest.approx(-fd2, abs=1e-6)


def test_cox_wald_quantities():
    rng = np.random.default_rng(11)
    x, t, e = _cohort(rng, 80, beta=0.8)
    fit = cox_univariate(x, _records(t, e))
    assert fit.hr == pytest.approx(math.exp(fit.beta))
    assert fit.ci_low == pytest.approx(math.exp(fit.beta - 1.96 * fit.se))
    assert fit.ci_high == pytest.approx(math.exp(fit.beta + 1.96 * fit.se))
    assert fit.p == pytest.approx(2 * (1 - normal_cdf(abs(fit.beta / fit.se))))


def test_cox_location_invariant():
    rng = np.random.default_rng(12)
    x, t, e = _cohort(rng, 50, beta=0.5)
    a, b = cox_fit_arrays(x, t, e), cox_fit_arrays(x + 1000.0, t, e)
    assert a.beta == pytest.approx(b.beta, abs=1e-9)
    assert a.se == pytest.approx(b.se, rel=1e-9)


def test_cox_constant_covariate():
    fit = cox_fit_arrays(np.ones(5), np.arange(1.0, 6.0), np.ones(5, bool))
    assert fit.beta == 0.0 and fit.p == 1.0 and fit.flag == "no variation"


def test_cox_monotone_likelihood():
    # Perfect separation: every event has a larger x than anyone still at risk.
    t = np.arange(1.0, 11.0)
    x = -t
    fit = cox_fit_arrays(x, t, np.ones(10, bool))
    assert not fit.converged and fit.flag == "monotone likelihood"


def test_cox_errors():
    with pytest.raises(ValidationError):
        cox_fit_arrays(np.arange(3.0), np.arange(1.0, 4.0), np.zeros(3, bool))
    with pytest.raises(ValidationError):
        cox_fit_arrays(np.array([1.0, np.nan]), np.ones(2), np.ones(2, bool))


@pytest.mark.parametrize("seed", range(10))
def test_c_index_matches_pairs(seed):
    rng = np.random.default_rng(seed)
    _, t, e = _cohort(rng, 30, ties=True)
    pred = np.round(rng.standard_normal(30), 1)
    assert c_index_arrays(pred, t, e) == c_index_pairs(pred, t, e)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 25), st.integers(0, 2**32 - 1))
def test_c_index_perfect_and_constant(n, seed):
    rng = np.random.default_rng(seed)
    t = rng.permutation(n) + 1.0
    e = rng.random(n) < 0.7
    e[np.argmin(t)] = True
    assert c_index_arrays(t, t, e) == 1.0
    assert c_index_arrays(np.zeros(n), t, e) == 0.5
    assert c_index_arrays(-t, t, e) == 0.0


def test_c_index_no_comparable_pairs():
    assert c_index([1.0, 2.0], _records([1, 2], [0, 0])) is None
