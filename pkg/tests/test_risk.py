from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from resilient_uav.risk import (RiskConfig, exp_utility, exp_utility_curvature, exp_utility_grad,
                                log_sum_exp_utility, jain_index, sum_rate_variance, taylor_residual, utility_F)

from conftest import central_gradient

sums = st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=12)
neg_mu = st.floats(-5, -1e-3)


def exp_utility_decimal(values, mu, digits=50):
    """Independent 50-digit evaluation of (1/mu) log mean exp(mu s)."""
    getcontext().prec = digits
    m = Decimal(repr(mu))
    mean = sum((m * Decimal(repr(v))).exp() for v in values) / len(values)
    return mean.ln() / m


def test_risk_config_beta():
    assert RiskConfig(-10.0).beta == 5.0
    assert RiskConfig.from_beta(1.5).mu == -3.0
    assert RiskConfig(0.0).beta == 0.0
    with pytest.raises(ValueError):
        RiskConfig(0.5)


def test_constant_sequence():
    for mu in (0.0, -0.1, -3.0, -50.0):
        assert exp_utility([7.5] * 6, mu) == pytest.approx(7.5, rel=1e-14)
    assert exp_utility([0.0, 0.0], -1.0) == 0.0


def test_two_point_high_precision():
    # 50-digit value of (1/mu) log((e^{-0.1} + e^{-0.2}) / 2) at mu = -0.01
    frozen = 14.875052048637441458713301314251852616995
    assert exp_utility([10.0, 20.0], -0.01) == pytest.approx(frozen, rel=1e-14)
    assert float(exp_utility_decimal([10.0, 20.0], -0.01)) == pytest.approx(frozen, rel=1e-15)
    assert abs(exp_utility([10.0, 20.0], -0.01) - (15 - 0.125)) < 1e-3


def test_large_magnitudes_do_not_overflow():
    v = exp_utility([1e4, 2e4, 3e4], -10.0)
    assert np.isfinite(v) and 1e4 <= v <= 1e4 + 1.0


def test_utility_F_examples():
    assert utility_F([[1.0, 3.0]], 1.0) == pytest.approx(1.0)
    r = np.array([[1.0, 3.0], [2.0, 6.0]])
    assert utility_F(r, 0.0) == pytest.approx(2.0 + 4.0)
    assert utility_F([[1.0], [4.0]], 3.0) == pytest.approx(5.0)


def test_taylor_residual_examples():
    assert taylor_residual([3.0, 3.0, 3.0], -0.5) == pytest.approx(0.0, abs=1e-14)
    # 50-digit oracle gives 5.2049e-6 for this residual
    assert taylor_residual([0.0, 1.0], -0.1) < 1e-2
    assert taylor_residual([0.0, 1.0], -0.1) == pytest.approx(5.20486374414587e-6, rel=1e-6)
    s = [1.0, 4.0, 2.0, 8.0]
    ratio = taylor_residual(s, -0.02) / taylor_residual(s, -0.01)
    assert 4 * 0.7 <= ratio <= 4 * 1.3
    with pytest.raises(ValueError):
        taylor_residual(s, 0.0)


def test_jain_examples():
    assert jain_index([2.0] * 5) == pytest.approx(1.0)
    assert jain_index([0] * 8 + [3.0]) == pytest.approx(1 / 9)
    assert jain_index([1, 2, 3]) == pytest.approx(36 / 42)
    with pytest.raises(ValueError, match="fairness undefined"):
        jain_index([0.0, 0.0])


def test_variance_examples():
    assert sum_rate_variance([4.0] * 3) == 0.0
    assert sum_rate_variance([0.0, 2.0]) == 1.0


@settings(max_examples=300, deadline=None)
@given(s=sums, mu=neg_mu)
def test_jensen_bound(s, mu):
    s = np.array(s)
    v = exp_utility(s, mu)
    assert v <= s.mean() + 1e-9 * (1 + abs(s.mean()))
    if np.ptp(s) > 1e-3:
        assert v < s.mean()


@settings(max_examples=300, deadline=None)
@given(s=sums, mu1=neg_mu, mu2=neg_mu)
def test_monotone_in_mu(s, mu1, mu2):
    lo, hi = sorted((mu1, mu2))
    assert exp_utility(s, lo) <= exp_utility(s, hi) + 1e-9 * (1 + max(s))


@settings(max_examples=300, deadline=None)
@given(s=sums)
def test_small_mu_limit(s):
    m = float(np.mean(s))
    assert abs(exp_utility(s, -1e-6) - m) < 1e-6 * (1 + abs(m)) * max(1.0, float(np.var(s)))
    assert exp_utility(s, 0.0) == pytest.approx(m, rel=1e-15)


@settings(max_examples=300, deadline=None)
@given(s=st.lists(st.floats(0, 20, allow_nan=False), min_size=2, max_size=6), mu=st.floats(-2, -1e-2))
def test_matches_high_precision(s, mu):
    assert exp_utility(s, mu) == pytest.approx(float(exp_utility_decimal(s, mu)), rel=1e-12, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mu=st.floats(-20, -1e-3), lam=st.floats(0.01, 0.99))
def test_log_sum_exp_concavity(seed, mu, lam):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-10, 10, (2, 8))
    f = lambda v: log_sum_exp_utility(v, mu)
    assert f(lam * x + (1 - lam) * y) >= lam * f(x) + (1 - lam) * f(y) - 1e-9


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mu=st.sampled_from([0.0, -0.3, -2.0]))
def test_gradient_and_curvature(seed, mu):
    s = np.random.default_rng(seed).uniform(0, 5, 6)
    _, g = exp_utility_grad(s, mu)
    np.testing.assert_allclose(g, central_gradient(lambda v: exp_utility(v, mu), s), rtol=1e-6, atol=1e-8)
    H = exp_utility_curvature(s, mu)
    fd = np.array([central_gradient(lambda v: exp_utility_grad(v, mu)[1][i], s) for i in range(6)])
    np.testing.assert_allclose(H, fd, atol=1e-6)
    assert np.all(np.linalg.eigvalsh(H) <= 1e-12)


@settings(max_examples=200, deadline=None)
@given(v=st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=20))
def test_jain_range(v):
    assume(sum(v) > 0)
    j = jain_index(v)
    assert 1 / len(v) - 1e-12 <= j <= 1 + 1e-12
