from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from conftest import compound_symmetric
from dosekit.errors import AccuracyWarning, ValidationError
from dosekit.mvn import QmcConfig, adjusted_pvalues, check_corr, corr_from_cov, critical_value, mvn_rect
from oracles import bivariate_cdf, equicorrelated_cdf, trivariate_cdf


def test_univariate_exact():
    res = mvn_rect([1.3], [[1.0]])
    assert res.value == pytest.approx(special.ndtr(1.3), abs=1e-15) and res.error == 0.0


@pytest.mark.parametrize("rho", [-0.9, -0.3, 0.0, 0.5, 0.95])
@pytest.mark.parametrize("b", [(0.0, 0.0), (1.5, -0.5), (2.5, 2.0), (-1.0, -2.0)])
def test_bivariate_matches_quadrature(rho, b):
    R = np.array([[1.0, rho], [rho, 1.0]])
    res = mvn_rect(b, R)
    assert res.value == pytest.approx(bivariate_cdf(*b, rho), abs=5e-5)


@pytest.mark.parametrize("seed", range(6))
def test_trivariate_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 4))
    R = corr_from_cov(A @ A.T)
    b = rng.uniform(-1, 2.5, 3)
    res = mvn_rect(b, R)
    assert res.value == pytest.approx(trivariate_cdf(b, R), abs=5e-5)


def test_accuracy_fifty_random_low_dim():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for i in range(50):
        m = 2 + i % 2
        A = rng.standard_normal((m, m + 1))
        R = corr_from_cov(A @ A.T)
        b = rng.uniform(-1.0, 2.5, m)
        exact = bivariate_cdf(b[0], b[1], R[0, 1]) if m == 2 else trivariate_cdf(b, R)
        worst = max(worst, abs(mvn_rect(b, R).value - exact))
    assert worst <= 5e-5


@pytest.mark.parametrize("m,rho", [(4, 0.3), (6, 0.5), (10, 0.8), (20, 0.2)])
def test_equicorrelated_high_dim(m, rho):
    R = compound_symmetric(m, 1.0, rho)
    b = np.linspace(1.0, 3.0, m)
    assert mvn_rect(b, R).value == pytest.approx(equicorrelated_cdf(b, rho), abs=5e-5)


@pytest.mark.parametrize("m", [1, 2, 4, 8])
@pytest.mark.parametrize("alpha", [0.025, 0.05])
def test_critical_independence(m, alpha):
    expected = special.ndtri((1 - alpha) ** (1 / m))
    assert critical_value(np.eye(m), alpha) == pytest.approx(expected, abs=1e-4)


def test_critical_identity_four():
    assert critical_value(np.eye(4), 0.025) == pytest.approx(2.494347, abs=1e-4)


def test_critical_equicorrelated_oracle():
    R = compound_symmetric(5, 1.0, 0.6)
    q = critical_value(R, 0.025)
    assert equicorrelated_cdf(np.full(5, q), 0.6) == pytest.approx(0.975, abs=1e-4)


def test_perfect_correlation_collapses():
    R = np.ones((3, 3))
    assert critical_value(R, 0.025) == pytest.approx(special.ndtri(0.975), abs=1e-6)
    assert mvn_rect([0.5, 1.0, 2.0], R).value == pytest.approx(special.ndtr(0.5), abs=1e-14)


def test_infinite_limits():
    R = compound_symmetric(3, 1.0, 0.4)
    assert mvn_rect([np.inf, np.inf, np.inf], R).value == 1.0
    assert mvn_rect([1.0, -np.inf, 2.0], R).value == 0.0
    two = mvn_rect([1.0, np.inf, 0.5], R).value
    assert two == pytest.approx(bivariate_cdf(1.0, 0.5, 0.4), abs=5e-5)


def test_deterministic_and_seed_dependent():
    R = compound_symmetric(4, 1.0, 0.3)
    a = mvn_rect([1, 1.2, 0.8, 2], R)
    b = mvn_rect([1, 1.2, 0.8, 2], R)
    assert a == b
    c = mvn_rect([1, 1.2, 0.8, 2], R, QmcConfig(seed=1))
    assert c.value != a.value and abs(c.value - a.value) < 1e-4


def test_accuracy_warning_single():
    R = compound_symmetric(6, 1.0, 0.5)
    cfg = QmcConfig(points=64, shifts=8, target_error=1e-12)
    with pytest.warns(AccuracyWarning) as rec:
        critical_value(R, 0.025, cfg)
    assert len([w for w in rec if issubclass(w.category, AccuracyWarning)]) == 1


def test_lattice_growth_reduces_error():
    R = compound_symmetric(6, 1.0, 0.5)
    b = np.full(6, 1.5)
    small = mvn_rect(b, R, QmcConfig(points=256))
    grown = mvn_rect(b, R, QmcConfig(points=256, target_error=1e-9, max_points=8192))
    assert grown.error < small.error


@pytest.mark.parametrize(
    "R",
    [
        [[1.0, 0.5], [0.4, 1.0]],
        [[2.0, 0.0], [0.0, 1.0]],
        [[1.0, 1.5], [1.5, 1.0]],
        np.eye(33),
    ],
)
def test_invalid_corr(R):
    with pytest.raises(ValidationError):
        check_corr(R)


def test_validation():
    with pytest.raises(ValidationError):
        critical_value(np.eye(2), 0.6)
    with pytest.raises(ValidationError):
        mvn_rect([0.0], np.eye(2))
    with pytest.raises(ValidationError):
        mvn_rect([np.nan, 0.0], np.eye(2))
    with pytest.raises(ValidationError):
        QmcConfig(points=10)
    with pytest.raises(ValidationError):
        corr_from_cov([[1.0, 0.0], [0.0, 0.0]])


def test_adjusted_pvalues_monotone():
    R = compound_symmetric(4, 1.0, 0.7)
    z = np.array([3.0, 1.0, 2.0, -1.0])
    p = adjusted_pvalues(z, R)
    assert np.all(np.diff(p[np.argsort(-z)]) >= 0)
    assert np.all(p >= special.ndtr(-z) - 1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 6), st.floats(0.0, 0.9), st.floats(0.01, 0.1))
def test_critical_between_bounds(m, rho, alpha):
    q = critical_value(compound_symmetric(m, 1.0, rho), alpha)
    assert special.ndtri(1 - alpha) - 1e-6 <= q <= special.ndtri(1 - alpha / m) + 1e-6
    assert equicorrelated_cdf(np.full(m, q), rho) == pytest.approx(1 - alpha, abs=2e-4)


def test_monotone_in_limits():
    R = compound_symmetric(4, 1.0, 0.5)
    grid = np.linspace(-1, 3, 9)
    vals = [mvn_rect([g, 1.0, 1.5, 2.0], R).value for g in grid]
    assert np.all(np.diff(vals) >= 0)


def test_critical_decreasing_in_alpha():
    R = compound_symmetric(4, 1.0, 0.5)
    qs = [critical_value(R, a) for a in (0.005, 0.01, 0.025, 0.05, 0.1)]
    assert np.all(np.diff(qs) < 0)


@pytest.mark.parametrize("rho", [0.0, 0.4, 0.8])
def test_adjusted_p_at_critical_is_alpha(rho):
    R = compound_symmetric(5, 1.0, rho)
    q = critical_value(R, 0.025)
    assert adjusted_pvalues([q], np.eye(1))[0] == pytest.approx(special.ndtr(-q))
    assert adjusted_pvalues(np.full(5, q), R)[0] == pytest.approx(0.025, abs=2e-4)


def test_corr_from_cov_examples():
    np.testing.assert_allclose(corr_from_cov([[4, 2], [2, 4]]), [[1, 0.5], [0.5, 1]])
    R = corr_from_cov(compound_symmetric(5, 0.149, 0.0094))
    assert R[0, 1] == pytest.approx(0.0094 / 0.149)
