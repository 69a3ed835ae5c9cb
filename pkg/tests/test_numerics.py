import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from dplab import numerics as nm

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


@given(arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
@settings(max_examples=60, deadline=None)
def test_pinv_penrose_conditions(M):
    P = nm.pinv(M)
    scale = 1.0 + np.abs(M).max()
    assert np.allclose(M @ P @ M, M, atol=1e-8 * scale)
    assert np.allclose(P @ M @ P, P, atol=1e-8 * (1 + np.abs(P).max()))
    assert np.allclose((M @ P).T, M @ P, atol=1e-8)
    assert np.allclose((P @ M).T, P @ M, atol=1e-8)


def test_pinv_matches_lstsq_on_tall_full_rank(rng):
    M = rng.normal(size=(9, 4))
    b = rng.normal(size=9)
    assert np.allclose(nm.pinv(M) @ b, np.linalg.lstsq(M, b, rcond=None)[0])


def test_pinv_of_zero_and_empty():
    assert np.array_equal(nm.pinv(np.zeros((3, 2))), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        nm.pinv(np.zeros((0, 3)))


def test_rank_and_extreme_singular_values(rng):
    M = rng.normal(size=(5, 2)) @ rng.normal(size=(2, 7))
    assert nm.numerical_rank(M) == 2
    s = np.linalg.svd(M, compute_uv=False)
    assert nm.sigma_max(M) == pytest.approx(s[0])
    assert nm.sigma_min(M) == pytest.approx(s[-1], abs=1e-12)


def test_expm_against_eigendecomposition(rng):
    S = rng.normal(size=(4, 4))
    S = S + S.T
    w, V = np.linalg.eigh(S)
    assert np.allclose(nm.expm(S), (V * np.exp(w)) @ V.T)
    with pytest.raises(ValueError):
        nm.expm(np.zeros((2, 3)))


@pytest.mark.parametrize("k", [1, 3, 40])
def test_chi2_against_scipy_stats(k):
    for x in (0.1, 1.0, 5.0, 60.0):
        assert nm.chi2_cdf(x, k) == pytest.approx(stats.chi2.cdf(x, k), rel=1e-10, abs=1e-300)
        assert nm.chi2_sf(x, k) == pytest.approx(stats.chi2.sf(x, k), rel=1e-10, abs=1e-300)
    for p in (0.025, 0.5, 0.975):
        assert nm.chi2_ppf(p, k) == pytest.approx(stats.chi2.ppf(p, k), rel=1e-10)


@pytest.mark.parametrize("d1,d2", [(1, 5), (2, 98), (4, 1000)])
def test_f_against_scipy_stats(d1, d2):
    for x in (0.2, 1.0, 3.0, 40.0):
        assert nm.f_cdf(x, d1, d2) == pytest.approx(stats.f.cdf(x, d1, d2), rel=1e-9)
        assert nm.f_sf(x, d1, d2) == pytest.approx(stats.f.sf(x, d1, d2), rel=1e-9)
    assert nm.f_ppf(0.95, d1, d2) == pytest.approx(stats.f.ppf(0.95, d1, d2), rel=1e-9)


def test_kolmogorov_sf_known_value():
    # P(K > 1.3581) = 0.05 for the limiting Kolmogorov law
    assert nm.kolmogorov_sf(1.3581) == pytest.approx(0.05, abs=1e-4)


def test_weighted_chi2_single_weight_reduces_to_scaled_chi2():
    d = nm.WeightedChiSquare((2.0,), 10)
    for p in (0.025, 0.5, 0.975):
        assert nm.weighted_chi2_quantile(d, p) == pytest.approx(2.0 * stats.chi2.ppf(p, 10), rel=0.02)


def test_weighted_chi2_mean_and_cache():
    d = nm.WeightedChiSquare((0.5, 1.0, 3.0), 7)
    draws = nm.weighted_chi2_draws(d)
    assert draws.mean() == pytest.approx(d.mean, rel=0.01)
    assert nm.weighted_chi2_draws(d) is draws
    assert not draws.flags.writeable
    assert nm.weighted_chi2_cdf(d, np.inf) == 1.0


@pytest.mark.parametrize("weights,dof", [((), 3), ((1.0, -1.0), 3), ((1.0,), 0)])
def test_weighted_chi2_validation(weights, dof):
    with pytest.raises(ValueError):
        nm.WeightedChiSquare(weights, dof)


def test_rng_gaussian_covariance_and_determinism():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    X = nm.rng_gaussian(200_000, cov, seed=3)
    assert X.shape == (2, 200_000)
    assert np.allclose(np.cov(X), cov, atol=0.02)
    assert np.array_equal(X, nm.rng_gaussian(200_000, cov, seed=3))


def test_rng_gaussian_singular_and_invalid_covariances():
    X = nm.rng_gaussian(10, np.array([[1.0, 1.0], [1.0, 1.0]]), seed=0)
    assert np.allclose(X[0], X[1])
    with pytest.raises(ValueError):
        nm.rng_gaussian(5, np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ValueError):
        nm.rng_gaussian(5, np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_rng_uniform_bounds():
    U = nm.rng_uniform((3, 1000), (-2.0, 5.0), seed=1)
    assert U.min() >= -2.0 and U.max() < 5.0
    with pytest.raises(ValueError):
        nm.rng_uniform((1, 1), (1.0, 0.0))
