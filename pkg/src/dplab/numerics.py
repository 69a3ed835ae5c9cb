"""Numerical kernels shared by the rest of the package.

Pseudoinverse and rank are computed from an SVD with an explicit relative
cutoff. Distribution functions are thin wrappers over the regularized
incomplete gamma/beta functions in :mod:`scipy.special`.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy import special

Seed = int | np.random.Generator | None


def as_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _default_rtol(shape: tuple[int, ...]) -> float:
    return max(shape) * np.finfo(float).eps


def pinv(m: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Moore-Penrose pseudoinverse.

    Singular values below ``tol * sigma_max`` are treated as zero; the default
    ``tol`` is ``max(rows, cols) * eps``.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        raise ValueError("pinv of an empty matrix")
    rtol = _default_rtol(m.shape) if tol is None else tol
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(m.T.shape)
    keep = s >= rtol * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


def numerical_rank(m: np.ndarray, tol: float | None = None) -> int:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        raise ValueError("rank of an empty matrix")
    rtol = _default_rtol(m.shape) if tol is None else tol
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s >= rtol * s[0]))


def singular_values(m: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.atleast_2d(m), compute_uv=False)


def sigma_min(m: np.ndarray) -> float:
    """Smallest of the min(rows, cols) singular values."""
    return float(singular_values(m)[-1])


def sigma_max(m: np.ndarray) -> float:
    return float(singular_values(m)[0])


def expm(m: np.ndarray) -> np.ndarray:
    """Matrix exponential (scaling and squaring with a Pade approximant)."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"expm needs a square matrix, got {m.shape}")
    return scipy.linalg.expm(m)


# -- distributions ---------------------------------------------------------

def chi2_cdf(x: float, k: float) -> float:
    if x <= 0:
        return 0.0
    return float(special.gammainc(k / 2.0, x / 2.0))


def chi2_sf(x: float, k: float) -> float:
    if x <= 0:
        return 1.0
    return float(special.gammaincc(k / 2.0, x / 2.0))


def chi2_ppf(p: float, k: float) -> float:
    return float(2.0 * special.gammaincinv(k / 2.0, p))


def f_cdf(x: float, d1: float, d2: float) -> float:
    if x <= 0:
        return 0.0
    return float(special.betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))


def f_sf(x: float, d1: float, d2: float) -> float:
    if x <= 0:
        return 1.0
    # complementary form keeps precision in the far upper tail
    return float(special.betainc(d2 / 2.0, d1 / 2.0, d2 / (d1 * x + d2)))


def f_ppf(p: float, d1: float, d2: float) -> float:
    b = special.betaincinv(d1 / 2.0, d2 / 2.0, p)
    if b >= 1.0:
        return float("inf")
    return float(d2 * b / (d1 * (1.0 - b)))


def normal_cdf(x):
    return special.ndtr(x)


def kolmogorov_sf(x: float) -> float:
    """Upper tail of the limiting Kolmogorov distribution."""
    return float(special.kolmogorov(x))


@dataclass(frozen=True)
class WeightedChiSquare:
    """Law of ``sum_i weights[i] * chi2(dof)`` with independent terms."""

    weights: tuple[float, ...]
    dof: int

    def __post_init__(self):
        w = tuple(float(v) for v in np.atleast_1d(self.weights))
        if not w or min(w) <= 0:
            raise ValueError("weights must be a nonempty list of positive reals")
        if int(self.dof) < 1:
            raise ValueError("dof must be >= 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dof", int(self.dof))

    @property
    def mean(self) -> float:
        return self.dof * sum(self.weights)


@lru_cache(maxsize=32)
def _weighted_chi2_draws(weights: tuple[float, ...], dof: int, mc_draws: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    total = np.zeros(mc_draws)
    for w in weights:
        total += w * rng.chisquare(dof, size=mc_draws)
    total.sort()
    total.setflags(write=False)
    return total


def weighted_chi2_draws(d: WeightedChiSquare, mc_draws: int = 200_000, seed: int = 0) -> np.ndarray:
    """Sorted, read-only Monte Carlo sample of ``d`` (cached per argument set)."""
    return _weighted_chi2_draws(d.weights, d.dof, int(mc_draws), int(seed))


def weighted_chi2_quantile(d: WeightedChiSquare, p: float, mc_draws: int = 200_000, seed: int = 0) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return float(np.quantile(weighted_chi2_draws(d, mc_draws, seed), p))


def weighted_chi2_cdf(d: WeightedChiSquare, x: float, mc_draws: int = 200_000, seed: int = 0) -> float:
    draws = weighted_chi2_draws(d, mc_draws, seed)
    return float(np.searchsorted(draws, x, side="right") / draws.size)


# -- random signals --------------------------------------------------------

def _psd_factor(cov: np.ndarray) -> np.ndarray:
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise ValueError("covariance must be square")
    if not np.allclose(cov, cov.T, atol=1e-12 * (1.0 + np.abs(cov).max())):
        raise ValueError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(cov)
    scale = max(1.0, float(np.abs(evals).max()))
    if evals.min() < -1e-10 * scale:
        raise ValueError("covariance is not positive semidefinite")
    return evecs * np.sqrt(np.clip(evals, 0.0, None))


def is_psd(cov: np.ndarray) -> bool:
    try:
        _psd_factor(cov)
    except ValueError:
        return False
    return True


def rng_gaussian(n_samples: int, cov: np.ndarray, seed: Seed = None) -> np.ndarray:
    """``dim x n_samples`` matrix whose columns are iid N(0, cov)."""
    factor = _psd_factor(cov)
    z = as_rng(seed).standard_normal((factor.shape[1], n_samples))
    return factor @ z


def rng_uniform(shape: tuple[int, int], bounds: tuple[float, float] = (-1.0, 1.0), seed: Seed = None) -> np.ndarray:
    lo, hi = bounds
    if hi < lo:
        raise ValueError("bounds must satisfy lo <= hi")
    return as_rng(seed).uniform(lo, hi, size=shape)
