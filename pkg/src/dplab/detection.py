"""Defender-side statistical tests on a (possibly poisoned) dataset."""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .lti_sim import Dataset, LtiSystem
from .numerics import (
    WeightedChiSquare,
    chi2_cdf,
    chi2_sf,
    f_sf,
    is_psd,
    kolmogorov_sf,
    normal_cdf,
    pinv,
    weighted_chi2_cdf,
    weighted_chi2_quantile,
)
from .regression import LsFit, ls_fit

# relative reciprocal condition below which C_0 is regularized
C0_RCOND = 1e-12


@dataclass
class TestOutcome:
    name: str
    statistic: float
    null_params: dict
    p_value: float
    reject: bool
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "statistic": _num(self.statistic),
            "p_value": _num(self.p_value),
            "reject": bool(self.reject),
            "alarm": alarm(self),
            "null_params": self.null_params,
            "detail": self.detail,
        }


def _num(x):
    x = float(x)
    return None if not np.isfinite(x) else x


def _two_tail(cdf_value: float) -> float:
    return float(min(1.0, 2.0 * min(cdf_value, 1.0 - cdf_value)))


# -- residual variance -------------------------------------------------------

def residual_variance_test(fit: LsFit, sigma_w: np.ndarray | None = None, alpha: float = 0.05,
                           mc_seed: int = 0, mc_draws: int = 200_000,
                           eig_interval: tuple[np.ndarray, np.ndarray] | None = None) -> TestOutcome:
    """Two-tail test of ``||R||_F^2`` against ``sum_i lambda_i chi2(T-n-m)``.

    ``lambda_i`` are the eigenvalues of ``sigma_w``. With ``eig_interval=(lo, hi)``
    the acceptance region is the union over the interval: lower quantile under
    ``lo``, upper quantile under ``hi``.
    """
    dof = fit.T - fit.n - fit.m
    if dof <= 0:
        raise ValueError(f"T={fit.T} leaves no residual degrees of freedom")
    if eig_interval is None:
        if sigma_w is None:
            raise ValueError("residual variance test needs sigma_w or an eigenvalue interval")
        sigma_w = np.atleast_2d(sigma_w)
        if not is_psd(sigma_w):
            raise ValueError("sigma_w is not positive semidefinite")
        lam = np.clip(np.linalg.eigvalsh(sigma_w), 0.0, None)
        lo_w = hi_w = lam[lam > 0]
    else:
        lo_w = np.atleast_1d(np.asarray(eig_interval[0], dtype=float))
        hi_w = np.atleast_1d(np.asarray(eig_interval[1], dtype=float))
    if lo_w.size == 0 or np.any(lo_w <= 0) or np.any(hi_w < lo_w):
        raise ValueError("noise covariance eigenvalues must be positive")
    d_lo = WeightedChiSquare(tuple(lo_w), dof)
    d_hi = WeightedChiSquare(tuple(hi_w), dof)
    q_lo = weighted_chi2_quantile(d_lo, alpha / 2, mc_draws, mc_seed)
    q_hi = weighted_chi2_quantile(d_hi, 1 - alpha / 2, mc_draws, mc_seed)
    stat = fit.mse
    p = min(1.0, 2.0 * min(weighted_chi2_cdf(d_lo, stat, mc_draws, mc_seed),
                           1.0 - weighted_chi2_cdf(d_hi, stat, mc_draws, mc_seed)))
    return TestOutcome(
        "residual_variance",
        stat,
        {"dist": "weighted_chi2", "weights": list(d_lo.weights), "weights_hi": list(d_hi.weights),
         "dof": dof, "mc_draws": mc_draws, "mc_seed": mc_seed},
        p,
        not (q_lo <= stat <= q_hi),
        {"acceptance": [q_lo, q_hi]},
    )


def oblivious_variance_shift(sys: LtiSystem, cov_dx: np.ndarray, cov_du: np.ndarray, T: int) -> float:
    """Expected growth of ``||R||_F^2`` under iid Gaussian poisoning of states and inputs."""
    cov_dx = np.atleast_2d(cov_dx)
    cov_du = np.atleast_2d(cov_du)
    if not (is_psd(cov_dx) and is_psd(cov_du)):
        raise ValueError("poisoning covariances must be positive semidefinite")
    A, B = sys.A, sys.B
    return float((T - sys.n - sys.m) * np.trace(cov_dx + A @ cov_dx @ A.T + B @ cov_du @ B.T))


# -- partial F-test ----------------------------------------------------------

def partial_f_statistic(d: Dataset) -> tuple[float, int, int]:
    """Nested-model statistic for "the input block has no explanatory power".

    Returns ``(Z, nm, T - n(n+m) - 1)``.
    """
    n, m, T = d.n, d.m, d.T
    dof2 = T - n * (n + m) - 1
    if dof2 <= 0:
        raise ValueError(f"T={T} too small for the partial F-test (need T > n(n+m)+1)")
    Xp, Xm = d.X_plus, d.X_minus
    R1 = Xp - (Xp @ pinv(Xm)) @ Xm
    Psi = d.Psi_minus
    R2 = Xp - (Xp @ pinv(Psi)) @ Psi
    rss1, rss2 = float(np.sum(R1 * R1)), float(np.sum(R2 * R2))
    if rss2 == 0.0:
        return float("inf"), n * m, dof2
    z = (rss1 - rss2) / ((n * m / dof2) * rss2)
    return float(z), n * m, dof2


def partial_f_test(d: Dataset, alpha: float = 0.05) -> TestOutcome:
    """Rejecting means the input explains the states; *not* rejecting hints at input poisoning."""
    z, d1, d2 = partial_f_statistic(d)
    p = f_sf(z, d1, d2) if np.isfinite(z) else 0.0
    return TestOutcome("partial_f", z, {"dist": "F", "dof": [d1, d2]}, p, p < alpha)


# -- residual correlations ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class CorrelationSet:
    C: tuple[np.ndarray, ...]
    T: int

    @property
    def s(self) -> int:
        return len(self.C) - 1

    @property
    def n(self) -> int:
        return self.C[0].shape[0]


def correlations(R: np.ndarray, s: int) -> CorrelationSet:
    """Sample correlations ``C_tau = (1/T) sum_t R_t R_{t+tau}'`` for tau = 0..s."""
    R = np.atleast_2d(R)
    T = R.shape[1]
    if not 0 <= s < T:
        raise ValueError(f"need 0 <= s < T, got s={s}, T={T}")
    C = tuple(R[:, : T - tau] @ R[:, tau:].T / T for tau in range(s + 1))
    return CorrelationSet(C, T)


def c0_inverse(C0: np.ndarray) -> tuple[np.ndarray, bool]:
    """Inverse of ``C_0``; near-singular input is ridge-regularized and flagged."""
    n = C0.shape[0]
    tr = float(np.trace(C0))
    if tr <= 0.0:
        raise ValueError("C_0 is singular (zero residuals)")
    evals = np.linalg.eigvalsh(C0)
    if evals.min() <= C0_RCOND * evals.max():
        return np.linalg.inv(C0 + 1e-10 * tr / n * np.eye(n)), True
    return np.linalg.inv(C0), False


def normalized_lag_energy(cs: CorrelationSet, tau: int) -> float:
    """``||C_tau C_0^{-1}||_F^2``."""
    inv, _ = c0_inverse(cs.C[0])
    K = cs.C[tau] @ inv
    return float(np.sum(K * K))


def lag_correlation_test(cs: CorrelationSet, tau: int = 1, alpha: float = 0.05) -> TestOutcome:
    if not 1 <= tau <= cs.s:
        raise ValueError(f"tau must lie in 1..{cs.s}")
    inv, flagged = c0_inverse(cs.C[0])
    K = cs.C[tau] @ inv
    stat = cs.T * float(np.sum(K * K))
    k = cs.n ** 2
    p = chi2_sf(stat, k)
    return TestOutcome(f"lag_correlation[{tau}]", stat, {"dist": "chi2", "dof": k}, p, p < alpha,
                       {"tau": tau, "c0_regularized": flagged})


def portmanteau_test(cs: CorrelationSet, s: int | None = None, alpha: float = 0.05) -> TestOutcome:
    """``T sum_{tau=1..s} ||C_tau C_0^{-1}||_F^2`` against chi2(n^2 s)."""
    s = cs.s if s is None else s
    if not 1 <= s <= cs.s:
        raise ValueError(f"s must lie in 1..{cs.s}")
    inv, flagged = c0_inverse(cs.C[0])
    stat = 0.0
    for tau in range(1, s + 1):
        K = cs.C[tau] @ inv
        stat += float(np.sum(K * K))
    stat *= cs.T
    k = cs.n ** 2 * s
    p = chi2_sf(stat, k)
    return TestOutcome("portmanteau", stat, {"dist": "chi2", "dof": k}, p, p < alpha,
                       {"s": s, "c0_regularized": flagged})


# -- input distribution checks -----------------------------------------------

def input_norm_test(U: np.ndarray, alpha: float = 0.05) -> TestOutcome:
    """Two-tail chi2(Tm) test on ``||U||_F^2``; valid for a nominal N(0, I_m) input."""
    U = np.atleast_2d(U)
    k = U.size
    stat = float(np.sum(U * U))
    p = _two_tail(chi2_cdf(stat, k))
    return TestOutcome("input_norm", stat, {"dist": "chi2", "dof": k}, p, p < alpha)


def ks_one_sample_test(samples: np.ndarray, cdf: Callable = normal_cdf, alpha: float = 0.05) -> TestOutcome:
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    N = x.size
    if N < 10:
        raise ValueError("KS test needs at least 10 samples")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, N + 1)
    stat = float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))
    p = kolmogorov_sf(np.sqrt(N) * stat)
    return TestOutcome("ks", stat, {"dist": "kolmogorov", "n": N}, p, p < alpha)


def ks_input_test(U: np.ndarray, cdf: Callable = normal_cdf, alpha: float = 0.05) -> TestOutcome:
    """Per-coordinate KS tests with a Bonferroni correction across input channels."""
    U = np.atleast_2d(U)
    per = [ks_one_sample_test(row, cdf, alpha) for row in U]
    p = min(1.0, U.shape[0] * min(o.p_value for o in per))
    stat = max(o.statistic for o in per)
    return TestOutcome("ks_input", stat, {"dist": "kolmogorov", "n": U.shape[1], "channels": U.shape[0]},
                       p, p < alpha, {"per_channel_p": [o.p_value for o in per]})


# -- leverage ------------------------------------------------------------------

def leverage_outliers(fit: LsFit, threshold_multiplier: float = 2.0) -> list[int]:
    cut = threshold_multiplier * (fit.n + fit.m) / fit.T
    return [int(t) for t in np.flatnonzero(fit.leverage > cut)]


def two_proportion_test(k1: int, n1: int, k2: int, n2: int) -> float:
    """Two-sided pooled z-test p-value for equal proportions."""
    pooled = (k1 + k2) / (n1 + n2)
    if pooled in (0.0, 1.0):
        return 1.0
    se = np.sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2))
    z = (k1 / n1 - k2 / n2) / se
    return float(2.0 * (1.0 - normal_cdf(abs(z))))


# -- suite ---------------------------------------------------------------------

ALL_TESTS = ("residual_variance", "partial_f", "lag_correlation", "portmanteau", "input_norm",
             "ks_input", "leverage")


@dataclass
class SuiteConfig:
    tests: tuple[str, ...] = ALL_TESTS
    alpha: float = 0.05
    sigma_w: np.ndarray | None = None
    s: int = 10
    taus: tuple[int, ...] = (1,)
    mc_seed: int = 0
    mc_draws: int = 200_000
    leverage_multiplier: float = 2.0

    @classmethod
    def from_json(cls, doc: dict) -> "SuiteConfig":
        unknown = set(doc) - {"tests", "alpha", "sigma_w", "s", "taus", "mc_seed", "mc_draws",
                              "leverage_multiplier"}
        if unknown:
            raise ValueError(f"unknown detection config keys: {sorted(unknown)}")
        kw = dict(doc)
        if "tests" in kw:
            kw["tests"] = tuple(kw["tests"])
            bad = set(kw["tests"]) - set(ALL_TESTS)
            if bad:
                raise ValueError(f"unknown tests: {sorted(bad)}")
        if "taus" in kw:
            kw["taus"] = tuple(int(t) for t in kw["taus"])
        if kw.get("sigma_w") is not None:
            kw["sigma_w"] = np.atleast_2d(np.array(kw["sigma_w"], dtype=float))
        return cls(**kw)


def run_suite(d: Dataset, config: SuiteConfig) -> list[TestOutcome]:
    """Run every configured test; a failing test yields an error entry instead of raising."""
    report: list[TestOutcome] = []
    if not config.tests:
        return report
    fit = None
    cs = None

    def get_fit():
        nonlocal fit
        if fit is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fit = ls_fit(d)
        return fit

    def get_cs():
        nonlocal cs
        if cs is None:
            cs = correlations(get_fit().R, max([config.s, *config.taus]))
        return cs

    a = config.alpha
    runners: dict[str, Callable[[], list[TestOutcome]]] = {
        "residual_variance": lambda: [residual_variance_test(get_fit(), config.sigma_w, a, config.mc_seed,
                                                             config.mc_draws)],
        "partial_f": lambda: [partial_f_test(d, a)],
        "lag_correlation": lambda: [lag_correlation_test(get_cs(), tau, a) for tau in config.taus],
        "portmanteau": lambda: [portmanteau_test(get_cs(), config.s, a)],
        "input_norm": lambda: [input_norm_test(d.U, a)],
        "ks_input": lambda: [ks_input_test(d.U, alpha=a)],
        "leverage": lambda: [_leverage_outcome(get_fit(), config.leverage_multiplier)],
    }
    for name in config.tests:
        try:
            report.extend(runners[name]())
        except Exception as exc:  # reported per entry by contract
            report.append(TestOutcome(name, float("nan"), {}, float("nan"), False, {"error": str(exc)}))
    return report


def _leverage_outcome(fit: LsFit, multiplier: float) -> TestOutcome:
    idx = leverage_outliers(fit, multiplier)
    # descriptive only: there is no reference law for the count
    return TestOutcome("leverage", float(len(idx)), {"dist": "descriptive", "multiplier": multiplier},
                       1.0, False, {"outliers": idx, "fraction": len(idx) / fit.T})


def any_rejected(report: list[TestOutcome]) -> bool:
    return any(o.reject for o in report)


def alarm(o: TestOutcome) -> bool:
    """Does the outcome point at poisoning?

    For the partial F-test that is the *failure* to reject (the input no longer
    explains the states); errored entries never raise an alarm.
    """
    if "error" in o.detail:
        return False
    return (not o.reject) if o.name == "partial_f" else o.reject


def any_alarm(report: list[TestOutcome]) -> bool:
    return any(alarm(o) for o in report)


def report_to_json(report: list[TestOutcome]) -> list[dict]:
    return [o.to_json() for o in report]


def write_report(report: list[TestOutcome], json_path: str | Path, csv_path: str | Path | None = None) -> None:
    json_path = Path(json_path)
    json_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = json_path.with_suffix(".tmp")
    tmp.write_text(json.dumps(report_to_json(report), indent=1))
    tmp.replace(json_path)
    if csv_path is not None:
        csv_path = Path(csv_path)
        tmp = csv_path.with_suffix(".tmp")
        with tmp.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "statistic", "p_value", "reject", "alarm", "error"])
            for o in report:
                w.writerow([o.name, repr(float(o.statistic)), repr(float(o.p_value)), int(o.reject),
                            int(alarm(o)), o.detail.get("error", "")])
        tmp.replace(csv_path)
