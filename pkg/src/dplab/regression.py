"""Least-squares identification of (A, B) and the identities/bounds around it."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .lti_sim import Dataset, LtiSystem, check_rank_condition
from .numerics import f_ppf, numerical_rank, pinv, sigma_max, sigma_min

# relative slack used when flagging violated inequalities
SLACK = 1e-8


class RankDeficientWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class LsFit:
    A_hat: np.ndarray
    B_hat: np.ndarray
    R: np.ndarray
    leverage: np.ndarray
    mse: float
    Psi: np.ndarray
    Psi_pinv: np.ndarray
    rank_ok: bool

    @property
    def n(self) -> int:
        return self.A_hat.shape[0]

    @property
    def m(self) -> int:
        return self.B_hat.shape[1]

    @property
    def T(self) -> int:
        return self.R.shape[1]

    @property
    def theta(self) -> np.ndarray:
        return np.hstack([self.A_hat, self.B_hat])

    @property
    def M(self) -> np.ndarray:
        """T x T projection onto the row space of the regressor (built on demand)."""
        return self.Psi_pinv @ self.Psi

    def to_json(self) -> dict:
        return {
            "A_hat": self.A_hat.tolist(),
            "B_hat": self.B_hat.tolist(),
            "mse": self.mse,
            "leverage": self.leverage.tolist(),
            "rank_ok": self.rank_ok,
        }


@dataclass(frozen=True, eq=False)
class FitDelta:
    dA: np.ndarray
    dB: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.dA, self.dB])

    @property
    def theta_norm(self) -> float:
        return float(np.linalg.norm(self.matrix))

    @property
    def spectral_norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def ls_fit(d: Dataset, tol: float | None = None) -> LsFit:
    """Fit ``[A_hat B_hat] = X_plus pinv(Psi_minus)``.

    A rank-deficient regressor gives the minimum-norm solution and
    ``rank_ok=False`` (with a warning) instead of an error.
    """
    if d.T == 0:
        raise ValueError("empty dataset")
    Psi = d.Psi_minus
    P = pinv(Psi, tol)
    theta = d.X_plus @ P
    R = d.X_plus - theta @ Psi
    rank_ok = check_rank_condition(d, tol)
    if not rank_ok:
        warnings.warn(
            f"regressor rank {numerical_rank(Psi, tol)} < n+m={d.n + d.m}; "
            "using the minimum-norm least-squares solution",
            RankDeficientWarning,
            stacklevel=2,
        )
    return LsFit(
        A_hat=theta[:, : d.n],
        B_hat=theta[:, d.n:],
        R=R,
        leverage=np.einsum("ti,it->t", P, Psi),
        mse=float(np.sum(R * R)),
        Psi=Psi,
        Psi_pinv=P,
        rank_ok=rank_ok,
    )


def ls_error(fit: LsFit, sys: LtiSystem) -> FitDelta:
    if fit.A_hat.shape != sys.A.shape or fit.B_hat.shape != sys.B.shape:
        raise ValueError("fit and system dimensions differ")
    return FitDelta(fit.A_hat - sys.A, fit.B_hat - sys.B)


def poisoned_noise(sys: LtiSystem, delta, W_minus: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray | None]:
    """Noise shift ``dW = dX_plus - A dX_minus - B dU`` and, given ``W_minus``, ``W + dW``.

    ``delta`` is anything with ``dU`` (m x T) and ``dX`` (n x T+1) arrays,
    normally a :class:`dplab.attacks.PoisonDelta`.
    """
    dU = np.atleast_2d(delta.dU)
    dX = np.atleast_2d(delta.dX)
    if dX.shape != (sys.n, dU.shape[1] + 1) or dU.shape[0] != sys.m:
        raise ValueError(f"delta shapes dU {dU.shape}, dX {dX.shape} do not match the system")
    dW = dX[:, 1:] - sys.A @ dX[:, :-1] - sys.B @ dU
    return dW, (None if W_minus is None else W_minus + dW)


@dataclass(frozen=True)
class BoundCheck:
    lower: float
    upper: float
    value: float

    @property
    def holds(self) -> bool:
        scale = 1.0 + abs(self.value)
        return self.lower - SLACK * scale <= self.value <= self.upper + SLACK * scale


def error_sandwich_bounds(fit_poisoned: LsFit, sys: LtiSystem, W_minus: np.ndarray, dW: np.ndarray) -> BoundCheck:
    """Both sides of the singular-value sandwich on ``||Psi~||_F ||dtheta||_2``."""
    value = np.linalg.norm(fit_poisoned.Psi) * ls_error(fit_poisoned, sys).theta_norm
    lower = sigma_min(W_minus) + sigma_min(dW)
    upper = sigma_max(W_minus) + sigma_max(dW)
    return BoundCheck(float(lower), float(upper), float(value))


def residual_identity_check(d_poisoned: Dataset, sys: LtiSystem, W_tilde_star: np.ndarray) -> float:
    """``||R~ - W~*(I - M~)||_F`` for the poisoned fit."""
    fit = ls_fit(d_poisoned)
    return float(np.linalg.norm(fit.R - (W_tilde_star - W_tilde_star @ fit.M)))


@dataclass(frozen=True)
class SensitivityCheck:
    ratio: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.ratio <= self.bound + SLACK * (1.0 + self.bound)


def sensitivity_bound(d_clean: Dataset, d_poisoned: Dataset) -> SensitivityCheck:
    fit = ls_fit(d_clean)
    fit_p = ls_fit(d_poisoned)
    r_norm = np.linalg.norm(fit.R)
    if r_norm == 0:
        raise ValueError("clean residuals are zero; the sensitivity ratio is undefined")
    ratio = np.linalg.norm(fit_p.R - fit.R) / r_norm
    dPsi = d_poisoned.Psi_minus - d_clean.Psi_minus
    bound = np.linalg.norm(dPsi, 2) / np.linalg.norm(d_poisoned.Psi_minus)
    return SensitivityCheck(float(ratio), float(bound))


@dataclass(frozen=True, eq=False)
class EllipseParams:
    """``{theta : (theta - center)' shape (theta - center) <= radius2}`` over vec([A B])."""

    center: np.ndarray
    shape: np.ndarray
    radius2: float
    dof: tuple[int, int]
    sigma2_hat: float

    def contains(self, theta: np.ndarray) -> bool:
        e = np.asarray(theta, dtype=float).reshape(-1, order="F") - self.center
        return float(e @ self.shape @ e) <= self.radius2

    def volume(self) -> float:
        k = self.center.size
        from math import gamma, pi

        unit = pi ** (k / 2) / gamma(k / 2 + 1)
        return float(unit * self.radius2 ** (k / 2) / np.sqrt(np.linalg.det(self.shape)))


def residual_variance_estimate(fit: LsFit) -> float:
    dof = fit.n * (fit.T - fit.n - fit.m)
    if dof <= 0:
        raise ValueError("not enough samples to estimate the residual variance")
    return fit.mse / dof


def confidence_ellipse(fit: LsFit, alpha: float = 0.05) -> EllipseParams:
    """F-based confidence region for ``vec([A B])`` (column-major)."""
    s2 = residual_variance_estimate(fit)
    if s2 <= 0:
        raise ValueError("zero residual variance; the confidence region is degenerate")
    n, m, T = fit.n, fit.m, fit.T
    shape = np.kron(fit.Psi @ fit.Psi.T, np.eye(n)) / s2
    if numerical_rank(shape) < shape.shape[0]:
        raise ValueError("degenerate shape matrix")
    d1, d2 = n * (n + m), T - n - m
    radius2 = d1 * f_ppf(1.0 - alpha, d1, d2)
    return EllipseParams(fit.theta.reshape(-1, order="F"), shape, radius2, (d1, d2), s2)
