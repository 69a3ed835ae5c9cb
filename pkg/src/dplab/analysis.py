"""Attacker-side and forensic diagnostics on top of an LS fit.

Directions live in ``R^{n(n+m)}`` with ``vec`` taken column-major, so
``V.reshape(-1, order="F")`` and ``v.reshape(n, n+m, order="F")`` are inverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lti_sim import Dataset, LtiSystem
from .numerics import numerical_rank, pinv, singular_values
from .regression import ls_fit


def compatible_membership(sys: LtiSystem, W_tilde_star: np.ndarray, atol: float = 0.0) -> bool:
    """True iff every column of ``W_tilde_star`` lies in the disturbance set of ``sys``.

    Equivalently, ``(A, B)`` of ``sys`` is a model compatible with the poisoned data.
    """
    return bool(np.all(sys.disturbance.contains(np.atleast_2d(W_tilde_star), atol=atol)))


def _vec(M: np.ndarray) -> np.ndarray:
    return np.asarray(M, dtype=float).reshape(-1, order="F")


def _unvec(v: np.ndarray, n: int) -> np.ndarray:
    return v.reshape(n, -1, order="F")


def completed_basis(v1: np.ndarray) -> np.ndarray:
    """Orthonormal basis (as columns) whose first column is ``v1 / |v1|``.

    The standard basis vector with the largest overlap with ``v1`` is dropped and
    the rest are Gram-Schmidt orthogonalized against ``v1`` in index order.
    """
    v1 = np.asarray(v1, dtype=float).ravel()
    nrm = np.linalg.norm(v1)
    if nrm == 0.0:
        raise ValueError("cannot anchor a basis on the zero vector")
    N = v1.size
    drop = int(np.argmax(np.abs(v1)))
    Q = np.zeros((N, N))
    Q[:, 0] = v1 / nrm
    k = 1
    for j in range(N):
        if j == drop:
            continue
        q = np.zeros(N)
        q[j] = 1.0
        # two passes keep the basis orthonormal to working precision
        for _ in range(2):
            q -= Q[:, :k] @ (Q[:, :k].T @ q)
        Q[:, k] = q / np.linalg.norm(q)
        k += 1
    return Q


@dataclass(frozen=True, eq=False)
class DirectionalErrorReport:
    k: int
    v_k: np.ndarray
    V_k: np.ndarray
    projection: float
    lower_bound: float
    angle: float
    exploration: float

    @property
    def holds(self) -> bool:
        return self.projection >= self.lower_bound - 1e-8 * (1.0 + abs(self.lower_bound))

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "v_k": self.v_k.tolist(),
            "projection": self.projection,
            "lower_bound": self.lower_bound,
            "angle": self.angle,
            "exploration": self.exploration,
        }


def _sigma_n(M: np.ndarray) -> float:
    """n-th singular value of an n x T matrix (0 if it has fewer columns)."""
    s = singular_values(M)
    return float(s[M.shape[0] - 1]) if s.size >= M.shape[0] else 0.0


def directional_error(d_clean: Dataset, d_poisoned: Dataset, sys: LtiSystem,
                      W_tilde_star: np.ndarray | None = None) -> list[DirectionalErrorReport]:
    """Projection of the poisoned estimation error on each basis direction and its lower bound.

    ``W`` is recovered from the clean data as ``X_plus - A X_minus - B U`` and
    ``W_tilde_star`` defaults to the same expression on the poisoned data, so
    ``dW = W_tilde_star - W``. The basis starts at the clean estimate direction.
    """
    n = sys.n
    fit_c = ls_fit(d_clean)
    theta = _vec(fit_c.theta)
    if np.linalg.norm(theta) == 0.0:
        raise ValueError("clean estimate is zero; the first direction is undefined")
    W = d_clean.X_plus - sys.A @ d_clean.X_minus - sys.B @ d_clean.U
    if W_tilde_star is None:
        W_tilde_star = d_poisoned.X_plus - sys.A @ d_poisoned.X_minus - sys.B @ d_poisoned.U
    dW = W_tilde_star - W
    fit_p = ls_fit(d_poisoned)
    err = _vec(fit_p.theta - sys.theta)
    floor = _sigma_n(W) + _sigma_n(dW)
    w = _vec(W_tilde_star)
    w_norm = np.linalg.norm(w)
    out = []
    for k, v in enumerate(completed_basis(theta).T, start=1):
        V = _unvec(v, n)
        vp = _vec(V @ fit_p.Psi)
        expl = float(np.linalg.norm(vp))
        if expl == 0.0 or w_norm == 0.0:
            cos, angle = 0.0, float(np.pi / 2)
        else:
            cos = float(np.clip(vp @ w / (expl * w_norm), -1.0, 1.0))
            angle = float(np.arccos(cos))
        bound = abs(cos) * floor / expl if expl > 0 else 0.0
        out.append(DirectionalErrorReport(k, v, V, float(abs(v @ err)), float(bound), angle, expl))
    return out


def alignment_angle(theta: np.ndarray, shift: np.ndarray) -> float:
    """Unsigned angle in [0, pi/2] between two parameter matrices (as vectors)."""
    a, b = _vec(theta), _vec(shift)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("angle with a zero vector is undefined")
    return float(np.arccos(np.clip(abs(a @ b) / (na * nb), 0.0, 1.0)))


def _full_rank(M: np.ndarray, what: str) -> np.ndarray:
    if numerical_rank(M) < M.shape[0]:
        raise ValueError(f"{what} is rank deficient ({numerical_rank(M)} < {M.shape[0]})")
    return pinv(M)


def input_attack_shift(d: Dataset, sys_est: tuple[np.ndarray, np.ndarray], dU: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``[dA dB] = -B dU pinv([X_minus; U + dU])`` for an input-only attack on noise-free data."""
    _, B = sys_est
    dU = np.atleast_2d(np.asarray(dU, dtype=float))
    P = _full_rank(np.vstack([d.X_minus, d.U + dU]), "[X_minus; U~]")
    shift = -B @ dU @ P
    return shift[:, : d.n], shift[:, d.n:]


def state_attack_shift(d: Dataset, sys_est: tuple[np.ndarray, np.ndarray], dX: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``[dA dB] = (dX_plus - A dX_minus) pinv([X_minus + dX_minus; U])`` for a state-only attack."""
    A, _ = sys_est
    dX = np.atleast_2d(np.asarray(dX, dtype=float))
    P = _full_rank(np.vstack([d.X_minus + dX[:, :-1], d.U]), "[X~_minus; U]")
    shift = (dX[:, 1:] - A @ dX[:, :-1]) @ P
    return shift[:, : d.n], shift[:, d.n:]
