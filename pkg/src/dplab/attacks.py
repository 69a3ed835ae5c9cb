"""Poisoning attacks on a recorded trajectory.

Four families: oblivious random noise, the indistinguishable input swap,
the residual-energy (MSE) maximizer solved by a convex-concave procedure,
and the stealthy attack that maximizes the spectral norm of the LS shift
while bounding the relative change of every detection statistic.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .detection import c0_inverse
from .lti_sim import Dataset, gaussian_input
from .numerics import Seed, as_rng, pinv, rng_uniform

FEAS_TOL = 1e-6
TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class PoisonDelta:
    dU: np.ndarray
    dX: np.ndarray

    def __post_init__(self):
        dU = np.atleast_2d(np.asarray(self.dU, dtype=float))
        dX = np.atleast_2d(np.asarray(self.dX, dtype=float))
        if dX.shape[1] != dU.shape[1] + 1:
            raise ValueError(f"dX needs T+1 columns: dU {dU.shape}, dX {dX.shape}")
        object.__setattr__(self, "dU", dU)
        object.__setattr__(self, "dX", dX)

    @classmethod
    def zeros(cls, d: Dataset) -> "PoisonDelta":
        return cls(np.zeros_like(d.U), np.zeros_like(d.X))

    @property
    def dX_minus(self) -> np.ndarray:
        return self.dX[:, :-1]

    @property
    def dX_plus(self) -> np.ndarray:
        return self.dX[:, 1:]

    def check(self, d: Dataset) -> None:
        if self.dU.shape != d.U.shape or self.dX.shape != d.X.shape:
            raise ValueError(f"delta shapes {self.dU.shape}/{self.dX.shape} do not match "
                             f"dataset {d.U.shape}/{d.X.shape}")

    def apply(self, d: Dataset) -> Dataset:
        self.check(d)
        return Dataset(d.U + self.dU, d.X + self.dX)

    def scaled(self, c: float) -> "PoisonDelta":
        return PoisonDelta(c * self.dU, c * self.dX)


@dataclass(frozen=True)
class BudgetSpec:
    delta_x: float
    delta_u: float

    def __post_init__(self):
        if self.delta_x < 0 or self.delta_u < 0:
            raise ValueError("budgets must be nonnegative")

    @classmethod
    def uniform(cls, delta: float) -> "BudgetSpec":
        return cls(delta, delta)

    def radii(self, d: Dataset) -> tuple[float, float]:
        return self.delta_x * np.linalg.norm(d.X), self.delta_u * np.linalg.norm(d.U)


@dataclass(frozen=True)
class StealthyConstraintSpec:
    """Thresholds for g_0 .. g_{3+s}: state norm, input norm, residual energy,
    partial-F statistic and the ``s`` normalized lag correlations."""

    deltas: tuple[float, ...]
    s: int

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(x) for x in self.deltas))
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if len(self.deltas) != self.s + 4:
            raise ValueError(f"need {self.s + 4} thresholds for s={self.s}, got {len(self.deltas)}")
        if min(self.deltas) < 0:
            raise ValueError("thresholds must be nonnegative")

    @classmethod
    def uniform(cls, delta: float, s: int) -> "StealthyConstraintSpec":
        return cls((delta,) * (s + 4), s)


@dataclass
class AttackResult:
    delta: PoisonDelta
    objective_trace: list[float]
    constraint_values: list[float]
    converged: bool
    iterations: int
    seed: int | None = None
    flags: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "dU": self.delta.dU.tolist(),
            "dX": self.delta.dX.tolist(),
            "objective_trace": [float(v) for v in self.objective_trace],
            "constraints": [None if not np.isfinite(v) else float(v) for v in self.constraint_values],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "seed": self.seed,
            "flags": list(self.flags),
        }


class InfeasibleAttackError(RuntimeError):
    """No iterate satisfied every stealthiness constraint."""

    def __init__(self, message: str, best: PoisonDelta, violations: np.ndarray):
        super().__init__(message)
        self.best = best
        self.violations = violations


def _seed_value(seed: Seed) -> int | None:
    return seed if isinstance(seed, (int, np.integer)) else None


def _norm_ratios(d: Dataset, delta: PoisonDelta) -> list[float]:
    return [_ratio(np.linalg.norm(delta.dX), np.linalg.norm(d.X)),
            _ratio(np.linalg.norm(delta.dU), np.linalg.norm(d.U))]


def _ratio(num: float, den: float) -> float:
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(num / den)


# -- oblivious and indistinguishable attacks ---------------------------------

def _poisoned_mse(d: Dataset, delta: PoisonDelta) -> float:
    Xt = d.X + delta.dX
    Psi = np.vstack([Xt[:, :-1], d.U + delta.dU])
    R = Xt[:, 1:] - (Xt[:, 1:] @ pinv(Psi)) @ Psi
    return float(np.sum(R * R))


def _rescale(block: np.ndarray, radius: float) -> np.ndarray:
    nrm = np.linalg.norm(block)
    if radius == 0.0 or nrm == 0.0:
        return np.zeros_like(block)
    return block * (radius / nrm)


def oblivious_random(d: Dataset, budget: BudgetSpec, dist: str = "gaussian", n_candidates: int = 100,
                     seed: Seed = None) -> AttackResult:
    """Best of ``n_candidates`` random deltas, each rescaled onto its budget sphere.

    ``objective_trace`` holds the poisoned residual energy of every candidate in
    draw order; the returned delta is the arg-max.
    """
    if dist not in ("gaussian", "uniform"):
        raise ValueError(f"unknown distribution {dist!r}")
    rng = as_rng(seed)
    rx, ru = budget.radii(d)
    best, best_mse, trace = None, -np.inf, []
    for _ in range(max(1, n_candidates)):
        if dist == "gaussian":
            dX = rng.standard_normal(d.X.shape)
            dU = rng.standard_normal(d.U.shape)
        else:
            dX = rng_uniform(d.X.shape, (-1.0, 1.0), rng)
            dU = rng_uniform(d.U.shape, (-1.0, 1.0), rng)
        cand = PoisonDelta(_rescale(dU, ru), _rescale(dX, rx))
        mse = _poisoned_mse(d, cand)
        trace.append(mse)
        if mse > best_mse:
            best, best_mse = cand, mse
    return AttackResult(best, trace, _norm_ratios(d, best), True, len(trace), _seed_value(seed))


def indistinguishable_input(d: Dataset, sigma_u: np.ndarray | float, seed: Seed = None) -> PoisonDelta:
    """Swap the input for an independent draw from its own law: ``du_t = -u_t + a_t``."""
    a = gaussian_input(d.m, d.T, sigma_u, seed)
    return PoisonDelta(a - d.U, np.zeros_like(d.X))


# -- residual-energy maximization (convex-concave procedure) ------------------

def _mse_map(d: Dataset, A: np.ndarray, B: np.ndarray, delta: PoisonDelta) -> np.ndarray:
    return delta.dX[:, 1:] - A @ delta.dX[:, :-1] - B @ delta.dU


def mse_objective(d: Dataset, delta: PoisonDelta, A: np.ndarray, B: np.ndarray, R: np.ndarray) -> float:
    """``trace((dW + 2R) dW')`` with ``dW = dX_plus - A dX_minus - B dU``."""
    dW = _mse_map(d, A, B, delta)
    return float(np.sum((dW + 2 * R) * dW))


def _mse_gradient(d: Dataset, delta: PoisonDelta, A, B, R) -> tuple[np.ndarray, np.ndarray]:
    G = 2.0 * (_mse_map(d, A, B, delta) + R)
    gX = np.zeros_like(d.X)
    gX[:, 1:] += G
    gX[:, :-1] -= A.T @ G
    return -B.T @ G, gX


def mse_max_attack(d: Dataset, budget: BudgetSpec, max_iters: int = 200, tol: float = 1e-10,
                   n_restarts: int = 10, seed: Seed = None) -> AttackResult:
    """Maximize the attacker's residual-energy surrogate over the two Frobenius balls.

    Each step maximizes the linearization of the convex objective over the
    balls, which is solved in closed form by pushing each gradient block to
    the ball radius. The first restart starts at zero, the others at random
    boundary points; the best final objective wins.
    """
    rx, ru = budget.radii(d)
    if rx == 0.0 and ru == 0.0:
        return AttackResult(PoisonDelta.zeros(d), [0.0], [0.0, 0.0], True, 0, _seed_value(seed))
    Psi = d.Psi_minus
    theta = d.X_plus @ pinv(Psi)
    A, B = theta[:, : d.n], theta[:, d.n:]
    R = d.X_plus - theta @ Psi
    rng = as_rng(seed)

    best = None
    for k in range(max(1, n_restarts)):
        if k == 0:
            delta = PoisonDelta.zeros(d)
        else:
            delta = PoisonDelta(_rescale(rng.standard_normal(d.U.shape), ru),
                                _rescale(rng.standard_normal(d.X.shape), rx))
        trace = [mse_objective(d, delta, A, B, R)]
        converged = False
        it = 0
        for it in range(1, max_iters + 1):
            gU, gX = _mse_gradient(d, delta, A, B, R)
            delta = PoisonDelta(_rescale(gU, ru), _rescale(gX, rx))
            trace.append(mse_objective(d, delta, A, B, R))
            if trace[-1] - trace[-2] < tol * max(1.0, abs(trace[-1])):
                converged = True
                break
        if best is None or trace[-1] > best.objective_trace[-1]:
            best = AttackResult(delta, trace, _norm_ratios(d, delta), converged, it, _seed_value(seed))
    return best


# -- poisoned-data quantities and their gradients ------------------------------

class PoisonedFit:
    """LS quantities of ``d + delta`` plus adjoint maps back to ``(dU, dX)``."""

    def __init__(self, d: Dataset, delta: PoisonDelta):
        self.n, self.m, self.T = d.n, d.m, d.T
        self.X = d.X + delta.dX
        self.U = d.U + delta.dU
        self.Xm = self.X[:, :-1]
        self.Xp = self.X[:, 1:]
        self.Psi = np.vstack([self.Xm, self.U])
        self.P = pinv(self.Psi)
        self.theta = self.Xp @ self.P
        self.R = self.Xp - self.theta @ self.Psi
        self.rss = float(np.sum(self.R * self.R))

    def _assemble(self, g_xp: np.ndarray, g_psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        gX = np.zeros((self.n, self.T + 1))
        gX[:, 1:] += g_xp
        gX[:, :-1] += g_psi[: self.n]
        return g_psi[self.n:].copy(), gX

    def pull_theta(self, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of ``<G, theta~>``."""
        H = G @ np.linalg.inv(self.Psi @ self.Psi.T)
        g_xp = H @ self.Psi
        g_psi = H.T @ self.R - self.theta.T @ g_xp
        return self._assemble(g_xp, g_psi)

    def pull_residuals(self, G: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of ``<G, R~>``."""
        GI = G - (G @ self.P) @ self.Psi  # G (I - M)
        g_xp = GI
        g_psi = -(self.P.T @ G.T) @ self.R - self.theta.T @ GI
        return self._assemble(g_xp, g_psi)

    def pull_rss(self) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of ``||R~||_F^2``."""
        return self._assemble(2.0 * self.R, -2.0 * self.theta.T @ self.R)

    # restricted (state-only) fit used by the partial F statistic
    def restricted(self) -> tuple[float, np.ndarray, np.ndarray]:
        A1 = self.Xp @ pinv(self.Xm)
        R1 = self.Xp - A1 @ self.Xm
        return float(np.sum(R1 * R1)), A1, R1

    def pull_restricted_rss(self, A1: np.ndarray, R1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g_psi = np.zeros((self.n + self.m, self.T))
        g_psi[: self.n] = -2.0 * A1.T @ R1
        return self._assemble(2.0 * R1, g_psi)


def _lag_energy_and_grad(R: np.ndarray, tau: int) -> tuple[float, np.ndarray]:
    """``q = ||C_tau C_0^{-1}||_F^2`` and ``dq/dR``."""
    T = R.shape[1]
    Ra, Rb = R[:, : T - tau], R[:, tau:]
    C0 = R @ R.T / T
    Ct = Ra @ Rb.T / T
    inv, _ = c0_inverse(C0)
    K = Ct @ inv
    q = float(np.sum(K * K))
    Gt = 2.0 * K @ inv
    G0 = -2.0 * K.T @ K @ inv
    gR = (G0 + G0.T) @ R / T
    gR[:, : T - tau] += Gt @ Rb / T
    gR[:, tau:] += Gt.T @ Ra / T
    return q, gR


@dataclass(frozen=True, eq=False)
class StealthyBaseline:
    """Clean-data reference values the stealthiness constraints are relative to."""

    x_norm: float
    u_norm: float
    rss: float
    z: float
    lag_energy: tuple[float, ...]
    theta: np.ndarray
    f_dof: int
    scale: float = 1.0

    @classmethod
    def from_dataset(cls, d: Dataset, s: int) -> "StealthyBaseline":
        pf = PoisonedFit(d, PoisonDelta.zeros(d))
        f_dof = d.T - d.n * (d.n + d.m) - 1
        z = float("nan")
        if f_dof > 0:
            rss1, _, _ = pf.restricted()
            z = (rss1 - pf.rss) / ((d.n * d.m / f_dof) * pf.rss) if pf.rss > 0 else float("inf")
        lag = tuple(_lag_energy_and_grad(pf.R, tau)[0] for tau in range(1, s + 1)) if pf.rss > 0 else ()
        return cls(float(np.linalg.norm(d.X)), float(np.linalg.norm(d.U)), pf.rss, z, lag, pf.theta, f_dof,
                   float(np.sum(pf.Xp * pf.Xp)))

    def check(self, s: int) -> None:
        # residual energy at round-off level counts as zero
        if self.rss <= 1e-20 * self.scale:
            raise ValueError("g2 is undefined: clean residual energy is zero")
        if self.f_dof > 0 and not (np.isfinite(self.z) and self.z > 0):
            raise ValueError("g3 is undefined: clean partial-F statistic is not positive and finite")
        for tau, q in enumerate(self.lag_energy[:s], start=1):
            if q <= 0:
                raise ValueError(f"g{3 + tau} is undefined: clean lag-{tau} correlation energy is zero")


def constraint_values(d: Dataset, delta: PoisonDelta, s: int,
                      baseline: StealthyBaseline | None = None) -> np.ndarray:
    """``[g_0, ..., g_{3+s}]``; ``g_3`` is NaN when the F statistic is undefined."""
    return _constraints(d, delta, s, baseline, with_grad=False)[0]


def constraint_gradients(d: Dataset, delta: PoisonDelta, s: int,
                         baseline: StealthyBaseline | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Subgradients ``(d g_i / d dU, d g_i / d dX)`` for every constraint."""
    return _constraints(d, delta, s, baseline, with_grad=True)[1]


def _constraints(d, delta, s, baseline, with_grad):
    delta.check(d)
    base = baseline or StealthyBaseline.from_dataset(d, s)
    base.check(s)
    pf = PoisonedFit(d, delta)
    vals = []
    grads = []
    zero_u, zero_x = np.zeros_like(d.U), np.zeros_like(d.X)

    ndx, ndu = np.linalg.norm(delta.dX), np.linalg.norm(delta.dU)
    vals.append(_ratio(ndx, base.x_norm))
    vals.append(_ratio(ndu, base.u_norm))
    if with_grad:
        grads.append((zero_u, delta.dX / (ndx * base.x_norm) if ndx > 0 else zero_x))
        grads.append((delta.dU / (ndu * base.u_norm) if ndu > 0 else zero_u, zero_x))

    ratio = pf.rss / base.rss
    vals.append(abs(1.0 - ratio))
    if with_grad:
        gU, gX = pf.pull_rss()
        sg = -np.sign(1.0 - ratio) / base.rss
        grads.append((sg * gU, sg * gX))

    if base.f_dof > 0:
        rss1, A1, R1 = pf.restricted()
        c = d.n * d.m / base.f_dof
        z = (rss1 / pf.rss - 1.0) / c
        vals.append(abs(1.0 - z / base.z))
        if with_grad:
            g1U, g1X = pf.pull_restricted_rss(A1, R1)
            g2U, g2X = pf.pull_rss()
            # dz = (d rss1 * rss2 - rss1 * d rss2) / (c rss2^2)
            a, b = 1.0 / (c * pf.rss), -rss1 / (c * pf.rss ** 2)
            sg = -np.sign(1.0 - z / base.z) / base.z
            grads.append((sg * (a * g1U + b * g2U), sg * (a * g1X + b * g2X)))
    else:
        warnings.warn("partial-F constraint dropped: T - n(n+m) - 1 <= 0", RuntimeWarning, stacklevel=3)
        vals.append(float("nan"))
        if with_grad:
            grads.append((zero_u, zero_x))

    for tau in range(1, s + 1):
        q, gR = _lag_energy_and_grad(pf.R, tau)
        r = q / base.lag_energy[tau - 1]
        vals.append(abs(1.0 - r))
        if with_grad:
            gU, gX = pf.pull_residuals(gR)
            sg = -np.sign(1.0 - r) / base.lag_energy[tau - 1]
            grads.append((sg * gU, sg * gX))
    return np.array(vals), grads


@dataclass(frozen=True, eq=False)
class ObjectiveValue:
    value: float
    grad_dU: np.ndarray
    grad_dX: np.ndarray
    tied: bool


def objective_gradient(d: Dataset, delta: PoisonDelta, reference: np.ndarray | None = None) -> ObjectiveValue:
    """Spectral norm of the LS shift ``theta(d + delta) - reference`` and its (sub)gradient.

    ``reference`` defaults to the clean LS estimate, i.e. the attacker's own
    view of the model. A (near-)tied top singular value uses the first
    singular pair and sets ``tied``.
    """
    delta.check(d)
    pf = PoisonedFit(d, delta)
    if reference is None:
        reference = d.X_plus @ pinv(d.Psi_minus)
    shift = pf.theta - reference
    u, sv, vt = np.linalg.svd(shift)
    tied = sv.size > 1 and sv[0] - sv[1] <= TIE_TOL * max(1.0, sv[0])
    G = np.outer(u[:, 0], vt[0])
    gU, gX = pf.pull_theta(G)
    return ObjectiveValue(float(sv[0]), gU, gX, bool(tied))


# -- stealthy attack -----------------------------------------------------------

@dataclass
class StealthyOptions:
    max_iters: int = 400
    n_restarts: int = 3
    init_fraction: float = 0.1
    margin: float = 0.05
    penalty0: float | None = None
    armijo: float = 1e-4
    min_step: float = 1e-10
    structured_init: bool = True
    seed: Seed = None


def _project(delta: PoisonDelta, rx: float, ru: float) -> PoisonDelta:
    dX, dU = delta.dX, delta.dU
    nx, nu = np.linalg.norm(dX), np.linalg.norm(dU)
    if nx > rx:
        dX = dX * (rx / nx)
    if nu > ru:
        dU = dU * (ru / nu)
    return PoisonDelta(dU, dX)


class _Penalized:
    """``f - (mu/2) sum_{i>=2} max(0, (g_i - target_i) / delta_i)^2``."""

    def __init__(self, d, spec, base, reference, margin):
        self.d, self.spec, self.base, self.reference = d, spec, base, reference
        deltas = np.array(spec.deltas)
        self.target = deltas * (1.0 - margin)
        self.scale = np.where(deltas > 0, deltas, 1e-6)
        self.mu = 1.0

    def evaluate(self, delta, with_grad=True):
        obj = objective_gradient(self.d, delta, self.reference)
        vals, grads = _constraints(self.d, delta, self.spec.s, self.base, with_grad=with_grad)
        excess = np.where(np.isfinite(vals), (vals - self.target) / self.scale, 0.0)
        excess[:2] = 0.0  # norm balls are enforced by projection
        excess = np.clip(excess, 0.0, None)
        phi = obj.value - 0.5 * self.mu * float(np.sum(excess ** 2))
        gU = gX = None
        if with_grad:
            gU, gX = obj.grad_dU.copy(), obj.grad_dX.copy()
            for i in np.flatnonzero(excess > 0):
                w = self.mu * excess[i] / self.scale[i]
                gU -= w * grads[i][0]
                gX -= w * grads[i][1]
        return phi, obj.value, vals, gU, gX


def _feasible(vals: np.ndarray, deltas: tuple[float, ...]) -> bool:
    ok = np.where(np.isfinite(vals), vals <= np.array(deltas) + FEAS_TOL, True)
    return bool(np.all(ok))


def _initial_point(d, spec, base, rx, ru, fraction, rng) -> PoisonDelta:
    zU, zX = rng.standard_normal(d.U.shape), rng.standard_normal(d.X.shape)
    return _shrink_to_feasible(d, spec, base, lambda c: PoisonDelta(_rescale(zU, c * ru), _rescale(zX, c * rx)),
                               fraction)


def _shrink_to_feasible(d, spec, base, make, scale) -> PoisonDelta:
    for _ in range(30):
        delta = make(scale)
        if _feasible(constraint_values(d, delta, spec.s, base), spec.deltas):
            return delta
        scale *= 0.5
    return delta


def residual_neutral_directions(d: Dataset, rx: float, ru: float, k: int) -> list[PoisonDelta]:
    """Cheapest deltas that move the estimate without touching the residuals, to first order.

    A delta with ``dX_plus - A dX_minus - B dU = E Psi`` makes the poisoned data
    look generated by ``[A B] + E`` with the clean residuals (A, B from the
    clean fit). For each ``E`` the min-norm delta in the metric
    ``|dX|^2/rx^2 + |dU|^2/ru^2`` has cost ``vec(E)' Q vec(E)``; the ``k``
    eigenvectors of ``Q`` with the smallest eigenvalues give the largest shift
    per unit budget. Each returned delta has unit cost.
    """
    n, m, T = d.n, d.m, d.T
    Psi = d.Psi_minus
    theta = d.X_plus @ pinv(Psi)
    A, B = theta[:, :n], theta[:, n:]
    nx, nu = n * (T + 1), m * T
    rows, cols, vals = [], [], []
    for t in range(T):
        r0 = n * t
        for i in range(n):
            rows.append(r0 + i); cols.append(n * (t + 1) + i); vals.append(1.0)
            for j in range(n):
                rows.append(r0 + i); cols.append(n * t + j); vals.append(-A[i, j])
            for j in range(m):
                rows.append(r0 + i); cols.append(nx + m * t + j); vals.append(-B[i, j])
    weights = np.r_[np.full(nx, rx), np.full(nu, ru)]
    L = sp.csc_matrix((vals, (rows, cols)), shape=(n * T, nx + nu)) @ sp.diags(weights)
    K = np.kron(Psi.T, np.eye(n))
    Y = spla.splu(sp.csc_matrix(L @ L.T)).solve(K)
    Q = K.T @ Y
    evals, evecs = np.linalg.eigh(0.5 * (Q + Q.T))
    out = []
    for i in range(min(k, evals.size)):
        if evals[i] <= 0:
            continue
        e = evecs[:, i] / np.sqrt(evals[i])
        z = (L.T @ (Y @ e)) * weights
        out.append(PoisonDelta(z[nx:].reshape(m, T, order="F"), z[:nx].reshape(n, T + 1, order="F")))
    return out


def stealthy_attack(d: Dataset, spec: StealthyConstraintSpec, opts: StealthyOptions | None = None) -> AttackResult:
    """Maximize the spectral norm of the LS shift subject to ``g_i <= delta_i``.

    Projected gradient ascent: the two norm constraints are enforced by
    projection onto their balls, the statistic constraints by a penalty whose
    weight doubles whenever an iterate is infeasible. Each block of the
    gradient is preconditioned by its squared ball radius and the step is
    chosen by Armijo backtracking. The best feasible iterate over all
    restarts is returned; if there is none :class:`InfeasibleAttackError` is
    raised.
    """
    opts = opts or StealthyOptions()
    base = StealthyBaseline.from_dataset(d, spec.s)
    base.check(spec.s)
    rx = spec.deltas[0] * base.x_norm
    ru = spec.deltas[1] * base.u_norm
    reference = base.theta
    rng = as_rng(opts.seed)

    if rx == 0.0 and ru == 0.0:
        zero = PoisonDelta.zeros(d)
        vals = constraint_values(d, zero, spec.s, base)
        return AttackResult(zero, [0.0], vals.tolist(), True, 0, _seed_value(opts.seed))

    best = best_vals = None
    best_f = -np.inf
    best_trace: list[float] = []
    best_iters, best_conv = 0, False
    last = last_vals = None
    flags: set[str] = set()
    # preconditioner: each block measured relative to its own budget
    cu, cx = ru ** 2, rx ** 2

    n_runs = max(1, opts.n_restarts)
    directions = residual_neutral_directions(d, rx, ru, (n_runs + 1) // 2) if opts.structured_init else []
    for r in range(n_runs):
        pen = _Penalized(d, spec, base, reference, opts.margin)
        if r % 2 == 0 and r // 2 < len(directions):
            v = directions[r // 2]
            delta = _shrink_to_feasible(d, spec, base, lambda c: _project(v.scaled(c), rx, ru), 1.0)
        else:
            delta = _initial_point(d, spec, base, rx, ru, opts.init_fraction, rng)
        f0 = objective_gradient(d, delta, reference).value
        pen.mu = opts.penalty0 if opts.penalty0 is not None else 100.0 * max(f0, 1e-8)
        phi, f, vals, gU, gX = pen.evaluate(delta)
        step = 1.0 / max(np.sqrt(cu * np.sum(gU ** 2) + cx * np.sum(gX ** 2)), 1e-300)
        trace = []
        run_best, run_best_f, run_best_vals = None, -np.inf, None
        converged = False
        it = 0
        for it in range(1, opts.max_iters + 1):
            feasible = _feasible(vals, spec.deltas)
            if feasible and f > run_best_f:
                run_best, run_best_f, run_best_vals = delta, f, vals
            trace.append(f)
            if not feasible:
                pen.mu *= 2.0
                phi, f, vals, gU, gX = pen.evaluate(delta)
            accepted = False
            t = 2.0 * step
            gnorm = np.sqrt(cu * np.sum(gU ** 2) + cx * np.sum(gX ** 2))
            while t * gnorm >= opts.min_step:
                cand = _project(PoisonDelta(delta.dU + t * cu * gU, delta.dX + t * cx * gX), rx, ru)
                move = np.sum(gU * (cand.dU - delta.dU)) + np.sum(gX * (cand.dX - delta.dX))
                if move > 0:
                    phi_c, _, _, _, _ = pen.evaluate(cand, with_grad=False)
                    if phi_c >= phi + opts.armijo * move:
                        accepted = True
                        break
                t *= 0.5
            if not accepted:
                converged = True
                break
            step = t
            delta = cand
            phi, f, vals, gU, gX = pen.evaluate(delta)
        if _feasible(vals, spec.deltas) and f > run_best_f:
            run_best, run_best_f, run_best_vals = delta, f, vals
        trace.append(f)
        last, last_vals = delta, vals
        if run_best is not None and run_best_f > best_f:
            best, best_f, best_vals = run_best, run_best_f, run_best_vals
            best_trace, best_iters, best_conv = trace, it, converged
            if objective_gradient(d, best, reference).tied:
                flags.add("tied_singular_value")

    if best is None:
        viol = np.where(np.isfinite(last_vals), last_vals - np.array(spec.deltas), 0.0)
        raise InfeasibleAttackError("stealthy attack found no feasible iterate", last, viol)
    return AttackResult(best, best_trace, best_vals.tolist(), best_conv, best_iters,
                        _seed_value(opts.seed), sorted(flags))


def ls_shift_norm(d: Dataset, delta: PoisonDelta, theta_ref: np.ndarray) -> float:
    """Spectral norm of ``theta_LS(d + delta) - theta_ref``."""
    pf = PoisonedFit(d, delta)
    return float(np.linalg.norm(pf.theta - theta_ref, 2))
