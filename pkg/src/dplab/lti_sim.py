"""Noisy discrete-time LTI plants, trajectory generation and dataset I/O."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Seed, as_rng, expm, is_psd, numerical_rank, rng_gaussian

MAX_REJECTIONS = 1000


@dataclass(frozen=True)
class DisturbanceSet:
    """Admissible set for one noise sample: all of R^n, a box or a ball."""

    kind: str = "unbounded"
    bound: float | tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("unbounded", "box", "ball"):
            raise ValueError(f"unknown disturbance set kind {self.kind!r}")
        if self.kind != "unbounded" and self.bound is None:
            raise ValueError(f"{self.kind} disturbance set needs a bound")

    def contains(self, w: np.ndarray, atol: float = 0.0) -> np.ndarray:
        """Column-wise membership test; ``w`` is n x k (or a single n-vector)."""
        w = np.asarray(w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if self.kind == "unbounded":
            return np.ones(w.shape[1], dtype=bool)
        if self.kind == "box":
            b = np.broadcast_to(np.asarray(self.bound, dtype=float), (w.shape[0],))
            return np.all(np.abs(w) <= b[:, None] + atol, axis=0)
        return np.linalg.norm(w, axis=0) <= float(self.bound) + atol

    def clamp(self, w: np.ndarray) -> np.ndarray:
        if self.kind == "unbounded":
            return w
        if self.kind == "box":
            b = np.broadcast_to(np.asarray(self.bound, dtype=float), w.shape)
            return np.clip(w, -b, b)
        nrm = np.linalg.norm(w)
        r = float(self.bound)
        return w if nrm <= r else w * (r / nrm)

    def to_json(self) -> dict:
        bound = self.bound
        if bound is not None and not np.isscalar(bound):
            bound = [float(b) for b in bound]
        return {"kind": self.kind, "bound": bound}


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """``x[t+1] = A x[t] + B u[t] + w[t]`` with ``w[t] ~ N(0, sigma_w)`` restricted to ``disturbance``."""

    A: np.ndarray
    B: np.ndarray
    sigma_w: np.ndarray
    disturbance: DisturbanceSet = field(default_factory=DisturbanceSet)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim < 2:
            B = B.reshape(A.shape[0], -1)
        S = np.atleast_2d(np.asarray(self.sigma_w, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        if S.shape != A.shape:
            raise ValueError(f"sigma_w must be {A.shape}, got {S.shape}")
        if not is_psd(S):
            raise ValueError("sigma_w must be symmetric positive semidefinite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "sigma_w", S)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def theta(self) -> np.ndarray:
        """``[A B]``, the n x (n+m) parameter matrix."""
        return np.hstack([self.A, self.B])

    def to_json(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "sigma_w": self.sigma_w.tolist(),
            "disturbance": self.disturbance.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "LtiSystem":
        dist = doc.get("disturbance") or {}
        bound = dist.get("bound")
        if isinstance(bound, list):
            bound = tuple(bound)
        return cls(
            np.array(doc["A"], dtype=float),
            np.array(doc["B"], dtype=float),
            np.array(doc["sigma_w"], dtype=float),
            DisturbanceSet(dist.get("kind", "unbounded"), bound),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """One recorded trajectory: inputs ``U`` (m x T) and states ``X`` (n x T+1)."""

    U: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        U = np.atleast_2d(np.asarray(self.U, dtype=float))
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.shape[1] != U.shape[1] + 1:
            raise ValueError(f"X needs T+1 columns: got U {U.shape}, X {X.shape}")
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(X))):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    @property
    def T(self) -> int:
        return self.U.shape[1]

    @property
    def X_minus(self) -> np.ndarray:
        return self.X[:, :-1]

    @property
    def X_plus(self) -> np.ndarray:
        return self.X[:, 1:]

    @property
    def Psi_minus(self) -> np.ndarray:
        return np.vstack([self.X[:, :-1], self.U])

    def to_json(self, W: np.ndarray | None = None, system: LtiSystem | None = None, **meta) -> dict:
        doc = {"n": self.n, "m": self.m, "T": self.T, "U": self.U.tolist(), "X": self.X.tolist()}
        if W is not None:
            doc["W"] = np.asarray(W).tolist()
        if system is not None:
            doc["system"] = system.to_json()
        doc.update(meta)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Dataset":
        n, m, T = int(doc["n"]), int(doc["m"]), int(doc["T"])
        U = np.array(doc["U"], dtype=float).reshape(m, T)
        X = np.array(doc["X"], dtype=float).reshape(n, T + 1)
        return cls(U, X)


@dataclass(frozen=True, eq=False)
class NoiseRecord:
    W_minus: np.ndarray


def save_dataset(path: str | Path, d: Dataset, noise: NoiseRecord | None = None,
                 system: LtiSystem | None = None, **meta) -> Path:
    path = Path(path)
    doc = d.to_json(None if noise is None else noise.W_minus, system, **meta)
    _atomic_write(path, json.dumps(doc, indent=1))
    return path


def load_dataset(path: str | Path) -> tuple[Dataset, dict]:
    """Returns the dataset and the raw JSON document (for optional W / system)."""
    doc = json.loads(Path(path).read_text())
    for key in ("n", "m", "T", "U", "X"):
        if key not in doc:
            raise ValueError(f"dataset file {path} is missing {key!r}")
    return Dataset.from_json(doc), doc


def export_csv(path: str | Path, d: Dataset) -> Path:
    """Rows t = 0..T with states and inputs; the input cells on row T are blank."""
    path = Path(path)
    rows = [["t"] + [f"x_{i}" for i in range(d.n)] + [f"u_{j}" for j in range(d.m)]]
    for t in range(d.T + 1):
        u = [repr(float(v)) for v in d.U[:, t]] if t < d.T else [""] * d.m
        rows.append([str(t)] + [repr(float(v)) for v in d.X[:, t]] + u)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    tmp.replace(path)
    return path


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


# -- simulation ------------------------------------------------------------

def _sample_noise(sys: LtiSystem, T: int, rng: np.random.Generator) -> np.ndarray:
    W = rng_gaussian(T, sys.sigma_w, rng)
    dist = sys.disturbance
    if dist.kind == "unbounded":
        return W
    for t in range(T):
        tries = 0
        while not dist.contains(W[:, t])[0] and tries < MAX_REJECTIONS:
            W[:, t] = rng_gaussian(1, sys.sigma_w, rng)[:, 0]
            tries += 1
        if tries == MAX_REJECTIONS:
            W[:, t] = dist.clamp(W[:, t])
    return W


def simulate(sys: LtiSystem, U: np.ndarray, x0: np.ndarray | None = None,
             seed: Seed = None, burn_in: int = 0) -> tuple[Dataset, NoiseRecord]:
    """Roll the plant forward over the inputs ``U``.

    ``burn_in`` > 0 first runs that many noise-only steps (zero input) from
    ``x0`` and starts the recorded trajectory at the resulting state.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[0] != sys.m:
        raise ValueError(f"U has {U.shape[0]} rows, system has m={sys.m}")
    T = U.shape[1]
    x = np.zeros(sys.n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != sys.n:
        raise ValueError(f"x0 has length {x.shape[0]}, system has n={sys.n}")
    rng = as_rng(seed)
    if burn_in > 0:
        Wb = _sample_noise(sys, burn_in, rng)
        for t in range(burn_in):
            x = sys.A @ x + Wb[:, t]
    W = _sample_noise(sys, T, rng)
    X = np.empty((sys.n, T + 1))
    X[:, 0] = x
    for t in range(T):
        X[:, t + 1] = sys.A @ X[:, t] + sys.B @ U[:, t] + W[:, t]
    # report the noise that reproduces X exactly in floating point
    W = X[:, 1:] - sys.A @ X[:, :-1] - sys.B @ U
    return Dataset(U, X), NoiseRecord(W)


def gaussian_input(m: int, T: int, sigma_u: np.ndarray | float = 1.0, seed: Seed = None) -> np.ndarray:
    sigma_u = np.asarray(sigma_u, dtype=float)
    if sigma_u.ndim == 0:
        sigma_u = sigma_u * np.eye(m)
    return rng_gaussian(T, sigma_u, seed)


def check_rank_condition(d: Dataset, tol: float | None = None) -> bool:
    if d.T < d.n + d.m:
        return False
    return numerical_rank(d.Psi_minus, tol) == d.n + d.m


# -- example plants --------------------------------------------------------

BENCHMARK_NUM = (0.28261, 0.50666)
BENCHMARK_DEN = (1.0, -1.41833, 1.58939, -1.31608, 0.88642)


def example_scalar(sigma_w: float = 1.0, a: float = 0.7, b: float = 0.5) -> LtiSystem:
    """Scalar plant ``x+ = 0.7 x + 0.5 u + w``; ``sigma_w`` is the noise std."""
    return LtiSystem(np.array([[a]]), np.array([[b]]), np.array([[sigma_w ** 2]]))


def companion_form(den: tuple[float, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Controllable canonical (A, B) for the monic denominator ``den``."""
    den = np.asarray(den, dtype=float)
    den = den / den[0]
    n = den.size - 1
    A = np.zeros((n, n))
    A[:-1, 1:] = np.eye(n - 1)
    A[-1, :] = -den[:0:-1]
    B = np.zeros((n, 1))
    B[-1, 0] = 1.0
    return A, B


def zoh(Ac: np.ndarray, Bc: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    n, m = Bc.shape
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = Ac
    aug[:n, n:] = Bc
    E = expm(aug * dt)
    return E[:n, :n], E[:n, n:]


def example_benchmark_plant(dt: float = 0.05, sigma_w: float = 0.1) -> LtiSystem:
    """Fourth-order benchmark read as a continuous transfer function and ZOH-sampled.

    This realization is open-loop unstable (two poles at |z| ~ 1.04 for
    dt = 0.05); see :func:`example_benchmark_plant_discrete` for the stable
    reading used by the experiments.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    Ac, Bc = companion_form(BENCHMARK_DEN)
    A, B = zoh(Ac, Bc, dt)
    return LtiSystem(A, B, sigma_w ** 2 * np.eye(4))


def example_benchmark_plant_discrete(sigma_w: float = 0.1) -> LtiSystem:
    """Same coefficients read as a z-domain denominator (all poles inside |z| < 1)."""
    A, B = companion_form(BENCHMARK_DEN)
    return LtiSystem(A, B, sigma_w ** 2 * np.eye(4))
