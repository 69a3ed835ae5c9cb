import numpy as np
import pytest

from dplab.lti_sim import LtiSystem, simulate


def random_instance(rng, n=None, m=None, T=None, noise=0.1, stable=True):
    """Random (system, dataset, noise) triple with n, m <= 3 and T in [20, 50]."""
    n = int(rng.integers(1, 4)) if n is None else n
    m = int(rng.integers(1, 4)) if m is None else m
    T = int(rng.integers(20, 51)) if T is None else T
    A = rng.normal(size=(n, n))
    if stable:
        A *= 0.8 / max(1.0, np.abs(np.linalg.eigvals(A)).max())
    B = rng.normal(size=(n, m))
    sys = LtiSystem(A, B, noise ** 2 * np.eye(n))
    d, w = simulate(sys, rng.normal(size=(m, T)), x0=rng.normal(size=n), seed=rng)
    return sys, d, w.W_minus


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_fd(f, delta, h=1e-6):
    """Central finite-difference gradient of scalar ``f(delta)`` w.r.t. ``(dU, dX)``."""
    from dplab.attacks import PoisonDelta

    out = []
    for name in ("dU", "dX"):
        base = getattr(delta, name)
        g = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            hi, lo = base.copy(), base.copy()
            hi[idx] += h
            lo[idx] -= h
            kw_hi = {"dU": delta.dU, "dX": delta.dX, name: hi}
            kw_lo = {"dU": delta.dU, "dX": delta.dX, name: lo}
            g[idx] = (f(PoisonDelta(**kw_hi)) - f(PoisonDelta(**kw_lo))) / (2 * h)
        out.append(g)
    return tuple(out)


def rel_err(analytic, numeric):
    a = np.concatenate([x.ravel() for x in analytic])
    b = np.concatenate([x.ravel() for x in numeric])
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))
