import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_fd, random_instance, rel_err
from dplab.attacks import (
    BudgetSpec,
    InfeasibleAttackError,
    PoisonDelta,
    StealthyConstraintSpec,
    StealthyOptions,
    constraint_gradients,
    constraint_values,
    indistinguishable_input,
    mse_max_attack,
    objective_gradient,
    oblivious_random,
    stealthy_attack,
)
from dplab.lti_sim import example_benchmark_plant_discrete, gaussian_input, simulate


def _small(seed):
    rng = np.random.default_rng(seed)
    _, d, _ = random_instance(rng, n=2, m=1, T=15)
    delta = PoisonDelta(0.05 * rng.normal(size=d.U.shape), 0.05 * rng.normal(size=d.X.shape))
    return d, delta


def _benchmark(seed, T=200, sigma_w=0.1):
    sys = example_benchmark_plant_discrete(sigma_w)
    rng = np.random.default_rng(seed)
    d, _ = simulate(sys, gaussian_input(sys.m, T, 1.0, rng), seed=rng)
    return sys, d


def _independent_constraints(d, delta, s):
    """Recompute g_0..g_{3+s} with lstsq and explicit sums (no shared code path)."""
    def resid(X, U, with_u=True):
        Xm, Xp = X[:, :-1], X[:, 1:]
        Phi = np.vstack([Xm, U]) if with_u else Xm
        coef = np.linalg.lstsq(Phi.T, Xp.T, rcond=None)[0]
        return Xp - coef.T @ Phi

    def lag_energy(R, tau):
        T = R.shape[1]
        C0 = sum(np.outer(R[:, t], R[:, t]) for t in range(T)) / T
        Ct = sum(np.outer(R[:, t], R[:, t + tau]) for t in range(T - tau)) / T
        return np.linalg.norm(Ct @ np.linalg.inv(C0)) ** 2

    def z_stat(X, U):
        n, m, T = X.shape[0], U.shape[0], U.shape[1]
        r_full = np.sum(resid(X, U) ** 2)
        r_red = np.sum(resid(X, U, with_u=False) ** 2)
        return ((r_red - r_full) / (n * m)) / (r_full / (T - n * (n + m) - 1))

    X2, U2 = d.X + delta.dX, d.U + delta.dU
    R, R2 = resid(d.X, d.U), resid(X2, U2)
    g = [np.linalg.norm(delta.dX) / np.linalg.norm(d.X), np.linalg.norm(delta.dU) / np.linalg.norm(d.U),
         abs(1 - np.sum(R2 ** 2) / np.sum(R ** 2)), abs(1 - z_stat(X2, U2) / z_stat(d.X, d.U))]
    g += [abs(1 - lag_energy(R2, tau) / lag_energy(R, tau)) for tau in range(1, s + 1)]
    return np.array(g)


# -- gradients -----------------------------------------------------------------

@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_objective_gradient_matches_finite_differences(seed):
    d, delta = _small(seed)
    ov = objective_gradient(d, delta)
    if ov.tied:
        return
    num = central_fd(lambda x: objective_gradient(d, x).value, delta)
    assert rel_err((ov.grad_dU, ov.grad_dX), num) < 1e-4


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10_000))
def test_constraint_gradients_match_finite_differences(seed):
    d, delta = _small(seed)
    s = 3
    grads = constraint_gradients(d, delta, s)
    for i, g in enumerate(grads):
        num = central_fd(lambda x: constraint_values(d, x, s)[i], delta)
        assert rel_err(g, num) < 1e-4, f"g{i}"


# -- constraint values ------------------------------------------------------------

def test_zero_delta_gives_zero_constraints(rng):
    _, d, _ = random_instance(rng, n=2, m=1, T=40)
    g = constraint_values(d, PoisonDelta.zeros(d), 4)
    assert g.shape == (8,)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_g0_is_relative_state_norm(rng):
    _, d, _ = random_instance(rng, n=2, m=1, T=40)
    dX = rng.normal(size=d.X.shape)
    dX *= 0.1 * np.linalg.norm(d.X) / np.linalg.norm(dX)
    g = constraint_values(d, PoisonDelta(np.zeros_like(d.U), dX), 2)
    assert g[0] == pytest.approx(0.1, abs=1e-14)
    assert g[1] == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_constraints_match_independent_recomputation(seed):
    rng = np.random.default_rng(seed)
    _, d, _ = random_instance(rng, n=2, m=2, T=50)
    delta = PoisonDelta(0.1 * rng.normal(size=d.U.shape), 0.1 * rng.normal(size=d.X.shape))
    np.testing.assert_allclose(constraint_values(d, delta, 3), _independent_constraints(d, delta, 3),
                               rtol=0, atol=1e-10)


def test_zero_baseline_names_the_constraint(rng):
    sys, d, _ = random_instance(rng, n=2, m=1, T=30, noise=0.0)
    with pytest.raises(ValueError, match="g2"):
        constraint_values(d, PoisonDelta.zeros(d), 2)


# -- baselines ------------------------------------------------------------------

@pytest.mark.parametrize("dist", ["gaussian", "uniform"])
def test_oblivious_budgets_met_with_equality(rng, dist):
    _, d, _ = random_instance(rng, n=2, m=2, T=40)
    res = oblivious_random(d, BudgetSpec(0.07, 0.03), dist, n_candidates=20, seed=1)
    assert res.constraint_values[0] == pytest.approx(0.07, abs=1e-10)
    assert res.constraint_values[1] == pytest.approx(0.03, abs=1e-10)
    assert len(res.objective_trace) == 20


def test_oblivious_zero_budget_is_identity(rng):
    _, d, _ = random_instance(rng)
    res = oblivious_random(d, BudgetSpec.uniform(0.0), seed=0)
    assert not res.delta.dX.any() and not res.delta.dU.any()


def test_oblivious_unknown_distribution(rng):
    _, d, _ = random_instance(rng)
    with pytest.raises(ValueError):
        oblivious_random(d, BudgetSpec.uniform(0.1), "laplace")


def test_indistinguishable_touches_only_the_input(rng):
    _, d, _ = random_instance(rng, n=2, m=2, T=30)
    delta = indistinguishable_input(d, 1.0, seed=3)
    assert not delta.dX.any()
    poisoned = delta.apply(d)
    np.testing.assert_allclose(poisoned.U, gaussian_input(2, 30, 1.0, 3))


# -- residual-energy maximization ---------------------------------------------------

def test_mse_trace_monotone_and_on_the_boundary():
    _, d = _benchmark(0)
    res = mse_max_attack(d, BudgetSpec.uniform(0.05), n_restarts=3, seed=0)
    assert np.all(np.diff(res.objective_trace) >= -1e-9)
    assert res.constraint_values == pytest.approx([0.05, 0.05], abs=1e-10)


def test_mse_zero_budget(rng):
    _, d, _ = random_instance(rng)
    res = mse_max_attack(d, BudgetSpec.uniform(0.0))
    assert not res.delta.dX.any() and not res.delta.dU.any()


@pytest.mark.parametrize("seed", range(3))
def test_mse_beats_best_of_oblivious(seed):
    _, d = _benchmark(seed)
    budget = BudgetSpec.uniform(0.05)
    adaptive = mse_max_attack(d, budget, n_restarts=3, seed=seed)
    obl = oblivious_random(d, budget, "gaussian", 100, seed=seed)
    rss = lambda delta: float(np.sum(_resid(delta.apply(d)) ** 2))
    assert rss(adaptive.delta) >= rss(obl.delta)


def _resid(d):
    theta = np.linalg.lstsq(d.Psi_minus.T, d.X_plus.T, rcond=None)[0].T
    return d.X_plus - theta @ d.Psi_minus


# -- stealthy -----------------------------------------------------------------

def test_stealthy_zero_budget_returns_zero(rng):
    _, d, _ = random_instance(rng, n=2, m=1, T=40)
    res = stealthy_attack(d, StealthyConstraintSpec.uniform(0.0, 2))
    assert not res.delta.dX.any() and not res.delta.dU.any()


@pytest.mark.parametrize("seed", range(2))
def test_stealthy_feasibility_contract(seed):
    _, d = _benchmark(seed, T=120)
    spec = StealthyConstraintSpec.uniform(0.05, 4)
    res = stealthy_attack(d, spec, StealthyOptions(max_iters=60, n_restarts=2, seed=seed))
    g = constraint_values(d, res.delta, 4)
    assert np.all(g <= np.array(spec.deltas) + 1e-6)
    np.testing.assert_allclose(res.constraint_values, g, atol=1e-12)
    assert objective_gradient(d, res.delta).value > 0


def test_stealthy_is_deterministic_given_seed():
    _, d = _benchmark(5, T=80)
    spec = StealthyConstraintSpec.uniform(0.05, 2)
    a = stealthy_attack(d, spec, StealthyOptions(max_iters=20, n_restarts=2, seed=9))
    b = stealthy_attack(d, spec, StealthyOptions(max_iters=20, n_restarts=2, seed=9))
    np.testing.assert_array_equal(a.delta.dX, b.delta.dX)
    np.testing.assert_array_equal(a.delta.dU, b.delta.dU)


def test_infeasible_error_carries_diagnostics():
    err = InfeasibleAttackError("x", PoisonDelta(np.zeros((1, 2)), np.zeros((1, 3))), np.array([0.1]))
    assert err.violations[0] == 0.1 and err.best.dX.shape == (1, 3)
