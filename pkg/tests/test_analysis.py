import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from dplab.analysis import (
    alignment_angle,
    compatible_membership,
    completed_basis,
    directional_error,
    input_attack_shift,
    state_attack_shift,
)
from dplab.attacks import PoisonDelta
from dplab.lti_sim import DisturbanceSet, LtiSystem, simulate
from dplab.regression import ls_fit


def _refit_shift(d, delta):
    a, b = ls_fit(d), ls_fit(delta.apply(d))
    return a.A_hat, b.A_hat - a.A_hat, b.B_hat - a.B_hat


# -- basis ---------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_completed_basis_is_orthonormal(N, seed):
    v = np.random.default_rng(seed).normal(size=N)
    Q = completed_basis(v)
    np.testing.assert_allclose(Q.T @ Q, np.eye(N), atol=1e-10)
    np.testing.assert_allclose(Q[:, 0], v / np.linalg.norm(v), atol=1e-14)


def test_completed_basis_on_a_standard_vector():
    Q = completed_basis(np.array([0.0, 3.0, 0.0]))
    np.testing.assert_allclose(np.abs(Q), np.eye(3)[:, [1, 0, 2]], atol=1e-15)


def test_completed_basis_rejects_zero():
    with pytest.raises(ValueError):
        completed_basis(np.zeros(4))


# -- membership -----------------------------------------------------------------

def test_membership_unbounded_always_true(rng):
    sys = LtiSystem(np.eye(2), np.ones((2, 1)), np.eye(2))
    assert compatible_membership(sys, 1e6 * rng.normal(size=(2, 10)))


def test_membership_box_and_ball():
    W = np.array([[0.5, -0.9], [0.2, 0.1]])
    box = LtiSystem(np.eye(2), np.ones((2, 1)), np.eye(2), DisturbanceSet("box", 1.0))
    ball = LtiSystem(np.eye(2), np.ones((2, 1)), np.eye(2), DisturbanceSet("ball", 0.9))
    assert compatible_membership(box, W)
    assert not compatible_membership(box, 1.2 * W)
    assert not compatible_membership(ball, W)  # second column has norm > 0.9
    assert compatible_membership(ball, W, atol=0.01)


def test_membership_monotone_in_the_bound(rng):
    W = rng.normal(size=(3, 20))
    hits = [compatible_membership(LtiSystem(np.eye(3), np.ones((3, 1)), np.eye(3), DisturbanceSet("ball", r)), W)
            for r in np.linspace(0.1, 5.0, 50)]
    assert hits == sorted(hits)


def test_membership_true_model_on_clean_bounded_data(rng):
    sys = LtiSystem(0.5 * np.eye(2), np.ones((2, 1)), 0.01 * np.eye(2), DisturbanceSet("box", 0.3))
    d, noise = simulate(sys, rng.normal(size=(1, 50)), seed=rng)
    W = d.X_plus - sys.A @ d.X_minus - sys.B @ d.U
    assert compatible_membership(sys, W, atol=1e-12)


# -- directional error ----------------------------------------------------------

def test_directional_error_unpoisoned_noise_free(rng):
    sys, d, _ = random_instance(rng, n=2, m=1, T=30, noise=0.0)
    rep = directional_error(d, d, sys)
    assert len(rep) == 6
    for r in rep:
        assert np.linalg.norm(r.v_k) == pytest.approx(1.0)
        assert r.projection == pytest.approx(0.0, abs=1e-10)
        assert r.lower_bound == pytest.approx(0.0, abs=1e-12)
        assert r.holds
    assert set(rep[0].to_json()) == {"k", "v_k", "projection", "lower_bound", "angle", "exploration"}


def test_directional_error_first_direction_is_clean_estimate(rng):
    sys, d, _ = random_instance(rng, n=2, m=2, T=40)
    delta = PoisonDelta(0.1 * rng.normal(size=d.U.shape), 0.1 * rng.normal(size=d.X.shape))
    rep = directional_error(d, delta.apply(d), sys)
    theta = ls_fit(d).theta.reshape(-1, order="F")
    np.testing.assert_allclose(rep[0].v_k, theta / np.linalg.norm(theta))
    np.testing.assert_allclose(rep[0].V_k, rep[0].v_k.reshape(2, 4, order="F"))
    assert all(0.0 <= r.angle <= np.pi for r in rep)


# -- alignment angle -----------------------------------------------------------------

def test_alignment_angle_values():
    a = np.array([[1.0, 0.0]])
    assert alignment_angle(a, 2 * a) == pytest.approx(0.0)
    assert alignment_angle(a, -a) == pytest.approx(0.0)
    assert alignment_angle(a, np.array([[0.0, 1.0]])) == pytest.approx(np.pi / 2)
    with pytest.raises(ValueError):
        alignment_angle(a, np.zeros((1, 2)))


# -- closed-form shifts -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_input_shift_matches_refit_noise_free(seed):
    rng = np.random.default_rng(seed)
    sys, d, _ = random_instance(rng, noise=0.0)
    dU = 0.3 * rng.normal(size=d.U.shape)
    dA, dB = input_attack_shift(d, (sys.A, sys.B), dU)
    _, rA, rB = _refit_shift(d, PoisonDelta(dU, np.zeros_like(d.X)))
    np.testing.assert_allclose(dA, rA, atol=1e-8)
    np.testing.assert_allclose(dB, rB, atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_state_shift_matches_refit_noise_free(seed):
    rng = np.random.default_rng(seed)
    sys, d, _ = random_instance(rng, noise=0.0)
    dX = 0.3 * rng.normal(size=d.X.shape)
    dA, dB = state_attack_shift(d, (sys.A, sys.B), dX)
    _, rA, rB = _refit_shift(d, PoisonDelta(np.zeros_like(d.U), dX))
    np.testing.assert_allclose(dA, rA, atol=1e-8)
    np.testing.assert_allclose(dB, rB, atol=1e-8)


def test_input_shift_in_kernel_of_B(rng):
    B = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])  # kernel spanned by (1, -1, 0)
    sys = LtiSystem(0.5 * np.eye(2), B, np.zeros((2, 2)))
    d, _ = simulate(sys, rng.normal(size=(3, 30)), x0=np.ones(2), seed=0)
    dU = np.outer([1.0, -1.0, 0.0], rng.normal(size=30))
    dA, dB = input_attack_shift(d, (sys.A, sys.B), dU)
    assert np.abs(dA).max() < 1e-12 and np.abs(dB).max() < 1e-12


def test_zero_deltas_give_zero_shift(rng):
    sys, d, _ = random_instance(rng)
    for f, z in ((input_attack_shift, np.zeros_like(d.U)), (state_attack_shift, np.zeros_like(d.X))):
        dA, dB = f(d, (sys.A, sys.B), z)
        assert not dA.any() and not dB.any()


def test_state_shift_zero_when_consistent_with_dynamics(rng):
    sys, d, _ = random_instance(rng, n=2, m=1, T=30)
    dX = np.zeros_like(d.X)
    dX[:, 0] = rng.normal(size=2)
    for t in range(d.T):
        dX[:, t + 1] = sys.A @ dX[:, t]
    dA, dB = state_attack_shift(d, (sys.A, sys.B), dX)
    assert np.abs(dA).max() < 1e-12 and np.abs(dB).max() < 1e-12


def test_shift_rank_deficiency(rng):
    sys, d, _ = random_instance(rng, n=2, m=1, T=30)
    with pytest.raises(ValueError, match="rank"):
        input_attack_shift(d, (sys.A, sys.B), -d.U)
