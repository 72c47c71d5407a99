import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scbf_mppi.sde_dynamics import (
    DimensionError,
    DynamicsModel,
    NumericOverflowError,
    Trajectory,
    double_integrator_model,
    drift_eval,
    em_step,
    rollout,
    substream,
    unicycle_model,
)

DT = 0.05


@pytest.fixture
def uni():
    return unicycle_model(1.0)


@pytest.mark.parametrize(
    "x, u, expected",
    [
        ((0, 0, 0), (1, 0), (1, 0, 0)),
        ((0, 0, 0), (0, 1), (0, 0, 1)),
        ((0, 0, math.pi / 2), (2, 0), (0, 2, 0)),
    ],
)
def test_drift_eval_unicycle(uni, x, u, expected):
    np.testing.assert_allclose(drift_eval(uni, np.array(x, float), np.array(u, float)), expected, atol=1e-15)


def test_input_map_and_fields(uni):
    np.testing.assert_array_equal(uni.input_map(np.zeros(3)), [[1, 0], [0, 0], [0, 1]])
    x = np.array([1.3, -0.2, 0.7])
    np.testing.assert_array_equal(uni.drift(x), np.zeros(3))
    np.testing.assert_array_equal(uni.diffusion(x), np.eye(3))


def test_control_channel_covariance():
    lam, scale = 2.0, 0.3
    R = np.array([[2.0, 0.5], [0.5, 1.0]])
    model = unicycle_model(scale, "control_channel", temperature=lam, control_weight=R)
    x = np.array([0.2, 0.1, 0.9])
    sig = model.diffusion(x)
    g = model.input_map(x)
    np.testing.assert_allclose(sig @ sig.T, scale**2 * lam * g @ np.linalg.inv(R) @ g.T, atol=1e-12)


def test_unknown_noise_model():
    with pytest.raises(ValueError):
        unicycle_model(1.0, "pink")


def test_zero_noise_step_is_euler(uni):
    x = np.array([0.3, -0.4, 1.1])
    u = np.array([0.7, -0.2])
    np.testing.assert_allclose(em_step(uni, x, u, DT, np.zeros(3)), x + drift_eval(uni, x, u) * DT)


@pytest.mark.parametrize("dt", [0.0, -0.1])
def test_nonpositive_dt_rejected(uni, dt):
    with pytest.raises(ValueError):
        em_step(uni, np.zeros(3), np.zeros(2), dt, np.zeros(3))


def test_dimension_errors(uni):
    with pytest.raises(DimensionError):
        em_step(uni, np.zeros(2), np.zeros(2), DT, np.zeros(3))
    with pytest.raises(DimensionError):
        drift_eval(uni, np.zeros(3), np.zeros(3))
    with pytest.raises(DimensionError):
        em_step(uni, np.zeros(3), np.zeros(2), DT, np.zeros(2))


def test_non_finite_state_raises():
    model = DynamicsModel(
        1, 1, lambda x: np.full_like(x, np.inf), lambda x: np.ones(x.shape + (1,)), lambda x: np.zeros(x.shape + (1,))
    )
    with pytest.raises(NumericOverflowError):
        em_step(model, np.zeros(1), np.zeros(1), DT, np.zeros(1))


def test_increment_moments(uni):
    n = 100_000
    noise = substream(11, 0).standard_normal((n, 3))
    inc = em_step(uni, np.zeros((n, 3)), np.zeros((n, 2)), DT, noise)
    np.testing.assert_allclose(inc.var(axis=0) / DT, 1.0, rtol=0.05)
    # mean within 4 standard errors of zero
    assert np.all(np.abs(inc.mean(axis=0)) < 4 * math.sqrt(DT / n))


def test_diffusion_variance_grows_linearly():
    model = unicycle_model(0.5)
    n, k = 20_000, 8
    rng = substream(12, 0)
    x = np.zeros((n, 3))
    for _ in range(k):
        x = em_step(model, x, np.zeros((n, 2)), DT, rng.standard_normal((n, 3)))
    np.testing.assert_allclose(x.var(axis=0), 0.25 * k * DT, rtol=0.05)


def test_single_step_rollout(uni):
    x0 = np.array([0.1, 0.2, 0.3])
    traj = rollout(unicycle_model(0.0), x0, np.zeros((1, 2)), np.zeros((1, 2)), DT, substream(0))
    np.testing.assert_array_equal(traj.states, [x0, x0])
    assert traj.horizon == 1


def test_straight_line():
    traj = rollout(unicycle_model(0.0), np.zeros(3), np.tile([1.0, 0.0], (20, 1)), np.zeros((20, 2)), DT, substream(0))
    np.testing.assert_allclose(traj.states[-1], [1.0, 0.0, 0.0], atol=1e-12)


def test_rollout_matches_hand_loop():
    model = unicycle_model(0.0)
    rng = substream(5, 1)
    u = rng.normal(size=(15, 2))
    du = rng.normal(size=(15, 2))
    traj = rollout(model, np.array([0.0, 0.5, 0.2]), u, du, DT, substream(0))
    x, y, th = 0.0, 0.5, 0.2
    for (v, w), (dv, dw) in zip(u, du):
        x, y, th = x + (v + dv) * math.cos(th) * DT, y + (v + dv) * math.sin(th) * DT, th + (w + dw) * DT
    np.testing.assert_allclose(traj.states[-1], [x, y, th], atol=1e-12)


def test_rollout_deterministic(uni):
    u = np.tile([0.5, 0.1], (10, 1))
    a = rollout(uni, np.zeros(3), u, np.zeros_like(u), DT, substream(3, 7))
    b = rollout(uni, np.zeros(3), u, np.zeros_like(u), DT, substream(3, 7))
    assert a.states.tobytes() == b.states.tobytes()


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((3, 3)), np.zeros((3, 2)), np.zeros((3, 2)), DT)
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 3)), np.zeros((1, 2)), np.zeros((1, 2)), 0.0)


def test_local_error_is_second_order():
    # one step of 2dt vs two steps of dt differ by O(dt^2)
    model = unicycle_model(0.0)
    x0 = np.array([0.0, 0.0, 0.3])
    u = np.array([1.0, 2.0])

    def gap(dt):
        one = em_step(model, x0, u, 2 * dt, np.zeros(3))
        two = em_step(model, em_step(model, x0, u, dt, np.zeros(3)), u, dt, np.zeros(3))
        return np.linalg.norm(one - two)

    assert gap(0.025) / gap(0.05) == pytest.approx(0.25, rel=0.1)


def test_double_integrator():
    model = double_integrator_model()
    np.testing.assert_allclose(drift_eval(model, np.array([0.0, 2.0]), np.array([1.0])), [2.0, 1.0])


def test_substream_independence():
    a = substream(0, 1, 2).standard_normal(4)
    b = substream(0, 2, 1).standard_normal(4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, substream(0, 1, 2).standard_normal(4))


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(-3, 3), min_size=2, max_size=2),
)
def test_zero_sigma_matches_forward_euler(x, u):
    model = unicycle_model(0.0)
    x = np.array(x)
    u = np.array(u)
    out = em_step(model, x, u, DT, substream(1).standard_normal(3))
    np.testing.assert_allclose(out, x + DT * (model.input_map(x) @ u))
