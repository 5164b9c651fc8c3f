import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bessplan.policy import (
    JointState,
    PolicyKind,
    TransferPolicy,
    bang_bang_transfer,
    check_step_condition,
    kkt_stationarity_check,
    kkt_transfer,
    step_transition_prob,
    survival_gradient,
)

DT = 1 / 120


def test_bang_bang_cases():
    assert bang_bang_transfer(5, 3, 15) == 15
    assert bang_bang_transfer(3, 5, 15) == -15
    assert bang_bang_transfer(4, 4, 15) == 0
    assert bang_bang_transfer(3, 5, 0) == 0


def test_kkt_cases():
    assert kkt_transfer(5, 3, 15, DT) == 15
    assert kkt_transfer(4.1, 4.0, 15, DT) == pytest.approx(6.0, rel=1e-12)
    assert kkt_transfer(4.0, 4.0, 15, DT) == 0
    assert kkt_transfer(4.0, 4.1, 15, DT) == pytest.approx(-6.0, rel=1e-12)


def test_kkt_band_edge_is_linear_branch():
    # |x1 - x2| = 2 P dt sits on the linear branch and meets the saturated value
    assert kkt_transfer(0.25, 0.0, 15, DT) == pytest.approx(15.0, rel=1e-12)


def test_kkt_step_condition():
    with pytest.raises(ValueError, match="too coarse"):
        kkt_transfer(1, 0, 15, 1.0, n_b=10)
    with pytest.raises(ValueError):
        kkt_transfer(1, 0, 15, 0.0)
    check_step_condition(10, 15, DT)


def test_kkt_approaches_bang_bang_as_dt_shrinks():
    x1 = np.array([5.0, 3.0, 4.0001])
    x2 = np.array([3.0, 5.0, 4.0])
    for dt in (1e-3, 1e-5, 1e-7):
        gap = np.abs(kkt_transfer(x1, x2, 15, dt) - bang_bang_transfer(x1, x2, 15))
    assert gap.max() == 0.0


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 100), st.floats(1e-4, 0.1))
def test_laws_feasible_and_antisymmetric(x1, x2, p_line, dt):
    for law in (lambda a, b: bang_bang_transfer(a, b, p_line), lambda a, b: kkt_transfer(a, b, p_line, dt)):
        p = law(x1, x2)
        assert abs(p) <= p_line
        assert p == -law(x2, x1)


def test_laws_differ_only_inside_band():
    x = np.random.default_rng(0).uniform(0, 10, size=(10_000, 2))
    differ = kkt_transfer(x[:, 0], x[:, 1], 15, DT) != bang_bang_transfer(x[:, 0], x[:, 1], 15)
    band = np.abs(x[:, 0] - x[:, 1]) < 2 * 15 * DT
    assert not np.any(differ & ~band)


def test_policy_construction():
    assert TransferPolicy.bang_bang(0).kind is PolicyKind.DISCONNECTED
    assert TransferPolicy.discrete_kkt(0, DT).kind is PolicyKind.DISCONNECTED
    with pytest.raises(ValueError):
        TransferPolicy(PolicyKind.DISCONNECTED, 5.0)
    with pytest.raises(ValueError):
        TransferPolicy(PolicyKind.BANG_BANG, 0.0)
    with pytest.raises(ValueError):
        TransferPolicy(PolicyKind.DISCRETE_KKT, 5.0)
    with pytest.raises(ValueError):
        TransferPolicy.bang_bang(-1)
    assert TransferPolicy("bang-bang", 3.0).kind is PolicyKind.BANG_BANG


def test_policy_call_vectorised():
    x1 = np.array([5.0, 4.1, 1.0])
    x2 = np.array([3.0, 4.0, 1.0])
    assert np.array_equal(TransferPolicy.disconnected()(x1, x2), np.zeros(3))
    assert np.array_equal(TransferPolicy.bang_bang(15)(x1, x2), [15, 15, 0])
    assert np.allclose(TransferPolicy.discrete_kkt(15, DT)(x1, x2), [15, 6, 0])


def test_joint_state_box():
    JointState(0.0, 10.0, 10.0)
    with pytest.raises(ValueError, match="x2"):
        JointState(1.0, 10.5, 10.0)
    with pytest.raises(ValueError):
        JointState(1.0, 1.0, 0.0)


def test_step_transition_examples():
    centred = step_transition_prob(JointState(5, 5, 10), 0.0, DT, 1.0)
    assert centred == 1.0
    edge = step_transition_prob(JointState(0, 5, 10), 0.0, DT, 1.0)
    assert edge == pytest.approx(0.5, abs=1e-15)
    s = JointState(2.0, 7.0, 10.0)
    swapped = JointState(7.0, 2.0, 10.0)
    assert step_transition_prob(s, 3.0, DT, 1.0) == pytest.approx(step_transition_prob(swapped, -3.0, DT, 1.0), rel=1e-15)
    with pytest.raises(ValueError):
        step_transition_prob(s, 0.0, 0.0, 1.0)


def test_step_transition_against_direct_integral():
    # brute-force product of interval masses from scipy's normal distribution
    from scipy.stats import norm

    s, p, dt, sigma = JointState(0.3, 1.7, 2.0), 2.0, 0.1, 1.3
    sd = sigma * math.sqrt(dt)
    m1, m2 = s.x1 - p * dt, s.x2 + p * dt
    expected = (norm.cdf(2.0, m1, sd) - norm.cdf(0, m1, sd)) * (norm.cdf(2.0, m2, sd) - norm.cdf(0, m2, sd))
    assert step_transition_prob(s, p, dt, sigma) == pytest.approx(expected, rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(-3, 3))
def test_gradient_matches_finite_difference(x1, x2, p):
    s = JointState(x1, x2, 2.0)
    dt, sigma, h = 0.1, 1.0, 1e-5
    fd = (step_transition_prob(s, p + h, dt, sigma) - step_transition_prob(s, p - h, dt, sigma)) / (2 * h)
    assert survival_gradient(s, p, dt, sigma) == pytest.approx(fd, abs=1e-7)


def test_stationarity_examples():
    assert kkt_stationarity_check(JointState(4, 4, 10), 0.0, DT, 1.0, 15) == 0.0
    s = JointState(4.1, 4.0, 10)
    assert kkt_stationarity_check(s, float(kkt_transfer(4.1, 4.0, 15, DT)), DT, 1.0, 15) <= 1e-8
    # saturated: x1 far above x2, transfer at +P, gradient still points outward
    far = JointState(1.0, 0.6, 2.0)
    dt = 0.01
    assert float(kkt_transfer(1.0, 0.6, 15, dt)) == 15
    assert survival_gradient(far, 15.0, dt, 0.5) > 0
    assert kkt_stationarity_check(far, 15.0, dt, 0.5, 15) == 0.0


def test_stationarity_detects_wrong_sign():
    # forcing -P where +P is optimal leaves a positive residual
    far = JointState(1.0, 0.6, 2.0)
    assert kkt_stationarity_check(far, -15.0, 0.01, 0.5, 15) > 0
    with pytest.raises(ValueError):
        kkt_stationarity_check(far, 16.0, 0.01, 0.5, 15)


def test_interior_stationary_point_is_maximum():
    s = JointState(3.0, 3.2, 10.0)
    p_star = float(kkt_transfer(3.0, 3.2, 15, DT))
    grid = np.linspace(-15, 15, 2001)
    vals = [step_transition_prob(s, p, DT, 1.0) for p in grid]
    assert step_transition_prob(s, p_star, DT, 1.0) >= max(vals) - 1e-15
