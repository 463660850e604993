import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from passivity_pi.controllers import (
    AntiWindupPIState,
    ControllerState,
    PIGains,
    antiwindup_pi_update,
    pi_update,
    tanh_pi_update,
)

finite = st.floats(-1e3, 1e3)


def test_pi_hand_example():
    u, s = pi_update(ControllerState(z=0.0), PIGains.scalar(0.013, 1e-4), 2.0, 0.6, 0.01)
    assert u == pytest.approx(0.574, abs=1e-15)
    assert s.z == pytest.approx(-0.02, abs=1e-15)


def test_pi_zero_gains_is_feedforward():
    g = PIGains.scalar(0.0, 0.0, allow_zero=True)
    u, s = pi_update(ControllerState(z=3.0), g, 1.5, 0.7, 0.1)
    assert u == 0.7
    assert s.z == pytest.approx(3.0 - 0.15)


def test_pi_zero_output_freezes_integrator():
    g = PIGains(np.diag([2.0, 3.0]), np.diag([0.5, 0.25]))
    z = np.array([1.0, -2.0])
    u, s = pi_update(ControllerState(z=z), g, np.zeros(2), np.array([0.1, 0.2]), 0.01)
    np.testing.assert_allclose(u, [0.6, -0.3])
    np.testing.assert_array_equal(s.z, z)


def test_gain_validation():
    with pytest.raises(ValueError):
        PIGains.scalar(0.0, 1.0)
    with pytest.raises(ValueError):
        PIGains([[1.0, 0.5], [0.0, 1.0]], np.eye(2))
    with pytest.raises(ValueError):
        PIGains(np.eye(2), np.eye(3))
    with pytest.raises(ValueError):
        pi_update(ControllerState(z=0.0), PIGains.scalar(1, 1), 0.0, 0.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_pi_affine_coefficients(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 4))
    G, H = rng.normal(size=(2, m, m))
    g = PIGains(G @ G.T + 0.1 * np.eye(m), H @ H.T + 0.1 * np.eye(m))
    y, z, us = rng.normal(size=(3, m))

    def u_of(y, z, us):
        return pi_update(ControllerState(z=z), g, y, us, 0.01)[0]

    base = u_of(y, z, us)
    h = 1e-3
    for j in range(m):
        e = np.zeros(m)
        e[j] = h
        np.testing.assert_allclose((u_of(y + e, z, us) - base) / h, -g.Kp[:, j], atol=1e-9)
        np.testing.assert_allclose((u_of(y, z + e, us) - base) / h, g.Ki[:, j], atol=1e-9)
        np.testing.assert_allclose((u_of(y, z, us + e) - base) / h, np.eye(m)[:, j], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(z=finite, y=finite, dt=st.floats(1e-6, 1.0), kp=st.floats(1e-3, 10), ki=st.floats(1e-3, 10))
def test_integrator_update_independent_of_gains(z, y, dt, kp, ki):
    _, s1 = pi_update(ControllerState(z=z), PIGains.scalar(kp, ki), y, 0.0, dt)
    _, s2 = pi_update(ControllerState(z=z), PIGains.scalar(1.0, 1.0), y, 0.0, dt)
    _, s3 = tanh_pi_update(ControllerState(z=z, mode="tanh", a=2.0, b=kp), ki, y, 0.0, dt)
    assert s1.z == s2.z == s3.z == z - dt * y


def test_tanh_examples():
    st0 = ControllerState(z=2.0, mode="tanh", a=55.0, b=0.25)
    u, _ = tanh_pi_update(st0, 1e-4, 0.0, 0.6, 1e-6)
    assert u == pytest.approx(0.6 + 2e-4)
    u, _ = tanh_pi_update(st0._replace(z=0.0), 1e-4, 55.0, 0.0, 1e-6)
    assert u == pytest.approx(-0.25 * math.tanh(1.0), rel=1e-15)
    assert u == pytest.approx(-0.19039854, abs=5e-9)  # 0.25 * 0.76159416


def test_tanh_rejects_nonpositive_parameters():
    with pytest.raises(ValueError):
        tanh_pi_update(ControllerState(z=0.0, mode="tanh", a=0.0, b=1.0), 1.0, 0.0, 0.0, 0.1)


@settings(max_examples=60, deadline=None)
@given(y=st.floats(-1e6, 1e6), b=st.floats(1e-3, 10), a=st.floats(1e-3, 1e3))
def test_tanh_proportional_term_bounded(y, b, a):
    u, _ = tanh_pi_update(ControllerState(z=0.0, mode="tanh", a=a, b=b), 1.0, y, 0.0, 0.1)
    assert abs(u) <= b


@settings(max_examples=60, deadline=None)
@given(r=st.floats(-1e-3, 1e-3), b=st.floats(1e-3, 10), a=st.floats(1e-2, 1e3))
def test_tanh_small_signal_taylor_bound(r, b, a):
    y = r * a
    u, _ = tanh_pi_update(ControllerState(z=0.0, mode="tanh", a=a, b=b), 1.0, y, 0.0, 0.1)
    assert abs(-u - (b / a) * y) <= 0.34 * b * abs(y / a) ** 3 + 1e-15 * b


def test_tanh_vector_channels():
    s = ControllerState(z=np.array([1.0, 0.0]), mode="tanh", a=1.0, b=2.0)
    u, s2 = tanh_pi_update(s, np.diag([0.5, 0.5]), np.array([1.0, -1.0]), np.zeros(2), 0.1)
    np.testing.assert_allclose(u, [-2 * math.tanh(1) + 0.5, 2 * math.tanh(1)])
    np.testing.assert_allclose(s2.z, [0.9, 0.1])


# -------------------------------------------------------------- anti-windup


def test_antiwindup_zero_error():
    phi, s, sat = antiwindup_pi_update(AntiWindupPIState(1.0, 1.0, 0.0, -1.0, 1.0), 0.0, 0.1)
    assert phi == 0.0 and s.integrator == 0.0 and not sat


def test_antiwindup_saturated_high_holds_integrator():
    s0 = AntiWindupPIState(kp=1.0, ki=1.0, integrator=0.3, lo=0.0, hi=1.0)
    phi, s, sat = antiwindup_pi_update(s0, 2.0, 0.1)
    assert phi == 1.0 and sat
    assert s.integrator == 0.3


def test_antiwindup_saturated_but_recovering_integrates():
    s0 = AntiWindupPIState(kp=1.0, ki=1.0, integrator=5.0, lo=0.0, hi=1.0)
    phi, s, sat = antiwindup_pi_update(s0, -0.5, 0.1)
    assert phi == 1.0 and sat
    assert s.integrator == pytest.approx(4.95)


def test_antiwindup_matches_plain_pi_when_unsaturated():
    kp, ki, dt = 0.5, 2.0, 1e-3
    s = AntiWindupPIState(kp, ki, 0.0, -1e9, 1e9)
    acc = 0.0
    for k in range(500):
        e = 1e-3 * k  # ramp input
        phi, s, sat = antiwindup_pi_update(s, e, dt)
        assert not sat
        assert phi == pytest.approx(kp * e + acc, rel=1e-12, abs=1e-15)
        acc += ki * e * dt


@settings(max_examples=40, deadline=None)
@given(e=st.floats(-100, 100).filter(lambda v: abs(v) > 1e-3), steps=st.integers(10, 400))
def test_antiwindup_integrator_bounded_on_steps(e, steps):
    kp, ki, lo, hi, dt = 0.1, 1.0, 0.0, 1.0, 0.01
    s = AntiWindupPIState(kp, ki, 0.0, lo, hi)
    for _ in range(steps):
        phi, s, _ = antiwindup_pi_update(s, e, dt)
        assert lo <= phi <= hi
    # once clamped, the integrator stops one step past the limit
    bound = max(abs(lo), abs(hi)) + kp * abs(e) + ki * abs(e) * dt
    assert abs(s.integrator) <= bound
