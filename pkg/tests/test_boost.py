import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from passivity_pi.bilinear import passive_output
from passivity_pi.boost import (
    BoostControllerState,
    BoostParams,
    BoostRefState,
    RmsWindow,
    ac_side,
    boost_certificate,
    boost_controller_step,
    boost_dynamics,
    boost_equilibrium,
    boost_reference,
    boost_system,
    lowpass_alpha,
    rectified_source,
    settled_after,
)
from passivity_pi.controllers import AntiWindupPIState, ControllerState, PIGains

P = BoostParams()
GAINS = PIGains.scalar(0.013, 1e-4)


def controller_state(phi=0.0, mode="linear", z=0.0):
    return BoostControllerState(
        ref=BoostRefState(),
        pi=ControllerState(z=z, mode=mode, a=55.0, b=0.25),
        outer=AntiWindupPIState(0.011, 0.03, phi, 0.0, 40.0),
        phi=phi,
    )


def test_dynamics_equilibrium():
    x1 = 15.0 / (22.0 * 0.6)
    assert x1 == pytest.approx(1.136, abs=5e-4)
    dx = boost_dynamics((x1, 15.0), 0.6, 9.0, P)
    # 1e-9 relative to the largest term in each equation
    assert abs(dx[0]) <= 1e-9 * 2 * 9.0 / P.L
    assert abs(dx[1]) <= 1e-9 * 15.0 / (P.R * P.C)


def test_dynamics_zero_and_open_switch():
    assert boost_dynamics((0.0, 0.0), 0.37, 0.0, P) == (0.0, 0.0)
    dx = boost_dynamics((0.0, 15.0), 0.0, 9.0, P)
    assert dx[0] == pytest.approx(2 * 9.0 / P.L, rel=1e-15)
    assert dx[1] == pytest.approx(-15.0 / (P.R * P.C), rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(x1=st.floats(-5, 5), x2=st.floats(0, 40), u=st.floats(0, 1), E=st.floats(0, 9))
def test_dynamics_match_bilinear_form(x1, x2, u, E):
    sys = boost_system(P, E=E)
    np.testing.assert_allclose(boost_dynamics((x1, x2), u, E, P), sys.rhs(0.0, np.array([x1, x2]), [u]),
                               rtol=1e-12, atol=1e-9)


def test_rectified_source():
    assert rectified_source(0.0, 9.0, 50.0) == 0.0
    assert rectified_source(0.005, 9.0, 50.0) == pytest.approx(9.0, rel=1e-15)
    t = np.linspace(0, 0.02, 37)
    np.testing.assert_allclose([rectified_source(v, 9.0, 50.0) for v in t],
                               [rectified_source(v + 0.01, 9.0, 50.0) for v in t], atol=1e-12)


def test_reference_examples():
    r = boost_reference(9.0, 9.0 / math.sqrt(2), 2.0, 15.0, BoostRefState(), P, 1e-6, 0.5)
    assert r.x1_star == pytest.approx(18.0 / 40.5, rel=1e-14)
    assert r.x1_star == pytest.approx(0.4444, abs=5e-5)
    # first sample has no history: derivative estimate starts at zero
    assert r.x1_star_dot == 0.0
    assert r.u_star == pytest.approx(0.6, rel=1e-15)
    r0 = boost_reference(4.0, 6.0, 0.0, 15.0, BoostRefState(x1_prev=0.0), P, 1e-6, 0.5)
    assert r0.x1_star == 0.0 and r0.u_star == pytest.approx(4.0 / 15.0)


def test_reference_rejects_nonpositive_voltage():
    with pytest.raises(ValueError):
        boost_reference(9.0, 6.0, 1.0, 0.0, BoostRefState(), P, 1e-6, 0.5)
    with pytest.raises(ValueError):
        boost_reference(9.0, 0.0, 1.0, 15.0, BoostRefState(), P, 1e-6, 0.5)


def test_reference_derivative_tracks_sinusoid():
    dt = 1e-6
    alpha = lowpass_alpha(2000.0, dt)
    state, phi, E_rms = BoostRefState(), 12.0, 9.0 / math.sqrt(2)
    w = 2 * math.pi * 50
    errs = []
    for k in range(20000):
        t = k * dt
        r = boost_reference(rectified_source(t, 9.0, 50.0), E_rms, phi, 15.0, state, P, dt, alpha)
        state = r.state
        if k > 2000 and 0.002 < t % 0.01 < 0.008:  # away from the rectifier cusps
            exact = 9.0 * phi / E_rms**2 * w * math.cos(w * t) * math.copysign(1, math.sin(w * t))
            errs.append(abs(r.x1_star_dot - exact) / (9.0 * phi / E_rms**2 * w))
    # first-order lag at 2 kHz: phase error ~ 50/2000 rad
    assert max(errs) < 0.04


def test_lowpass_alpha():
    assert lowpass_alpha(2000.0, 1e-6) == pytest.approx(0.012411, abs=1e-6)
    assert 0 < lowpass_alpha(1.0, 1.0) < 1


def test_rms_window_sine():
    n = 10000
    w = RmsWindow(n, fallback=-1.0)
    vals = [w.push(9 * abs(math.sin(math.pi * k / n))) for k in range(3 * n)]
    assert vals[n - 2] == -1.0
    assert w.warm
    assert vals[-1] == pytest.approx(9 / math.sqrt(2), rel=1e-9)


def test_controller_step_on_reference_gives_feedforward():
    E, E_rms, phi = 6.0, 9 / math.sqrt(2), 10.0
    x1s = E * phi / E_rms**2
    step = boost_controller_step((x1s, 15.0), E, E_rms, controller_state(phi), GAINS, P, 1e-6, 0.1)
    assert step.y == pytest.approx(0.0, abs=1e-12)
    assert step.u == pytest.approx(step.u_star, abs=1e-14)
    assert step.u == pytest.approx(E / 15.0, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(x1=st.floats(-3, 3), x2=st.floats(1, 30), E=st.floats(0, 9), phi=st.floats(0, 40))
def test_output_matches_passive_output(x1, x2, E, phi):
    E_rms = 9 / math.sqrt(2)
    step = boost_controller_step((x1, x2), E, E_rms, controller_state(phi), GAINS, P, 1e-6, 0.1)
    cert = boost_certificate(P)
    y = passive_output(cert.P, boost_system(P).B, [step.x1_star, P.x2_ref], [x1, x2])[0]
    # (B x_ref)^T P = (-x2_ref, x1_ref): the certificate scaling cancels exactly
    assert y == pytest.approx(step.y, rel=1e-12, abs=1e-12 * max(1.0, abs(x1 * 15), abs(x2)))


def test_duty_clamped_and_flagged():
    step = boost_controller_step((50.0, 15.0), 9.0, 6.36, controller_state(1.0), PIGains.scalar(10.0, 1e-4),
                                 P, 1e-6, 0.1)
    assert step.u == 1.0 and step.duty_saturated
    step = boost_controller_step((50.0, 15.0), 9.0, 6.36, controller_state(1.0), PIGains.scalar(10.0, 1e-4),
                                 P, 1e-6, 0.1, clamp=False)
    assert step.u > 1.0 and not step.duty_saturated


def test_outer_loop_refreshes_phi():
    s = controller_state(phi=5.0)
    step = boost_controller_step((0.0, 14.0), 0.0, 6.36, s, GAINS, P, 1e-6, 0.1, outer_dt=2e-4, v_sense_gain=1000)
    assert step.state.phi == pytest.approx(5.0 + 0.011 * 1000.0)
    step = boost_controller_step((0.0, 14.0), 0.0, 6.36, s, GAINS, P, 1e-6, 0.1)
    assert step.state.phi == 5.0


def test_equilibrium_helper():
    x1, x2, u = boost_equilibrium(P, 9.0)
    assert (x1, x2, u) == pytest.approx((225 / 198, 15.0, 0.6))


def test_ac_side_and_settling():
    t = np.arange(0, 0.04, 1e-4)
    rect = np.abs(np.sin(2 * np.pi * 50 * t))
    np.testing.assert_allclose(ac_side(rect, t, 50.0), np.sin(2 * np.pi * 50 * t), atol=1e-12)
    sig = np.where(t < 0.01, 10.0, 15.1)
    assert settled_after(t, sig, 15.0, 0.02, start=0.0) == pytest.approx(0.01, abs=1e-4)
    assert settled_after(t, sig, 15.0, 0.001, start=0.0) == math.inf
