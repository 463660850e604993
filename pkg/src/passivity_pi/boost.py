"""Averaged interleaved AC-DC boost with power-factor-correcting references.

State ``x = (i_L, v_C)``, input ``u = 1 - duty`` (the fraction of the period
the diode conducts). With two equal branches of ``L/2`` the averaged model is

    di_L/dt = -(2/L) u v_C + (2/L) E
    dv_C/dt = (1/C) u i_L - v_C / (R C)

and ``P = diag(L/2, C)`` certifies it, giving the passive output
``y = i_L_ref v_C - v_C_ref i_L``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bilinear import BilinearSystem, StorageCertificate, verify_storage_certificate
from .controllers import (
    AntiWindupPIState,
    ControllerState,
    PIGains,
    antiwindup_pi_update,
    pi_update,
    tanh_pi_update,
)
from .sim import Event, Scenario, register_plant

PLANT_ID = "boost_pfc"
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class BoostParams:
    L: float = 56e-6
    C: float = 3047e-6
    R: float = 22.0
    Vm: float = 9.0
    f_line: float = 50.0
    x2_ref: float = 15.0

    def __post_init__(self):
        for name in ("L", "C", "R", "Vm", "f_line", "x2_ref"):
            if not getattr(self, name) > 0:
                raise ValueError(f"boost parameter {name} must be positive")


def boost_dynamics(x, u: float, E: float, p: BoostParams) -> tuple[float, float]:
    x1, x2 = x
    return (-(2.0 / p.L) * u * x2 + (2.0 / p.L) * E, u * x1 / p.C - x2 / (p.R * p.C))


def rectified_source(t: float, Vm: float, f_line: float) -> float:
    return Vm * abs(math.sin(TWO_PI * f_line * t))


def boost_system(p: BoostParams, E: float | None = None) -> BilinearSystem:
    """Bilinear form of the boost; ``E=None`` uses the rectified AC source."""
    A = [[0.0, 0.0], [0.0, -1.0 / (p.R * p.C)]]
    B = [[0.0, -2.0 / p.L], [1.0 / p.C, 0.0]]
    if E is None:
        d = lambda t: np.array([2.0 * rectified_source(t, p.Vm, p.f_line) / p.L, 0.0])
    else:
        d_const = np.array([2.0 * E / p.L, 0.0])
        d = lambda t: d_const
    return BilinearSystem(A=A, B=(B,), d=d)


def boost_certificate(p: BoostParams) -> StorageCertificate:
    return verify_storage_certificate(boost_system(p, E=0.0), np.diag([p.L / 2.0, p.C]))


def boost_equilibrium(p: BoostParams, E: float) -> tuple[float, float, float]:
    """``(i_L, v_C, u)`` at the DC equilibrium with ``v_C = x2_ref``."""
    u = E / p.x2_ref
    return p.x2_ref**2 / (p.R * E), p.x2_ref, u


class BoostRefState(NamedTuple):
    x1_prev: float | None = None
    dx1_filt: float = 0.0


class ReferenceSample(NamedTuple):
    x1_star: float
    x1_star_dot: float
    u_star: float
    state: BoostRefState


def boost_reference(
    E: float,
    E_rms: float,
    phi: float,
    x2_star: float,
    state: BoostRefState,
    p: BoostParams,
    dt: float,
    lpf_alpha: float,
) -> ReferenceSample:
    """Current reference proportional to ``E`` and the matching feedforward.

    ``x1_ref = E phi / E_rms^2``; its derivative is a backward difference
    smoothed by a first-order low-pass with smoothing factor ``lpf_alpha``;
    ``u_ref = (2E - L dx1_ref/dt) / (2 x2_ref)``.
    """
    if x2_star <= 0:
        raise ValueError("the boost reference needs x2_star > 0")
    if E_rms <= 0:
        raise ValueError("E_rms must be positive")
    x1s = E * phi / (E_rms * E_rms)
    raw = 0.0 if state.x1_prev is None else (x1s - state.x1_prev) / dt
    filt = state.dx1_filt + lpf_alpha * (raw - state.dx1_filt)
    us = (2.0 * E - p.L * filt) / (2.0 * x2_star)
    return ReferenceSample(x1s, filt, us, BoostRefState(x1s, filt))


def lowpass_alpha(cutoff_hz: float, dt: float) -> float:
    wc = TWO_PI * cutoff_hz
    return dt * wc / (1.0 + dt * wc)


class RmsWindow:
    """Sliding RMS over a fixed number of samples."""

    def __init__(self, size: int, fallback: float):
        self.size = size
        self.buf = [0.0] * size
        self.idx = 0
        self.count = 0
        self.acc = 0.0
        self.fallback = fallback

    def push(self, v: float) -> float:
        sq = v * v
        self.acc += sq - self.buf[self.idx]
        self.buf[self.idx] = sq
        self.idx += 1
        if self.idx == self.size:
            self.idx = 0
            self.acc = math.fsum(self.buf)  # drop accumulated rounding once per window
        self.count += 1
        if self.count < self.size:
            return self.fallback
        return math.sqrt(max(self.acc / self.size, 0.0))

    @property
    def warm(self) -> bool:
        return self.count >= self.size


class BoostControllerState(NamedTuple):
    ref: BoostRefState
    pi: ControllerState
    outer: AntiWindupPIState
    phi: float
    phi_saturated: bool = False


class BoostStep(NamedTuple):
    u: float
    u_star: float
    y: float
    x1_star: float
    x1_star_dot: float
    duty_saturated: bool
    state: BoostControllerState


def boost_controller_step(
    x,
    E: float,
    E_rms: float,
    state: BoostControllerState,
    gains: PIGains,
    p: BoostParams,
    dt: float,
    lpf_alpha: float,
    outer_dt: float | None = None,
    v_sense_gain: float = 1.0,
    clamp: bool = True,
) -> BoostStep:
    """One sample of the full PFC controller.

    When ``outer_dt`` is given the voltage loop runs first and refreshes
    ``phi`` from the scaled error ``v_sense_gain * (x2_ref - v_C)``.
    """
    x1, x2 = x
    phi, outer, phi_sat = state.phi, state.outer, state.phi_saturated
    if outer_dt is not None:
        phi, outer, phi_sat = antiwindup_pi_update(outer, v_sense_gain * (p.x2_ref - x2), outer_dt)
    ref = boost_reference(E, E_rms, phi, p.x2_ref, state.ref, p, dt, lpf_alpha)
    y = ref.x1_star * x2 - p.x2_ref * x1
    if state.pi.mode == "tanh":
        u, pi = tanh_pi_update(state.pi, gains.Ki[0, 0], y, ref.u_star, dt)
    else:
        u, pi = pi_update(state.pi, gains, y, ref.u_star, dt)
    saturated = False
    if clamp:
        if u > 1.0:
            u, saturated = 1.0, True
        elif u < 0.0:
            u, saturated = 0.0, True
    new_state = BoostControllerState(ref.state, pi, outer, phi, phi_sat)
    return BoostStep(u, ref.u_star, y, ref.x1_star, ref.x1_star_dot, saturated, new_state)


class BoostLoop:
    """Closed-loop driver: plant, PFC reference generator and controller.

    ``reference: pfc`` (default) runs the full controller from the rectified
    AC source. ``reference: equilibrium`` feeds a DC source ``Vm`` and tracks
    the exact equilibrium, which makes the reference admissible; it is what
    the passivity monitors are checked against.
    """

    state_names = ("i_L", "v_C")
    input_names = ("u",)
    extra_names = ("E", "E_rms", "phi")
    flag_names = ("duty_saturated", "phi_saturated", "diode_clamped")

    def __init__(self, scenario: Scenario):
        pp = dict(scenario.params)
        self.reference = pp.pop("reference", "pfc")
        self.diode = bool(pp.pop("diode", self.reference == "pfc"))
        self.clamp = bool(pp.pop("clamp_duty", self.reference == "pfc"))
        self.v_sense_gain = float(pp.pop("v_sense_gain", 1000.0))
        self.lpf_hz = float(pp.pop("dx1_lowpass_hz", 2000.0))
        self.E_rms_override = pp.pop("E_rms", None)
        self.p = BoostParams(**pp)

        c = scenario.controller
        self.mode = c.get("mode", "linear")
        if self.mode not in ("linear", "tanh"):
            raise ValueError(f"unknown boost controller mode {self.mode!r}")
        self.gains = PIGains.scalar(float(c.get("Kp", 0.013)), float(c.get("Ki", 1e-4)))
        self.dt = scenario.dt * scenario.control_every
        self.lpf_alpha = lowpass_alpha(self.lpf_hz, self.dt)
        lo, hi = c.get("phi_limits", [0.0, 100.0])
        z0 = 0.0 if scenario.z0 is None else float(np.ravel(scenario.z0)[0])
        pi_state = ControllerState(z=z0, mode=self.mode, a=float(c.get("a", 55.0)), b=float(c.get("b", 0.25)))
        outer = AntiWindupPIState(
            kp=float(c.get("kp_comp", 0.011)),
            ki=float(c.get("ki_comp", 0.03)),
            integrator=float(c.get("phi0", 0.0)),
            lo=float(lo),
            hi=float(hi),
        )
        if not outer.lo < outer.hi:
            raise ValueError("phi_limits must satisfy lo < hi")
        self.cstate = BoostControllerState(BoostRefState(), pi_state, outer, outer.integrator)

        line_period = 1.0 / self.p.f_line
        self.outer_every = max(1, int(round(line_period / 100.0 / self.dt)))
        self.outer_dt = self.outer_every * self.dt
        window = max(1, int(round(0.5 * line_period / self.dt)))
        self.rms = RmsWindow(window, self.p.Vm / math.sqrt(2.0))
        self._k = 0

        if self.reference == "equilibrium":
            self.eq = boost_equilibrium(self.p, self.p.Vm)
        elif self.reference != "pfc":
            raise ValueError(f"unknown boost reference {self.reference!r}")
        self._refresh_consts()
        self.system = boost_system(self.p, E=self.p.Vm if self.reference == "equilibrium" else None)
        self.certificate = boost_certificate(self.p)

        if scenario.x0 is None:
            self.x0 = [0.0, self.p.Vm]
        else:
            self.x0 = [float(v) for v in scenario.x0]
        self._last = None

    def _refresh_consts(self):
        p = self.p
        self._2L = 2.0 / p.L
        self._iC = 1.0 / p.C
        self._iRC = 1.0 / (p.R * p.C)
        self._w = TWO_PI * p.f_line
        self._src_t, self._src_E = None, 0.0

    def source(self, t: float) -> float:
        if self.reference == "equilibrium":
            return self.p.Vm
        if t != self._src_t:
            # RK4 evaluates the mid-step time twice
            self._src_t, self._src_E = t, self.p.Vm * abs(math.sin(self._w * t))
        return self._src_E

    def initial_state(self):
        return list(self.x0)

    def rhs(self, t, x, u):
        E = self.source(t)
        u0 = u[0]
        return [self._2L * (E - u0 * x[1]), self._iC * u0 * x[0] - self._iRC * x[1]]

    def project(self, x):
        if self.diode and x[0] < 0.0:
            return [0.0, x[1]]
        return x

    def control(self, t, x):
        E = self.source(t)
        if self.reference == "equilibrium":
            return self._control_equilibrium(x, E)
        E_rms = self.rms.push(E) if self.E_rms_override is None else float(self.E_rms_override)
        outer_dt = self.outer_dt if self._k % self.outer_every == 0 else None
        self._k += 1
        step = boost_controller_step(
            x, E, E_rms, self.cstate, self.gains, self.p, self.dt, self.lpf_alpha,
            outer_dt=outer_dt, v_sense_gain=self.v_sense_gain, clamp=self.clamp,
        )
        z = self.cstate.pi.z
        self.cstate = step.state
        self._last = (
            step.x1_star, self.p.x2_ref, step.x1_star_dot, 0.0,
            step.u, step.u_star, step.y, z,
            E, E_rms, step.state.phi,
            float(step.duty_saturated), float(step.state.phi_saturated), float(x[0] <= 0.0),
        )
        return [step.u]

    def _control_equilibrium(self, x, E):
        x1s, x2s, us = self.eq
        y = x1s * x[1] - x2s * x[0]
        z = self.cstate.pi.z
        if self.mode == "tanh":
            u, pi = tanh_pi_update(self.cstate.pi, self.gains.Ki[0, 0], y, us, self.dt)
        else:
            u, pi = pi_update(self.cstate.pi, self.gains, y, us, self.dt)
        sat = False
        if self.clamp and not 0.0 <= u <= 1.0:
            u, sat = min(max(u, 0.0), 1.0), True
        self.cstate = self.cstate._replace(pi=pi)
        self._last = (
            x1s, x2s, 0.0, 0.0, u, us, y, z, E, E / math.sqrt(2.0), 0.0,
            float(sat), 0.0, float(x[0] <= 0.0),
        )
        return [u]

    def record(self):
        return self._last

    def apply_event(self, event: Event):
        fields = dict(self.p.__dict__)
        for k, v in event.set.items():
            if k not in fields:
                raise ValueError(f"unknown boost parameter {k!r} in event")
            fields[k] = float(v)
        for k, v in event.scale.items():
            if k not in fields:
                raise ValueError(f"unknown boost parameter {k!r} in event")
            fields[k] *= float(v)
        self.p = BoostParams(**fields)
        self._refresh_consts()
        if self.reference == "equilibrium":
            self.eq = boost_equilibrium(self.p, self.p.Vm)


@register_plant(PLANT_ID)
def _factory(scenario: Scenario) -> BoostLoop:
    return BoostLoop(scenario)


def ac_side(signal, t, f_line: float) -> np.ndarray:
    """Undo the bridge rectification: multiply by the sign of the line voltage."""
    s = np.sign(np.sin(TWO_PI * f_line * np.asarray(t)))
    return np.asarray(signal) * s


def settled_after(t, signal, target: float, band: float, start: float, end: float | None = None) -> float:
    """Time from ``start`` until ``signal`` stays inside ``target (1 +- band)``.

    Only samples in ``[start, end)`` count; returns ``inf`` when the signal
    is outside the band at the end of that range.
    """
    t = np.asarray(t)
    mask = (t >= start) if end is None else (t >= start) & (t < end)
    tt, ss = t[mask], np.asarray(signal)[mask]
    inside = np.abs(ss - target) <= band * abs(target)
    if not inside[-1]:
        return float("inf")
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return 0.0
    return float(tt[outside[-1] + 1] - start)


def summarize(trace, scenario: Scenario) -> dict:
    """PF, THD, settling and recovery figures for a boost trace.

    PF uses the rectified-side pair ``(E, i_L)``; THD uses the line current
    ``i_L sign(sin)``. ``v_C`` is judged on its mean over one rectified
    period so the 100 Hz ripple is not counted as a tracking error.
    """
    from . import metrics as M

    p = BoostParams(**{k: scenario.params[k] for k in ("L", "C", "R", "Vm", "f_line", "x2_ref") if k in scenario.params})
    mcfg = scenario.metrics
    periods = int(mcfg.get("steady_periods", 5))
    band = float(mcfg.get("band", 0.02))
    nh = int(mcfg.get("n_harmonics", 40))
    cols = trace.columns()
    t = trace.t
    fs = 1.0 / trace.sample_dt
    win = M.SteadyWindow.last_periods(t, p.f_line, periods)
    sl = win.slice(t)
    avg = M.moving_average(cols["v_C"], max(1, int(round(0.5 / p.f_line * fs))))
    first_event = scenario.events[0].t if scenario.events else None

    out = dict(
        plant=PLANT_ID,
        mode=scenario.controller.get("mode", "linear"),
        window_start=win.start,
        window_end=win.end,
        power_factor=M.power_factor(cols["E"][sl], cols["i_L"][sl]),
        thd=M.thd(ac_side(cols["i_L"], t, p.f_line)[sl], fs, p.f_line, nh),
        reference_power_factor=M.power_factor(cols["E"][sl], cols["i_L_ref"][sl]),
        settling_time=settled_after(t, avg, p.x2_ref, band, 0.0, first_event),
        v_C_mean_final=float(np.mean(cols["v_C"][sl])),
        v_C_ripple_pp=float(np.ptp(cols["v_C"][sl])),
        v_C_min=float(np.min(cols["v_C"][1:])) if len(t) > 1 else float(cols["v_C"][0]),
        i_L_tracking_rms=M.rms(cols["i_L"][sl] - cols["i_L_ref"][sl]),
        phi_final=float(cols["phi"][-1]),
        duty_saturation_fraction=float(np.mean(trace.flags["duty_saturated"][sl])),
        phi_saturation_fraction=float(np.mean(trace.flags["phi_saturated"][sl])),
        diode_clamp_fraction=float(np.mean(trace.flags["diode_clamped"][sl])),
    )
    recoveries = []
    for ev in scenario.events:
        recoveries.append(dict(t=ev.t, recovery_time=settled_after(t, avg, p.x2_ref, band, ev.t)))
    out["events"] = recoveries
    return out
