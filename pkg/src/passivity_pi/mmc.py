"""Single-phase averaged MMC model, reference generation and PI controller.

State ``x = (i_diff, i_v, u_CS, u_CD)`` with ``u_CS = u_CU + u_CL`` and
``u_CD = u_CU - u_CL``; input ``u = (u_S, u_D)``, the sum and difference of
the upper and lower insertion indexes. The point of common coupling is
grounded, so the grid-current equation has no external source.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .bilinear import BilinearSystem, StorageCertificate, verify_storage_certificate
from .controllers import ControllerState, PIGains, pi_update
from .sim import Event, Scenario, register_plant

log = logging.getLogger(__name__)

PLANT_ID = "mmc"
TWO_PI = 2.0 * math.pi


class InfeasibleReference(ValueError):
    """Arm-energy reference leaves a negative radicand."""


@dataclass(frozen=True)
class MMCParams:
    R: float = 8.0
    L: float = 10e-3
    R_load: float = 6.0
    L_load: float = 20e-3
    C: float = 3.3e-3
    N: int = 5
    V_dc: float = 150.0
    e_amp: float = 75.0
    f: float = 50.0

    def __post_init__(self):
        for name in ("R", "L", "C", "N", "V_dc", "f"):
            if not getattr(self, name) > 0:
                raise ValueError(f"MMC parameter {name} must be positive")
        for name in ("R_load", "L_load", "e_amp"):
            if getattr(self, name) < 0:
                raise ValueError(f"MMC parameter {name} must be non-negative")
        if self.e_amp > self.V_dc / 2.0 + 1e-12:
            raise ValueError("e_amp must not exceed V_dc / 2")

    @property
    def Rp(self) -> float:
        return self.R / 2.0 + self.R_load

    @property
    def Lp(self) -> float:
        return self.L / 2.0 + self.L_load

    @property
    def Cp(self) -> float:
        return self.C / self.N

    @property
    def omega(self) -> float:
        return TWO_PI * self.f


def mmc_dynamics(x, u, p: MMCParams) -> tuple[float, float, float, float]:
    x1, x2, x3, x4 = x
    u1, u2 = u
    L, Lp, Cp = p.L, p.Lp, p.Cp
    return (
        -p.R / L * x1 - (x3 * u1 + x4 * u2) / (4.0 * L) + p.V_dc / (2.0 * L),
        -p.Rp / Lp * x2 - (x4 * u1 + x3 * u2) / (4.0 * Lp),
        x1 * u1 / Cp + x2 * u2 / (2.0 * Cp),
        x2 * u1 / (2.0 * Cp) + x1 * u2 / Cp,
    )


def mmc_system(p: MMCParams) -> BilinearSystem:
    L, Lp, Cp = p.L, p.Lp, p.Cp
    A = np.diag([-p.R / L, -p.Rp / Lp, 0.0, 0.0])
    B1 = np.zeros((4, 4))
    B1[0, 2], B1[1, 3], B1[2, 0], B1[3, 1] = -1 / (4 * L), -1 / (4 * Lp), 1 / Cp, 1 / (2 * Cp)
    B2 = np.zeros((4, 4))
    B2[0, 3], B2[1, 2], B2[2, 1], B2[3, 0] = -1 / (4 * L), -1 / (4 * Lp), 1 / (2 * Cp), 1 / Cp
    d = np.array([p.V_dc / (2 * L), 0.0, 0.0, 0.0])
    return BilinearSystem(A=A, B=(B1, B2), d=lambda t: d)


def mmc_certificate(p: MMCParams) -> StorageCertificate:
    P = np.diag([2 * p.L, p.Lp, p.Cp / 2, p.Cp / 2])
    return verify_storage_certificate(mmc_system(p), P)


def grid_current_phasor(p: MMCParams, e_amp: float | None = None) -> tuple[float, float]:
    """Amplitude and lag of the load current for a sinusoidal e.m.f."""
    e = p.e_amp if e_amp is None else e_amp
    wL = p.omega * p.Lp
    return e / math.hypot(p.Rp, wL), math.atan2(wL, p.Rp)


def grid_current_ref(t: float, p: MMCParams) -> float:
    amp, lag = grid_current_phasor(p)
    return amp * math.sin(p.omega * t - lag)


def circulating_current_ref(p: MMCParams, method: str = "lossless") -> tuple[float, float]:
    """Constant circulating-current reference and the voltage ``R x1`` driving it.

    ``lossless`` balances the mean AC power against ``V_dc x1``. ``arm_loss``
    also charges the arm resistance, solving ``V_dc x1 - 2 R x1^2 = P_ac``
    for the smaller root.
    """
    amp, lag = grid_current_phasor(p)
    p_ac = 0.5 * p.e_amp * amp * math.cos(lag)
    if method == "lossless":
        x1 = p_ac / p.V_dc
    elif method == "arm_loss":
        disc = p.V_dc**2 - 8.0 * p.R * p_ac
        if disc < 0:
            raise InfeasibleReference("DC link cannot supply the load through the arm resistance")
        x1 = (p.V_dc - math.sqrt(disc)) / (4.0 * p.R)
    else:
        raise ValueError(f"unknown circulating-current method {method!r}")
    return x1, p.R * x1


class MMCRefState(NamedTuple):
    dw_sigma: float = 0.0
    dw_delta: float = 0.0
    hp_sigma: float = 0.0
    hp_delta: float = 0.0
    prev_sigma: float = 0.0
    prev_delta: float = 0.0
    W_sigma_ref: float = 0.0
    W_delta_ref: float = 0.0
    u_diff: float = 0.0


def hpf_alpha(cutoff_hz: float, dt: float) -> float:
    tau = 1.0 / (TWO_PI * cutoff_hz)
    return tau / (tau + dt)


def energy_integrands(e_v, x2s, x1s, u_diff, V_dc) -> tuple[float, float]:
    vd = V_dc - 2.0 * u_diff
    return -e_v * x2s + vd * x1s, 0.5 * x2s * vd - 2.0 * e_v * x1s


def energy_fluctuations_step(
    state: MMCRefState, e_v, x2s, x1s, u_diff, V_dc, dt: float, alpha: float
) -> MMCRefState:
    """High-pass the energy integrands, then advance their Euler integrals.

    The filter is ``h_k = alpha (h_{k-1} + p_k - p_{k-1})`` with
    ``alpha = tau / (tau + dt)``; the integrals advance with the new ``h``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    ps, pd = energy_integrands(e_v, x2s, x1s, u_diff, V_dc)
    hs = alpha * (state.hp_sigma + ps - state.prev_sigma)
    hd = alpha * (state.hp_delta + pd - state.prev_delta)
    return state._replace(
        dw_sigma=state.dw_sigma + dt * hs,
        dw_delta=state.dw_delta + dt * hd,
        hp_sigma=hs,
        hp_delta=hd,
        prev_sigma=ps,
        prev_delta=pd,
    )


def capacitor_voltage_refs(state: MMCRefState, p: MMCParams) -> tuple[float, float, float, float]:
    """``(u_CU, u_CL, x3, x4)`` references from the arm-energy estimate."""
    ws = state.W_sigma_ref + state.dw_sigma
    wd = state.W_delta_ref + state.dw_delta
    k = p.N / p.C
    if ws + wd < 0 or ws - wd < 0:
        raise InfeasibleReference(f"negative arm energy (sum {ws:.6g} J, difference {wd:.6g} J)")
    ucu = math.sqrt(k * (ws + wd))
    ucl = math.sqrt(k * (ws - wd))
    return ucu, ucl, ucu + ucl, ucu - ucl


def feedforward_inputs(e_v, u_diff, V_dc, u_cu, u_cl) -> tuple[float, float]:
    if u_cu <= 0 or u_cl <= 0:
        raise InfeasibleReference("arm voltage reference must be positive")
    nu = (V_dc / 2.0 - e_v - u_diff) / u_cu
    nl = (V_dc / 2.0 + e_v - u_diff) / u_cl
    if not (0.0 <= nu <= 1.0 and 0.0 <= nl <= 1.0):
        log.debug("insertion index outside [0, 1]: n_u=%.4g n_l=%.4g", nu, nl)
    return nu + nl, nu - nl


def mmc_output(x, xs) -> tuple[float, float]:
    x1, x2, x3, x4 = x
    s1, s2, s3, s4 = xs
    return (
        0.5 * (s1 * x3 - x1 * s3 + 0.5 * s2 * x4 - 0.5 * x2 * s4),
        0.5 * (s1 * x4 - x1 * s4 + 0.5 * s2 * x3 - 0.5 * x2 * s3),
    )


def mmc_controller_step(x, x_star, u_star, state: ControllerState, gains: PIGains, dt: float):
    """``u = -Kp y + Ki z + u_star`` on the two-channel passive output."""
    y = np.array(mmc_output(x, x_star))
    u, state = pi_update(state, gains, y, np.asarray(u_star, dtype=float), dt)
    return u, y, state


def _gain(K) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    return K * np.eye(2) if K.ndim == 0 else K


class MMCLoop:
    """Closed-loop MMC phase with the full reference generator.

    The e.m.f. amplitude (and so every reference) ramps linearly from zero
    over two high-pass time constants.
    """

    state_names = ("i_diff", "i_v", "u_CS", "u_CD")
    input_names = ("u_S", "u_D")
    extra_names = ("u_CU", "u_CL", "u_CU_ref", "u_CL_ref", "e_v", "n_u", "n_l")
    flag_names = ("rank_deficient", "overmodulated")

    def __init__(self, scenario: Scenario):
        pp = dict(scenario.params)
        self.hpf_cutoff = float(pp.pop("hpf_cutoff", 5.0))
        W_sigma = pp.pop("W_sigma_ref", None)
        W_delta = float(pp.pop("W_delta_ref", 0.0))
        self.idiff_ref = pp.pop("idiff_ref", "lossless")
        self.ramp = bool(pp.pop("ramp", True))
        self.p = MMCParams(**pp)
        p = self.p
        if W_sigma is None:
            W_sigma = p.C / p.N * p.V_dc**2

        c = scenario.controller
        mode = c.get("mode", "linear")
        if mode not in ("linear", "open_loop"):
            raise ValueError(f"unsupported MMC controller mode {mode!r}")
        self.gains = PIGains(_gain(c.get("Kp", 1e-3)), _gain(c.get("Ki", 1e-2)), allow_zero=mode == "open_loop")
        z0 = np.zeros(2) if scenario.z0 is None else np.asarray(scenario.z0, dtype=float)
        self.cstate = ControllerState(z=z0)
        self.dt = scenario.dt * scenario.control_every
        self.alpha = hpf_alpha(self.hpf_cutoff, self.dt)
        self.t_ramp = 2.0 / (TWO_PI * self.hpf_cutoff) if self.ramp else 0.0

        self.x1_full, _ = circulating_current_ref(p, self.idiff_ref)
        self.amp, self.lag = grid_current_phasor(p)
        self.ref = MMCRefState(W_sigma_ref=float(W_sigma), W_delta_ref=W_delta)
        self.system = mmc_system(p)
        self.certificate = mmc_certificate(p)
        self.x0 = [0.0, 0.0, 2.0 * p.V_dc, 0.0] if scenario.x0 is None else [float(v) for v in scenario.x0]
        self._rank_sign = None
        self._deficient_since_record = False
        self._last = None
        self._consts()

    def _consts(self):
        p = self.p
        self._c = (p.R / p.L, 1 / (4 * p.L), p.V_dc / (2 * p.L), p.Rp / p.Lp, 1 / (4 * p.Lp), 1 / p.Cp, 1 / (2 * p.Cp))

    def initial_state(self):
        return list(self.x0)

    def rhs(self, t, x, u):
        a, b, dc, ap, bp, ic, ic2 = self._c
        x1, x2, x3, x4 = x
        u1, u2 = u
        return [
            -a * x1 - b * (x3 * u1 + x4 * u2) + dc,
            -ap * x2 - bp * (x4 * u1 + x3 * u2),
            ic * x1 * u1 + ic2 * x2 * u2,
            ic2 * x2 * u1 + ic * x1 * u2,
        ]

    def ramp_factor(self, t: float) -> tuple[float, float]:
        if self.t_ramp <= 0 or t >= self.t_ramp:
            return 1.0, 0.0
        return t / self.t_ramp, 1.0 / self.t_ramp

    def control(self, t, x):
        p = self.p
        r, dr = self.ramp_factor(t)
        w = p.omega
        s, co = math.sin(w * t), math.cos(w * t)
        sl, cl = math.sin(w * t - self.lag), math.cos(w * t - self.lag)
        e_v = r * p.e_amp * s
        x2s = r * self.amp * sl
        x1s = r * self.x1_full
        u_diff = p.R * x1s

        ref = energy_fluctuations_step(self.ref, e_v, x2s, x1s, u_diff, p.V_dc, self.dt, self.alpha)
        ucu, ucl, x3s, x4s = capacitor_voltage_refs(self.ref, p)
        self.ref = ref._replace(u_diff=u_diff)
        us = feedforward_inputs(e_v, u_diff, p.V_dc, ucu, ucl)
        nu, nl = 0.5 * (us[0] + us[1]), 0.5 * (us[0] - us[1])

        # analytic reference derivatives; the energy integrals move at the filtered rates
        k = p.N / p.C
        dcu = k * (ref.hp_sigma + ref.hp_delta) / (2.0 * ucu)
        dcl = k * (ref.hp_sigma - ref.hp_delta) / (2.0 * ucl)
        xs = (x1s, x2s, x3s, x4s)
        xs_dot = (dr * self.x1_full, dr * self.amp * sl + r * self.amp * w * cl, dcu + dcl, dcu - dcl)

        z = self.cstate.z
        u, y, self.cstate = mmc_controller_step(x, xs, us, self.cstate, self.gains, self.dt)
        margin = x1s * x1s - 0.25 * x2s * x2s
        sign = margin > 0
        deficient = margin == 0.0 or (self._rank_sign is not None and sign != self._rank_sign)
        self._rank_sign = sign
        self._deficient_since_record = self._deficient_since_record or deficient
        over = not (0.0 <= nu <= 1.0 and 0.0 <= nl <= 1.0)
        self._last = (
            *xs, *xs_dot, u[0], u[1], us[0], us[1], y[0], y[1], z[0], z[1],
            0.5 * (x[2] + x[3]), 0.5 * (x[2] - x[3]), ucu, ucl, e_v, nu, nl,
            float(deficient), float(over),
        )
        return [float(u[0]), float(u[1])]

    def record(self):
        # a rank crossing between recorded samples is reported on the next one
        row = self._last[:-2] + (float(self._deficient_since_record), self._last[-1])
        self._deficient_since_record = False
        return row

    def apply_event(self, event: Event):
        fields = dict(self.p.__dict__)
        for k, v in list(event.set.items()) + [(k, fields.get(k, 0) * v) for k, v in event.scale.items()]:
            if k not in fields:
                raise ValueError(f"unknown MMC parameter {k!r} in event")
            fields[k] = v
        self.p = MMCParams(**fields)
        self.x1_full, _ = circulating_current_ref(self.p, self.idiff_ref)
        self.amp, self.lag = grid_current_phasor(self.p)
        self._consts()


@register_plant(PLANT_ID)
def _factory(scenario: Scenario) -> MMCLoop:
    return MMCLoop(scenario)


def summarize(trace, scenario: Scenario) -> dict:
    """Steady tracking errors of the grid current and the arm voltages.

    The grid-current error is relative to the reference amplitude, the arm
    voltage errors to the RMS of their references; all over the last
    ``steady_periods`` periods.
    """
    from . import metrics as M

    loop = MMCLoop(scenario)
    p = loop.p
    periods = int(scenario.metrics.get("steady_periods", 5))
    cols = trace.columns()
    win = M.SteadyWindow.last_periods(trace.t, p.f, periods)
    sl = win.slice(trace.t)
    amp, lag = grid_current_phasor(p)
    out = dict(
        plant=PLANT_ID,
        idiff_ref=loop.idiff_ref,
        window_start=win.start,
        window_end=win.end,
        i_v_amplitude=amp,
        i_v_phase=-lag,
        i_diff_ref=loop.x1_full,
        i_diff_mean=float(np.mean(cols["i_diff"][sl])),
        i_v_rms_error_rel=M.rms(cols["i_v"][sl] - cols["i_v_ref"][sl]) / amp if amp > 0 else 0.0,
    )
    for arm in ("u_CU", "u_CL"):
        ref = cols[f"{arm}_ref"][sl]
        out[f"{arm}_rms_error_rel"] = M.rms(cols[arm][sl] - ref) / M.rms(ref)
    out["u_CS_mean"] = float(np.mean(cols["u_CS"][sl]))
    out["u_CS_ref_mean"] = float(np.mean(cols["u_CS_ref"][sl]))
    out["rank_deficient_samples"] = int(np.sum(trace.flags["rank_deficient"]))
    out["overmodulation_fraction"] = float(np.mean(trace.flags["overmodulated"][sl]))
    return out
