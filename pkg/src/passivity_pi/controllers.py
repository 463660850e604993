"""PI laws for passive outputs, plus the anti-windup PI of the boost voltage loop.

All updates are pure: they take a state value and return ``(u, new_state)``.
Scalar (``m == 1``) controllers keep floats throughout so they stay cheap in
per-step simulation loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

Vector = Union[float, np.ndarray]


def _as_gain(K) -> np.ndarray:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape[0] != K.shape[1]:
        raise ValueError(f"gain matrix must be square, got {K.shape}")
    return K


@dataclass(frozen=True)
class PIGains:
    """Symmetric positive-definite proportional and integral gains.

    Zero gains are accepted when ``allow_zero`` is set, which gives a pure
    feedforward controller (used for open-loop runs and tests).
    """

    Kp: np.ndarray
    Ki: np.ndarray
    allow_zero: bool = False

    def __post_init__(self):
        Kp, Ki = _as_gain(self.Kp), _as_gain(self.Ki)
        if Kp.shape != Ki.shape:
            raise ValueError("Kp and Ki must have the same shape")
        for name, K in (("Kp", Kp), ("Ki", Ki)):
            if K.size == 0:  # input-free plant
                continue
            if not np.allclose(K, K.T, rtol=1e-12, atol=1e-15):
                raise ValueError(f"{name} must be symmetric")
            lam = np.linalg.eigvalsh(K)[0]
            if lam < 0 or (lam == 0 and not self.allow_zero):
                raise ValueError(f"{name} must be positive definite")
        object.__setattr__(self, "Kp", Kp)
        object.__setattr__(self, "Ki", Ki)

    @classmethod
    def scalar(cls, kp: float, ki: float, allow_zero: bool = False) -> "PIGains":
        return cls(np.array([[kp]]), np.array([[ki]]), allow_zero=allow_zero)

    @property
    def m(self) -> int:
        return self.Kp.shape[0]


class ControllerState(NamedTuple):
    z: Vector
    mode: str = "linear"
    a: float = 1.0
    b: float = 0.0


class AntiWindupPIState(NamedTuple):
    kp: float
    ki: float
    integrator: float
    lo: float
    hi: float


def pi_update(state: ControllerState, gains: PIGains, y, u_star, dt: float):
    """``u = -Kp y + Ki z + u_star`` with the current ``z``; ``z' = z - dt y``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    z = state.z
    if gains.m == 1 and not isinstance(y, np.ndarray):
        u = -gains.Kp[0, 0] * y + gains.Ki[0, 0] * z + u_star
    else:
        y = np.asarray(y, dtype=float)
        u = -gains.Kp @ y + gains.Ki @ np.asarray(z, dtype=float) + np.asarray(u_star, dtype=float)
    return u, state._replace(z=z - dt * y)


def tanh_pi_update(state: ControllerState, Ki, y, u_star, dt: float):
    """``u = -b tanh(y / a) + Ki z + u_star``, tanh taken component-wise."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    a, b = state.a, state.b
    if a <= 0 or b <= 0:
        raise ValueError("tanh parameters a and b must be positive")
    z = state.z
    if not isinstance(y, np.ndarray) and np.ndim(Ki) == 0:
        u = -b * math.tanh(y / a) + Ki * z + u_star
    else:
        Ki = _as_gain(Ki)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        u = -b * np.tanh(y / a) + Ki @ np.atleast_1d(z) + np.asarray(u_star, dtype=float)
    return u, state._replace(z=z - dt * y)


def antiwindup_pi_update(state: AntiWindupPIState, e: float, dt: float):
    """Clamped PI with conditional integration.

    The output is ``clamp(kp e + integrator, lo, hi)``. The integrator only
    advances by ``ki e dt`` when doing so would not push further into an
    active limit. Returns ``(phi, new_state, saturated)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    raw = state.kp * e + state.integrator
    if raw > state.hi:
        phi, saturated = state.hi, True
        hold = e > 0
    elif raw < state.lo:
        phi, saturated = state.lo, True
        hold = e < 0
    else:
        phi, saturated, hold = raw, False, False
    if hold:
        return phi, state, saturated
    return phi, state._replace(integrator=state.integrator + state.ki * e * dt), saturated
