"""Generic bilinear plant driver with a constant reference.

Plant id ``"bilinear"``. Parameters: ``A`` (n x n), ``B`` (list of n x n),
optional constant ``d`` (solved for admissibility of the reference when
omitted), ``x_star``, ``u_star`` and optionally a certificate ``P`` (a
diagonal one is searched for otherwise).

Controller modes: ``linear`` and ``tanh`` PI laws, ``open_loop`` (apply
``u_star``) and ``random`` (``u_star`` plus a uniform perturbation of size
``amplitude``, redrawn every ``hold`` steps from the scenario seed). The
integrator is updated in every mode so the trace stays comparable.

``integrator: euler`` (default) advances ``z`` once per control sample and
holds ``u`` over the step. ``integrator: continuous`` integrates ``z``
together with the plant inside each RK4 step and evaluates the PI law at
every stage, which simulates the continuous-time controller itself.
"""

from __future__ import annotations

import numpy as np

from .bilinear import (
    BilinearSystem,
    output_matrix,
    search_diagonal_certificate,
    verify_storage_certificate,
)
from .controllers import ControllerState, PIGains, pi_update, tanh_pi_update
from .sim import Event, Scenario, register_plant


def admissible_disturbance(A, B, x_star, u_star) -> np.ndarray:
    """Constant ``d`` making the constant pair ``(x_star, u_star)`` an equilibrium."""
    M = np.array(A, dtype=float)
    for ui, Bi in zip(u_star, B):
        M = M + ui * np.asarray(Bi, dtype=float)
    return -M @ np.asarray(x_star, dtype=float)


def _matrix_gain(K, m: int) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        return K * np.eye(m)
    return np.atleast_2d(K)


class BilinearLoop:
    extra_names: tuple[str, ...] = ()
    flag_names: tuple[str, ...] = ()

    def __init__(self, scenario: Scenario):
        p = scenario.params
        A = np.asarray(p["A"], dtype=float)
        B = [np.asarray(Bi, dtype=float) for Bi in p.get("B", [])]
        n, m = A.shape[0], len(B)
        self.x_star = np.asarray(p.get("x_star", np.zeros(n)), dtype=float)
        self.u_star = np.asarray(p.get("u_star", np.zeros(m)), dtype=float)
        if p.get("d") is None:
            d = admissible_disturbance(A, B, self.x_star, self.u_star)
        else:
            d = np.asarray(p["d"], dtype=float)
        self.d = d
        self.system = BilinearSystem(A=A, B=tuple(B), d=lambda t, _d=d: _d)
        if p.get("P") is not None:
            self.certificate = verify_storage_certificate(self.system, p["P"])
        else:
            self.certificate = search_diagonal_certificate(self.system)
        P = self.certificate.P
        self.C = output_matrix(P, B, self.x_star)

        c = scenario.controller
        self.mode = c.get("mode", "linear")
        self.gains = PIGains(
            _matrix_gain(c.get("Kp", 0.0), m),
            _matrix_gain(c.get("Ki", 0.0), m),
            allow_zero=self.mode in ("open_loop", "random"),
        )
        z0 = np.zeros(m) if scenario.z0 is None else np.asarray(scenario.z0, dtype=float)
        self.state = ControllerState(z=z0, mode=self.mode, a=float(c.get("a", 1.0)), b=float(c.get("b", 1.0)))
        self.x0 = np.zeros(n) if scenario.x0 is None else np.asarray(scenario.x0, dtype=float)
        self.dt = scenario.dt * scenario.control_every

        self.state_names = tuple(p.get("state_names", [f"x{i + 1}" for i in range(n)]))
        self.input_names = tuple(p.get("input_names", [f"u{i + 1}" for i in range(m)]))
        self._A = self.system.A
        self._Bs = np.stack(self.system.B) if m else np.zeros((0, n, n))
        self._rng = np.random.default_rng(scenario.seed)
        self.amplitude = float(c.get("amplitude", 1.0))
        self.hold = int(c.get("hold", 1))
        self._held = self.u_star.copy()
        self.integrator = c.get("integrator", "euler")
        if self.integrator not in ("euler", "continuous"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.integrator == "continuous" and self.mode not in ("linear", "tanh"):
            raise ValueError("a continuous integrator needs a linear or tanh PI law")
        self.held_input = self.integrator == "euler"
        self._n = n
        if not self.held_input and self.mode == "linear":
            self._quadratic_field()
        self._k = 0
        self._last = None

    def initial_state(self):
        if self.held_input:
            return self.x0.copy()
        return np.concatenate([self.x0, np.atleast_1d(self.state.z)])

    def _law(self, y, z):
        if self.mode == "tanh":
            return -self.state.b * np.tanh(y / self.state.a) + self.gains.Ki @ z + self.u_star
        return -self.gains.Kp @ y + self.gains.Ki @ z + self.u_star

    def _quadratic_field(self):
        """Closed loop in ``w = (x, z)`` as ``c + M w + (T w) w``.

        With ``u = u_star + K w`` and ``K = [-Kp C, Ki]`` the plant term
        ``sum_i u_i B_i x`` splits into a linear part from ``u_star`` and a
        quadratic part ``sum_ij K_ij w_j B_i x``.
        """
        n, m = self._n, len(self.u_star)
        K = np.hstack([-self.gains.Kp @ self.C, self.gains.Ki])
        M = np.zeros((n + m, n + m))
        M[:n, :n] = self._A + np.einsum("i,ijk->jk", self.u_star, self._Bs)
        M[n:, :n] = -self.C
        T = np.zeros((n + m, n + m, n + m))
        T[:n, :, :n] = np.einsum("ij,iak->ajk", K, self._Bs)
        self._field = (np.concatenate([self.d, np.zeros(m)]), M, T)

    def rhs(self, t, x, u):
        if self.held_input:
            return self._A @ x + u @ (self._Bs @ x) + self.d
        if self.mode == "linear":
            c, M, T = self._field
            return c + M @ x + (T @ x) @ x
        xp, z = x[: self._n], x[self._n :]
        y = self.C @ xp
        u = self._law(y, z)
        return np.concatenate([self._A @ xp + u @ (self._Bs @ xp) + self.d, -y])

    def control(self, t, x):
        if not self.held_input:
            xp, z = x[: self._n], x[self._n :]
            y = self.C @ xp
            u = self._law(y, z)
            self.state = self.state._replace(z=z)
            self._last = (u, y, z)
            return u
        y = self.C @ x
        z = self.state.z
        if self.mode == "tanh":
            u, self.state = tanh_pi_update(self.state, self.gains.Ki, y, self.u_star, self.dt)
        elif self.mode in ("open_loop", "random"):
            if self.mode == "random" and self._k % self.hold == 0:
                self._held = self.u_star + self.amplitude * self._rng.uniform(-1.0, 1.0, len(self.u_star))
            self._k += 1
            u = self._held.copy() if self.mode == "random" else self.u_star.copy()
            self.state = self.state._replace(z=z - self.dt * y)
        else:
            u, self.state = pi_update(self.state, self.gains, y, self.u_star, self.dt)
        self._last = (u, y, z)
        return u

    def record(self):
        u, y, z = self._last
        return np.concatenate([self.x_star, np.zeros_like(self.x_star), u, self.u_star, y, z])

    def apply_event(self, event: Event):
        raise ValueError("the bilinear plant has no mutable parameters")


@register_plant("bilinear")
def _factory(scenario: Scenario) -> BilinearLoop:
    return BilinearLoop(scenario)
