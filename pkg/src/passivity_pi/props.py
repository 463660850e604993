"""Randomized checks of the passivity and tracking properties.

Each sample is a bilinear system certified by construction: a random
diagonal ``P``, ``B_i = P^-1 S_i`` with ``S_i`` skew and
``A = P^-1 (-D + S_0)`` with ``D`` diagonal PSD. A constant reference
``(x_ref, u_ref)`` is made admissible by solving for the constant ``d``.

Three runs per system:

* random piecewise-constant inputs, checked for the dissipation inequality;
* the linear PI law, checked for monotone ``W``;
* the same PI run, checked for convergence whenever the rank test passes.

The PI runs integrate the controller state inside the RK4 step: a sampled
explicit-Euler integrator leaves per-step ``W`` increases of order ``dt^2``,
far above the ``1e-6 W(0)`` monitor tolerance at any affordable step.

A negative control perturbs ``B`` so ``sym(P B) != 0`` and must be flagged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .bilinear import BilinearSystem, output_matrix, tracking_rank_matrix, verify_storage_certificate
from .generic import admissible_disturbance
from .sim import Scenario, dissipation_check, lyapunov_monitor, run_closed_loop

MAX_DT = 1e-2
STEPS_PER_TAU = 50
COARSE_STEPS_PER_TAU = 4
RANDOM_T = 5.0
LYAPUNOV_T = 50.0
CONVERGENCE = 1e-4
MAX_CONTINUATION_STEPS = 2_000_000


@dataclass(frozen=True)
class RandomSystem:
    A: np.ndarray
    B: tuple
    P: np.ndarray
    x_star: np.ndarray
    u_star: np.ndarray
    d: np.ndarray
    Kp: np.ndarray
    Ki: np.ndarray
    x0: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return len(self.B)


def _skew(rng, n: int, scale: float = 1.0) -> np.ndarray:
    G = rng.normal(scale=scale, size=(n, n))
    return G - G.T


def _spd(rng, m: int) -> np.ndarray:
    G = rng.normal(size=(m, m))
    return G @ G.T / m + 0.2 * np.eye(m)


def random_certified_system(rng: np.random.Generator) -> RandomSystem:
    n = int(rng.choice([2, 3, 4]))
    m = int(rng.choice([1, 2]))
    p = np.exp(rng.uniform(-1.0, 1.0, n))
    Pinv = np.diag(1.0 / p)
    D = rng.uniform(0.2, 2.0, n) * (rng.uniform(size=n) > 0.3)
    A = Pinv @ (-np.diag(D) + _skew(rng, n, 0.5))
    B = tuple(Pinv @ _skew(rng, n, 0.5) for _ in range(m))
    x_star = rng.normal(size=n)
    u_star = rng.normal(scale=0.5, size=m)
    d = admissible_disturbance(A, B, x_star, u_star)
    x0 = x_star + rng.normal(size=n)
    return RandomSystem(A, B, np.diag(p), x_star, u_star, d, _spd(rng, m), _spd(rng, m), x0)


def broken_system(sys: RandomSystem, strength: float = 1.0) -> RandomSystem:
    """Add a symmetric part to ``P B_1`` so the certificate fails."""
    Pinv = np.linalg.inv(sys.P)
    B = (sys.B[0] + strength * Pinv,) + tuple(sys.B[1:])
    u_star = np.abs(sys.u_star) + 1.0
    d = admissible_disturbance(sys.A, B, sys.x_star, u_star)
    return RandomSystem(sys.A, B, sys.P, sys.x_star, u_star, d, sys.Kp, sys.Ki, sys.x0)


def closed_loop_jacobian(sys: RandomSystem) -> np.ndarray:
    """Jacobian of the PI closed loop in ``(x, z)`` at the reference."""
    m = sys.m
    Bx = np.stack([B @ sys.x_star for B in sys.B], axis=1)
    C = output_matrix(sys.P, sys.B, sys.x_star)
    A = sys.A + sum(u * B for u, B in zip(sys.u_star, sys.B))
    return np.block([[A - Bx @ sys.Kp @ C, Bx @ sys.Ki], [-C, np.zeros((m, m))]])


def spectral_radius(sys: RandomSystem) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(closed_loop_jacobian(sys)))))


def closed_loop_step(sys: RandomSystem, steps_per_tau: int = STEPS_PER_TAU, max_dt: float = MAX_DT) -> float:
    """Step giving ``steps_per_tau`` steps on the fastest linearized closed-loop mode."""
    rho = spectral_radius(sys)
    return min(max_dt, 1.0 / (steps_per_tau * rho)) if rho > 0 else max_dt


def predicted_decay_time(sys: RandomSystem, ratio: float = CONVERGENCE) -> float:
    """Time for the slowest linearized mode touching ``x`` to shrink by ``ratio``.

    Modes living only in the integrator state are ignored; they do not move
    ``x``. Returns ``inf`` when that mode does not decay.
    """
    n = sys.n
    ev, vec = np.linalg.eig(closed_loop_jacobian(sys))
    rates = [
        -lam.real for lam, v in zip(ev, vec.T)
        if np.linalg.norm(v[:n]) > 1e-3 * np.linalg.norm(v)
    ]
    slow = min(rates)
    return float(np.log(1.0 / ratio) / slow) if slow > 0 else float("inf")


def _scenario(sys: RandomSystem, t_end: float, controller: dict, seed: int, dt: float,
              x0=None, z0=None) -> Scenario:
    return Scenario(
        plant="bilinear",
        t_end=t_end,
        dt=dt,
        params=dict(
            A=sys.A, B=list(sys.B), d=sys.d, x_star=sys.x_star, u_star=sys.u_star, P=sys.P,
        ),
        controller=controller,
        x0=sys.x0 if x0 is None else x0,
        z0=z0,
        seed=seed,
    )


def random_input_run(sys: RandomSystem, seed: int, dt: float):
    controller = dict(mode="random", amplitude=1.0, hold=20)
    return run_closed_loop(_scenario(sys, RANDOM_T, controller, seed, dt))


@dataclass
class SystemResult:
    index: int
    n: int
    m: int
    certificate_valid: bool
    dissipation_excess: float
    dissipation_violations: int
    lyapunov_increase: float
    lyapunov_ok: bool
    rank_full: bool
    error_ratio: float
    converged: bool
    horizon: float
    predicted_time: float


@dataclass
class PropertyReport:
    seed: int
    count: int
    results: list[SystemResult] = field(default_factory=list)
    negative_control_certificate_valid: bool = True
    negative_control_violations: int = 0

    @property
    def dissipation_failures(self) -> int:
        return sum(r.dissipation_violations > 0 for r in self.results)

    @property
    def lyapunov_failures(self) -> int:
        return sum(not r.lyapunov_ok for r in self.results)

    @property
    def rank_passed(self) -> int:
        return sum(r.rank_full for r in self.results)

    @property
    def convergence_failures(self) -> int:
        return sum(r.rank_full and not r.converged for r in self.results)

    @property
    def negative_control_flagged(self) -> bool:
        return not self.negative_control_certificate_valid and self.negative_control_violations > 0

    @property
    def ok(self) -> bool:
        return (
            self.dissipation_failures == 0
            and self.lyapunov_failures == 0
            and self.convergence_failures == 0
            and self.negative_control_flagged
        )

    def summary(self) -> dict:
        return dict(
            seed=self.seed,
            count=self.count,
            dissipation_failures=self.dissipation_failures,
            lyapunov_failures=self.lyapunov_failures,
            rank_passed=self.rank_passed,
            convergence_failures=self.convergence_failures,
            negative_control_flagged=self.negative_control_flagged,
            negative_control_violations=self.negative_control_violations,
            ok=self.ok,
        )

    def to_dict(self) -> dict:
        out = self.summary()
        out["results"] = [asdict(r) for r in self.results]
        return out


def _advance(sys, controller, seed, dt, t_end, x, z, record_every=1):
    steps = int(round(t_end / dt))
    sc = _scenario(sys, steps * dt, controller, seed, dt, x0=x, z0=z)
    sc.record_every = record_every if record_every > 0 else steps
    return run_closed_loop(sc)


def check_system(sys: RandomSystem, index: int, seed: int) -> SystemResult:
    """Dissipation, Lyapunov and convergence checks for one system.

    ``W`` is monitored over ``LYAPUNOV_T`` at the fine step. When the rank
    test passes and the error has not yet reached ``CONVERGENCE``, the same
    closed loop is continued at a coarser step (still ``COARSE_STEPS_PER_TAU``
    steps on the fastest mode) in doubling chunks, spending at most
    ``MAX_CONTINUATION_STEPS`` steps. The budget bounds run time; a system
    whose slowest mode needs more is reported as not converged, with its
    linearized ``predicted_time`` alongside.
    """
    cert = verify_storage_certificate(_as_bilinear(sys), sys.P)
    dt = closed_loop_step(sys)
    diss = dissipation_check(random_input_run(sys, seed, dt), sys.P)

    rank_full = cert.valid and tracking_rank_matrix(sys.P, sys.B, cert.Qsqrt, sys.x_star).full()
    e0 = float(np.linalg.norm(sys.x0 - sys.x_star))
    controller = dict(mode="linear", Kp=sys.Kp, Ki=sys.Ki, integrator="continuous")

    tr = _advance(sys, controller, seed, dt, LYAPUNOV_T, sys.x0, np.zeros(sys.m))
    lyap = lyapunov_monitor(tr, sys.P, sys.Ki)
    horizon = float(tr.t[-1])
    x, z = tr.x[-1], tr.z[-1]
    ratio = float(np.linalg.norm(tr.x_err[-1])) / e0

    # no MAX_DT cap here: stability, not resolution, limits the coarse step
    coarse = closed_loop_step(sys, COARSE_STEPS_PER_TAU, max_dt=LYAPUNOV_T)
    chunk, budget = LYAPUNOV_T, MAX_CONTINUATION_STEPS
    while rank_full and ratio > CONVERGENCE and budget > 0:
        steps = min(int(round(2.0 * chunk / coarse)), budget)
        chunk, budget = steps * coarse, budget - steps
        tr = _advance(sys, controller, seed, coarse, chunk, x, z, record_every=0)
        horizon += float(tr.t[-1])
        x, z = tr.x[-1], tr.z[-1]
        ratio = float(np.linalg.norm(x - sys.x_star)) / e0

    return SystemResult(
        index=index,
        n=sys.n,
        m=sys.m,
        certificate_valid=cert.valid,
        dissipation_excess=diss.max_excess,
        dissipation_violations=diss.violations,
        lyapunov_increase=lyap.max_increase,
        lyapunov_ok=lyap.ok(),
        rank_full=bool(rank_full),
        error_ratio=ratio,
        converged=ratio <= CONVERGENCE,
        horizon=horizon,
        predicted_time=predicted_decay_time(sys),
    )


def _as_bilinear(sys: RandomSystem) -> BilinearSystem:
    return BilinearSystem(A=sys.A, B=sys.B, d=lambda t, _d=sys.d: _d)


def negative_control(rng: np.random.Generator, seed: int) -> tuple[bool, int]:
    """Certificate validity and dissipation violations for a broken system."""
    sys = broken_system(random_certified_system(rng))
    cert = verify_storage_certificate(_as_bilinear(sys), sys.P)
    tr = random_input_run(sys, seed, closed_loop_step(sys))
    return cert.valid, dissipation_check(tr, sys.P).violations


def run_property_suite(seed: int, count: int) -> PropertyReport:
    """Draw ``count`` certified systems from ``seed`` and check each one."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    report = PropertyReport(seed=seed, count=count)
    for i in range(count):
        sys = random_certified_system(rng)
        report.results.append(check_system(sys, i, seed + i))
    valid, violations = negative_control(np.random.default_rng([seed, 1]), seed)
    report.negative_control_certificate_valid = valid
    report.negative_control_violations = violations
    return report

