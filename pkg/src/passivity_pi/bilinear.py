"""Bilinear plants, storage certificates and the passive output map.

A bilinear plant is ``dx/dt = A x + d(t) + sum_i u_i B_i x``. A storage
certificate is a symmetric positive-definite ``P`` with ``sym(PA) <= 0`` and
``sym(PB_i) = 0``; given one, ``y_i = x_ref^T B_i^T P x`` is a passive output
for the incremental dynamics around any admissible reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_TOL = 1e-9
DEFAULT_RANK_TOL = 1e-8


class CertificateError(ValueError):
    """Raised on malformed certificate inputs (shape, symmetry, PSD-ness)."""


def sym(M: np.ndarray) -> np.ndarray:
    """Symmetric part ``(M + M^T) / 2``."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def _zero_disturbance(n: int) -> Callable[[float], np.ndarray]:
    zero = np.zeros(n)
    return lambda t: zero


@dataclass(frozen=True)
class BilinearSystem:
    """``dx/dt = A x + d(t) + sum_i u_i B_i x`` with ``m <= n`` inputs."""

    A: np.ndarray
    B: tuple[np.ndarray, ...]
    d: Callable[[float], np.ndarray] | None = None

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        B = tuple(np.array(Bi, dtype=float) for Bi in self.B)
        for i, Bi in enumerate(B):
            if Bi.shape != (n, n):
                raise ValueError(f"B[{i}] has shape {Bi.shape}, expected {(n, n)}")
        if len(B) > n:
            raise ValueError(f"m={len(B)} inputs exceeds n={n} states")
        if not (np.all(np.isfinite(A)) and all(np.all(np.isfinite(Bi)) for Bi in B)):
            raise ValueError("system matrices must be finite")
        A.setflags(write=False)
        for Bi in B:
            Bi.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.d is None:
            object.__setattr__(self, "d", _zero_disturbance(n))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return len(self.B)

    def rhs(self, t: float, x: np.ndarray, u: Sequence[float]) -> np.ndarray:
        M = self.A.copy()
        for ui, Bi in zip(u, self.B):
            M += ui * Bi
        return M @ x + self.d(t)


@dataclass(frozen=True)
class StorageCertificate:
    P: np.ndarray
    Q: np.ndarray | None
    Qsqrt: np.ndarray | None
    valid: bool
    residuals: dict = field(default_factory=dict)

    def storage(self, x_err: np.ndarray) -> float:
        """Quadratic storage ``V = x_err^T P x_err / 2``."""
        x_err = np.asarray(x_err, dtype=float)
        return 0.5 * float(x_err @ self.P @ x_err)


@dataclass(frozen=True)
class ReferenceFrame:
    """Time-indexed admissible-trajectory bundle (x_ref, dx_ref/dt, u_ref)."""

    x_star: Callable[[float], np.ndarray]
    x_star_dot: Callable[[float], np.ndarray]
    u_star: Callable[[float], np.ndarray]

    @classmethod
    def constant(cls, x_star, u_star) -> "ReferenceFrame":
        xs = np.asarray(x_star, dtype=float)
        us = np.asarray(u_star, dtype=float)
        zero = np.zeros_like(xs)
        return cls(lambda t: xs, lambda t: zero, lambda t: us)


def _scale(P: np.ndarray, M: np.ndarray) -> float:
    s = np.linalg.norm(P) * np.linalg.norm(M)
    return s if s > 0 else 1.0


def verify_storage_certificate(
    sys: BilinearSystem, P, tol: float = DEFAULT_TOL
) -> StorageCertificate:
    """Check ``P`` against the three matrix conditions.

    Tolerances are relative: each condition on ``P M`` is compared against
    ``tol * ||P||_F * ||M||_F``. Residuals are violation magnitudes (zero when
    the condition holds exactly); the skew residual is the spectral norm of
    ``sym(P B_i)``.
    """
    P = np.array(P, dtype=float)
    n = sys.n
    if P.shape != (n, n):
        raise CertificateError(f"P has shape {P.shape}, expected {(n, n)}")
    if np.max(np.abs(P - P.T)) > tol * max(np.linalg.norm(P), 1.0):
        raise CertificateError("P is not symmetric")
    P = sym(P)

    p_min = float(np.linalg.eigvalsh(P)[0])
    SPA = sym(P @ sys.A)
    pa_max = float(np.linalg.eigvalsh(SPA)[-1])
    pb_spec, pb_ok = [], []
    for Bi in sys.B:
        S = sym(P @ Bi)
        pb_spec.append(float(np.linalg.norm(S, 2)))
        pb_ok.append(np.linalg.norm(S) <= tol * _scale(P, Bi))

    residuals = {
        "P_min_eig": p_min,
        "P_violation": max(0.0, -p_min),
        "PA_max_eig": pa_max,
        "PA_violation": max(0.0, pa_max),
        "PB_violation": pb_spec,
    }
    valid = (
        p_min > tol * np.linalg.norm(P)
        and pa_max <= tol * _scale(P, sys.A)
        and all(pb_ok)
    )
    Q = Qsqrt = None
    if valid:
        Q = 0.0 - SPA
        Qsqrt = psd_sqrt(Q, tol=tol * _scale(P, sys.A))
    return StorageCertificate(P=P, Q=Q, Qsqrt=Qsqrt, valid=bool(valid), residuals=residuals)


def certificate_objective(sys: BilinearSystem, p_diag: np.ndarray) -> float:
    """Squared normalized constraint residual of ``diag(p_diag)``."""
    P = np.diag(p_diag)
    total = 0.0
    for Bi in sys.B:
        total += (np.linalg.norm(sym(P @ Bi)) / _scale(P, Bi)) ** 2
    pa = np.linalg.eigvalsh(sym(P @ sys.A))[-1] / _scale(P, sys.A)
    return total + max(0.0, pa) ** 2


def search_diagonal_certificate(
    sys: BilinearSystem,
    sweeps: int = 60,
    span: float = 8.0,
    points: int = 33,
    tol: float = DEFAULT_TOL,
) -> StorageCertificate:
    """Coordinate search for a diagonal certificate.

    Works in log coordinates with the first entry pinned to 1 (certificates
    are scale free). Each sweep scans every free coordinate over a
    log-spaced grid of half-width ``span`` decades around the incumbent, then
    halves the span.
    """
    n = sys.n
    q = np.zeros(n)
    best = certificate_objective(sys, np.exp(q))
    width = span * np.log(10.0)
    offsets = np.linspace(-1.0, 1.0, points)
    for _ in range(sweeps):
        for i in range(1, n):
            center = incumbent = q[i]
            for off in offsets * width:
                q[i] = center + off
                val = certificate_objective(sys, np.exp(q))
                if val < best:
                    best, incumbent = val, q[i]
            q[i] = incumbent
        width *= 0.5
    return verify_storage_certificate(sys, np.diag(np.exp(q)), tol=tol)


def psd_sqrt(M, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition.

    Eigenvalues in ``[-tol, 0)`` are clamped to zero; anything more negative
    raises ``CertificateError``. Positive eigenvalues at roundoff level
    (below ``n * eps * max|eig|``) are zeroed too, since their square roots
    would otherwise show up as spurious singular values of order 1e-8.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise CertificateError(f"expected a square matrix, got shape {M.shape}")
    w, V = np.linalg.eigh(sym(M))
    if w[0] < -tol:
        raise CertificateError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    floor = M.shape[0] * np.finfo(float).eps * float(np.max(np.abs(w), initial=0.0))
    w = np.where(w > floor, w, 0.0)
    S = (V * np.sqrt(w)) @ V.T
    return sym(S)


def output_matrix(P, B: Sequence[np.ndarray], x_star) -> np.ndarray:
    """Rows ``x_ref^T B_i^T P``; the passive output is this matrix times x."""
    P = np.asarray(P, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    if not B:
        return np.zeros((0, P.shape[0]))
    return np.stack([Bi @ x_star for Bi in B]) @ P


def passive_output(P, B: Sequence[np.ndarray], x_star, x) -> np.ndarray:
    return output_matrix(P, B, x_star) @ np.asarray(x, dtype=float)


@dataclass(frozen=True)
class RankReport:
    matrix: np.ndarray
    rank: int
    sigma_min: float

    def full(self) -> bool:
        return self.rank == self.matrix.shape[1]


def tracking_rank_matrix(
    P, B: Sequence[np.ndarray], Qsqrt, x_star, rank_tol: float = DEFAULT_RANK_TOL
) -> RankReport:
    """Stack the output matrix over ``Q^{1/2}`` and measure its rank.

    The numerical rank counts singular values above ``rank_tol * sigma_max``;
    ``sigma_min`` is the smallest of the first ``n`` singular values (zero
    when the stack has fewer rows than columns).
    """
    M = np.vstack([output_matrix(P, B, x_star), np.asarray(Qsqrt, dtype=float)])
    n = M.shape[1]
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return RankReport(M, 0, 0.0)
    rank = int(np.sum(s > rank_tol * s[0]))
    sigma_min = float(s[n - 1]) if s.size >= n else 0.0
    return RankReport(M, rank, sigma_min)


def admissibility_residual(sys: BilinearSystem, ref: ReferenceFrame, t: float) -> np.ndarray:
    """``dx_ref/dt - A x_ref - d - sum_i u_ref_i B_i x_ref`` at time ``t``."""
    xs = np.asarray(ref.x_star(t), dtype=float)
    return np.asarray(ref.x_star_dot(t), dtype=float) - sys.rhs(t, xs, ref.u_star(t))
