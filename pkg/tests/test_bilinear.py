import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from passivity_pi.bilinear import (
    BilinearSystem,
    CertificateError,
    ReferenceFrame,
    admissibility_residual,
    output_matrix,
    passive_output,
    psd_sqrt,
    search_diagonal_certificate,
    sym,
    tracking_rank_matrix,
    verify_storage_certificate,
)
from passivity_pi.boost import BoostParams, boost_certificate, boost_system
from passivity_pi.mmc import MMCParams, mmc_certificate, mmc_output, mmc_system
from passivity_pi.props import random_certified_system

BOOST = BoostParams()


def skew(rng, n):
    G = rng.normal(size=(n, n))
    return G - G.T


# --------------------------------------------------------------- certificate


def test_boost_certificate_valid_with_expected_q():
    cert = boost_certificate(BOOST)
    assert cert.valid
    np.testing.assert_allclose(cert.Q, np.diag([0.0, 1.0 / 22.0]), atol=1e-15)
    np.testing.assert_allclose(cert.Qsqrt @ cert.Qsqrt, cert.Q, atol=1e-15)


def test_boost_identity_p_is_rejected():
    cert = verify_storage_certificate(boost_system(BOOST, E=0.0), np.eye(2))
    assert not cert.valid
    expected = abs(1 / BOOST.C - 2 / BOOST.L) / 2
    # frozen from hand evaluation: |1/3047e-6 - 2/56e-6| / 2
    assert expected == pytest.approx(17693.0470252, rel=1e-10)
    assert cert.residuals["PB_violation"][0] == pytest.approx(expected, rel=1e-12)
    assert cert.Q is None and cert.Qsqrt is None


def test_identity_certificate_for_dissipative_skew_system():
    rng = np.random.default_rng(3)
    sys = BilinearSystem(A=-np.eye(3), B=(skew(rng, 3),))
    cert = verify_storage_certificate(sys, np.eye(3))
    assert cert.valid
    np.testing.assert_allclose(cert.Q, np.eye(3), atol=1e-15)


def test_mmc_certificate_valid():
    p = MMCParams()
    cert = mmc_certificate(p)
    assert cert.valid
    for B in mmc_system(p).B:
        assert np.abs(sym(cert.P @ B)).max() == 0.0


def test_certificate_rejects_bad_shapes_and_asymmetry():
    sys = boost_system(BOOST, E=0.0)
    with pytest.raises(CertificateError):
        verify_storage_certificate(sys, np.eye(3))
    with pytest.raises(CertificateError):
        verify_storage_certificate(sys, np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_certificate_rejects_indefinite_p():
    sys = BilinearSystem(A=-np.eye(2), B=())
    cert = verify_storage_certificate(sys, np.diag([1.0, -1.0]))
    assert not cert.valid
    assert cert.residuals["P_violation"] == pytest.approx(1.0)


def test_system_validation():
    with pytest.raises(ValueError):
        BilinearSystem(A=np.zeros((2, 3)), B=())
    with pytest.raises(ValueError):
        BilinearSystem(A=np.zeros((1, 1)), B=(np.zeros((1, 1)), np.zeros((1, 1))))
    with pytest.raises(ValueError):
        BilinearSystem(A=[[np.nan]], B=())


def test_diagonal_search_recovers_boost_ratio():
    cert = search_diagonal_certificate(boost_system(BOOST, E=0.0))
    assert cert.valid
    ratio = cert.P[1, 1] / cert.P[0, 0]
    assert ratio == pytest.approx(BOOST.C / (BOOST.L / 2), rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_certified_quadratic_forms(seed):
    rng = np.random.default_rng(seed)
    s = random_certified_system(rng)
    cert = verify_storage_certificate(BilinearSystem(A=s.A, B=s.B), s.P)
    assert cert.valid
    e = rng.normal(size=s.n)
    scale = np.linalg.norm(s.P) * max(np.linalg.norm(s.A), 1.0) * (e @ e)
    assert e @ sym(s.P @ s.A) @ e <= 1e-12 * scale
    for B in s.B:
        assert abs(e @ sym(s.P @ B) @ e) <= 1e-12 * np.linalg.norm(s.P) * np.linalg.norm(B) * (e @ e)


# ------------------------------------------------------------------ psd_sqrt


def test_psd_sqrt_examples():
    np.testing.assert_allclose(
        psd_sqrt(np.diag([0.0, 1 / 22])), np.diag([0.0, 0.21320071635561041]), atol=1e-15
    )
    np.testing.assert_allclose(psd_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    # eigenvalues {3, 1}: S = (sqrt3 + 1)/2 I + (sqrt3 - 1)/2 J
    a, b = (np.sqrt(3) + 1) / 2, (np.sqrt(3) - 1) / 2
    np.testing.assert_allclose(psd_sqrt([[2.0, 1.0], [1.0, 2.0]]), [[a, b], [b, a]], atol=1e-14)
    assert a == pytest.approx(1.3660, abs=5e-5) and b == pytest.approx(0.3660, abs=5e-5)


def test_psd_sqrt_hundred_random_matrices():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        G = rng.normal(size=(n, rng.integers(1, n + 1)))
        Q = G @ G.T
        S = psd_sqrt(Q)
        np.testing.assert_allclose(S, S.T, atol=0)
        assert np.max(np.abs(S @ S - Q)) <= 1e-10


def test_psd_sqrt_rejects_negative_definite():
    with pytest.raises(CertificateError):
        psd_sqrt(np.diag([1.0, -1e-3]))
    S = psd_sqrt(np.diag([1.0, -1e-12]), tol=1e-9)
    assert S[1, 1] == 0.0


# ------------------------------------------------------------- passive output


def test_output_vanishes_on_reference():
    rng = np.random.default_rng(5)
    s = random_certified_system(rng)
    y = passive_output(s.P, s.B, s.x_star, s.x_star)
    assert np.max(np.abs(y)) <= 1e-12 * np.linalg.norm(s.x_star) ** 2 * np.linalg.norm(s.P)


def test_boost_output_hand_value():
    cert = boost_certificate(BOOST)
    B = boost_system(BOOST).B
    y = passive_output(cert.P, B, [1.0, 15.0], [2.0, 15.0])
    assert y[0] == pytest.approx(1.0 * 15.0 - 15.0 * 2.0, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    xs=st.lists(st.floats(-400, 400), min_size=4, max_size=4),
    x=st.lists(st.floats(-400, 400), min_size=4, max_size=4),
)
def test_mmc_output_matches_closed_form(xs, x):
    p = MMCParams()
    cert = mmc_certificate(p)
    y = passive_output(cert.P, mmc_system(p).B, xs, x)
    ref = np.array(mmc_output(x, xs))
    scale = max(1.0, np.abs(xs).max() * np.abs(x).max())
    np.testing.assert_allclose(y, ref, atol=1e-12 * scale)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_output_is_bilinear(seed, a, b):
    rng = np.random.default_rng(seed)
    s = random_certified_system(rng)
    x1, x2, r1, r2 = (rng.normal(size=s.n) for _ in range(4))
    f = lambda r, x: passive_output(s.P, s.B, r, x)
    np.testing.assert_allclose(f(r1, a * x1 + b * x2), a * f(r1, x1) + b * f(r1, x2), atol=1e-10)
    np.testing.assert_allclose(f(a * r1 + b * r2, x1), a * f(r1, x1) + b * f(r2, x1), atol=1e-10)


# ---------------------------------------------------------------------- rank


def test_boost_rank_full():
    cert = boost_certificate(BOOST)
    rep = tracking_rank_matrix(cert.P, boost_system(BOOST).B, cert.Qsqrt, [0.4, 15.0])
    assert rep.rank == 2 and rep.full()


def test_mmc_rank_drops_on_condition():
    p = MMCParams()
    cert = mmc_certificate(p)
    B = mmc_system(p).B
    rep = tracking_rank_matrix(cert.P, B, cert.Qsqrt, [1.0, 2.0, 0.0, 0.0])
    assert rep.rank == 3
    C = output_matrix(cert.P, B, [1.0, 2.0, 0.0, 0.0])
    np.testing.assert_allclose(C[0], C[1], atol=1e-15)
    np.testing.assert_allclose(C[0] / C[0, 2], [0.0, 0.0, 1.0, 1.0], atol=1e-15)
    rep = tracking_rank_matrix(cert.P, B, cert.Qsqrt, [1.0, 1.0, 0.0, 0.0])
    assert rep.rank == 4


def test_zero_reference_rank_equals_qsqrt_rank():
    cert = mmc_certificate(MMCParams())
    rep = tracking_rank_matrix(cert.P, mmc_system(MMCParams()).B, cert.Qsqrt, np.zeros(4))
    assert rep.rank == np.linalg.matrix_rank(cert.Qsqrt) == 2


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_rank_invariant_under_qsqrt_scaling(seed, c):
    rng = np.random.default_rng(seed)
    s = random_certified_system(rng)
    cert = verify_storage_certificate(BilinearSystem(A=s.A, B=s.B), s.P)
    r1 = tracking_rank_matrix(s.P, s.B, cert.Qsqrt, s.x_star)
    r2 = tracking_rank_matrix(s.P, s.B, c * cert.Qsqrt, s.x_star)
    assert r1.rank == r2.rank


# ------------------------------------------------------------- admissibility


def test_boost_equilibrium_is_admissible():
    E = 9.0
    x2s = 15.0
    us = E / x2s
    x1s = x2s / (BOOST.R * us)
    ref = ReferenceFrame.constant([x1s, x2s], [us])
    res = admissibility_residual(boost_system(BOOST, E=E), ref, 0.3)
    scale = 2 * E / BOOST.L
    assert np.max(np.abs(res)) <= 1e-9 * scale
    assert x1s == pytest.approx(1.13636, abs=1e-5)


def test_zero_reference_is_admissible():
    sys = mmc_system(MMCParams())
    sys0 = BilinearSystem(A=sys.A, B=sys.B)
    ref = ReferenceFrame.constant(np.zeros(4), np.zeros(2))
    np.testing.assert_array_equal(admissibility_residual(sys0, ref, 0.0), 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_equilibria_admissible(seed):
    s = random_certified_system(np.random.default_rng(seed))
    sys = BilinearSystem(A=s.A, B=s.B, d=lambda t: s.d)
    res = admissibility_residual(sys, ReferenceFrame.constant(s.x_star, s.u_star), 1.0)
    assert np.max(np.abs(res)) <= 1e-9 * max(1.0, np.abs(s.d).max())
