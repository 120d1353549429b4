import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from roa_forge import dynamics as dyn
from roa_forge import lyap_init as L
from roa_forge.errors import ContractViolation
from roa_forge.intervals import Interval
from roa_forge.set_geometry import BoxSet


def random_symmetric(rng, n):
    M = rng.normal(size=(n, n))
    return 0.5 * (M + M.T)


def random_spd(rng, n):
    M = rng.normal(size=(n, n))
    return M @ M.T + 0.1 * np.eye(n)


@pytest.fixture(scope="module")
def roas():
    return {name: L.initial_roa(dyn.get_system(name)) for name in ("two_machine", "rigid_rod", "rational")}


def test_jacobi_examples():
    vals, vecs = L.jacobi_eigen(np.diag([2.0, 1.0]))
    assert sorted(vals) == [1.0, 2.0]
    np.testing.assert_allclose(np.abs(vecs), np.eye(2), atol=1e-15)
    vals, _ = L.jacobi_eigen(np.eye(3))
    np.testing.assert_array_equal(vals, 1.0)
    with pytest.raises(ContractViolation):
        L.jacobi_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 10_000))
def test_jacobi_reconstruction_and_scipy(n, seed):
    M = random_symmetric(np.random.default_rng(seed), n)
    vals, V = L.jacobi_eigen(M)
    np.testing.assert_allclose(V @ np.diag(vals) @ V.T, M, atol=1e-10)
    np.testing.assert_allclose(V.T @ V, np.eye(n), atol=1e-10)
    assert np.max(np.abs(M @ V - V * vals)) < 1e-10
    np.testing.assert_allclose(np.sort(vals), scipy.linalg.eigvalsh(M), atol=1e-10)
    assert L.eig_min(M) == pytest.approx(np.min(vals)) and L.eig_max(M) == pytest.approx(np.max(vals))


def test_spd_sqrt_examples():
    np.testing.assert_allclose(L.spd_sqrt(4 * np.eye(2)), 2 * np.eye(2), atol=1e-14)
    np.testing.assert_allclose(L.spd_sqrt(np.eye(3)), np.eye(3), atol=1e-14)
    with pytest.raises(ContractViolation):
        L.spd_sqrt(np.diag([1.0, -1.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 4), st.integers(0, 10_000))
def test_spd_sqrt_squares_back(n, seed):
    P = random_spd(np.random.default_rng(seed), n)
    K = L.spd_sqrt(P)
    assert np.linalg.norm(K @ K - P) < 1e-10
    assert L.eig_min(K) > 0.0
    np.testing.assert_allclose(K, scipy.linalg.sqrtm(P).real, atol=1e-9)


def test_spectral_norm_and_solve():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(3, 3))
    assert L.spectral_norm(A) == pytest.approx(np.linalg.norm(A, 2), rel=1e-10)
    b = rng.normal(size=3)
    np.testing.assert_allclose(L.gaussian_solve(A, b), np.linalg.solve(A, b), atol=1e-10)


def test_lyapunov_examples():
    np.testing.assert_allclose(L.solve_discrete_lyapunov(0.5 * np.eye(2)), 4.0 / 3.0 * np.eye(2), atol=1e-14)
    np.testing.assert_allclose(L.solve_discrete_lyapunov(np.zeros((2, 2))), np.eye(2), atol=1e-15)
    with pytest.raises(ContractViolation):
        L.solve_discrete_lyapunov(1.1 * np.eye(2))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 3), st.integers(0, 10_000))
def test_lyapunov_residual_and_scipy(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    P = L.solve_discrete_lyapunov(A)
    assert np.linalg.norm(A.T @ P @ A - P + np.eye(n)) < 1e-10
    np.testing.assert_allclose(P, scipy.linalg.solve_discrete_lyapunov(A.T, np.eye(n)), rtol=1e-8, atol=1e-10)


def test_cospoly_analytic_values():
    _, c1 = L.cospoly_analytic_roa(1.0, 2.0, 0.01)
    assert c1 == math.sqrt(6.0) - 2.0
    _, c1 = L.cospoly_analytic_roa(1.0, 1.0, 1e-12)
    assert c1 == pytest.approx(math.sqrt(3.0) - 1.0, abs=1e-15)
    prev = math.inf
    for w_max in np.linspace(1.0, 5.0, 20):
        _, c = L.cospoly_analytic_roa(1.0, w_max)
        assert c <= prev
        prev = c
    nu, _ = L.cospoly_analytic_roa(1.0, 2.0)
    assert nu(np.array([3.0, 4.0])) == 25.0
    with pytest.raises(ContractViolation):
        L.cospoly_analytic_roa(0.0, 1.0)


def test_initial_roa_for_cospoly():
    roa = L.initial_roa(dyn.cos_poly())
    np.testing.assert_array_equal(roa.P, np.eye(2))
    assert roa.c1 == math.sqrt(6.0) - 2.0


def test_appendix_g_bounds_hold():
    sys = dyn.cos_poly()
    _, rho = L.cospoly_analytic_roa(1.0, 2.0)
    rng = np.random.default_rng(7)
    r = np.sqrt(rng.uniform(0, rho, size=2000))
    ang = rng.uniform(0, 2 * np.pi, size=2000)
    X = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    n0 = np.sum(X * X, axis=1)
    nk = n0.copy()
    for k in range(1, 101):
        Y = dyn.step_batch(sys, X, rng.uniform(1.0, 2.0, size=(X.shape[0], 1)))
        ny = np.sum(Y * Y, axis=1)
        assert np.all(ny <= nk - nk**2 + 1e-9)
        assert np.all(np.sqrt(ny) <= np.sqrt(n0) / np.sqrt(1 + k * n0) + 1e-9)
        X, nk = Y, ny


@pytest.mark.parametrize("name", ["two_machine", "rigid_rod", "rational"])
def test_construction_is_valid(roas, name):
    sys = dyn.get_system(name)
    roa = roas[name]
    assert roa.c1 > 0.0 and roa.epsilon > 0.0
    assert L.eig_min(roa.P) > 0.0
    assert L.eig_max(roa.P) == pytest.approx(1.0)
    # every vertex keeps the decrease matrix positive definite
    for A in L.jacobian_vertices(sys):
        assert L.eig_min(roa.P - A.T @ roa.P @ A) > 0.0
    # the ellipsoid fits in B: the extent along axis i is sqrt(c1 (P^-1)_ii)
    extent = np.sqrt(roa.c1 * np.diag(np.linalg.inv(roa.P)))
    assert np.all(extent <= roa.domain_B.radius + 1e-12)
    assert np.all(np.abs(roa.domain_B.center) <= 1e-15)
    # B lies in the safe set and the verification domain
    assert np.all(roa.domain_B.lo >= sys.domain_lo) and np.all(roa.domain_B.hi <= sys.domain_hi)
    g = L.g_interval(sys, Interval(roa.domain_B.lo, roa.domain_B.hi))
    assert np.all(g.hi < 1.0)


def test_k1_matches_printed_formula(roas):
    d = roas["two_machine"].diagnostics
    e1, e2, dd = d["e1"], d["e2"], d["d"]
    printed = ((-e2 + math.sqrt(e2 * e2 + 4 * e1 * dd)) / (2 * e1)) ** 2
    assert d["k1"] == pytest.approx(printed, rel=1e-9)
    assert roas["two_machine"].c1 * d["P_scale"] == pytest.approx(min(d["k1"], d["k2"]), rel=1e-12)


def test_rigid_rod_is_three_dimensional(roas):
    roa = roas["rigid_rod"]
    assert roa.P.shape == (3, 3)
    for w in (dyn.rigid_rod().w_lo[0], dyn.rigid_rod().w_hi[0]):
        A = dyn.jacobian_at_origin(dyn.rigid_rod(), w)
        assert L.eig_min(roa.P - A.T @ roa.P @ A) > 0.0


def test_common_lyapunov_fallback():
    # stable pair where neither vertex nor midpoint Lyapunov solutions work for both
    A1 = np.array([[-0.43498703202539113, -0.7821719049214864],
                   [-0.3852532810659212, 0.0255440742301133]])
    A2 = np.array([[-0.7497319877539508, -0.07055180124642556],
                   [-0.4017578181061063, -0.2361277387798995]])
    for A in (A1, A2, 0.5 * (A1 + A2)):
        P = L.solve_discrete_lyapunov(A)
        assert min(L.eig_min(P - B.T @ P @ B) for B in (A1, A2)) <= 0.0
    P, gain = L.common_lyapunov_matrix([A1, A2], P0=np.eye(2))
    assert gain < 1.0
    for A in (A1, A2):
        assert L.eig_min(P - A.T @ P @ A) > 0.0


@pytest.mark.parametrize("name", ["two_machine", "rigid_rod"])
def test_monte_carlo_decay_and_invariance(roas, name):
    sys = dyn.get_system(name)
    roa = roas[name]
    rng = np.random.default_rng(11)
    n = sys.n
    # uniform samples in the ellipsoid: x = sqrt(c1) P^{-1/2} u with u in the unit ball
    u = rng.normal(size=(5000, n))
    u *= (rng.uniform(size=(5000, 1)) ** (1 / n)) / np.linalg.norm(u, axis=1, keepdims=True)
    X = math.sqrt(roa.c1) * u @ np.linalg.inv(L.spd_sqrt(roa.P)).T
    nu0 = roa.nu(X)
    rate = roa.decay_rate
    for j in range(1, 51):
        X = dyn.step_batch(sys, X, rng.uniform(sys.w_lo, sys.w_hi, size=(X.shape[0], 1)))
        nu = roa.nu(X)
        assert np.all(nu <= rate**j * nu0 + 1e-9)
        assert np.all(nu <= roa.c1 + 1e-9)


def test_roa_json_round_trip(tmp_path, roas):
    roa = roas["two_machine"]
    path = tmp_path / "roa.json"
    roa.save(path)
    back = L.EllipsoidRoa.load(path)
    np.testing.assert_array_equal(back.P, roa.P)
    assert back.c1 == roa.c1 and back.epsilon == roa.epsilon
    np.testing.assert_array_equal(back.domain_B.lo, roa.domain_B.lo)
    assert back.contains(np.zeros(2))


def test_explicit_box_is_respected():
    sys = dyn.two_machine()
    B = BoxSet(np.zeros(2), np.full(2, 0.1))
    roa = L.build_ellipsoid_roa(sys, B)
    extent = np.sqrt(roa.c1 * np.diag(np.linalg.inv(roa.P)))
    assert np.all(extent <= 0.1 + 1e-12)
