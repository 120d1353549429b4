import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roa_forge import dynamics as dyn
from roa_forge import value
from roa_forge.errors import ContractViolation
from roa_forge.set_geometry import BoxSet, PointCloud, Singleton

TM = dyn.with_lyapunov_matrix(dyn.two_machine(), np.eye(2))
CP = dyn.cos_poly()
RAT = dyn.with_lyapunov_matrix(dyn.rational(), np.eye(2))


def brute_w(sys, x, w, steps):
    # plain long-horizon sum for a constant disturbance
    total = 0.0
    x = np.array(x, dtype=float)
    for _ in range(steps):
        a = float(dyn.alpha(sys, x))
        if a > 0.0:
            total += float(dyn.gamma(sys, x)) * a
        x = dyn.step(sys, x, [w])
    return 1.0 - math.exp(-total)


def test_psi_examples():
    assert value.psi(TM, PointCloud(np.zeros((5, 2)))) == 0.0
    assert value.psi(dyn.with_scenario(CP, 1), PointCloud(np.array([[0.0, 0.0]]))) == 0.0
    rat = dyn.with_lyapunov_matrix(dyn.rational(), np.eye(2))
    # gamma = 1 and alpha = dt * ||x||^2 for P = I
    assert value.psi(rat, PointCloud(np.array([[1.0, 0.0], [0.0, 0.0]]))) == pytest.approx(0.01)
    cloud = PointCloud(np.array([[-0.5, 0.5], [0.1, 0.0]]))
    assert value.psi(TM, cloud) == math.inf


def test_psi_zero_alpha_dominates_infinite_gamma():
    # a cloud of origin points: alpha = 0, gamma finite, so psi = 0
    assert value.psi(CP, Singleton(np.zeros(2))) == 0.0
    out = value.psi_points(TM, np.array([[[0.0, 0.0]]]))
    assert out[0] == 0.0


def test_psi_rejects_boxes():
    with pytest.raises(ContractViolation):
        value.psi(TM, BoxSet([0.0, 0.0], [0.1, 0.1]))


def test_xi_beta_examples():
    assert value.xi_from_psi(0.0) == 0.0
    assert value.xi_from_psi(math.log(2)) == pytest.approx(0.5, abs=1e-15)
    assert value.xi_from_psi(math.inf) == 1.0
    assert value.beta_from_psi(0.0) == 0.0
    assert value.beta_from_psi(math.log(2)) == pytest.approx(1.0, abs=1e-15)
    assert value.beta_from_psi(math.inf) == math.inf
    assert value.xi(TM, PointCloud(np.array([[-0.5, 0.5]]))) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 9, allow_nan=False))
def test_xi_beta_consistency(p):
    # beyond psi ~ 9 the rounding of 1 - xi (about 1e-16) times exp(psi) exceeds 1e-12
    assert (1.0 - value.xi_from_psi(p)) * (1.0 + value.beta_from_psi(p)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-8, 700, allow_nan=False))
def test_xi_beta_match_high_precision(p):
    mpmath.mp.dps = 50
    xi_ref = 1 - mpmath.exp(-mpmath.mpf(p))
    beta_ref = mpmath.expm1(mpmath.mpf(p))
    assert abs(value.xi_from_psi(p) - xi_ref) <= 2.3e-16 * xi_ref
    assert abs(value.beta_from_psi(p) - beta_ref) <= 1e-15 * beta_ref


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(0, 20), st.integers(0, 10_000))
def test_psi_monotone_under_inclusion(k, extra, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-0.7, 0.7, size=(k, 2))
    B = np.vstack([A, rng.uniform(-0.7, 0.7, size=(extra, 2))])
    assert value.psi(TM, PointCloud(A)) <= value.psi(TM, PointCloud(B))


def test_approx_reach_examples():
    flat = dyn.with_scenario(TM, 1)
    cfg = value.ValueConfig(Ns=10, Ntraj=1)
    x = np.array([0.3, -0.2])
    clouds = value.approx_reach(flat, x, cfg)
    assert len(clouds) == 11
    y = x.copy()
    for k in range(11):
        np.testing.assert_allclose(clouds[k].points[0], y, atol=1e-15)
        y = dyn.step(flat, y, [0.5])
    for c in value.approx_reach(TM, np.zeros(2), value.ValueConfig(Ns=5, Ntraj=7)):
        np.testing.assert_array_equal(c.points, 0.0)


def test_approx_reach_first_cloud_inside_set_image():
    cfg = value.ValueConfig(Ns=1, Ntraj=1000)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = rng.uniform(-0.7, 0.7, size=2)
        box = dyn.set_image(TM, x)
        pts = value.approx_reach(TM, x, cfg)[1].points
        assert np.all(pts >= box.lo - 1e-9) and np.all(pts <= box.hi + 1e-9)


def test_approx_reach_is_deterministic():
    cfg = value.ValueConfig(Ns=20, Ntraj=30, seed_base=4)
    a = value.approx_reach(TM, np.array([0.2, 0.1]), cfg)
    b = value.approx_reach(TM, np.array([0.2, 0.1]), cfg)
    for ca, cb in zip(a, b):
        np.testing.assert_array_equal(ca.points, cb.points)


def test_v_finite_examples():
    cfg = value.ValueConfig(Ns=50, Ntraj=10)
    assert value.v_finite(TM, np.zeros(2), cfg) == 0.0
    assert value.w_finite(TM, np.zeros(2), cfg) == 0.0
    # starts inside an obstacle
    assert value.v_finite(TM, np.array([-0.5, 0.5]), cfg) == 50.0
    assert value.w_finite(TM, np.array([-0.5, 0.5]), cfg) == pytest.approx(1.0 - math.exp(-50.0))
    assert value.w_from_v(math.log(2)) == pytest.approx(0.5)


def test_v_finite_saturates_on_divergence():
    # safe (g = 0) but expanding; a huge cap lets the sup-norm test fire first
    cfg = value.ValueConfig(Ns=20, Ntraj=5, v_cap=1e9)
    v, div = value.v_finite_batch(CP, np.array([[0.9, -0.9]]), cfg)
    assert div[0] and v[0] == 1e9


def test_v_finite_matches_cloud_sum():
    cfg = value.ValueConfig(Ns=30, Ntraj=8, v_cap=1e9)
    x = np.array([0.3, -0.1])
    expected = sum(value.psi(TM, c) for c in value.approx_reach(TM, x, cfg))
    assert value.v_finite(TM, x, cfg) == pytest.approx(expected, rel=1e-12)


def test_finite_horizon_bellman_identity():
    # shifted evaluation reuses the tail of the same signals
    cfg = value.ValueConfig(Ns=40, Ntraj=1, v_cap=1e9)
    rng = np.random.default_rng(1)
    for sys in (TM, RAT, CP):
        sig = value.signals_for(sys, cfg)
        X = rng.uniform(sys.domain_lo, sys.domain_hi, size=(300, sys.n)) * 0.3
        full, _ = value.v_finite_batch(sys, X, cfg, sig)
        Y = dyn.step_batch(sys, X, np.broadcast_to(sig[0, 0], (X.shape[0], 1)))
        tail, _ = value.v_finite_batch(sys, Y, cfg, sig, offset=1)
        head = value.psi_points(sys, X[:, None, :])
        np.testing.assert_allclose(full, head + tail, rtol=0, atol=1e-9)


def test_positive_definite_away_from_origin():
    cfg = value.ValueConfig(Ns=20, Ntraj=5)
    rng = np.random.default_rng(2)
    X = rng.uniform(-0.7, 0.7, size=(1000, 2))
    X = X[np.linalg.norm(X, axis=1) > 0]
    v, _ = value.v_finite_batch(TM, X, cfg)
    assert np.all(v > 0.0)


def test_bellman_residual_trivial_evaluators():
    x = np.array([0.3, 0.2])
    assert value.bellman_residual_w(TM, x, lambda z: 1.0) == 0.0
    assert value.bellman_residual_w(TM, np.zeros(2), lambda z: 0.0) == 0.0


def test_bellman_residual_vanishes_for_exact_value():
    flat = dyn.with_scenario(RAT, 1)

    def w_exact(z):
        return brute_w(flat, z[:2], 0.0, 4000)

    for x in ([0.5, 0.2], [-0.3, 0.4], [1.0, -1.0]):
        assert abs(value.bellman_residual_w(flat, np.array(x), w_exact)) <= 1e-9


def test_exact_w_helper_matches_brute_force():
    flat = dyn.with_scenario(TM, 1)
    x = np.array([0.2, -0.1])
    assert value.exact_w_singleton(flat, x, 0.5, horizon=2000) == pytest.approx(brute_w(flat, x, 0.5, 2000), abs=1e-12)


def test_finite_value_approaches_exact_value():
    flat = dyn.with_scenario(TM, 1)
    x = np.array([0.2, -0.1])
    cfg = value.ValueConfig(Ns=2000, Ntraj=1)
    assert value.w_finite(flat, x, cfg) == pytest.approx(brute_w(flat, x, 0.5, 2001), abs=1e-12)


def test_lyapunov_decrease_for_singleton_disturbance():
    flat = dyn.with_scenario(TM, 1)
    cfg = value.ValueConfig(Ns=600, Ntraj=1)
    rng = np.random.default_rng(4)
    X = rng.uniform(-0.15, 0.15, size=(1000, 2))
    X = X[np.linalg.norm(X, axis=1) > 0]
    w_x, _ = value.w_targets(flat, X, cfg)
    w_y, _ = value.w_targets(flat, dyn.step_batch(flat, X, [0.5]), cfg)
    assert np.all(w_x - w_y > 0.0)


def test_sampled_lyapunov_decrease():
    cfg = value.ValueConfig(Ns=300, Ntraj=1000)
    sysm = dyn.with_lyapunov_matrix(dyn.two_machine(), np.eye(2))
    rng = np.random.default_rng(3)
    X = rng.uniform(-0.15, 0.15, size=(30, 2))
    w_x, _ = value.w_targets(sysm, X, cfg)
    for x, wx in zip(X, w_x):
        W = rng.uniform(0.25, 0.75, size=(20, 1))
        Y = dyn.step_batch(sysm, x, W)
        w_y, _ = value.w_targets(sysm, Y, cfg)
        assert wx - w_y.max() > -1e-3


def test_dataset_csv_round_trip(tmp_path):
    X = np.array([[0.1, -0.2], [1 / 3, 2.0]])
    path = tmp_path / "d.csv"
    value.write_dataset_csv(path, X, [0.5, 1.0], [False, True])
    assert path.read_text().splitlines()[0] == "x1,x2,w_target,diverged"
    X2, w, d = value.read_dataset_csv(path)
    np.testing.assert_array_equal(X2, X)
    np.testing.assert_array_equal(w, [0.5, 1.0])
    np.testing.assert_array_equal(d, [False, True])
    value.write_points_csv(tmp_path / "p.csv", X)
    np.testing.assert_array_equal(value.read_points_csv(tmp_path / "p.csv"), X)


def test_value_config_validation():
    with pytest.raises(ContractViolation):
        value.ValueConfig(Ns=0)
    with pytest.raises(ContractViolation):
        value.ValueConfig(v_cap=0.0)
