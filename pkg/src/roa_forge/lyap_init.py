"""Initial regions of attraction from quadratic Lyapunov functions.

Contains a small dense linear-algebra kit (Jacobi eigensolver, SPD square
root, Kronecker-vectorized discrete Lyapunov solver) and two constructions:
the linearization-based ellipsoid for exponentially stable equilibria and
the closed-form level for the ``cos_poly`` system.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .errors import ConstructionFailure, ContractViolation
from .intervals import Interval
from .set_geometry import BoxSet

SYMMETRY_TOL = 1e-12


def _symmetric(M, name="matrix"):
    M = np.array(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractViolation(f"{name} must be square")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if np.max(np.abs(M - M.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ContractViolation(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def jacobi_eigen(M, tol=1e-14, max_sweeps=100):
    """Cyclic Jacobi rotations: returns ``(eigenvalues, V)`` with ``M = V diag(w) V^T``."""
    A = _symmetric(M)
    n = A.shape[0]
    V = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(np.tril(A, -1) ** 2)))
        if off <= tol * max(1.0, float(np.max(np.abs(np.diag(A))))):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if A[p, q] == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * A[p, q])
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                J = np.eye(n)
                J[p, p] = J[q, q] = c
                J[p, q] = s
                J[q, p] = -s
                A = J.T @ A @ J
                V = V @ J
    return np.diag(A).copy(), V


def eig_min(M) -> float:
    return float(np.min(jacobi_eigen(M)[0]))


def eig_max(M) -> float:
    return float(np.max(jacobi_eigen(M)[0]))


def spd_sqrt(P) -> np.ndarray:
    """Unique SPD ``K`` with ``K @ K == P``."""
    w, V = jacobi_eigen(P)
    if np.min(w) <= 0.0:
        raise ContractViolation("matrix is not positive definite")
    K = V @ np.diag(np.sqrt(w)) @ V.T
    return 0.5 * (K + K.T)


def spectral_norm(M) -> float:
    M = np.asarray(M, dtype=float)
    return math.sqrt(max(0.0, eig_max(M.T @ M)))


def gaussian_solve(A, b) -> np.ndarray:
    """Gaussian elimination with partial pivoting."""
    M = np.array(A, dtype=float)
    rhs = np.array(b, dtype=float)
    n = M.shape[0]
    scale = float(np.max(np.abs(M))) if M.size else 1.0
    for k in range(n):
        piv = k + int(np.argmax(np.abs(M[k:, k])))
        if abs(M[piv, k]) <= 1e-14 * scale:
            raise np.linalg.LinAlgError("singular system")
        if piv != k:
            M[[k, piv]] = M[[piv, k]]
            rhs[[k, piv]] = rhs[[piv, k]]
        f = M[k + 1:, k] / M[k, k]
        M[k + 1:, k:] -= f[:, None] * M[k, k:]
        rhs[k + 1:] -= f * rhs[k]
    x = np.zeros(n)
    for k in range(n - 1, -1, -1):
        x[k] = (rhs[k] - M[k, k + 1:] @ x[k + 1:]) / M[k, k]
    return x


def spectral_radius_estimate(A, doublings=10) -> float:
    """``||A^(2^k)||^(1/2^k)`` with rescaling, an upper-biased estimate of ``rho(A)``."""
    B = np.array(A, dtype=float)
    log_scale = 0.0
    for _ in range(doublings):
        s = float(np.max(np.abs(B)))
        if s == 0.0:
            return 0.0
        B = B / s
        log_scale = 2.0 * (log_scale + math.log(s))
        B = B @ B
    s = float(np.linalg.norm(B, 2))
    if s == 0.0:
        return 0.0
    return math.exp((log_scale + math.log(s)) / 2**doublings)


def solve_discrete_lyapunov(A, Q=None) -> np.ndarray:
    """``P`` with ``A^T P A - P = -Q`` (``Q = I`` by default)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    Q = np.eye(n) if Q is None else np.asarray(Q, dtype=float)
    if spectral_radius_estimate(A) >= 1.0:
        raise ContractViolation("A is not Schur stable")
    # vec(A^T P A) = (A^T kron A^T) vec(P) for row-major vec
    M = np.kron(A.T, A.T) - np.eye(n * n)
    P = gaussian_solve(M, -Q.reshape(-1)).reshape(n, n)
    return 0.5 * (P + P.T)


@dataclass
class EllipsoidRoa:
    P: np.ndarray
    c1: float
    epsilon: float
    domain_B: BoxSet
    diagnostics: dict = field(default_factory=dict)

    def nu(self, X):
        X = np.asarray(X, dtype=float)
        return np.einsum("...i,ij,...j->...", X, self.P, X)

    def contains(self, X):
        return self.nu(X) <= self.c1

    @property
    def decay_rate(self) -> float:
        """``1 - epsilon / lambda_max(P)``: per-step contraction factor of ``nu``."""
        return 1.0 - self.epsilon / eig_max(self.P)

    def to_dict(self) -> dict:
        return {
            "P": self.P.tolist(),
            "c1": self.c1,
            "epsilon": self.epsilon,
            "domain_B": {"lo": self.domain_B.lo.tolist(), "hi": self.domain_B.hi.tolist()},
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d) -> "EllipsoidRoa":
        B = d.get("domain_B")
        box = BoxSet.from_bounds(B["lo"], B["hi"]) if B else BoxSet(np.zeros(len(d["P"])), np.zeros(len(d["P"])))
        return cls(np.asarray(d["P"], dtype=float), float(d["c1"]), float(d["epsilon"]), box,
                   dict(d.get("diagnostics", {})))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def jacobian_vertices(sys, num=1001, inflation=1.1) -> list:
    """Vertices of a polytope containing ``D_x f(0, w)`` for all ``w in W``.

    Jacobians affine in ``w`` give the two endpoint matrices.  Otherwise the
    curve is enclosed by the chord between the endpoints thickened by the
    entrywise deviation box (estimated on a dense grid and inflated).
    """
    lo_w, hi_w = float(sys.w_lo[0]), float(sys.w_hi[0])
    A_lo = dyn.jacobian_at_origin(sys, lo_w)
    A_hi = dyn.jacobian_at_origin(sys, hi_w)
    if hi_w == lo_w:
        return [A_lo]
    ws = np.linspace(lo_w, hi_w, num)
    t = (ws - lo_w) / (hi_w - lo_w)
    mats = np.stack([dyn.jacobian_at_origin(sys, w) for w in ws])
    dev = mats - (A_lo[None] + t[:, None, None] * (A_hi - A_lo)[None])
    scale = max(1.0, float(np.max(np.abs(mats))))
    if np.max(np.abs(dev)) <= 1e-12 * scale:
        return [A_lo, A_hi]
    dlo, dhi = inflation * dev.min(axis=0), inflation * dev.max(axis=0)
    entries = list(zip(*np.nonzero(dhi - dlo > 0.0)))
    vertices = []
    for base in (A_lo, A_hi):
        for choice in itertools.product((0, 1), repeat=len(entries)):
            A = base.copy()
            for (i, j), c in zip(entries, choice):
                A[i, j] += dhi[i, j] if c else dlo[i, j]
            vertices.append(A)
    return vertices


def _worst_contraction(L_flat, vertices, n):
    L = np.zeros((n, n))
    L[np.tril_indices(n)] = L_flat
    try:
        Linv = np.linalg.inv(L)
    except np.linalg.LinAlgError:
        return np.inf
    # ||L^T A L^{-T}||_2 is the P-norm gain of A for P = L L^T
    return max(np.linalg.norm(L.T @ A @ Linv.T, 2) for A in vertices)


def common_lyapunov_matrix(vertices, P0=None, restarts=4):
    """``P`` minimizing the worst vertex gain ``max_i ||A_i||_P`` (Nelder-Mead over Cholesky factors)."""
    from scipy.optimize import minimize

    n = vertices[0].shape[0]
    P0 = np.eye(n) if P0 is None else P0
    L0 = np.linalg.cholesky(P0 / eig_max(P0))[np.tril_indices(n)]
    best = (np.inf, L0)
    start = L0
    for _ in range(restarts):
        res = minimize(_worst_contraction, start, args=(vertices, n), method="Nelder-Mead",
                       options={"maxiter": 20000, "xatol": 1e-12, "fatol": 1e-14})
        if res.fun < best[0]:
            best = (res.fun, res.x)
        start = res.x
    L = np.zeros((n, n))
    L[np.tril_indices(n)] = best[1]
    P = L @ L.T
    P = P / eig_min(P)
    return 0.5 * (P + P.T), best[0]


def _safe_scale(sys, B: BoxSet, iters=40) -> float:
    """Largest ``s in (0, 1]`` with ``max_i g_i < 1`` on ``s * B`` (interval check)."""
    if sys.n_safe == 0:
        return 1.0

    def safe(s):
        box = Interval(s * B.lo, s * B.hi)
        return bool(np.all(g_interval(sys, box).hi < 1.0))

    if safe(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if safe(mid) else (lo, mid)
    return lo


def g_interval(sys, X: Interval) -> Interval:
    """Interval extension of the safe-set functions (last axis = constraint)."""
    x1, x2 = X[..., 0], X[..., 1]
    if sys.name == dyn.TWO_MACHINE:
        g1 = 1.0 + 1.0 / 16.0 - ((x1 + 0.5).square() + (x2 - 0.5).square())
        g2 = 1.0 + 1.0 / 16.0 - (x1.square() + (x2 + 0.5).square())
        return _stack2(g1, g2)
    if sys.name == dyn.COS_POLY:
        g = x1 + x2
        return Interval(g.lo[..., None], g.hi[..., None])
    if sys.name == dyn.RIGID_ROD:
        from .intervals import matvec, stack
        u = matvec(sys.K[None, :], X)[..., 0]
        return stack([x1.square() * (1.0 / (math.pi / 4.0) ** 2), x2.square(), X[..., 2].square(),
                      u.square() * (1.0 / 25.0)])
    if sys.name == dyn.RATIONAL:
        shape = X.lo.shape[:-1] + (0,)
        return Interval(np.zeros(shape), np.zeros(shape))
    raise ContractViolation(f"unknown system {sys.name!r}")


def _stack2(a, b):
    from .intervals import stack
    return stack([a, b])


def _grid(lo, hi, num):
    axes = [np.linspace(l, h, num) for l, h in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _remainder_bound(sys, B: BoxSet, grid, w_grid=11, inflation=1.1) -> np.ndarray:
    """Grid estimate of ``eta`` with ``|h(x, w)| <= ||x||^2 / 2 * eta`` on ``B x W``."""
    X = _grid(B.lo, B.hi, grid)
    sq = np.sum(X * X, axis=1)
    X, sq = X[sq > 0], sq[sq > 0]
    eta = np.zeros(sys.n)
    for w in np.linspace(sys.w_lo[0], sys.w_hi[0], w_grid):
        A = dyn.jacobian_at_origin(sys, w)
        h = dyn.step_batch(sys, X, np.full((X.shape[0], 1), w)) - X @ A.T
        eta = np.maximum(eta, np.max(2.0 * np.abs(h) / sq[:, None], axis=0))
    return inflation * eta


def _construct(sys, B: BoxSet, P, Qmin, grid, eps_frac):
    eta = _remainder_bound(sys, B, grid)
    sqrtP = spd_sqrt(P)
    inv_sqrtP = np.linalg.inv(sqrtP)
    a = float(np.linalg.norm(np.abs(sqrtP) @ eta))
    lam_min_P = eig_min(P)
    lam_max_P = eig_max(P)
    e1 = a * a / (4.0 * lam_min_P)
    vertices = jacobian_vertices(sys)
    e2 = 1.1 * a * max(spectral_norm(sqrtP @ A @ inv_sqrtP) for A in vertices)
    epsilon = min(eps_frac * Qmin, 0.5 * lam_max_P)
    d = Qmin - epsilon
    # (-e2 + sqrt(e2^2 + 4 e1 d)) / (2 e1) in cancellation-free form; e1 = e2 = 0 gives +inf
    denom = e2 + math.sqrt(e2 * e2 + 4.0 * e1 * d)
    k1 = math.inf if denom == 0.0 else (2.0 * d / denom) ** 2
    Pinv = np.linalg.inv(P)
    k2 = float(np.min(B.radius**2 / np.diag(Pinv)))
    return {
        "eta": eta, "e1": e1, "e2": e2, "d": d, "k1": k1, "k2": k2,
        "epsilon": epsilon, "lambda_min_P": lam_min_P, "lambda_max_P": lam_max_P,
        "c1": min(k1, k2),
    }


def build_ellipsoid_roa(sys, B: BoxSet = None, grid: int = 41, eps_frac: float = 0.01,
                        scale_candidates: int = 24, normalize: bool = True) -> EllipsoidRoa:
    """Ellipsoid ``{x : x^T P x <= c1}`` from the linearization at the origin.

    ``P`` solves the discrete Lyapunov equation for the Jacobian at the
    center of W; every Jacobian vertex must keep ``P - A^T P A`` positive
    definite.  ``B`` defaults to the system domain; it is shrunk (by a
    common factor) until the safe-set functions are provably below 1 on
    it.  When ``B`` is not given, scaled copies are searched for the
    largest resulting ``c1``.  The remainder bound ``eta`` is a grid
    estimate, so the diagnostics carry ``sound: False``.

    With ``normalize`` the returned ``P``, ``c1`` and ``epsilon`` are divided
    by ``lambda_max(P)``; the ellipsoid and the decay factor
    ``1 - epsilon / lambda_max(P)`` are unchanged, while ``nu`` gets a scale
    comparable to ``||x||^2`` (this matters when ``alpha`` is a multiple of
    ``nu``).  The other diagnostics refer to the unnormalized ``P``.
    """
    vertices = jacobian_vertices(sys)
    candidates = [dyn.jacobian_at_origin(sys, sys.w_center[0])] + vertices
    report = {"tried": []}
    P = Qmin = None
    for A in candidates:
        try:
            P_try = solve_discrete_lyapunov(A)
        except (ContractViolation, np.linalg.LinAlgError) as exc:
            report["tried"].append(str(exc))
            continue
        qmins = [eig_min(P_try - Av.T @ P_try @ Av) for Av in vertices]
        report["tried"].append({"Q_min_eigs": qmins})
        if min(qmins) > 0.0:
            P, Qmin = P_try, min(qmins)
            break
    if P is None:
        P_try, gain = common_lyapunov_matrix(vertices, P0=solve_discrete_lyapunov(candidates[0]))
        qmins = [eig_min(P_try - Av.T @ P_try @ Av) for Av in vertices]
        report["tried"].append({"Q_min_eigs": qmins, "worst_gain": gain})
        if min(qmins) > 0.0:
            P, Qmin = P_try, min(qmins)
            report["P_source"] = "min-max contraction"
    if P is None:
        raise ConstructionFailure("no P keeps every vertex decrease matrix positive definite", report)

    base = B if B is not None else sys.domain
    s_safe = _safe_scale(sys, base)
    if s_safe <= 0.0:
        raise ConstructionFailure("no safe box around the origin", report)
    scales = [s_safe] if B is not None else list(s_safe * np.geomspace(1.0, 0.02, scale_candidates))
    best = None
    for s in scales:
        box = BoxSet(base.center * s, base.radius * s)
        res = _construct(sys, box, P, Qmin, grid, eps_frac)
        if best is None or res["c1"] > best[1]["c1"]:
            best = (box, res, s)
    box, res, s = best
    if not res["c1"] > 0.0:
        raise ConstructionFailure("c1 is not positive", res)
    diagnostics = {k: v for k, v in res.items() if k not in ("c1", "epsilon")}
    diagnostics.update({"B_scale": s, "safe_scale": s_safe, "n_vertices": len(vertices),
                        "Q_min_eig": Qmin, "sound": False})
    scale = eig_max(P) if normalize else 1.0
    diagnostics["P_scale"] = scale
    return EllipsoidRoa(P / scale, float(res["c1"]) / scale, float(res["epsilon"]) / scale, box,
                        diagnostics)


def cospoly_analytic_roa(w_min: float, w_max: float, eps: float = 0.01):
    """``(nu, c1)`` with ``nu(x) = ||x||^2`` and ``c1 = min(1/w_min - eps, sqrt(w_max^2 + 2) - w_max)``."""
    if not 0.0 < w_min <= w_max:
        raise ContractViolation("need 0 < w_min <= w_max")
    rho_pos = -w_max + math.sqrt(w_max * w_max + 2.0)
    c1 = min(1.0 / w_min - eps, rho_pos)

    def nu(X):
        X = np.asarray(X, dtype=float)
        return np.sum(X * X, axis=-1)

    return nu, c1


def initial_roa(sys, eps: float = 0.01) -> EllipsoidRoa:
    """The initial region used by the pipeline for each benchmark."""
    if sys.name == dyn.COS_POLY:
        _, c1 = cospoly_analytic_roa(float(sys.w_lo[0]), float(sys.w_hi[0]), eps)
        r = math.sqrt(c1)
        return EllipsoidRoa(np.eye(2), c1, 0.0, BoxSet(np.zeros(2), np.full(2, r)),
                            {"analytic": True, "eps": eps, "sound": True})
    return build_ellipsoid_roa(sys)
