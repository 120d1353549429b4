"""Sampling-based candidate constants and interval branch-and-bound verification.

Three implications are checked over ``Xv x W`` (``Xv`` is the system domain):

* ``dvp``:  ``c1 <= nu(x) <= c2``  =>  ``nu(f) - nu(x) <= -eps``, ``g(x) < 1``, ``f in Xv``
* ``c2w2``: ``omega(x) <= omega1``  =>  ``nu(x) <= c2``, ``omega(f) <= omega2``
* ``dw``:   ``omega1 <= omega(x) <= omega2``  =>  ``omega(f) - omega(x) <= -eps_w``,
  ``g(x) < 1``, ``f in Xv``

``omega`` is the network evaluated on the singleton embedding ``[x; 0]``.
Interval enclosures are computed in plain double precision; ``slack``
inflates every enclosure to absorb rounding.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import dynamics as dyn
from .errors import ContractViolation, EstimationFailure
from .intervals import Interval, bilinear, matvec, quadratic_form, stack
from .lyap_init import EllipsoidRoa, g_interval
from .nn import MlpModel, forward, omega_nn

DVP = "dvp"
C2W2 = "c2w2"
DW = "dw"
CONDITIONS = (DVP, C2W2, DW)
_REPORT_KEYS = {DVP: "dVP", C2W2: "c2w2", DW: "dW"}

CERTIFIED = "certified"
FALSIFIED = "falsified"
UNKNOWN = "unknown"

EXIT_OK = 0
EXIT_GENERIC = 1
EXIT_ESTIMATION = 2
EXIT_UNKNOWN = 3
EXIT_FALSIFIED = 4
EXIT_TRAINING = 5

_SIN_PI3 = math.sin(math.pi / 3.0)


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class CandidateParams:
    c1: float
    c2: float
    omega1: float = 0.0
    omega2: float = 1.0
    epsilon: float = 1e-4
    delta: float = 1e-3
    epsilon_omega: Optional[float] = None

    def __post_init__(self):
        if not self.c2 > self.c1:
            raise ContractViolation(f"need c2 > c1 (got c1={self.c1}, c2={self.c2})")
        if not self.omega2 > self.omega1:
            raise ContractViolation(f"need omega2 > omega1 (got {self.omega1}, {self.omega2})")
        if not (self.epsilon > 0.0 and self.delta > 0.0):
            raise ContractViolation("epsilon and delta must be positive")
        if self.epsilon_omega is not None and not self.epsilon_omega > 0.0:
            raise ContractViolation("epsilon_omega must be positive")

    @property
    def eps_omega(self) -> float:
        return self.epsilon if self.epsilon_omega is None else self.epsilon_omega


@dataclass(frozen=True)
class Budget:
    max_boxes: int = 1_000_000
    max_depth: int = 40


@dataclass
class Verdict:
    status: str
    boxes_processed: int
    max_depth_hit: bool = False
    witness: Optional[tuple] = None
    stats: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status == CERTIFIED

    def to_dict(self) -> dict:
        d = {"status": self.status, "boxes_processed": self.boxes_processed,
             "max_depth_hit": self.max_depth_hit, "stats": self.stats}
        if self.witness is not None:
            d["witness"] = {"x": np.asarray(self.witness[0]).tolist(),
                            "w": np.asarray(self.witness[1]).tolist()}
        return d


# ---------------------------------------------------------------------------
# interval extensions


def _split_box(sys, lo, hi):
    n = sys.n
    return Interval(lo[..., :n], hi[..., :n]), Interval(lo[..., n:], hi[..., n:])


def interval_delta(sys, X: Interval, W: Interval) -> Interval:
    """Enclosure of ``f(x, w) - x`` over the box ``X x W`` (last axis = coordinate)."""
    dt = sys.dt
    x1, x2 = X[..., 0], X[..., 1]
    w = W[..., 0]
    if sys.name == dyn.TWO_MACHINE:
        damped = x2 if sys.damping_on == "x2" else x1
        d1 = x2 * dt
        d2 = (w * damped + (x1 + math.pi / 3.0).sin() - _SIN_PI3) * (-dt)
        return stack([d1, d2])
    if sys.name == dyn.COS_POLY:
        r = x1.square() + x2.square()
        s = r.cos() - w * r
        return X * stack([s - 1.0, s - 1.0])
    if sys.name == dyn.RIGID_ROD:
        mass, inertia, grav = dyn._rod_constants(sys)
        x3 = X[..., 2]
        num = x3 - (w * x1.sin()) * (mass * grav)
        den = w.square() * mass + inertia
        d2 = (num / den) * dt
        d3 = matvec(sys.K[None, :] * dt, X)[..., 0]
        return stack([x2 * dt, d2, d3])
    if sys.name == dyn.RATIONAL:
        den = x2.square() + 1.0
        assert np.all(den.lo > 0.0), "rational denominator must stay positive"
        inv = den.reciprocal()
        d1 = (x1 + x2 ** 3) * inv * (-dt)
        d2 = (x1 ** 3 - (w + 0.25) * x2) * inv * dt
        return stack([d1, d2])
    raise ContractViolation(f"unknown system {sys.name!r}")


def interval_step(sys, X: Interval, W: Interval) -> Interval:
    """Enclosure of ``{f(x, w) : x in X, w in W}``."""
    if sys.name == dyn.COS_POLY:
        x1, x2 = X[..., 0], X[..., 1]
        r = x1.square() + x2.square()
        s = r.cos() - W[..., 0] * r
        return X * stack([s, s])
    return X + interval_delta(sys, X, W)


def interval_nn(model: MlpModel, Z: Interval) -> Interval:
    """Interval bound propagation through the network (last axis = input)."""
    if Z.shape[-1] != model.input_dim:
        raise ContractViolation(f"input has length {Z.shape[-1]}, network expects {model.input_dim}")
    H = Z
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        H = matvec(W, H) + b
        if k < last:
            H = H.tanh()
    return H[..., 0]


def _singleton(X: Interval) -> Interval:
    zeros = np.zeros_like(X.lo)
    return Interval(np.concatenate([X.lo, zeros], axis=-1), np.concatenate([X.hi, zeros], axis=-1))


def interval_omega(model: MlpModel, X: Interval) -> Interval:
    return interval_nn(model, _singleton(X))


def _neuron_matmul(W, V: Interval) -> Interval:
    """``W`` applied along axis 1 of a batch ``(N, m, ...)`` of interval arrays."""
    W = np.asarray(W, dtype=float)
    shape = V.shape
    mid = V.mid.reshape(shape[0], shape[1], -1)
    rad = V.rad.reshape(shape[0], shape[1], -1)
    out = (shape[0], W.shape[0]) + shape[2:]
    c = np.matmul(W, mid).reshape(out)
    r = np.matmul(np.abs(W), rad).reshape(out)
    return Interval(c - r, c + r)


def omega_jet(model: MlpModel, X: Interval):
    """Enclosures of ``omega([x; 0])``, its gradient and its Hessian over boxes ``(N, n)``.

    Forward-mode propagation of first and second derivatives.  Each hidden
    pre-activation is intersected with its mean-value form about the box
    center, which keeps the ``tanh`` slope bounds tight on small boxes.
    """
    n = X.shape[-1]
    mid = X.mid
    dx = X - mid
    W0 = model.weights[0][:, :n]
    A = matvec(W0, X) + model.biases[0]
    a_mid = mid @ W0.T + model.biases[0]
    J = None  # first-layer Jacobian is the point matrix W0
    T = None
    j_mid = np.broadcast_to(W0, (X.shape[0],) + W0.shape)
    last = len(model.weights) - 1
    for k in range(1, last + 1):
        S, Q = A.tanh_derivative(), A.tanh_second_derivative()
        S1 = Interval._wrap(S.lo[..., None], S.hi[..., None])
        Q2 = Interval._wrap(Q.lo[..., None, None], Q.hi[..., None, None])
        if J is None:
            dh = S1 * W0
            d2h = Q2 * (W0[:, :, None] * W0[:, None, :])
        else:
            dh = J * S1
            d2h = (J[..., :, None] * J[..., None, :]) * Q2
            d2h = d2h + T * Interval._wrap(S1.lo[..., None], S1.hi[..., None])
        W, b = model.weights[k], model.biases[k]
        s_mid = 1.0 - np.tanh(a_mid) ** 2
        h_mid = np.tanh(a_mid)
        A = matvec(W, A.tanh()) + b
        J = _neuron_matmul(W, dh)
        T = _neuron_matmul(W, d2h)
        a_mid = h_mid @ W.T + b
        j_mid = np.matmul(W, s_mid[:, :, None] * j_mid)
        if k < last:
            A = A.intersect(a_mid + (J * dx[:, None, :]).sum(axis=-1))
    value = A[..., 0]
    grad = J[:, 0, :]
    hess = T[:, 0, :, :]
    grad = grad.intersect(j_mid[:, 0, :] + (hess * dx[:, None, :]).sum(axis=-1))
    return value, grad, hess


def interval_omega_gradient(model: MlpModel, X: Interval) -> Interval:
    """Enclosure of ``d omega([x; 0]) / dx`` over the box ``X``.

    Backward interval propagation intersected with the mean-value form built
    from :func:`omega_jet`.
    """
    n = X.shape[-1]
    flat = Interval(X.lo.reshape(-1, n), X.hi.reshape(-1, n))
    grad = omega_jet(model, flat)[1]
    grad = Interval(grad.lo.reshape(X.shape), grad.hi.reshape(X.shape))
    return _backprop_gradient(model, X).intersect(grad)


def _backprop_gradient(model: MlpModel, X: Interval) -> Interval:
    n = X.shape[-1]
    H = _singleton(X)
    slopes = []
    last = len(model.weights) - 1
    for k in range(last):
        Zk = matvec(model.weights[k], H) + model.biases[k]
        slopes.append(Zk.tanh_derivative())
        H = Zk.tanh()
    g = model.weights[last][0]
    for k in range(last - 1, -1, -1):
        g = slopes[k] * g if k == last - 1 else slopes[k] * matvec(model.weights[k + 1].T, g)
    return matvec(model.weights[0][:, :n].T, g)


# ---------------------------------------------------------------------------
# point evaluation of the conditions


def _outside_domain(sys, Y):
    return np.any((Y < sys.domain_lo) | (Y > sys.domain_hi), axis=-1)


def _omega(model, sys, X):
    return omega_nn(model, sys, np.atleast_2d(X))


def evaluate_condition(sys, model, roa: EllipsoidRoa, params: CandidateParams, which, X, Wd):
    """``(premise, violated)`` boolean arrays for concrete ``(x, w)`` rows."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Wd = np.atleast_2d(np.asarray(Wd, dtype=float))
    Y = dyn.step_batch(sys, X, Wd)
    if which == DVP:
        nu, nu_f = roa.nu(X), roa.nu(Y)
        premise = (nu >= params.c1) & (nu <= params.c2)
        violated = (nu_f - nu > -params.epsilon) | (dyn.g_max(sys, X) >= 1.0) | _outside_domain(sys, Y)
        return premise, violated
    om, om_f = _omega(model, sys, X), _omega(model, sys, Y)
    if which == C2W2:
        premise = om <= params.omega1
        violated = (roa.nu(X) > params.c2) | (om_f > params.omega2)
        return premise, violated
    if which == DW:
        premise = (om >= params.omega1) & (om <= params.omega2)
        violated = ((om_f - om > -params.eps_omega) | (dyn.g_max(sys, X) >= 1.0)
                    | _outside_domain(sys, Y))
        return premise, violated
    raise ContractViolation(f"unknown condition {which!r}")


def _conclusion_value(sys, model, roa, which, X, Wd):
    """The real-valued quantity bounded by the condition's main conjunct."""
    Y = dyn.step_batch(sys, X, Wd)
    if which == DVP:
        return roa.nu(Y) - roa.nu(X)
    if which == C2W2:
        return _omega(model, sys, Y)
    return _omega(model, sys, Y) - _omega(model, sys, X)


def split_axes(sys, model, roa, which, lo, hi, norm, aspect=16.0) -> np.ndarray:
    """Bisection axis per box (smear rule).

    Each axis is scored by how much the conclusion quantity moves over the two
    half steps from the midpoint along it, plus a tenth of its normalized width.
    Disturbance axes with little influence are then rarely split.  A box whose
    normalized widths differ by more than ``aspect`` is split along its widest
    axis.
    """
    N, d = lo.shape
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    pts = np.repeat(mid[:, None, :], 2 * d + 1, axis=1)
    idx = np.arange(d)
    pts[:, 1 + idx, idx] += half
    pts[:, 1 + d + idx, idx] -= half
    flat = pts.reshape(-1, d)
    q = _conclusion_value(sys, model, roa, which, flat[:, :sys.n], flat[:, sys.n:]).reshape(N, 2 * d + 1)
    smear = np.abs(q[:, 1:d + 1] - q[:, :1]) + np.abs(q[:, d + 1:] - q[:, :1])
    smear = np.where(np.isfinite(smear), smear, 0.0)
    width = (hi - lo) * norm
    score = (smear / np.maximum(smear.max(axis=1, keepdims=True), 1e-300)
             + 0.1 * width / np.maximum(width.max(axis=1, keepdims=True), 1e-300))
    axis = np.argmax(score, axis=1)
    widest = np.argmax(width, axis=1)
    rows = np.arange(N)
    # the midpoint differences can vanish by symmetry, so keep boxes from turning into needles
    return np.where(width[rows, widest] > aspect * width[rows, axis], widest, axis)


def is_genuine_witness(sys, model, roa, params, which, x, w) -> bool:
    premise, violated = evaluate_condition(sys, model, roa, params, which, x, w)
    return bool(premise[0] and violated[0])


# ---------------------------------------------------------------------------
# interval evaluation of box batches


def _conjuncts(which) -> int:
    return 2 if which == C2W2 else 3


def _box_bounds(sys, model, roa, params, which, lo, hi, slack):
    """``(premise_empty, proven)``: bool ``(N,)`` and ``(N, k)`` per conclusion conjunct."""
    X, Wb = _split_box(sys, lo, hi)
    D = interval_delta(sys, X, Wb).inflate(slack)
    F = interval_step(sys, X, Wb).intersect(X + D).inflate(slack)
    in_domain = np.all((F.lo >= sys.domain_lo) & (F.hi <= sys.domain_hi), axis=-1)
    if which in (DVP, DW):
        g_ok = np.all(g_interval(sys, X).inflate(slack).hi < 1.0, axis=-1)
    if which == DVP:
        nu = quadratic_form(roa.P, X).inflate(slack)
        empty = (nu.hi < params.c1) | (nu.lo > params.c2)
        dnu = bilinear(roa.P, D, X * 2.0 + D).inflate(slack)
        return empty, np.stack([dnu.hi <= -params.epsilon, g_ok, in_domain], axis=-1)

    # one gradient enclosure over hull(X, F) serves both mean-value forms and the difference
    grad = interval_omega_gradient(model, X.hull(F))
    om = _omega_enclosure(model, X, grad).inflate(slack)
    if which == C2W2:
        empty = om.lo > params.omega1
        if np.all(empty):
            return empty, np.zeros(empty.shape + (2,), dtype=bool)
    om_f = _omega_enclosure(model, F, grad)
    # slow dynamics: mean-value form over the segment from x to f(x, w)
    diff = (grad * D).sum(axis=-1)
    diff = diff.intersect(om_f - om).inflate(slack)
    om_f = om_f.intersect(om + diff).inflate(slack)
    if which == C2W2:
        nu_ok = quadratic_form(roa.P, X).inflate(slack).hi <= params.c2
        return empty, np.stack([nu_ok, om_f.hi <= params.omega2], axis=-1)
    empty = (om.hi < params.omega1) | (om.lo > params.omega2)
    return empty, np.stack([diff.hi <= -params.eps_omega, g_ok, in_domain], axis=-1)


def _omega_enclosure(model, X: Interval, grad: Optional[Interval] = None) -> Interval:
    """Interval bound propagation intersected with the mean-value form about the box center.

    ``grad`` may be any enclosure of the gradient over a superset of ``X``.
    """
    if grad is None:
        grad = interval_omega_gradient(model, X)
    mid = X.mid
    om_mid = forward(model, np.concatenate([mid, np.zeros_like(mid)], axis=-1).reshape(-1, 2 * mid.shape[-1]))
    om_mid = om_mid.reshape(mid.shape[:-1])
    return interval_omega(model, X).intersect(om_mid + (grad * (X - mid)).sum(axis=-1))


def _root_box(sys):
    lo = np.concatenate([sys.domain_lo, sys.w_lo])
    hi = np.concatenate([sys.domain_hi, sys.w_hi])
    return lo, hi


def worker_count(default: int = 1) -> int:
    env = os.environ.get("ROA_FORGE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return default


def verify_condition(sys, model, roa: EllipsoidRoa, params: CandidateParams, which: str,
                     budget: Budget = Budget(), slack: float = 0.0, batch: int = 8192,
                     workers: Optional[int] = None) -> Verdict:
    """Interval branch-and-bound proof of one implication over ``Xv x W``.

    A box is discharged when the premise is provably empty on it or every
    conclusion conjunct is provably true.  Otherwise its midpoint is tested
    for a concrete counterexample, and failing that it is bisected along the
    axis chosen by :func:`split_axes`.
    """
    if which not in CONDITIONS:
        raise ContractViolation(f"unknown condition {which!r}")
    if which != DVP and model is None:
        raise ContractViolation(f"condition {which!r} needs a model")
    workers = worker_count() if workers is None else max(1, int(workers))
    start = time.perf_counter()
    root_lo, root_hi = _root_box(sys)
    scale = root_hi - root_lo
    norm = np.where(scale > 0.0, 1.0 / np.where(scale > 0.0, scale, 1.0), 0.0)
    k = _conjuncts(which)
    queue = [(root_lo[None, :], root_hi[None, :], np.zeros(1, dtype=int), np.zeros((1, k), dtype=bool))]
    processed = 0
    deepest = 0
    depth_hit = False
    stalled = 0
    n = sys.n

    def assess(chunk):
        lo, hi, depth, proven = chunk
        empty, ok = _box_bounds(sys, model, roa, params, which, lo, hi, slack)
        proven = proven | ok
        done = empty | np.all(proven, axis=1)
        mid = 0.5 * (lo + hi)
        premise, violated = evaluate_condition(sys, model, roa, params, which, mid[:, :n], mid[:, n:])
        return done, premise & violated, proven

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        while queue:
            lo, hi, depth, proven = queue.pop(0)
            if processed + lo.shape[0] > budget.max_boxes:
                return Verdict(UNKNOWN, processed, depth_hit,
                               stats={"reason": "box budget exhausted", "pending": int(lo.shape[0] + sum(q[0].shape[0] for q in queue)),
                                      "max_depth": deepest, "seconds": time.perf_counter() - start})
            processed += lo.shape[0]
            if pool is not None and lo.shape[0] >= 2 * workers:
                parts = np.array_split(np.arange(lo.shape[0]), workers)
                results = list(pool.map(assess, [(lo[p], hi[p], depth[p], proven[p]) for p in parts]))
                done = np.concatenate([r[0] for r in results])
                bad = np.concatenate([r[1] for r in results])
                proven = np.concatenate([r[2] for r in results])
            else:
                done, bad, proven = assess((lo, hi, depth, proven))
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                mid = 0.5 * (lo[i] + hi[i])
                return Verdict(FALSIFIED, processed, depth_hit, witness=(mid[:n], mid[n:]),
                               stats={"max_depth": deepest, "seconds": time.perf_counter() - start})
            keep = ~done
            too_deep = keep & (depth >= budget.max_depth)
            if np.any(too_deep):
                if not depth_hit:
                    i = int(np.flatnonzero(too_deep)[0])
                    first_deep = (lo[i].tolist(), hi[i].tolist())
                depth_hit = True
                stalled += int(too_deep.sum())
                keep &= ~too_deep
            if not np.any(keep):
                continue
            lo, hi, depth, proven = lo[keep], hi[keep], depth[keep], proven[keep]
            axis = split_axes(sys, model, roa, which, lo, hi, norm)
            rows = np.arange(lo.shape[0])
            cut = 0.5 * (lo[rows, axis] + hi[rows, axis])
            lo_b = lo.copy()
            hi_a = hi.copy()
            hi_a[rows, axis] = cut
            lo_b[rows, axis] = cut
            new_lo = np.concatenate([lo, lo_b])
            new_hi = np.concatenate([hi_a, hi])
            new_depth = np.concatenate([depth, depth]) + 1
            new_proven = np.concatenate([proven, proven])
            deepest = max(deepest, int(new_depth.max()))
            for s in range(0, new_lo.shape[0], batch):
                queue.append((new_lo[s:s + batch], new_hi[s:s + batch], new_depth[s:s + batch],
                              new_proven[s:s + batch]))
    finally:
        if pool is not None:
            pool.shutdown()
    stats = {"max_depth": deepest, "seconds": time.perf_counter() - start}
    if stalled:
        stats.update({"reason": "depth limit reached", "unresolved": stalled, "first_unresolved_box": first_deep})
        return Verdict(UNKNOWN, processed, True, stats=stats)
    return Verdict(CERTIFIED, processed, depth_hit, stats=stats)


# ---------------------------------------------------------------------------
# sampling-based estimation


def _sample(sys, samples, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(sys.domain_lo, sys.domain_hi, size=(samples, sys.n))
    Wd = rng.uniform(sys.w_lo, sys.w_hi, size=(samples, sys.m))
    return X, Wd


def default_epsilon(sys, roa: EllipsoidRoa, frac=1e-4) -> float:
    """``frac`` times ``c1``, the largest value of ``nu`` on the initial ROA.

    The decrease conditions are checked from level ``c1`` upward, where the
    true one-step decrease is proportional to ``c1`` (small for finely
    discretized systems), so the margin is scaled there.
    """
    return frac * float(roa.c1)


def sample_ellipsoid(roa: EllipsoidRoa, samples: int, seed: int = 0) -> np.ndarray:
    """Uniform samples of ``{x : nu(x) <= c1}``."""
    rng = np.random.default_rng(seed)
    n = roa.P.shape[0]
    u = rng.normal(size=(samples, n))
    u *= rng.uniform(size=(samples, 1)) ** (1.0 / n) / np.linalg.norm(u, axis=1, keepdims=True)
    return np.sqrt(roa.c1) * u @ np.linalg.inv(np.linalg.cholesky(roa.P)).T


def default_epsilon_omega(sys, model, roa: EllipsoidRoa, samples=10_000, seed=0, frac=1e-4) -> float:
    """``frac`` times the largest ``|omega|`` sampled on the initial ROA."""
    X = sample_ellipsoid(roa, samples, seed)
    return frac * float(np.max(np.abs(omega_nn(model, sys, X))))


def estimate_c2(sys, roa: EllipsoidRoa, samples: int, delta: Optional[float], seed: int = 0,
                epsilon: Optional[float] = None, margin: float = 2.0) -> float:
    """Candidate ``c2``: smallest sampled ``nu >= c1`` where the decrease implication fails, minus ``delta``.

    A sample violates when ``nu(f) - nu > -margin * epsilon``, ``g >= 1`` or
    ``f`` leaves ``Xv``.  Without violations the largest sampled ``nu`` is
    used.  ``delta=None`` backs off by ``1e-3`` of ``c2_bar - c1``.
    """
    if samples < 10_000:
        raise ContractViolation("estimate_c2 needs at least 1e4 samples")
    eps = default_epsilon(sys, roa) if epsilon is None else epsilon
    X, Wd = _sample(sys, samples, seed)
    Y = dyn.step_batch(sys, X, Wd)
    nu = roa.nu(X)
    bad = (roa.nu(Y) - nu > -margin * eps) | (dyn.g_max(sys, X) >= 1.0) | _outside_domain(sys, Y)
    cand = nu[bad & (nu >= roa.c1)]
    c2_bar = float(cand.min()) if cand.size else float(nu.max())
    if delta is None:
        delta = 1e-3 * (c2_bar - roa.c1)
    c2 = c2_bar - delta
    if not c2 > roa.c1:
        raise EstimationFailure("no admissible c2 above c1",
                                {"c1": roa.c1, "c2_bar": c2_bar, "delta": delta, "violations": int(cand.size)})
    return c2


def _extreme_spacing(values: np.ndarray, top: bool, k: int = 10) -> float:
    """Mean gap between the ``k + 1`` most extreme values (0 with fewer than two)."""
    if values.size < 2:
        return 0.0
    k = min(k, values.size - 1)
    ext = np.sort(values)[-(k + 1):] if top else np.sort(values)[:k + 1]
    return float(ext[-1] - ext[0]) / k


def estimate_omegas(sys, model, roa: EllipsoidRoa, c2: float, samples: int, delta: Optional[float],
                    seed: int = 0, epsilon: Optional[float] = None, margin: float = 2.0,
                    diagnostics: Optional[dict] = None):
    """Candidates ``(omega1, omega2)`` from one shared uniform sample of ``Xv x W``.

    ``omega1_up`` is the smallest sampled ``omega`` with ``nu > c2``;
    ``omega1_low`` the largest sampled ``omega`` below it where the decrease
    fails (``omega(f) - omega > -margin * eps``); ``omega2_up`` the smallest
    sampled ``omega >= omega1`` where the decrease, safety or domain
    condition fails.  Returns ``(omega1_low + delta, omega2_up - delta)``.

    The default ``delta`` is the larger of ``1e-3`` times the level range and
    five mean spacings of the extreme order statistics, so that a fresh
    sample of the same size rarely moves an extremum past the candidate.
    """
    if samples < 10_000:
        raise ContractViolation("estimate_omegas needs at least 1e4 samples")
    eps = default_epsilon_omega(sys, model, roa, seed=seed) if epsilon is None else epsilon
    X, Wd = _sample(sys, samples, seed)
    Y = dyn.step_batch(sys, X, Wd)
    om = omega_nn(model, sys, X)
    om_f = omega_nn(model, sys, Y)
    nu = roa.nu(X)
    outside = nu > c2
    om1_up = float(om[outside].min()) if np.any(outside) else float(om.max())
    no_decrease = om_f - om > -margin * eps
    low = no_decrease & (om <= om1_up)
    om1_low = float(om[low].max()) if np.any(low) else float(max(om.min(), 0.0))
    diag = {"omega1_up": om1_up, "omega1_low": om1_low, "epsilon": eps}
    if not om1_low < om1_up:
        raise EstimationFailure("omega1 bounds are not ordered (lower >= upper)", diag)
    d1 = max(1e-3 * (om1_up - om1_low), 5.0 * _extreme_spacing(om[low], top=True)) if delta is None else delta
    omega1 = om1_low + d1
    bad = no_decrease | (dyn.g_max(sys, X) >= 1.0) | _outside_domain(sys, Y)
    cand = om[bad & (om >= omega1)]
    om2_up = float(cand.min()) if cand.size else float(om.max())
    d2 = max(1e-3 * (om2_up - omega1), 5.0 * _extreme_spacing(cand, top=False)) if delta is None else delta
    omega2 = om2_up - d2
    diag.update({"omega2_up": om2_up, "omega1": omega1, "omega2": omega2})
    if diagnostics is not None:
        diagnostics.update(diag)
    if not (omega1 < om1_up and omega2 > omega1):
        raise EstimationFailure("omega candidates are not ordered", diag)
    return omega1, omega2


# ---------------------------------------------------------------------------
# refinement


def bisect(accept: Callable[[float], bool], good: float, bad: float, iters: int = 20,
           rtol: float = 0.0) -> float:
    """Largest (or smallest) accepted value between ``good`` and ``bad``.

    ``good`` is assumed accepted and ``bad`` rejected; the returned value is
    always either ``good`` or a value for which ``accept`` returned True.
    """
    span = abs(bad - good)
    for _ in range(iters):
        if rtol and abs(bad - good) <= rtol * span:
            break
        mid = 0.5 * (good + bad)
        if accept(mid):
            good = mid
        else:
            bad = mid
    return good


_FREE = {"c2": (DVP, +1), "omega2": (DW, +1), "omega1": (C2W2, -1)}


def bisect_refine(sys, model, roa, params: CandidateParams, which: str, budget: Budget = Budget(),
                  free: Optional[str] = None, limit: Optional[float] = None, iters: int = 20,
                  slack: float = 0.0):
    """Push the free constant of ``which`` as far as verification allows.

    ``c2`` and ``omega2`` move up, ``omega1`` moves down, towards ``limit``
    (first value presumed non-certified).  Returns ``(params, info)``; when
    the starting params are not certified they are returned unchanged with
    ``info["refined"] = False``.
    """
    free = free or {DVP: "c2", DW: "omega2", C2W2: "omega1"}[which]
    _, direction = _FREE[free]
    start = getattr(params, free)
    if limit is None:
        limit = start + direction * max(abs(start), 1.0)

    def accept(v):
        try:
            trial = replace(params, **{free: v})
        except ContractViolation:
            return False
        return verify_condition(sys, model, roa, trial, which, budget, slack=slack).certified

    if not verify_condition(sys, model, roa, params, which, budget, slack=slack).certified:
        return params, {"refined": False, "reason": "initial value not certified"}
    best = bisect(accept, start, limit, iters)
    return replace(params, **{free: best}), {"refined": True, "from": start, "to": best}


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class CertifyConfig:
    samples: int = 100_000
    delta: Optional[float] = None
    epsilon: Optional[float] = None
    epsilon_omega: Optional[float] = None
    max_boxes: int = 1_000_000
    max_depth: int = 40
    refine_iters: int = 20
    refine_rtol: float = 1e-2
    slack: float = 0.0
    seed: int = 0
    omega2_offset: float = 0.0

    @property
    def budget(self) -> Budget:
        return Budget(self.max_boxes, self.max_depth)


@dataclass
class CertificationReport:
    c1: float
    c2: float
    omega1: float
    omega2: float
    epsilon: float
    epsilon_omega: float
    verdicts: dict
    boxes: dict
    scenario: int
    system: str = ""
    estimates: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    failure: Optional[str] = None

    @property
    def all_certified(self) -> bool:
        return self.failure is None and all(v == CERTIFIED for v in self.verdicts.values()) \
            and len(self.verdicts) == 3

    def exit_code(self) -> int:
        if self.failure == "estimation":
            return EXIT_ESTIMATION
        if self.failure == "refinement":
            return EXIT_UNKNOWN
        if self.all_certified:
            return EXIT_OK
        if FALSIFIED in self.verdicts.values():
            return EXIT_FALSIFIED
        return EXIT_UNKNOWN

    def params(self) -> CandidateParams:
        return CandidateParams(self.c1, self.c2, self.omega1, self.omega2, self.epsilon,
                               self.estimates.get("delta") or 1e-3, self.epsilon_omega)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, d) -> "CertificationReport":
        keys = cls.__dataclass_fields__.keys()
        d = {k: v for k, v in d.items() if k in keys}
        for k in ("c1", "c2", "omega1", "omega2", "epsilon", "epsilon_omega"):
            if d.get(k) is None:
                d[k] = float("nan")
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CertificationReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def certify(sys, model, roa: EllipsoidRoa, cfg: CertifyConfig = CertifyConfig()) -> CertificationReport:
    """Estimate ``(c2, omega1, omega2)``, verify all three conditions, and refine by bisection.

    Candidates that fail verification are pulled back towards the safe side
    (``c2`` towards ``c1``, ``omega1`` down, ``omega2`` towards ``omega1``)
    by bisection before the final verdicts are recorded.
    """
    t0 = time.perf_counter()
    budget = cfg.budget
    eps = cfg.epsilon if cfg.epsilon is not None else default_epsilon(sys, roa)
    eps_w = cfg.epsilon_omega if cfg.epsilon_omega is not None else \
        default_epsilon_omega(sys, model, roa, seed=cfg.seed)
    report = CertificationReport(roa.c1, float("nan"), float("nan"), float("nan"), eps, eps_w,
                                 {}, {}, sys.scenario, sys.name)
    report.estimates["delta"] = cfg.delta
    boxes = {key: 0 for key in _REPORT_KEYS.values()}
    cache = {}

    def run(params, which):
        key = (which, params.c2, params.omega1, params.omega2)
        if key not in cache:
            v = verify_condition(sys, model, roa, params, which, budget, slack=cfg.slack)
            boxes[_REPORT_KEYS[which]] += v.boxes_processed
            cache[key] = v
        return cache[key]

    def params_for(c2, om1=0.0, om2=1.0):
        return CandidateParams(roa.c1, c2, om1, om2, eps, cfg.delta or 1e-3, eps_w)

    try:
        c2 = estimate_c2(sys, roa, cfg.samples, cfg.delta, cfg.seed, eps)
    except EstimationFailure as exc:
        report.failure = "estimation"
        report.estimates["error"] = str(exc)
        report.estimates["diagnostics"] = exc.diagnostics
        return report
    report.estimates["c2_candidate"] = c2
    t1 = time.perf_counter()
    if not run(params_for(c2), DVP).certified:
        c2 = bisect(lambda c: run(params_for(c), DVP).certified, roa.c1, c2,
                    cfg.refine_iters, cfg.refine_rtol)
        if c2 <= roa.c1:
            c2 = report.estimates["c2_candidate"]
    report.c2 = c2
    report.seconds["dvp"] = time.perf_counter() - t1

    diag = {}
    try:
        om1, om2 = estimate_omegas(sys, model, roa, c2, cfg.samples, cfg.delta, cfg.seed + 1, eps_w,
                                   diagnostics=diag)
    except EstimationFailure as exc:
        report.failure = "estimation"
        report.estimates["error"] = str(exc)
        report.estimates["diagnostics"] = exc.diagnostics
        report.verdicts[_REPORT_KEYS[DVP]] = run(params_for(c2), DVP).status
        report.boxes = boxes
        return report
    report.estimates.update({"omega1_candidate": om1, "omega2_candidate": om2,
                             "omega1_up": diag["omega1_up"], "omega2_up": diag["omega2_up"]})

    # DW splits at a level m into [omega1, m] and [m, omega2]; each end then
    # moves monotonically (omega1 up, omega2 down) until its half certifies.
    t3 = time.perf_counter()
    split = None
    if not run(params_for(c2, om1, om2), DW).certified:
        m = min(0.5 * (om1 + om2), 0.5 * (om1 + diag["omega1_up"]))
        split = m
        if not run(params_for(c2, om1, m), DW).certified:
            om1 = bisect(lambda v: v < m and run(params_for(c2, v, m), DW).certified, m, om1,
                         cfg.refine_iters, cfg.refine_rtol)
        if not run(params_for(c2, m, om2), DW).certified:
            om2 = bisect(lambda v: v > m and run(params_for(c2, m, v), DW).certified, m, om2,
                         cfg.refine_iters, cfg.refine_rtol)
    report.seconds["dw"] = time.perf_counter() - t3

    t2 = time.perf_counter()
    if om2 > om1 and not run(params_for(c2, om1, om2), C2W2).certified:
        om_floor = float(np.min(omega_nn(model, sys, _sample(sys, 10_000, cfg.seed)[0]))) - 1.0
        om1_c = bisect(lambda v: v < om2 and run(params_for(c2, v, om2), C2W2).certified,
                       om_floor, om1, cfg.refine_iters, cfg.refine_rtol)
        report.estimates["omega1_c2w2_limit"] = om1_c
    report.seconds["c2w2"] = time.perf_counter() - t2
    om2 = om2 + cfg.omega2_offset
    report.omega1, report.omega2 = om1, om2
    if not om2 > om1:
        report.failure = "refinement"
        report.verdicts = {_REPORT_KEYS[DVP]: run(params_for(c2), DVP).status,
                           _REPORT_KEYS[C2W2]: UNKNOWN, _REPORT_KEYS[DW]: UNKNOWN}
        report.boxes = boxes
        return report

    final = params_for(c2, om1, om2)
    for which in CONDITIONS:
        if (which == DW and split is not None and om1 < split < om2
                and run(params_for(c2, om1, split), DW).certified
                and run(params_for(c2, split, om2), DW).certified):
            # the implication holds on each half of the band, hence on the union
            report.verdicts[_REPORT_KEYS[DW]] = CERTIFIED
            report.estimates["dw_certified_by_split"] = split
            continue
        v = run(final, which)
        status = v.status
        report.verdicts[_REPORT_KEYS[which]] = status
        if v.witness is not None:
            report.witnesses[_REPORT_KEYS[which]] = {"x": v.witness[0].tolist(), "w": v.witness[1].tolist()}
    report.boxes = boxes
    report.seconds["total"] = time.perf_counter() - t0
    return report


def falsification_sweep(sys, model, roa, params: CandidateParams, which: str,
                        samples: int = 1_000_000, seed: int = 12345, chunk: int = 200_000):
    """Count concrete violations among uniform samples of ``Xv x W``; returns ``(count, first or None)``."""
    rng = np.random.default_rng(seed)
    count = 0
    first = None
    for s in range(0, samples, chunk):
        size = min(chunk, samples - s)
        X = rng.uniform(sys.domain_lo, sys.domain_hi, size=(size, sys.n))
        Wd = rng.uniform(sys.w_lo, sys.w_hi, size=(size, sys.m))
        premise, violated = evaluate_condition(sys, model, roa, params, which, X, Wd)
        bad = premise & violated
        if first is None and np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            first = (X[i], Wd[i])
        count += int(bad.sum())
    return count, first
