"""The four benchmark uncertain systems and their ingredient functions.

Every function here is vectorized over leading axes: states are arrays of
shape ``(..., n)`` and disturbances ``(..., m)``.  A :class:`SystemSpec` is
immutable; derived variants (collapsed disturbance set, attached Lyapunov
matrix) are produced with :func:`dataclasses.replace`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ContractViolation, NumericOverflowError
from .set_geometry import (
    INTERVAL_EMBEDDING,
    SEGMENT_EMBEDDING,
    BoxSet,
    SegmentSet,
)

TWO_MACHINE = "two_machine"
COS_POLY = "cos_poly"
RIGID_ROD = "rigid_rod"
RATIONAL = "rational"
SYSTEM_IDS = (TWO_MACHINE, COS_POLY, RIGID_ROD, RATIONAL)

GAMMA_CONSTANT = "constant1"
GAMMA_SUM = "sublevel_sum"
GAMMA_MAX = "sublevel_max"

ALPHA_SCALED_NU = "scaled_nu"
ALPHA_NORM_POW4 = "norm_pow4"
ALPHA_DIST_POW = "dist_pow"

# trajectories whose sup-norm exceeds this are treated as diverged
DIVERGENCE_BOUND = 10.0

_GRAVITY = 9.81
_SIN_PI3 = math.sin(math.pi / 3.0)


@dataclass(frozen=True)
class SystemSpec:
    name: str
    n: int
    m: int
    dt: float
    w_lo: np.ndarray
    w_hi: np.ndarray
    domain_lo: np.ndarray
    domain_hi: np.ndarray
    embedding: str
    gamma_kind: str
    alpha_kind: str
    gamma0: float = 1.0
    alpha_c: float = 1.0
    alpha_p: float = 2.0
    P: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)
    damping_on: str = "x2"
    K: Optional[np.ndarray] = None
    scenario: int = 2

    def __post_init__(self):
        for name in ("w_lo", "w_hi", "domain_lo", "domain_hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        if self.dt <= 0:
            raise ConfigurationError("sampling time must be positive")
        if self.w_lo.shape != (self.m,) or self.w_hi.shape != (self.m,):
            raise ConfigurationError("disturbance bounds must have length m")
        if np.any(self.w_lo > self.w_hi):
            raise ConfigurationError("disturbance set is empty (lo > hi)")
        if self.P is not None:
            object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        if self.K is not None:
            object.__setattr__(self, "K", np.asarray(self.K, dtype=float).reshape(-1))
        if self.damping_on not in ("x1", "x2"):
            raise ConfigurationError("damping_on must be 'x1' or 'x2'")

    @property
    def w_center(self) -> np.ndarray:
        return (self.w_lo + self.w_hi) / 2.0

    @property
    def w_radius(self) -> np.ndarray:
        return (self.w_hi - self.w_lo) / 2.0

    @property
    def domain(self) -> BoxSet:
        return BoxSet.from_bounds(self.domain_lo, self.domain_hi)

    @property
    def embedding_dim(self) -> int:
        return 2 * self.n

    @property
    def n_safe(self) -> int:
        return {TWO_MACHINE: 2, COS_POLY: 1, RIGID_ROD: 4, RATIONAL: 0}[self.name]


def with_scenario(sys: SystemSpec, scenario: int) -> SystemSpec:
    """Scenario 1 collapses the disturbance set to its center; 2 keeps it."""
    if scenario == 2:
        return replace(sys, scenario=2)
    if scenario == 1:
        c = sys.w_center
        return replace(sys, w_lo=c.copy(), w_hi=c.copy(), scenario=1)
    raise ConfigurationError(f"unknown scenario {scenario!r}")


def with_lyapunov_matrix(sys: SystemSpec, P) -> SystemSpec:
    return replace(sys, P=np.asarray(P, dtype=float))


# ---------------------------------------------------------------------------
# rigid rod feedback gain


def _rod_linearization(w, dt, mass=1.0, length=1.0):
    inertia = mass * length**2 / 12.0
    denom = inertia + mass * w**2
    A = np.array(
        [
            [1.0, dt, 0.0],
            [-dt * mass * _GRAVITY * w / denom, 1.0, dt / denom],
            [0.0, 0.0, 1.0],
        ]
    )
    B = np.array([[0.0], [0.0], [dt]])
    return A, B


def riccati_gain(A, B, Q, R, tol=1e-12, max_iter=200_000):
    """Feedback ``u = K x`` from value iteration on the discrete Riccati map."""
    P = np.array(Q, dtype=float)
    for _ in range(max_iter):
        BtP = B.T @ P
        G = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ G
        P_next = 0.5 * (P_next + P_next.T)
        if np.max(np.abs(P_next - P)) <= tol * max(1.0, np.max(np.abs(P_next))):
            P = P_next
            break
        P = P_next
    else:
        raise ConfigurationError("Riccati value iteration did not converge")
    K = -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return K.reshape(-1), P


@lru_cache(maxsize=None)
def _default_rod_gain(dt: float) -> tuple:
    A, B = _rod_linearization(0.5, dt)
    K, _ = riccati_gain(A, B, np.eye(3), np.eye(1))
    return tuple(K)


# ---------------------------------------------------------------------------
# factories


def two_machine(dt=0.2, w_lo=0.25, w_hi=0.75, damping_on="x2") -> SystemSpec:
    return SystemSpec(
        name=TWO_MACHINE, n=2, m=1, dt=dt, w_lo=[w_lo], w_hi=[w_hi],
        domain_lo=[-0.7, -0.7], domain_hi=[0.7, 0.7],
        embedding=INTERVAL_EMBEDDING, gamma_kind=GAMMA_SUM,
        alpha_kind=ALPHA_SCALED_NU, alpha_c=0.1, damping_on=damping_on,
    )


def cos_poly(w_min=1.0, w_max=2.0) -> SystemSpec:
    return SystemSpec(
        name=COS_POLY, n=2, m=1, dt=1.0, w_lo=[w_min], w_hi=[w_max],
        domain_lo=[-1.0, -1.0], domain_hi=[1.0, 1.0],
        embedding=SEGMENT_EMBEDDING, gamma_kind=GAMMA_MAX,
        alpha_kind=ALPHA_NORM_POW4,
    )


def rigid_rod(dt=0.2, K=None) -> SystemSpec:
    if K is None:
        K = np.array(_default_rod_gain(dt))
    quarter = math.pi / 4.0
    return SystemSpec(
        name=RIGID_ROD, n=3, m=1, dt=dt, w_lo=[0.46], w_hi=[0.54],
        domain_lo=[-quarter, -1.0, -1.0], domain_hi=[quarter, 1.0, 1.0],
        embedding=INTERVAL_EMBEDDING, gamma_kind=GAMMA_SUM,
        alpha_kind=ALPHA_SCALED_NU, alpha_c=0.1, K=K,
        params={"mass": 1.0, "length": 1.0, "gravity": _GRAVITY},
    )


def rational(dt=0.01, w_lo=-0.15, w_hi=0.15) -> SystemSpec:
    return SystemSpec(
        name=RATIONAL, n=2, m=1, dt=dt, w_lo=[w_lo], w_hi=[w_hi],
        domain_lo=[-3.0, -3.0], domain_hi=[3.0, 3.0],
        embedding=INTERVAL_EMBEDDING, gamma_kind=GAMMA_CONSTANT,
        alpha_kind=ALPHA_SCALED_NU, alpha_c=dt,
    )


_FACTORIES = {
    TWO_MACHINE: two_machine,
    COS_POLY: cos_poly,
    RIGID_ROD: rigid_rod,
    RATIONAL: rational,
}
_ALIASES = {
    "twomachine": TWO_MACHINE, "two-machine": TWO_MACHINE,
    "cospoly": COS_POLY, "cos-poly": COS_POLY,
    "rigidrod": RIGID_ROD, "rigid-rod": RIGID_ROD,
}


def get_system(name: str) -> SystemSpec:
    key = _ALIASES.get(name.lower(), name.lower())
    if key not in _FACTORIES:
        raise ConfigurationError(f"unknown system {name!r}; choose from {SYSTEM_IDS}")
    return _FACTORIES[key]()


def system_from_config(cfg) -> SystemSpec:
    """Build a system from a JSON-like mapping (or a path to a JSON file).

    Recognized keys: ``system``, ``dt``, ``W`` ({lo, hi}), ``alpha``
    ({kind, c, p}), ``gamma`` ({kind, gamma0}), ``damping_on``, ``K``,
    ``domain`` ({lo, hi}).
    """
    if isinstance(cfg, (str, bytes)) or hasattr(cfg, "__fspath__"):
        with open(cfg) as fh:
            cfg = json.load(fh)
    if "system" not in cfg:
        raise ConfigurationError("config needs a 'system' entry")
    name = _ALIASES.get(cfg["system"].lower(), cfg["system"].lower())
    if name not in _FACTORIES:
        raise ConfigurationError(f"unknown system {cfg['system']!r}")
    if name == RIGID_ROD:
        sys = rigid_rod(dt=cfg.get("dt", 0.2), K=cfg.get("K"))
    else:
        sys = _FACTORIES[name]()
    updates = {}
    if "dt" in cfg and name != RIGID_ROD:
        updates["dt"] = float(cfg["dt"])
        if name == RATIONAL and "alpha" not in cfg:
            updates["alpha_c"] = float(cfg["dt"])
    if "W" in cfg:
        updates["w_lo"] = np.atleast_1d(np.asarray(cfg["W"]["lo"], dtype=float))
        updates["w_hi"] = np.atleast_1d(np.asarray(cfg["W"]["hi"], dtype=float))
    if "domain" in cfg:
        updates["domain_lo"] = np.asarray(cfg["domain"]["lo"], dtype=float)
        updates["domain_hi"] = np.asarray(cfg["domain"]["hi"], dtype=float)
    alpha_cfg = cfg.get("alpha") or {}
    if "kind" in alpha_cfg:
        updates["alpha_kind"] = alpha_cfg["kind"]
    if "c" in alpha_cfg:
        updates["alpha_c"] = float(alpha_cfg["c"])
    if "p" in alpha_cfg:
        updates["alpha_p"] = float(alpha_cfg["p"])
    gamma_cfg = cfg.get("gamma") or {}
    if "kind" in gamma_cfg:
        updates["gamma_kind"] = gamma_cfg["kind"]
    if "gamma0" in gamma_cfg:
        updates["gamma0"] = float(gamma_cfg["gamma0"])
    if cfg.get("damping_on"):
        updates["damping_on"] = cfg["damping_on"]
    if updates:
        sys = replace(sys, **updates)
    if sys.alpha_kind not in (ALPHA_SCALED_NU, ALPHA_NORM_POW4, ALPHA_DIST_POW):
        raise ConfigurationError(f"unknown alpha kind {sys.alpha_kind!r}")
    if sys.gamma_kind not in (GAMMA_CONSTANT, GAMMA_SUM, GAMMA_MAX):
        raise ConfigurationError(f"unknown gamma kind {sys.gamma_kind!r}")
    return sys


# ---------------------------------------------------------------------------
# dynamics


def _rod_constants(sys):
    mass = sys.params.get("mass", 1.0)
    length = sys.params.get("length", 1.0)
    return mass, mass * length**2 / 12.0, sys.params.get("gravity", _GRAVITY)


def step_batch(sys: SystemSpec, X, w) -> np.ndarray:
    """``f(x, w)`` without contract checks; broadcasts over leading axes."""
    X = np.asarray(X, dtype=float)
    w = np.asarray(w, dtype=float)[..., 0]
    x1 = X[..., 0]
    x2 = X[..., 1]
    dt = sys.dt
    if sys.name == TWO_MACHINE:
        damped = x2 if sys.damping_on == "x2" else x1
        y1 = x1 + dt * x2
        y2 = x2 - dt * (w * damped + np.sin(x1 + math.pi / 3.0) - _SIN_PI3)
        return np.stack(np.broadcast_arrays(y1, y2), axis=-1)
    if sys.name == COS_POLY:
        r = x1 * x1 + x2 * x2
        s = np.cos(r) - w * r
        return s[..., None] * X
    if sys.name == RIGID_ROD:
        mass, inertia, grav = _rod_constants(sys)
        x3 = X[..., 2]
        u = X @ sys.K
        y1 = x1 + dt * x2
        y2 = x2 + dt * (x3 - mass * grav * w * np.sin(x1)) / (inertia + mass * w * w)
        y3 = x3 + dt * u
        return np.stack(np.broadcast_arrays(y1, y2, y3), axis=-1)
    if sys.name == RATIONAL:
        den = 1.0 + x2 * x2
        y1 = x1 - dt * (x1 + x2**3) / den
        y2 = x2 + dt * (x1**3 - (0.25 + w) * x2) / den
        return np.stack(np.broadcast_arrays(y1, y2), axis=-1)
    raise ConfigurationError(f"unknown system {sys.name!r}")


def _check_state(sys, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sys.n:
        raise ContractViolation(f"state has dimension {x.shape[-1]}, system expects {sys.n}")
    return x


def _check_disturbance(sys, w, tol=1e-12):
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        w = w.reshape(1)
    if w.shape[-1] != sys.m:
        raise ContractViolation(f"disturbance has dimension {w.shape[-1]}, expected {sys.m}")
    if np.any(w < sys.w_lo - tol) or np.any(w > sys.w_hi + tol):
        raise ContractViolation("disturbance lies outside W")
    return w


def step(sys: SystemSpec, x, w) -> np.ndarray:
    x = _check_state(sys, x)
    w = _check_disturbance(sys, w)
    with np.errstate(over="ignore", invalid="ignore"):
        y = step_batch(sys, x, w)
    if not np.all(np.isfinite(y)):
        raise NumericOverflowError(f"{sys.name}: non-finite successor state")
    return y


def _rod_velocity_range(sys, x1, x3, w_lo, w_hi):
    """Exact range of ``(x3 - m g w sin x1) / (I + m w^2)`` over ``w in [w_lo, w_hi]``."""
    mass, inertia, grav = _rod_constants(sys)
    a = x3
    b = mass * grav * np.sin(x1)
    cands = [np.broadcast_to(w_lo, np.shape(a)), np.broadcast_to(w_hi, np.shape(a))]
    safe_b = np.where(b == 0.0, 1.0, b)
    disc = np.sqrt(a * a * mass * mass + b * b * mass * inertia)
    for sign in (1.0, -1.0):
        root = (a * mass + sign * disc) / (safe_b * mass)
        root = np.where(b == 0.0, w_lo, root)
        cands.append(np.clip(root, w_lo, w_hi))
    vals = np.stack([(a - b * c) / (inertia + mass * c * c) for c in cands])
    return vals.min(axis=0), vals.max(axis=0)


def set_image_embedding(sys: SystemSpec, X) -> np.ndarray:
    """Batch ``embed(F({x}))`` for rows of ``X``: shape ``(..., 2n)``."""
    X = np.asarray(X, dtype=float)
    x1 = X[..., 0]
    x2 = X[..., 1]
    wc = sys.w_center[0]
    wr = sys.w_radius[0]
    dt = sys.dt
    if sys.name == COS_POLY:
        r = x1 * x1 + x2 * x2
        u = (np.cos(r) - wc * r)[..., None] * X
        v = (-wr * r)[..., None] * X
        return np.concatenate([u, v], axis=-1)
    center = step_batch(sys, X, np.full(X.shape[:-1] + (1,), wc))
    radius = np.zeros_like(X)
    if sys.name == TWO_MACHINE:
        damped = x2 if sys.damping_on == "x2" else x1
        radius[..., 1] = dt * wr * np.abs(damped)
    elif sys.name == RATIONAL:
        radius[..., 1] = dt * wr * np.abs(x2) / (1.0 + x2 * x2)
    elif sys.name == RIGID_ROD:
        lo, hi = _rod_velocity_range(sys, x1, X[..., 2], sys.w_lo[0], sys.w_hi[0])
        center[..., 1] = x2 + dt * (lo + hi) / 2.0
        radius[..., 1] = dt * (hi - lo) / 2.0
    else:
        raise ConfigurationError(f"unknown system {sys.name!r}")
    return np.concatenate([center, radius], axis=-1)


def set_image(sys: SystemSpec, x):
    """Closed-form ``F({x}) = f(x, W)``: a box, or a segment for ``cos_poly``."""
    x = _check_state(sys, x)
    if x.ndim != 1:
        raise ContractViolation("set_image takes a single state; use set_image_embedding for batches")
    z = set_image_embedding(sys, x)
    if sys.name == COS_POLY:
        return SegmentSet(z[: sys.n], z[sys.n:])
    return BoxSet(z[: sys.n], z[sys.n:])


# ---------------------------------------------------------------------------
# disturbance signals and trajectories


@dataclass(frozen=True)
class DisturbanceSignal:
    values: np.ndarray
    seed: int

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1


def sample_signal(sys: SystemSpec, horizon: int, seed: int) -> DisturbanceSignal:
    """i.i.d. uniform draws from W, ``horizon + 1`` of them."""
    if horizon < 0:
        raise ContractViolation("horizon must be nonnegative")
    rng = np.random.default_rng(seed)
    u = rng.random((horizon + 1, sys.m))
    return DisturbanceSignal(sys.w_lo + u * (sys.w_hi - sys.w_lo), seed)


def signal_bank(sys: SystemSpec, horizon: int, count: int, seed_base: int) -> np.ndarray:
    """Stack of ``count`` signals with seeds ``seed_base + j``; shape (count, horizon+1, m)."""
    return np.stack([sample_signal(sys, horizon, seed_base + j).values for j in range(count)])


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    diverged: bool


def trajectory(sys: SystemSpec, x0, pi: DisturbanceSignal, k: int) -> Trajectory:
    """States ``x0, f(x0, pi(0)), ...`` up to step ``k``.

    Stops early (``diverged=True``) once a state is non-finite or leaves the
    box of sup-norm ``DIVERGENCE_BOUND``; the offending state is kept.
    """
    x = _check_state(sys, x0).astype(float)
    if k > pi.horizon:
        raise ContractViolation(f"k={k} exceeds the signal horizon {pi.horizon}")
    states = [x]
    for j in range(k):
        x = step_batch(sys, x, pi.values[j])
        states.append(x)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
            return Trajectory(np.array(states), True)
    return Trajectory(np.array(states), False)


# ---------------------------------------------------------------------------
# safe set, gamma, alpha


def g_values(sys: SystemSpec, X) -> np.ndarray:
    """Per-constraint safe-set functions ``g_i``; shape ``(..., n_safe)``."""
    X = np.asarray(X, dtype=float)
    x1 = X[..., 0]
    x2 = X[..., 1]
    if sys.name == TWO_MACHINE:
        g1 = 1.0 + 1.0 / 16.0 - ((x1 + 0.5) ** 2 + (x2 - 0.5) ** 2)
        g2 = 1.0 + 1.0 / 16.0 - (x1**2 + (x2 + 0.5) ** 2)
        return np.stack([g1, g2], axis=-1)
    if sys.name == COS_POLY:
        return (x1 + x2)[..., None]
    if sys.name == RIGID_ROD:
        u = X @ sys.K
        return np.stack(
            [x1**2 / (math.pi / 4.0) ** 2, x2**2, X[..., 2] ** 2, u**2 / 25.0], axis=-1
        )
    if sys.name == RATIONAL:
        return np.zeros(X.shape[:-1] + (0,))
    raise ConfigurationError(f"unknown system {sys.name!r}")


def g_max(sys: SystemSpec, X) -> np.ndarray:
    """``max_i g_i``; a state is safe iff this is below 1 (``-inf`` when unconstrained)."""
    g = g_values(sys, X)
    if g.shape[-1] == 0:
        return np.zeros(g.shape[:-1]) if np.ndim(X) > 1 else 0.0
    out = g.max(axis=-1)
    return out


def _sublevel_gamma(gamma0, g):
    slack = np.maximum(1.0 - g, 0.0)
    with np.errstate(divide="ignore"):
        return np.where(slack > 0.0, gamma0 + 1.0 / np.where(slack > 0.0, slack, 1.0), np.inf)


def gamma(sys: SystemSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if sys.gamma_kind == GAMMA_CONSTANT:
        return np.ones(X.shape[:-1]) if X.ndim > 1 else 1.0
    g = g_values(sys, X)
    if sys.gamma_kind == GAMMA_MAX:
        return _sublevel_gamma(sys.gamma0, g.max(axis=-1))
    if sys.gamma_kind == GAMMA_SUM:
        return _sublevel_gamma(sys.gamma0, g).sum(axis=-1)
    raise ConfigurationError(f"unknown gamma kind {sys.gamma_kind!r}")


def gamma_lower_bound(sys: SystemSpec) -> float:
    if sys.gamma_kind == GAMMA_CONSTANT:
        return 1.0
    if sys.gamma_kind == GAMMA_SUM:
        return sys.n_safe * sys.gamma0
    return sys.gamma0


def alpha(sys: SystemSpec, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    sq = np.sum(X * X, axis=-1)
    if sys.alpha_kind == ALPHA_SCALED_NU:
        if sys.P is None:
            raise ConfigurationError(
                "alpha = c * nu needs the Lyapunov matrix; attach it with with_lyapunov_matrix"
            )
        return sys.alpha_c * np.einsum("...i,ij,...j->...", X, sys.P, X)
    if sys.alpha_kind == ALPHA_NORM_POW4:
        return sq * sq
    if sys.alpha_kind == ALPHA_DIST_POW:
        return sq ** (sys.alpha_p / 2.0)
    raise ConfigurationError(f"unknown alpha kind {sys.alpha_kind!r}")


def alpha_lower_bound(sys: SystemSpec) -> tuple:
    """``(a, p)`` with ``alpha(x) >= a * dist(x, {0})**p``."""
    if sys.alpha_kind == ALPHA_SCALED_NU:
        return sys.alpha_c * float(np.min(np.linalg.eigvalsh(sys.P))), 2.0
    if sys.alpha_kind == ALPHA_NORM_POW4:
        return 1.0, 4.0
    return 1.0, sys.alpha_p


# ---------------------------------------------------------------------------
# linearization at the origin


def jacobian_at_origin(sys: SystemSpec, w) -> np.ndarray:
    """``D_x f(0, w)`` in closed form."""
    w = float(np.asarray(w, dtype=float).reshape(-1)[0])
    dt = sys.dt
    if sys.name == TWO_MACHINE:
        c = math.cos(math.pi / 3.0)
        if sys.damping_on == "x2":
            return np.array([[1.0, dt], [-dt * c, 1.0 - dt * w]])
        return np.array([[1.0, dt], [-dt * (c + w), 1.0]])
    if sys.name == COS_POLY:
        return np.eye(2)
    if sys.name == RIGID_ROD:
        mass, inertia, grav = _rod_constants(sys)
        denom = inertia + mass * w * w
        A = np.array(
            [[1.0, dt, 0.0], [-dt * mass * grav * w / denom, 1.0, dt / denom], [0.0, 0.0, 1.0]]
        )
        A[2, :] += dt * sys.K
        return A
    if sys.name == RATIONAL:
        return np.array([[1.0 - dt, 0.0], [0.0, 1.0 - dt * (0.25 + w)]])
    raise ConfigurationError(f"unknown system {sys.name!r}")


def describe(sys: SystemSpec) -> dict:
    return {
        "system": sys.name,
        "n": sys.n,
        "m": sys.m,
        "dt": sys.dt,
        "W": {"lo": sys.w_lo.tolist(), "hi": sys.w_hi.tolist()},
        "domain": {"lo": sys.domain_lo.tolist(), "hi": sys.domain_hi.tolist()},
        "embedding": sys.embedding,
        "gamma": {"kind": sys.gamma_kind, "gamma0": sys.gamma0},
        "alpha": {"kind": sys.alpha_kind, "c": sys.alpha_c, "p": sys.alpha_p},
        "damping_on": sys.damping_on,
        "K": None if sys.K is None else sys.K.tolist(),
    }
