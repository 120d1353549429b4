"""Set-based stage cost, finite-horizon value targets and Bellman residuals.

Reachable sets are approximated by clouds of trajectory points driven by a
bank of random disturbance signals.  Signal ``j`` is drawn with seed
``seed_base + j`` and shared by every initial state (common random
numbers), so batch evaluation is deterministic and independent of how the
points are chunked.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import dynamics as dyn
from .errors import ContractViolation
from .set_geometry import PointCloud, Singleton, embed


@dataclass(frozen=True)
class ValueConfig:
    Ns: int = 500
    Ntraj: int = 1000
    v_cap: float = 50.0
    seed_base: int = 0

    def __post_init__(self):
        if self.Ns < 1 or self.Ntraj < 1:
            raise ContractViolation("Ns and Ntraj must be at least 1")
        if self.v_cap <= 0:
            raise ContractViolation("v_cap must be positive")


@dataclass(frozen=True)
class ValueSample:
    x: np.ndarray
    w_target: float
    diverged: bool


def _cloud_points(S) -> np.ndarray:
    if isinstance(S, Singleton):
        return S.point[None, :]
    if isinstance(S, PointCloud):
        return S.points
    raise ContractViolation("psi is evaluated on singletons and point clouds only")


def psi_points(sys, pts) -> np.ndarray:
    """Stage cost over clouds stored along axis -2 of ``pts`` (shape ``(..., k, n)``)."""
    a = np.max(dyn.alpha(sys, pts), axis=-1)
    g = np.max(dyn.gamma(sys, pts), axis=-1)
    with np.errstate(invalid="ignore"):
        out = g * a
    return np.where(a == 0.0, 0.0, out)


def psi(sys, S) -> float:
    """``sup gamma * sup alpha`` over the set; ``0`` whenever ``sup alpha == 0``."""
    return float(psi_points(sys, _cloud_points(S)))


def xi_from_psi(p):
    return -np.expm1(-np.asarray(p, dtype=float))


def beta_from_psi(p):
    with np.errstate(over="ignore"):
        return np.expm1(np.asarray(p, dtype=float))


def xi(sys, S) -> float:
    return float(xi_from_psi(psi(sys, S)))


def beta(sys, S) -> float:
    return float(beta_from_psi(psi(sys, S)))


def signals_for(sys, cfg: ValueConfig) -> np.ndarray:
    """Disturbance bank of shape ``(Ntraj, Ns + 1, m)``."""
    return dyn.signal_bank(sys, cfg.Ns, cfg.Ntraj, cfg.seed_base)


def approx_reach(sys, x, cfg: ValueConfig, signals: Optional[np.ndarray] = None) -> list:
    """Clouds ``R~({x}, k)`` for ``k = 0..Ns`` (states after divergence are kept as-is)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.n,):
        raise ContractViolation(f"expected a state of length {sys.n}")
    if signals is None:
        signals = signals_for(sys, cfg)
    pts = np.repeat(x[None, :], signals.shape[0], axis=0)
    clouds = [PointCloud(pts.copy())]
    with np.errstate(all="ignore"):
        for k in range(cfg.Ns):
            pts = dyn.step_batch(sys, pts, signals[:, k])
            clouds.append(PointCloud(pts.copy()))
    return clouds


def v_finite_batch(sys, X, cfg: ValueConfig, signals=None, offset=0, horizon=None, chunk=None):
    """Capped ``sum_{k=0}^{horizon} psi(R~({x}, k))`` for every row of ``X``.

    ``signals[:, offset + k]`` drives step ``k``; ``horizon`` defaults to
    ``Ns - offset``.  Returns ``(values, diverged)``.  Accumulation stops at
    ``v_cap`` (unsafe cloud, divergence, or partial sum reaching the cap).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if signals is None:
        signals = signals_for(sys, cfg)
    if horizon is None:
        horizon = signals.shape[1] - 1 - offset
    if offset + horizon > signals.shape[1] - 1:
        raise ContractViolation("signal bank too short for the requested horizon")
    ntraj = signals.shape[0]
    if chunk is None:
        chunk = max(1, 2_000_000 // max(1, ntraj))
    values = np.empty(X.shape[0])
    diverged = np.zeros(X.shape[0], dtype=bool)
    for start in range(0, X.shape[0], chunk):
        sl = slice(start, start + chunk)
        values[sl], diverged[sl] = _v_finite_chunk(sys, X[sl], cfg, signals, offset, horizon)
    return values, diverged


def _v_finite_chunk(sys, X, cfg, signals, offset, horizon):
    P, ntraj = X.shape[0], signals.shape[0]
    pts = np.broadcast_to(X[:, None, :], (P, ntraj, sys.n)).copy()
    total = np.zeros(P)
    capped = np.zeros(P, dtype=bool)
    diverged = np.zeros(P, dtype=bool)
    active = np.arange(P)
    with np.errstate(all="ignore"):
        for k in range(horizon + 1):
            if k > 0:
                pts = dyn.step_batch(sys, pts, signals[None, :, offset + k - 1])
                bad = ~np.all(np.isfinite(pts), axis=(1, 2)) | (
                    np.max(np.abs(pts), axis=(1, 2)) > dyn.DIVERGENCE_BOUND
                )
                if np.any(bad):
                    diverged[active[bad]] = True
                    capped[active[bad]] = True
                    keep = ~bad
                    pts, active = pts[keep], active[keep]
            if active.size == 0:
                break
            p = psi_points(sys, pts)
            total[active] += np.where(np.isfinite(p), p, cfg.v_cap)
            hit = total[active] >= cfg.v_cap
            if np.any(hit):
                capped[active[hit]] = True
                keep = ~hit
                pts, active = pts[keep], active[keep]
            if active.size == 0:
                break
    total[capped] = cfg.v_cap
    return np.minimum(total, cfg.v_cap), diverged


def v_finite(sys, x, cfg: ValueConfig, signals=None) -> float:
    vals, _ = v_finite_batch(sys, np.asarray(x, dtype=float)[None, :], cfg, signals)
    return float(vals[0])


def w_from_v(v):
    return -np.expm1(-np.asarray(v, dtype=float))


def w_finite(sys, x, cfg: ValueConfig, signals=None) -> float:
    return float(w_from_v(v_finite(sys, x, cfg, signals)))


def w_targets(sys, X, cfg: ValueConfig, signals=None):
    """``(W~_Ns({x}) per row, diverged flags)``."""
    v, div = v_finite_batch(sys, X, cfg, signals)
    return w_from_v(v), div


def value_samples(sys, X, cfg: ValueConfig) -> list:
    w, div = w_targets(sys, X, cfg)
    return [ValueSample(np.asarray(x), float(t), bool(d)) for x, t, d in zip(X, w, div)]


def tail_term(sys, X, cfg: ValueConfig, signals=None) -> np.ndarray:
    """Diagnostic ``psi(R~({x}, Ns))``: the last summand, as a truncation indicator."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if signals is None:
        signals = signals_for(sys, cfg)
    pts = np.broadcast_to(X[:, None, :], (X.shape[0], signals.shape[0], sys.n)).copy()
    with np.errstate(all="ignore"):
        for k in range(cfg.Ns):
            pts = dyn.step_batch(sys, pts, signals[None, :, k])
        return psi_points(sys, pts)


def bellman_residual_w(sys, x, w_fn: Callable) -> float:
    """``w({x}) - w(F({x})) - xi({x}) (1 - w(F({x})))`` for an evaluator on embeddings.

    ``w_fn`` receives an embedding vector of length ``2n``.
    """
    x = np.asarray(x, dtype=float)
    image = dyn.set_image(sys, x)
    w_x = float(w_fn(embed(Singleton(x), sys.embedding)))
    w_f = float(w_fn(embed(image, sys.embedding)))
    return w_x - w_f - xi(sys, Singleton(x)) * (1.0 - w_f)


def write_dataset_csv(path, X, w_target, diverged) -> None:
    """CSV with header ``x1,...,xn,w_target,diverged``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(X.shape[1])] + ["w_target", "diverged"])
        for row, t, d in zip(X, w_target, diverged):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(t)), int(bool(d))])


def read_dataset_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, r)) for r in reader]
    n = sum(1 for h in header if h.startswith("x"))
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return arr[:, :n], arr[:, n], arr[:, n + 1].astype(bool)


def write_points_csv(path, X) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i + 1}" for i in range(X.shape[1])])
        for row in X:
            writer.writerow([repr(float(v)) for v in row])


def read_points_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, r)) for r in reader]
    return np.array(rows, dtype=float).reshape(-1, len(header))


def exact_w_singleton(sys, x, w_const, horizon=100_000, v_cap=math.inf) -> float:
    """Long-horizon ``W({x})`` for a constant disturbance (test oracle helper)."""
    x = np.asarray(x, dtype=float)
    total = 0.0
    for _ in range(horizon):
        total += float(psi_points(sys, x[None, :]))
        if total >= v_cap:
            break
        x = dyn.step_batch(sys, x, np.atleast_1d(w_const))
    return float(w_from_v(total))
