"""Compact sets, point-to-set distances, Hausdorff distances and set embeddings.

Only the handful of set shapes the pipeline manipulates are represented:
singletons, finite point clouds, axis-aligned boxes and line segments
``{u + t v : t in [-1, 1]}``.  Point clouds are unordered multisets.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ContractViolation

EUCLIDEAN = "euclidean"
CHEBYSHEV = "chebyshev"
INTERVAL_EMBEDDING = "interval"
SEGMENT_EMBEDDING = "segment"

_SEGMENT_FALLBACK_POINTS = 101


def _vector(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ContractViolation(f"{name} must be a vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class Singleton:
    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", _vector(self.point, "point"))

    @property
    def dim(self) -> int:
        return self.point.shape[0]

    def as_cloud(self) -> "PointCloud":
        return PointCloud(self.point[None, :])


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ContractViolation("a point cloud needs a nonempty (k, n) array")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def as_cloud(self) -> "PointCloud":
        return self


@dataclass(frozen=True)
class BoxSet:
    center: np.ndarray
    radius: np.ndarray

    def __post_init__(self):
        c = _vector(self.center, "center")
        r = _vector(self.radius, "radius")
        if c.shape != r.shape:
            raise ContractViolation("box center and radius differ in length")
        if np.any(r < 0):
            raise ContractViolation("box radius must be nonnegative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radius", r)

    @classmethod
    def from_bounds(cls, lo, hi) -> "BoxSet":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        return cls((lo + hi) / 2.0, (hi - lo) / 2.0)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.radius

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.radius

    def contains(self, x, tol=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - tol) & (x <= self.hi + tol), axis=-1)

    def sample(self, size, rng) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(size, self.dim))


@dataclass(frozen=True)
class SegmentSet:
    center: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        u = _vector(self.center, "center")
        v = _vector(self.direction, "direction")
        if u.shape != v.shape:
            raise ContractViolation("segment center and direction differ in length")
        object.__setattr__(self, "center", u)
        object.__setattr__(self, "direction", v)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def discretize(self, num=_SEGMENT_FALLBACK_POINTS) -> PointCloud:
        t = np.linspace(-1.0, 1.0, num)
        return PointCloud(self.center[None, :] + t[:, None] * self.direction[None, :])


CompactSet = Union[Singleton, PointCloud, BoxSet, SegmentSet]


def _norm(diff, norm):
    if norm == EUCLIDEAN:
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if norm == CHEBYSHEV:
        return np.max(np.abs(diff), axis=-1)
    raise ContractViolation(f"unknown norm {norm!r}")


def dist_point_to_set(x, S: CompactSet, norm: str = EUCLIDEAN) -> float:
    """Distance ``inf_{y in S} ||x - y||``.

    Exact for every variant except a segment under a non-Euclidean norm,
    which falls back to a 101-point discretization (approximate).
    """
    x = _vector(x)
    if x.shape[0] != S.dim:
        raise ContractViolation(f"point has dimension {x.shape[0]}, set has {S.dim}")
    if isinstance(S, Singleton):
        return float(_norm(x - S.point, norm))
    if isinstance(S, PointCloud):
        return float(np.min(_norm(S.points - x[None, :], norm)))
    if isinstance(S, BoxSet):
        nearest = np.clip(x, S.lo, S.hi)
        return float(_norm(x - nearest, norm))
    if isinstance(S, SegmentSet):
        if norm == EUCLIDEAN:
            vv = float(S.direction @ S.direction)
            t = 0.0 if vv == 0.0 else float(np.clip((x - S.center) @ S.direction / vv, -1.0, 1.0))
            return float(_norm(x - S.center - t * S.direction, norm))
        return dist_point_to_set(x, S.discretize(), norm)
    raise ContractViolation(f"unsupported set type {type(S).__name__}")


def _pairwise(A, B, norm):
    a = np.asarray(A.points if isinstance(A, PointCloud) else A, dtype=float)
    b = np.asarray(B.points if isinstance(B, PointCloud) else B, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[1] != b.shape[1]:
        raise ContractViolation(f"cloud dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return _norm(a[:, None, :] - b[None, :, :], norm)


def hausdorff_directed(A, B, norm: str = EUCLIDEAN) -> float:
    """``max_{a in A} min_{b in B} ||a - b||`` (not symmetric)."""
    return float(np.max(np.min(_pairwise(A, B, norm), axis=1)))


def hausdorff_symmetric(A, B, norm: str = EUCLIDEAN) -> float:
    d = _pairwise(A, B, norm)
    return float(max(np.max(np.min(d, axis=1)), np.max(np.min(d, axis=0))))


def embed(S: CompactSet, kind: str) -> np.ndarray:
    """Fixed-length vector representation of a singleton or an image set.

    ``interval``: boxes map to ``[center; radius]``.  ``segment``: segments
    map to ``[center; direction]``.  A singleton ``{x}`` maps to ``[x; 0]``
    under either kind.
    """
    if kind not in (INTERVAL_EMBEDDING, SEGMENT_EMBEDDING):
        raise ContractViolation(f"unknown embedding kind {kind!r}")
    if isinstance(S, Singleton):
        return np.concatenate([S.point, np.zeros_like(S.point)])
    if kind == INTERVAL_EMBEDDING and isinstance(S, BoxSet):
        return np.concatenate([S.center, S.radius])
    if kind == SEGMENT_EMBEDDING and isinstance(S, SegmentSet):
        return np.concatenate([S.center, S.direction])
    raise ContractViolation(f"cannot embed {type(S).__name__} with the {kind} embedding")


def embed_singletons(X) -> np.ndarray:
    """Batch singleton embedding: rows ``x`` become ``[x; 0]``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.hstack([X, np.zeros_like(X)])
