"""Vectorized interval arithmetic on numpy arrays.

An :class:`Interval` holds elementwise ``lo``/``hi`` arrays of identical
shape, so one object represents a whole batch of scalar intervals.  Results
enclose the true range up to double-precision rounding; directed rounding
is not used.  Callers that need a margin against rounding apply
:meth:`Interval.inflate`.
"""
from __future__ import annotations

import math

import numpy as np

_TWO_PI = 2.0 * math.pi
_HALF_PI = 0.5 * math.pi


class Interval:
    __slots__ = ("lo", "hi")
    __array_priority__ = 100

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        lo, hi = np.broadcast_arrays(lo, hi)
        self.lo = np.array(lo)
        self.hi = np.array(hi)

    @classmethod
    def _wrap(cls, lo, hi) -> "Interval":
        """Internal constructor for freshly computed arrays of equal shape (no copy)."""
        out = object.__new__(cls)
        out.lo = lo
        out.hi = hi
        return out

    @classmethod
    def point(cls, x) -> "Interval":
        return cls(x, x)

    def __repr__(self):
        return f"Interval(lo={self.lo!r}, hi={self.hi!r})"

    @property
    def shape(self):
        return self.lo.shape

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self):
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self):
        return self.hi - self.lo

    def __getitem__(self, idx) -> "Interval":
        return Interval._wrap(self.lo[idx], self.hi[idx])

    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return (x >= self.lo - tol) & (x <= self.hi + tol)

    def inflate(self, s) -> "Interval":
        if not s:
            return self
        return Interval(self.lo - s, self.hi + s)

    def hull(self, other) -> "Interval":
        other = _as_interval(other)
        return Interval(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def intersect(self, other) -> "Interval":
        other = _as_interval(other)
        return Interval(np.maximum(self.lo, other.lo), np.minimum(self.hi, other.hi))

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __add__(self, other):
        if isinstance(other, Interval):
            return Interval._wrap(*np.broadcast_arrays(self.lo + other.lo, self.hi + other.hi))
        other = np.asarray(other, dtype=float)
        return Interval(self.lo + other, self.hi + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Interval):
            return Interval(self.lo - other.hi, self.hi - other.lo)
        other = np.asarray(other, dtype=float)
        return Interval(self.lo - other, self.hi - other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Interval):
            a, b = self.lo * other.lo, self.lo * other.hi
            c, d = self.hi * other.lo, self.hi * other.hi
            lo = np.minimum(np.minimum(a, b), np.minimum(c, d))
            hi = np.maximum(np.maximum(a, b), np.maximum(c, d))
            if lo.shape != self.shape or lo.shape != other.shape:
                return Interval(lo, hi)
            return Interval._wrap(lo, hi)
        c = np.asarray(other, dtype=float)
        a, b = self.lo * c, self.hi * c
        return Interval(np.minimum(a, b), np.maximum(a, b))

    __rmul__ = __mul__

    def square(self) -> "Interval":
        lo2, hi2 = self.lo * self.lo, self.hi * self.hi
        straddle = (self.lo <= 0.0) & (self.hi >= 0.0)
        lo = np.where(straddle, 0.0, np.minimum(lo2, hi2))
        return Interval(lo, np.maximum(lo2, hi2))

    def __pow__(self, k):
        if k == 2:
            return self.square()
        if k == 3:
            return Interval(self.lo**3, self.hi**3)
        if k == 1:
            return self
        raise NotImplementedError("only powers 1, 2 and 3 are supported")

    def abs(self) -> "Interval":
        straddle = (self.lo <= 0.0) & (self.hi >= 0.0)
        a, b = np.abs(self.lo), np.abs(self.hi)
        return Interval(np.where(straddle, 0.0, np.minimum(a, b)), np.maximum(a, b))

    def reciprocal(self) -> "Interval":
        if np.any((self.lo <= 0.0) & (self.hi >= 0.0)):
            raise ZeroDivisionError("interval reciprocal of an interval containing 0")
        return Interval(1.0 / self.hi, 1.0 / self.lo)

    def __truediv__(self, other):
        if isinstance(other, Interval):
            return self * other.reciprocal()
        return self * (1.0 / np.asarray(other, dtype=float))

    def sin(self) -> "Interval":
        lo, hi = self.lo, self.hi
        s_lo, s_hi = np.sin(lo), np.sin(hi)
        out_lo = np.minimum(s_lo, s_hi)
        out_hi = np.maximum(s_lo, s_hi)
        # a maximum pi/2 + 2k pi lies in [lo, hi] iff ceil((lo - pi/2) / 2pi) <= (hi - pi/2) / 2pi
        has_max = np.ceil((lo - _HALF_PI) / _TWO_PI) <= (hi - _HALF_PI) / _TWO_PI
        has_min = np.ceil((lo + _HALF_PI) / _TWO_PI) <= (hi + _HALF_PI) / _TWO_PI
        wide = (hi - lo) >= _TWO_PI
        out_hi = np.where(has_max | wide, 1.0, out_hi)
        out_lo = np.where(has_min | wide, -1.0, out_lo)
        return Interval(out_lo, out_hi)

    def cos(self) -> "Interval":
        return (self + _HALF_PI).sin()

    def tanh(self) -> "Interval":
        return Interval(np.tanh(self.lo), np.tanh(self.hi))

    def tanh_derivative(self) -> "Interval":
        """Range of ``1 - tanh(z)^2`` (even, decreasing in ``|z|``)."""
        a = self.abs()
        return Interval(1.0 - np.tanh(a.hi) ** 2, 1.0 - np.tanh(a.lo) ** 2)

    def tanh_second_derivative(self) -> "Interval":
        """Range of ``-2 tanh(z) (1 - tanh(z)^2)`` (odd, extrema at ``tanh(z) = -+1/sqrt(3)``)."""
        f = lambda z: -2.0 * np.tanh(z) * (1.0 - np.tanh(z) ** 2)
        a, b = f(self.lo), f(self.hi)
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        z_star = math.atanh(1.0 / math.sqrt(3.0))
        peak = 4.0 / (3.0 * math.sqrt(3.0))
        hi = np.where((self.lo <= -z_star) & (self.hi >= -z_star), peak, hi)
        lo = np.where((self.lo <= z_star) & (self.hi >= z_star), -peak, lo)
        return Interval(lo, hi)

    def sum(self, axis=None) -> "Interval":
        return Interval(self.lo.sum(axis=axis), self.hi.sum(axis=axis))

    def max(self, axis=None) -> "Interval":
        return Interval(self.lo.max(axis=axis), self.hi.max(axis=axis))


def _as_interval(x) -> Interval:
    return x if isinstance(x, Interval) else Interval.point(x)


def stack(items, axis=-1) -> Interval:
    items = [_as_interval(i) for i in items]
    lo = np.stack(np.broadcast_arrays(*[i.lo for i in items]), axis=axis)
    hi = np.stack(np.broadcast_arrays(*[i.hi for i in items]), axis=axis)
    return Interval(lo, hi)


def matvec(M, v: Interval) -> Interval:
    """Exact range of ``M @ v`` for a real matrix and an interval vector (last axis)."""
    M = np.asarray(M, dtype=float)
    c = v.mid @ M.T
    r = v.rad @ np.abs(M).T
    return Interval(c - r, c + r)


def quadratic_form(P, v: Interval) -> Interval:
    """Enclosure of ``v^T P v``: natural extension intersected with the mean-value form."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    terms = []
    for i in range(n):
        terms.append(v[..., i].square() * P[i, i])
        for j in range(i + 1, n):
            terms.append(v[..., i] * v[..., j] * (2.0 * P[i, j]))
    natural = terms[0]
    for t in terms[1:]:
        natural = natural + t
    c = v.mid
    fc = np.einsum("...i,ij,...j->...", c, P, c)
    grad = matvec(2.0 * P, v)
    centered = fc + (grad * (v - c)).sum(axis=-1)
    return natural.intersect(centered)


def bilinear(P, a: Interval, b: Interval) -> Interval:
    """Enclosure of ``a^T P b`` for interval vectors."""
    return (a * matvec(P, b)).sum(axis=-1)
