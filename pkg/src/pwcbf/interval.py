"""Closed real intervals with outward rounding.

Only what the expression graph and the relaxation code need: sums,
products, scaling and the trigonometric ranges. Every operation widens its
result by one ulp on each side so that enclosures survive floating-point
rounding.
"""

from __future__ import annotations

import math
from typing import NamedTuple

_INF = math.inf
TWO_PI = 2.0 * math.pi


def _down(x: float) -> float:
    return math.nextafter(x, -_INF)


def _up(x: float) -> float:
    return math.nextafter(x, _INF)


class Interval(NamedTuple):
    lo: float
    hi: float

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(float(x), float(x))

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def __add__(self, other):
        other = _coerce(other)
        return Interval(_down(self.lo + other.lo), _up(self.hi + other.hi))

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        other = _coerce(other)
        return Interval(_down(self.lo - other.hi), _up(self.hi - other.lo))

    def __rsub__(self, other):
        return _coerce(other) - self

    def __mul__(self, other):
        other = _coerce(other)
        if self.lo == self.hi and other.lo == other.hi:
            p = self.lo * other.lo
            return Interval(_down(p), _up(p)) if p != 0.0 else Interval(0.0, 0.0)
        products = (self.lo * other.lo, self.lo * other.hi,
                    self.hi * other.lo, self.hi * other.hi)
        return Interval(_down(min(products)), _up(max(products)))

    __rmul__ = __mul__

    def scale(self, c: float) -> "Interval":
        if c == 0.0:
            return Interval(0.0, 0.0)
        a, b = c * self.lo, c * self.hi
        return Interval(_down(min(a, b)), _up(max(a, b)))

    def intersect(self, other: "Interval") -> "Interval":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        if lo > hi:
            # disjoint enclosures only arise from rounding noise; keep the hull
            return Interval(min(self.lo, other.lo), max(self.hi, other.hi))
        return Interval(lo, hi)


def _coerce(v) -> Interval:
    if isinstance(v, Interval):
        return v
    v = float(v)
    return Interval(v, v)


def _contains_shifted(a: float, b: float, phase: float) -> bool:
    """True when phase + 2*pi*k lies in [a, b] for some integer k (with slack)."""
    k = math.ceil((a - phase) / TWO_PI - 1e-12)
    return phase + TWO_PI * k <= b + 1e-12


def isin(x: Interval) -> Interval:
    if x.hi - x.lo >= TWO_PI:
        return Interval(-1.0, 1.0)
    sa, sb = math.sin(x.lo), math.sin(x.hi)
    lo, hi = min(sa, sb), max(sa, sb)
    if _contains_shifted(x.lo, x.hi, 0.5 * math.pi):
        hi = 1.0
    if _contains_shifted(x.lo, x.hi, -0.5 * math.pi):
        lo = -1.0
    return Interval(max(-1.0, _down(_down(lo))), min(1.0, _up(_up(hi))))


def icos(x: Interval) -> Interval:
    if x.hi - x.lo >= TWO_PI:
        return Interval(-1.0, 1.0)
    ca, cb = math.cos(x.lo), math.cos(x.hi)
    lo, hi = min(ca, cb), max(ca, cb)
    if _contains_shifted(x.lo, x.hi, 0.0):
        hi = 1.0
    if _contains_shifted(x.lo, x.hi, math.pi):
        lo = -1.0
    return Interval(max(-1.0, _down(_down(lo))), min(1.0, _up(_up(hi))))
