"""Exact closed-interval arithmetic over rationals."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .ratfunc import Polynomial


@dataclass(frozen=True)
class Interval:
    lo: Fraction
    hi: Fraction

    def __post_init__(self) -> None:
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @classmethod
    def point(cls, v: Fraction) -> Interval:
        return cls(v, v)

    def __add__(self, other: Interval) -> Interval:
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def __neg__(self) -> Interval:
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other: Interval) -> Interval:
        return self + (-other)

    def __mul__(self, other: Interval) -> Interval:
        ps = (
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        )
        return Interval(min(ps), max(ps))

    def scale(self, k: Fraction) -> Interval:
        if k >= 0:
            return Interval(self.lo * k, self.hi * k)
        return Interval(self.hi * k, self.lo * k)

    def power(self, e: int) -> Interval:
        # Nonneg base only; parameter boxes live in [0, 1].
        if self.lo < 0:
            raise ValueError("power only supported for nonnegative intervals")
        return Interval(self.lo**e, self.hi**e)

    def contains(self, v: Fraction) -> bool:
        return self.lo <= v <= self.hi

    def contains_interval(self, other: Interval) -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def midpoint(self) -> Fraction:
        return (self.lo + self.hi) / 2


def poly_range(poly: Polynomial, box: Mapping[str, Interval]) -> Interval:
    """Termwise interval enclosure of a polynomial over a box."""
    total = Interval.point(Fraction(0))
    for mono, coeff in poly.terms.items():
        term = Interval.point(Fraction(1))
        for name, e in mono:
            term = term * box[name].power(e)
        total = total + term.scale(coeff)
    return total
