"""Exact rational scalars and closed-interval arithmetic.

Everything soundness-critical in the package goes through this module, and
nothing here ever rounds: scalars are :class:`fractions.Fraction` and an
:class:`Interval` is a pair of them.  Decimal strings such as ``"-0.55"`` parse
losslessly; values with non-terminating decimal expansions are written as
``"p/q"``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence, Union

RationalLike = Union[Fraction, int, str]

__all__ = [
    "Fraction",
    "Interval",
    "IntervalVector",
    "ZERO",
    "to_rational",
    "format_rational",
    "interval_add",
    "interval_scale",
    "interval_dot",
    "interval_relu",
    "vector_subset",
    "vector_add",
    "zero_vector",
    "parse_interval",
    "format_interval",
]


def to_rational(value: RationalLike) -> Fraction:
    """Convert ``value`` to an exact :class:`Fraction`.

    Floats are rejected on purpose: ``0.1`` is not one tenth, and silently
    accepting it would reintroduce rounding into a path that promises none.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        text = value.strip()
        if not text:
            raise ValueError("empty string is not a rational")
        try:
            return Fraction(text)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"cannot parse {value!r} as a rational") from exc
    if isinstance(value, float):
        raise TypeError(f"refusing float {value!r}; pass a decimal string instead")
    # gmpy2.mpq and other numbers.Rational implementations
    num = getattr(value, "numerator", None)
    den = getattr(value, "denominator", None)
    if num is not None and den is not None:
        return Fraction(int(num), int(den))
    raise TypeError(f"cannot convert {type(value).__name__} to a rational")


def format_rational(value: Fraction) -> str:
    """Render ``value`` as a terminating decimal when possible, else ``"p/q"``."""
    value = to_rational(value)
    num, den = value.numerator, value.denominator
    if den == 1:
        return str(num)
    twos = fives = 0
    rest = den
    while rest % 2 == 0:
        rest //= 2
        twos += 1
    while rest % 5 == 0:
        rest //= 5
        fives += 1
    if rest != 1:
        return f"{num}/{den}"
    digits = max(twos, fives)
    scaled = abs(num) * 10**digits // den
    sign = "-" if num < 0 else ""
    whole, frac = divmod(scaled, 10**digits)
    return f"{sign}{whole}.{frac:0{digits}d}"


@dataclass(frozen=True)
class Interval:
    """Closed interval ``[lo, hi]`` with rational endpoints; never empty."""

    lo: Fraction
    hi: Fraction

    def __post_init__(self):
        lo, hi = to_rational(self.lo), to_rational(self.hi)
        if lo > hi:
            raise ValueError(f"empty interval [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, value: RationalLike) -> "Interval":
        v = to_rational(value)
        return cls(v, v)

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def midpoint(self) -> Fraction:
        return (self.lo + self.hi) / 2

    @property
    def is_singleton(self) -> bool:
        return self.lo == self.hi

    def __contains__(self, value) -> bool:
        v = to_rational(value)
        return self.lo <= v <= self.hi

    def issubset(self, other: "Interval") -> bool:
        return other.lo <= self.lo and self.hi <= other.hi

    def __add__(self, other: "Interval") -> "Interval":
        return interval_add(self, other)

    def __repr__(self) -> str:
        return f"[{format_rational(self.lo)}, {format_rational(self.hi)}]"


IntervalVector = tuple  # tuple[Interval, ...]

ZERO = Interval(Fraction(0), Fraction(0))


def interval_add(a: Interval, b: Interval) -> Interval:
    return Interval(a.lo + b.lo, a.hi + b.hi)


def interval_scale(c: RationalLike, a: Interval) -> Interval:
    c = to_rational(c)
    if c >= 0:
        return Interval(c * a.lo, c * a.hi)
    return Interval(c * a.hi, c * a.lo)


def interval_dot(row: Sequence[RationalLike], v: Sequence[Interval]) -> Interval:
    """One row of an interval matrix-vector product."""
    if len(row) != len(v):
        raise ValueError(f"dimension mismatch: row has {len(row)} entries, vector {len(v)}")
    lo = hi = Fraction(0)
    for c, a in zip(row, v):
        c = to_rational(c)
        if c >= 0:
            lo += c * a.lo
            hi += c * a.hi
        else:
            lo += c * a.hi
            hi += c * a.lo
    return Interval(lo, hi)


def interval_relu(a: Interval) -> Interval:
    zero = Fraction(0)
    return Interval(max(zero, a.lo), max(zero, a.hi))


def zero_vector(n: int) -> tuple:
    return (ZERO,) * n


def vector_add(a: Sequence[Interval], b: Sequence[Interval]) -> tuple:
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    return tuple(interval_add(x, y) for x, y in zip(a, b))


def vector_subset(a: Sequence[Interval], b: Sequence[Interval]) -> bool:
    """Componentwise containment ``a ⊆ b``."""
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    return all(x.issubset(y) for x, y in zip(a, b))


def parse_interval(pair: Iterable) -> Interval:
    items = list(pair)
    if len(items) != 2:
        raise ValueError(f"interval must have two endpoints, got {len(items)}")
    return Interval(to_rational(items[0]), to_rational(items[1]))


def format_interval(a: Interval) -> list:
    return [format_rational(a.lo), format_rational(a.hi)]
