"""Exact event times, binary-scaled fixed-point values and interval arithmetic."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union


class FormatError(ValueError):
    """A value does not fit the fixed-point width it was declared with."""


# One global time quantum per run; 2**-24 ns (~0.06 fs) resolves a single
# DCO code step (~0.87 fs at 8 GHz) with margin.
DEFAULT_TIME_EXP = 24


@dataclass(frozen=True, order=True)
class TimePoint:
    """A time ``mantissa * 2**-scale_exp`` nanoseconds.

    Ordering and subtraction are exact integer operations; mixing two
    different quanta is refused rather than silently rescaled.
    """

    mantissa: int
    scale_exp: int = DEFAULT_TIME_EXP

    @classmethod
    def from_seconds(cls, seconds: float, scale_exp: int = DEFAULT_TIME_EXP) -> "TimePoint":
        return cls(round(seconds * 1e9 * 2.0**scale_exp), scale_exp)

    @property
    def ns(self) -> float:
        return math.ldexp(self.mantissa, -self.scale_exp)

    @property
    def seconds(self) -> float:
        return self.ns * 1e-9

    def _check(self, other: "TimePoint") -> None:
        if other.scale_exp != self.scale_exp:
            raise ValueError(
                f"time quanta differ: 2^-{self.scale_exp} vs 2^-{other.scale_exp}"
            )

    def __add__(self, other: "TimePoint") -> "TimePoint":
        self._check(other)
        return TimePoint(self.mantissa + other.mantissa, self.scale_exp)

    def __sub__(self, other: "TimePoint") -> "TimePoint":
        self._check(other)
        return TimePoint(self.mantissa - other.mantissa, self.scale_exp)

    def __neg__(self) -> "TimePoint":
        return TimePoint(-self.mantissa, self.scale_exp)


def ticks_to_seconds(ticks, scale_exp: int = DEFAULT_TIME_EXP):
    """Convert integer time ticks (scalar or array) to seconds."""
    return ticks * (2.0**-scale_exp * 1e-9)


def seconds_to_ticks(seconds: float, scale_exp: int = DEFAULT_TIME_EXP) -> int:
    return round(seconds * 1e9 * 2.0**scale_exp)


@dataclass(frozen=True)
class FixedValue:
    """``mantissa * 2**-exp``."""

    mantissa: int
    exp: int

    @property
    def value(self) -> float:
        return math.ldexp(self.mantissa, -self.exp)

    def __float__(self) -> float:
        return self.value


def _check_width(mantissa: int, width: int | None) -> None:
    if width is None:
        return
    lim = 1 << (width - 1)
    if not -lim <= mantissa < lim:
        raise FormatError(f"mantissa {mantissa} does not fit {width} signed bits")


def _round_half_away(y: float) -> int:
    return int(math.copysign(math.floor(abs(y) + 0.5), y))


def quantize_round(x: float, exp: int, width: int | None = None) -> FixedValue:
    """Round ``x`` to the grid ``2**-exp``, ties away from zero.

    Used for coefficients generated offline, so the error is at most half
    an LSB.
    """
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    m = _round_half_away(math.ldexp(x, exp))
    _check_width(m, width)
    return FixedValue(m, exp)


def quantize_trunc(x: float, exp: int, width: int | None = None) -> FixedValue:
    """Floor ``x`` onto the grid ``2**-exp`` (error below one LSB)."""
    if not math.isfinite(x):
        raise ValueError(f"cannot quantize non-finite value {x!r}")
    m = math.floor(math.ldexp(x, exp))
    _check_width(m, width)
    return FixedValue(m, exp)


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def __add__(self, other: "Interval") -> "Interval":
        return Interval(self.lo + other.lo, self.hi + other.hi)

    def __sub__(self, other: "Interval") -> "Interval":
        return Interval(self.lo - other.hi, self.hi - other.lo)

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other: "Interval") -> "Interval":
        corners = (
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        )
        return Interval(min(corners), max(corners))

    def __contains__(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    @property
    def magnitude(self) -> float:
        return max(abs(self.lo), abs(self.hi))


# An expression is an Interval, a variable name, or a tuple
# ("add"|"sub"|"mul", lhs, rhs) / ("neg", arg).
Expr = Union[Interval, str, tuple]


def interval_propagate(expr: Expr, env: Mapping[str, Interval] | None = None) -> Interval:
    """Enclosing interval of an add/sub/mul/neg expression tree."""
    if isinstance(expr, Interval):
        return expr
    if isinstance(expr, str):
        if env is None or expr not in env:
            raise KeyError(f"unbound variable {expr!r}")
        return env[expr]
    op, *args = expr
    vals = [interval_propagate(a, env) for a in args]
    if op == "neg" and len(vals) == 1:
        return -vals[0]
    if len(vals) != 2:
        raise ValueError(f"bad arity for {op!r}")
    if op == "add":
        return vals[0] + vals[1]
    if op == "sub":
        return vals[0] - vals[1]
    if op == "mul":
        return vals[0] * vals[1]
    raise ValueError(f"unknown operator {op!r}")


@dataclass(frozen=True)
class FixedFormat:
    """Two's-complement (or unsigned) format with explicit bit counts."""

    signed: bool
    int_bits: int
    frac_bits: int

    @property
    def width(self) -> int:
        return int(self.signed) + self.int_bits + self.frac_bits

    @property
    def lsb(self) -> float:
        return 2.0**-self.frac_bits

    @property
    def min_value(self) -> float:
        return -(2.0**self.int_bits) if self.signed else 0.0

    @property
    def max_value(self) -> float:
        return 2.0**self.int_bits - self.lsb

    def covers(self, rng: Interval) -> bool:
        return self.min_value <= rng.lo and rng.hi <= self.max_value


def _int_bits_for(rng: Interval, frac_bits: int, signed: bool) -> int:
    i = 0
    while not FixedFormat(signed, i, frac_bits).covers(rng):
        i += 1
    return i


def format_for(rng: Interval, frac_bits: int) -> FixedFormat:
    """Smallest format with ``frac_bits`` fractional bits covering ``rng``."""
    signed = rng.lo < 0
    if rng.lo == rng.hi == 0:
        return FixedFormat(True, 0, 0)
    # frac_bits may be negative for coarse grids; integer bits absorb it
    return FixedFormat(signed, _int_bits_for(rng, frac_bits, signed), frac_bits)


def choose_format(rng: Interval, target_rel_err: float) -> FixedFormat:
    """Narrowest format whose rounding error stays below ``target_rel_err``
    of the range magnitude and which covers ``rng`` without overflow."""
    if target_rel_err <= 0:
        raise ValueError("target_rel_err must be positive")
    mag = rng.magnitude
    if mag == 0:
        return FixedFormat(True, 0, 0)
    # start below the answer, then walk up to the first f that satisfies it
    f = math.floor(-math.log2(target_rel_err * mag)) - 3
    while 2.0 ** (-f - 1) > target_rel_err * mag:
        f += 1
    return format_for(rng, f)


def mantissa_width(mantissas) -> int:
    """Signed bits needed to hold every integer in ``mantissas``."""
    width = 1
    for m in mantissas:
        m = int(m)
        width = max(width, (m.bit_length() if m >= 0 else (~m).bit_length()) + 1)
    return width
