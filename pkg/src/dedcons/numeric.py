"""Exact rational values and their canonical text rendering."""

from __future__ import annotations

from decimal import Context, Decimal
from fractions import Fraction
from typing import Union

Number = Union[int, float, Fraction]

_SIG_DIGITS = 6


def to_fraction(value: Number | str) -> Fraction:
    """Convert ints, floats, fraction strings ("12/7") or decimal strings to a Fraction.

    Floats go through their shortest repr so that 0.35 becomes 7/20 rather
    than the binary approximation.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not numeric values")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"not a numeric value: {value!r}")


def render_value(value: Number) -> str:
    """Integer form when the denominator is 1, else up to 6 significant digits."""
    frac = to_fraction(value)
    if frac.denominator == 1:
        return str(frac.numerator)
    ctx = Context(prec=_SIG_DIGITS)
    dec = ctx.divide(Decimal(frac.numerator), Decimal(frac.denominator))
    text = format(dec, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return text


def encode_value(value: Number) -> int | str:
    """JSON-safe exact encoding: ints stay ints, other rationals become "p/q"."""
    frac = to_fraction(value)
    if frac.denominator == 1:
        return frac.numerator
    return f"{frac.numerator}/{frac.denominator}"


def decode_value(raw: int | float | str) -> Fraction:
    return to_fraction(raw)


def is_integral(value: Number) -> bool:
    return to_fraction(value).denominator == 1
