"""Fixed-point time arithmetic.

All schedule times are held as integer counts of a decimal resolution
(default 0.001 ms).  Integers keep simulation arithmetic and LCM
computations exact; conversion to float milliseconds happens only at the
learning boundary.
"""

from __future__ import annotations

from decimal import Decimal, InvalidOperation
from typing import Union

DEFAULT_RESOLUTION = Decimal("0.001")

Number = Union[int, float, str, Decimal]


class TimeError(ValueError):
    """A time literal is malformed or not a multiple of the resolution."""


def to_units(value: Number, resolution: Decimal = DEFAULT_RESOLUTION) -> int:
    """Convert a millisecond literal to integer resolution units.

    Floats are routed through ``repr`` so that ``0.1`` means the decimal 0.1.

    >>> to_units("44.075")
    44075
    >>> to_units(2, Decimal("0.1"))
    20
    """
    if isinstance(value, bool):
        raise TimeError(f"not a time value: {value!r}")
    try:
        d = Decimal(repr(value)) if isinstance(value, float) else Decimal(value)
    except (InvalidOperation, TypeError) as exc:
        raise TimeError(f"not a time value: {value!r}") from exc
    if not d.is_finite():
        raise TimeError(f"not a finite time value: {value!r}")
    q = d / resolution
    if q != q.to_integral_value():
        raise TimeError(f"{value!r} ms is not a multiple of the {resolution} ms resolution")
    return int(q)


def to_ms(units: int, resolution: Decimal = DEFAULT_RESOLUTION) -> float:
    return float(Decimal(units) * resolution)


def format_ms(units: int, resolution: Decimal = DEFAULT_RESOLUTION) -> str:
    """Exact decimal string for a unit count, without trailing zeros.

    >>> format_ms(44075)
    '44.075'
    >>> format_ms(4000)
    '4'
    """
    d = (Decimal(units) * resolution).normalize()
    # normalize() turns 100 into 1E+2
    s = format(d, "f")
    return s


def round_to_units(value_ms: float, resolution: Decimal = DEFAULT_RESOLUTION) -> int:
    """Nearest unit count for an arbitrary float millisecond value."""
    return int((Decimal(repr(float(value_ms))) / resolution).to_integral_value())
