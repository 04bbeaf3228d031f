"""Simulated reduced-precision floating-point storage.

All values are held in numpy binary64 throughout; "storing" a value in a
lower-precision format means rounding it to the nearest value the format can
represent (round to nearest, ties to even).  For any format with t <= 53
significand bits and an exponent range inside binary64's, every representable
value is itself a binary64 number, so the rounded results are exact.

Built-in formats:

    name   t   e_min   e_max   width    unit roundoff 2**-t
    q52    3     -14      15       8    1.25e-1
    bf16   8    -126     127      16    3.91e-3
    fp16  11     -14      15      16    4.88e-4
    fp32  24    -126     127      32    5.96e-8
    fp64  53   -1022    1023      64    1.11e-16

Here t counts significand bits including the implicit leading bit.  Quarter
precision (q52) is the 1-5-2 bit layout, i.e. t = 3 with the implicit bit.
Magnitudes above the format maximum round to +-inf; magnitudes below half the
smallest subnormal round to +-0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "PrecisionFormat",
    "Q52",
    "BF16",
    "FP16",
    "FP32",
    "FP64",
    "NAMED_FORMATS",
    "parse_format",
    "format_spec",
    "round_scalar",
    "round_matrix",
    "unit_roundoff",
    "bits_per_scalar",
]


@dataclass(frozen=True)
class PrecisionFormat:
    """A binary floating-point format described by its significand width and
    exponent range.

    Attributes:
        name: identifier ("q52", "bf16", ... or "custom").
        t: significand bits including the implicit leading bit (t >= 2).
        e_min: exponent of the smallest positive normalized value.
        e_max: exponent of the largest finite value.
        bits: storage width in bits, used for storage accounting only.
        subnormals_enabled: whether values below 2**e_min are kept on the
            subnormal grid (default) or flushed to zero.
    """

    name: str
    t: int
    e_min: int
    e_max: int
    bits: int
    subnormals_enabled: bool = True

    def __post_init__(self):
        if self.t < 2:
            raise ValueError(f"significand width t={self.t} must be >= 2")
        if self.e_min >= self.e_max:
            raise ValueError(f"need e_min < e_max, got {self.e_min} >= {self.e_max}")
        if self.bits < 1:
            raise ValueError(f"storage width {self.bits} must be positive")

    @property
    def unit_roundoff(self) -> float:
        return math.ldexp(1.0, -self.t)

    @property
    def x_min(self) -> float:
        """Smallest positive normalized value, 2**e_min."""
        return math.ldexp(1.0, self.e_min)

    @property
    def x_max(self) -> float:
        """Largest finite value, (2 - 2**(1-t)) * 2**e_max."""
        return math.ldexp(2.0 - math.ldexp(1.0, 1 - self.t), self.e_max)

    @property
    def smallest_subnormal(self) -> float:
        return math.ldexp(1.0, self.e_min - self.t + 1)

    @property
    def is_exact_for_binary64(self) -> bool:
        """True when rounding to this format is the identity on binary64."""
        return (
            self.t >= 53
            and self.e_min <= -1022
            and self.e_max >= 1023
            and self.subnormals_enabled
        )

    def __str__(self):
        return self.name


Q52 = PrecisionFormat("q52", t=3, e_min=-14, e_max=15, bits=8)
BF16 = PrecisionFormat("bf16", t=8, e_min=-126, e_max=127, bits=16)
FP16 = PrecisionFormat("fp16", t=11, e_min=-14, e_max=15, bits=16)
FP32 = PrecisionFormat("fp32", t=24, e_min=-126, e_max=127, bits=32)
FP64 = PrecisionFormat("fp64", t=53, e_min=-1022, e_max=1023, bits=64)

NAMED_FORMATS = {f.name: f for f in (Q52, BF16, FP16, FP32, FP64)}


def parse_format(spec: str) -> PrecisionFormat:
    """Parse a format name or a custom format description.

    Accepts "q52|bf16|fp16|fp32|fp64" or
    "custom:t=<int>,emin=<int>,emax=<int>,bits=<int>[,subnormals=<0|1>]".
    """
    spec = spec.strip()
    if spec in NAMED_FORMATS:
        return NAMED_FORMATS[spec]
    if spec.startswith("custom:"):
        fields = {}
        for item in spec[len("custom:"):].split(","):
            key, _, value = item.partition("=")
            if not value:
                raise ValueError(f"malformed custom format field {item!r} in {spec!r}")
            fields[key.strip()] = int(value)
        try:
            return PrecisionFormat(
                "custom",
                t=fields.pop("t"),
                e_min=fields.pop("emin"),
                e_max=fields.pop("emax"),
                bits=fields.pop("bits"),
                subnormals_enabled=bool(fields.pop("subnormals", 1)),
            )
        except KeyError as exc:
            raise ValueError(f"custom format {spec!r} is missing field {exc}") from None
    raise ValueError(
        f"unknown precision format {spec!r}; expected one of "
        f"{sorted(NAMED_FORMATS)} or custom:t=..,emin=..,emax=..,bits=.."
    )


def format_spec(fmt: PrecisionFormat) -> str:
    """Inverse of parse_format, used for serialization and CSV headers."""
    if fmt.name in NAMED_FORMATS and NAMED_FORMATS[fmt.name] == fmt:
        return fmt.name
    sub = "" if fmt.subnormals_enabled else ",subnormals=0"
    return f"custom:t={fmt.t},emin={fmt.e_min},emax={fmt.e_max},bits={fmt.bits}{sub}"


def _round_array(a: np.ndarray, fmt: PrecisionFormat) -> np.ndarray:
    """Round every entry of a float64 array to the nearest value of fmt.

    Works on the magnitude: with |x| = m * 2**e (m in [0.5, 1)) the spacing of
    fmt around x is 2**q with q = e - t, floored at the subnormal spacing
    2**(e_min - t + 1).  Scaling by 2**-q is exact in binary64, np.rint gives
    round-to-nearest-ties-even, and scaling back is exact again.  Zeros, infs
    and nans pass through unchanged.
    """
    with np.errstate(invalid="ignore", over="ignore"):
        _, e = np.frexp(np.abs(a))
        q = np.maximum(e.astype(np.int64) - fmt.t, fmt.e_min - fmt.t + 1)
        y = np.ldexp(np.rint(np.ldexp(np.abs(a), -q)), q)
        y = np.where(y > fmt.x_max, np.inf, y)
        if not fmt.subnormals_enabled:
            # flush-to-zero below the normal range
            y = np.where(y < fmt.x_min, 0.0, y)
        return np.copysign(y, a)


def round_matrix(A: np.ndarray, fmt: PrecisionFormat) -> np.ndarray:
    """Elementwise round-to-nearest of a real array into fmt (shape preserved)."""
    A = np.asarray(A, dtype=np.float64)
    if fmt.is_exact_for_binary64:
        return A.copy()
    return _round_array(A, fmt)


def round_scalar(x: float, fmt: PrecisionFormat) -> float:
    """Round one binary64 value to the nearest value representable in fmt.

    Magnitudes beyond fmt.x_max map to +-inf, magnitudes below half the
    smallest subnormal map to +-0; ties go to the even neighbor.
    """
    if fmt.is_exact_for_binary64:
        return float(x)
    return float(_round_array(np.float64(x), fmt))


def unit_roundoff(fmt: PrecisionFormat) -> float:
    """Unit roundoff 2**-t of the format."""
    return fmt.unit_roundoff


def bits_per_scalar(fmt: PrecisionFormat) -> int:
    """Storage width in bits of one scalar in the format."""
    if not isinstance(fmt, PrecisionFormat):
        raise TypeError(f"expected a PrecisionFormat, got {type(fmt).__name__}")
    return fmt.bits
