"""Signed fixed-point numbers with a single ties-to-even rounding per result.

A :class:`PrecisionConfig` with ``total_bits=p`` and ``frac_bits=s`` has the
grid ``{k * 2**-s : |k| < 2**(p-1)}``. Values off the grid are rounded to the
nearest grid point (ties to even mantissa) and clamped to the largest
representable magnitude. Intermediate arithmetic is exact: callers work
with integer mantissas or :class:`fractions.Fraction` and quantize once.

Large non-negative quantities (the parameter calculus) are plain Python
``int``; :data:`BigNat` is only an alias documenting intent.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Sequence

import mpmath
import numpy as np

BigNat = int

ROUNDING_MODES = ("nearest-even",)


class RepresentabilityError(ValueError):
    """A value required by a construction does not fit the grid."""


@dataclass(frozen=True)
class PrecisionConfig:
    total_bits: int
    frac_bits: int = 0
    rounding: str = "nearest-even"

    def __post_init__(self):
        if not isinstance(self.total_bits, int) or self.total_bits < 2:
            raise ValueError(f"total_bits must be an integer >= 2, got {self.total_bits!r}")
        if not isinstance(self.frac_bits, int) or not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(f"frac_bits must satisfy 0 <= s < p, got s={self.frac_bits!r}")
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"unsupported rounding mode {self.rounding!r}")

    @property
    def p(self) -> int:
        return self.total_bits

    @property
    def s(self) -> int:
        return self.frac_bits

    @property
    def max_mantissa(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def ulp(self) -> Fraction:
        return Fraction(1, self.scale)

    @property
    def max_value(self) -> Fraction:
        return Fraction(self.max_mantissa, self.scale)

    @property
    def mantissa_dtype(self):
        return np.int64 if self.total_bits <= 62 else object

    def value(self, mantissa: int) -> Fraction:
        return Fraction(int(mantissa), self.scale)

    def representable(self, x) -> bool:
        x = to_fraction(x)
        k = x * self.scale
        return k.denominator == 1 and abs(k.numerator) <= self.max_mantissa

    def grid(self):
        """All grid values in increasing order (only sensible for small p)."""
        m = self.max_mantissa
        return [self.value(k) for k in range(-m, m + 1)]

    def to_json(self) -> dict:
        return {"p": self.total_bits, "frac_bits": self.frac_bits}

    @classmethod
    def from_json(cls, obj: dict) -> "PrecisionConfig":
        return cls(total_bits=int(obj["p"]), frac_bits=int(obj.get("frac_bits", 0)))


@functools.total_ordering
@dataclass(frozen=True)
class PBitNumber:
    mantissa: int
    cfg: PrecisionConfig

    def __post_init__(self):
        if abs(self.mantissa) > self.cfg.max_mantissa:
            raise ValueError(f"mantissa {self.mantissa} outside {self.cfg.total_bits}-bit range")

    @property
    def value(self) -> Fraction:
        return self.cfg.value(self.mantissa)

    def __float__(self):
        return float(self.value)

    def __eq__(self, other):
        if isinstance(other, PBitNumber):
            return self.value == other.value
        if isinstance(other, (Rational, float)):
            return self.value == other
        return NotImplemented

    def __lt__(self, other):
        if isinstance(other, PBitNumber):
            return self.value < other.value
        return self.value < other

    def __hash__(self):
        return hash(self.value)

    def __repr__(self):
        return f"PBitNumber({self.value}, p={self.cfg.total_bits}, s={self.cfg.frac_bits})"


def to_fraction(x) -> Fraction:
    if isinstance(x, PBitNumber):
        return x.value
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, (float, str)):
        return Fraction(x)
    if isinstance(x, Rational):
        return Fraction(x.numerator, x.denominator)
    raise TypeError(f"cannot convert {type(x).__name__} to an exact rational")


def round_div(num: int, den: int) -> int:
    """Nearest integer to ``num/den``, ties to even."""
    if den == 0:
        raise ZeroDivisionError("round_div by zero")
    if den < 0:
        num, den = -num, -den
    q, r = divmod(num, den)
    twice = 2 * r
    if twice > den or (twice == den and q & 1):
        q += 1
    return q


def round_shift(num: int, shift: int) -> int:
    """Nearest integer to ``num / 2**shift``, ties to even."""
    if shift <= 0:
        return num << (-shift)
    return round_div(num, 1 << shift)


def saturate(k: int, cfg: PrecisionConfig) -> int:
    m = cfg.max_mantissa
    return m if k > m else -m if k < -m else k


def quantize_mantissa(x, cfg: PrecisionConfig) -> int:
    x = to_fraction(x)
    return saturate(round_div(x.numerator << cfg.frac_bits, x.denominator), cfg)


def quantize(x, cfg: PrecisionConfig) -> PBitNumber:
    """Nearest grid point of ``cfg`` to the exact rational ``x``."""
    return PBitNumber(quantize_mantissa(x, cfg), cfg)


def quantize_vector(values: Iterable, cfg: PrecisionConfig) -> np.ndarray:
    return np.array([quantize_mantissa(v, cfg) for v in values], dtype=cfg.mantissa_dtype)


def mantissas(values: Sequence, cfg: PrecisionConfig) -> np.ndarray:
    """Mantissa array for values that must already lie on the grid."""
    out = []
    for v in values:
        k = to_fraction(v) * cfg.scale
        if k.denominator != 1 or abs(k.numerator) > cfg.max_mantissa:
            raise RepresentabilityError(f"{v} is not on the p={cfg.p}, s={cfg.s} grid")
        out.append(k.numerator)
    return np.array(out, dtype=cfg.mantissa_dtype)


def values_of(mants, cfg: PrecisionConfig) -> tuple:
    return tuple(cfg.value(int(k)) for k in np.asarray(mants).ravel())


def qdot(a: Sequence[PBitNumber], b: Sequence[PBitNumber], cfg: PrecisionConfig) -> PBitNumber:
    """Inner product accumulated exactly and quantized once into ``cfg``."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    acc = sum((to_fraction(x) * to_fraction(y) for x, y in zip(a, b)), Fraction(0))
    return quantize(acc, cfg)


def rescale(mantissa: int, from_bits: int, to_bits: int) -> int:
    """Re-express a mantissa at a finer (exact) or coarser (rounded) scale."""
    if to_bits >= from_bits:
        return int(mantissa) << (to_bits - from_bits)
    return round_shift(int(mantissa), from_bits - to_bits)


def working_bits(cfg: PrecisionConfig) -> int:
    """Fraction bits used for exponentials inside softmax: ``2p + 16``."""
    return 2 * cfg.total_bits + 16


@functools.lru_cache(maxsize=1 << 16)
def exp_fixed(mantissa: int, frac_bits: int, out_bits: int) -> int:
    """``round_even(exp(mantissa * 2**-frac_bits) * 2**out_bits)`` as an int.

    The argument is an exact dyadic rational; the result is correct to the
    last bit (guard bits make a wrong rounding practically impossible, and
    the only exact tie, ``exp(0) = 1``, is an integer).
    """
    if mantissa == 0:
        return 1 << out_bits
    x = Fraction(mantissa, 1 << frac_bits)
    mag_bits = int(abs(x) * Fraction(3, 2)) + 2
    prec = out_bits + mag_bits + 64
    with mpmath.workprec(prec):
        v = mpmath.exp(mpmath.mpf(mantissa) / (mpmath.mpf(2) ** frac_bits)) * (mpmath.mpf(2) ** out_bits)
        lo = int(mpmath.floor(v))
        frac = v - lo
        if frac > 0.5 or (frac == 0.5 and lo & 1):
            lo += 1
    return lo


def quantize_exp(mantissa: int, cfg: PrecisionConfig) -> int:
    """Mantissa of ``exp(value)`` rounded onto the grid of ``cfg``."""
    return saturate(exp_fixed(int(mantissa), cfg.frac_bits, cfg.frac_bits), cfg)


def ceil_log2(n: int) -> int:
    if n < 1:
        raise ValueError("ceil_log2 needs n >= 1")
    return (n - 1).bit_length()


def ceil_to_grid(x, cfg: PrecisionConfig) -> Fraction:
    """Smallest grid value >= ``x`` (used where a margin must not shrink)."""
    x = to_fraction(x)
    k = -((-x.numerator << cfg.frac_bits) // x.denominator)
    if abs(k) > cfg.max_mantissa:
        raise RepresentabilityError(f"{float(x):.6g} exceeds the p={cfg.p}, s={cfg.s} range")
    return cfg.value(k)


def mp_to_fraction_bounds(v, bits: int = 200) -> tuple[Fraction, Fraction]:
    """Rational interval ``[lo, hi]`` of width ``2**-bits`` containing mpf ``v``."""
    with mpmath.workprec(bits + 64):
        scaled = v * mpmath.mpf(2) ** bits
        lo = int(mpmath.floor(scaled))
    return Fraction(lo, 1 << bits), Fraction(lo + 1, 1 << bits)


def bit_width(count: int) -> int:
    """Bits needed to index ``count`` distinct values (at least 1)."""
    return max(1, (count - 1).bit_length())


def log2_floor(x: int) -> int:
    return x.bit_length() - 1


def is_perfect_square(x: int) -> bool:
    r = math.isqrt(x)
    return r * r == x
