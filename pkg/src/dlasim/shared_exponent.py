"""Shared-exponent FP16 arithmetic.

A group of values is re-expressed as signed 18-bit mantissas against the
group's largest binary exponent, so dot products run on integer multipliers;
the integer sum is scaled back and rounded to IEEE binary16.

Mantissa alignment: decoded value = m * 2**(e_max - (bits - 2)). The largest
magnitude lands in [2**(bits-2), 2**(bits-1)), one bit of headroom below the
sign bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MANTISSA_BITS = 18
ACCUMULATOR_BITS = 40
ZERO_GROUP_EXP = -1022
FP16_MAX = 65504.0


def frac_bits(bits: int) -> int:
    return bits - 2


@dataclass(frozen=True)
class SharedExpGroup:
    e_max: int
    mantissas: tuple[int, ...]
    bits: int = MANTISSA_BITS

    def __post_init__(self):
        lo, hi = -(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1
        if any(m < lo or m > hi for m in self.mantissas):
            raise ValueError(f"mantissa outside {self.bits}-bit signed range")

    def __len__(self):
        return len(self.mantissas)

    def values(self) -> list[float]:
        return [decode(self, j) for j in range(len(self))]


@dataclass(frozen=True)
class Fp16Value:
    bits: int

    @classmethod
    def from_float(cls, v: float) -> "Fp16Value":
        return to_fp16(v)

    @property
    def value(self) -> float:
        return float(np.array(self.bits, dtype=np.uint16).view(np.float16))

    def __float__(self):
        return self.value


def group_exponent(absmax):
    """floor(log2(absmax)) elementwise; ZERO_GROUP_EXP where absmax == 0."""
    absmax = np.asarray(absmax, dtype=np.float64)
    _, e = np.frexp(absmax)
    return np.where(absmax > 0, e - 1, ZERO_GROUP_EXP)


def encode_blocks(x, axis=-1, bits=MANTISSA_BITS):
    """Vectorized encode: groups run along ``axis``.

    Returns (mantissas as integer-valued float64, exponents with ``axis`` kept as size 1).
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("shared-exponent encode of non-finite value")
    e = group_exponent(np.abs(x).max(axis=axis, keepdims=True))
    lim = float(1 << (bits - 1))
    m = np.rint(np.ldexp(x, frac_bits(bits) - e))
    # a top value just under 2**(e+1) can round up past the positive range; renormalize
    carry = (m > lim - 1).any(axis=axis, keepdims=True)
    if carry.any():
        e = e + carry
        m = np.rint(np.ldexp(x, frac_bits(bits) - e))
    return m, e


def encode_group(values, bits=MANTISSA_BITS) -> SharedExpGroup:
    m, e = encode_blocks(np.asarray(values, dtype=np.float64).reshape(-1), bits=bits)
    return SharedExpGroup(int(e[0]), tuple(int(v) for v in m), bits)


def decode(g: SharedExpGroup, j: int) -> float:
    return math.ldexp(g.mantissas[j], g.e_max - frac_bits(g.bits))


def decode_blocks(m, e, bits=MANTISSA_BITS):
    return np.ldexp(m, e - frac_bits(bits))


def round_fp16(x) -> np.ndarray:
    """Round to the nearest binary16 value (ties to even), saturating at +-65504.

    Returned as float64 holding FP16-representable values.
    """
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(over="ignore"):
        y = x.astype(np.float16).astype(np.float64)
    return np.where(np.isinf(y) & np.isfinite(x), np.copysign(FP16_MAX, x), y)


def to_fp16(v: float) -> Fp16Value:
    r = np.float16(round_fp16(v))
    return Fp16Value(int(np.array(r, dtype=np.float16).view(np.uint16)))


def dot(a: SharedExpGroup, b: SharedExpGroup, init: float = 0.0) -> Fp16Value:
    """Integer dot product of two groups plus ``init``, returned as FP16."""
    if len(a) != len(b):
        raise ValueError(f"group width mismatch: {len(a)} vs {len(b)}")
    if a.bits != b.bits:
        raise ValueError("mantissa width mismatch")
    s = sum(x * y for x, y in zip(a.mantissas, b.mantissas))
    if abs(s) >= 1 << (ACCUMULATOR_BITS - 1):
        raise OverflowError("dot product exceeds the accumulator width")
    scaled = math.ldexp(s, a.e_max + b.e_max - 2 * frac_bits(a.bits)) if s else 0.0
    return to_fp16(scaled + init)


def block_dot(ma, ea, mb, eb, bits=MANTISSA_BITS):
    """Exact integer dot over the last axis of two encoded block arrays, scaled to real units.

    ``ea``/``eb`` are the exponents with the last axis kept as size 1.
    """
    s = np.einsum("...i,...i->...", ma, mb)
    return np.ldexp(s, (ea[..., 0] + eb[..., 0]) - 2 * frac_bits(bits))
