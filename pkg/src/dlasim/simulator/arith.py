"""Datapath arithmetic shared by the cycle-level and vectorized engines.

Every function here is elementwise or reduces in a fixed order, so the two
engines produce bit-identical results regardless of how they batch work.
"""
from __future__ import annotations

from enum import Enum
from functools import lru_cache

import numpy as np

from dlasim.arch_model import VectorConfig
from dlasim.shared_exponent import MANTISSA_BITS, encode_blocks, frac_bits, round_fp16
from dlasim.winograd import derive_f43


class Fidelity(str, Enum):
    EXACT_FP32 = "exact_fp32"
    DEVICE = "device_fp16_shared_exp"


def store(x, fidelity: Fidelity) -> np.ndarray:
    """Round to the stream-buffer / DDR word format."""
    if fidelity is Fidelity.DEVICE:
        return round_fp16(x).astype(np.float32)  # FP16 values are exact in FP32
    return np.asarray(x, dtype=np.float32)


def apply_transform(mat: np.ndarray, x) -> np.ndarray:
    """``mat @ v`` over the last axis of ``x`` at FP32, summing terms left to right."""
    x = np.asarray(x, dtype=np.float32)
    mat = np.asarray(mat, dtype=np.float32)
    out = np.zeros(x.shape[:-1] + (mat.shape[0],), dtype=np.float32)
    for i in range(mat.shape[0]):
        acc = None
        for j in range(mat.shape[1]):
            c = mat[i, j]
            if c == 0:
                continue
            term = x[..., j] if c == 1 else (-x[..., j] if c == -1 else x[..., j] * c)
            acc = term if acc is None else acc + term
        if acc is not None:
            out[..., i] = acc
    return out


@lru_cache(maxsize=None)
def _direct_transforms(q_vec: int, s_vec: int):
    w_vec = q_vec + s_vec - 1
    lanes = q_vec * s_vec
    bt = np.zeros((lanes, w_vec))
    g = np.zeros((lanes, s_vec))
    at = np.zeros((q_vec, lanes))
    for q in range(q_vec):
        for s in range(s_vec):
            lane = q * s_vec + s
            bt[lane, q + s] = 1
            g[lane, s] = 1
            at[q, lane] = 1
    return bt, g, at


def tile_transforms(cfg: VectorConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(input B^T, filter G, output A^T) for one dot-unit lane set.

    Direct mode uses selection matrices, so both modes share one datapath:
    lane values = B^T x, lane weights = G f, outputs = A^T (lane products).
    """
    if cfg.winograd:
        w = derive_f43()
        return w.input_transform, w.filter_transform, w.output_transform
    return _direct_transforms(cfg.q_vec, cfg.s_vec)


def prepare(x, fidelity: Fidelity):
    """Operand as presented to a dot unit; groups run along the last (C_vec) axis."""
    if fidelity is Fidelity.DEVICE:
        return encode_blocks(x, axis=-1)
    return np.asarray(x, dtype=np.float32)


def lane_dot(a, b, fidelity: Fidelity) -> np.ndarray:
    """One dot-unit result per position: reduce the last axis of prepared operands."""
    if fidelity is Fidelity.DEVICE:
        (ma, ea), (mb, eb) = a, b
        s = np.einsum("...i,...i->...", ma, mb)
        return np.ldexp(s, ea[..., 0] + eb[..., 0] - 2 * frac_bits(MANTISSA_BITS))
    return np.einsum("...i,...i->...", a.astype(np.float64), b.astype(np.float64)).astype(np.float32)


def accumulate(acc: np.ndarray, partial) -> np.ndarray:
    """FP32 accumulator update: one rounding of init + dot-product result."""
    return (acc.astype(np.float64) + partial).astype(np.float32)
