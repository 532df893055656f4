"""Vectorized datapath: executes a layer's whole schedule one reduction step at a time.

Reordering the schedule this way is numerically invisible: every output's
accumulator still sees its reduction steps in issue order, and each step is
computed with the same arithmetic as the cycle-level engine.
"""
from __future__ import annotations

import math

import numpy as np

from dlasim.arch_model import VectorConfig
from dlasim.errors import ShapeError
from dlasim.shared_exponent import MANTISSA_BITS, frac_bits
from dlasim.simulator.arith import Fidelity, accumulate, apply_transform, prepare, tile_transforms
from dlasim.simulator.schedule import ConvProgram, FcProgram
from dlasim.topology import Conv

# Upper bound on accumulator elements held per chunk of images.
CHUNK_ELEMENTS = 6_000_000
SCALE_SHIFT = 2 * frac_bits(MANTISSA_BITS)


def _matmul_partial(u_op, v_op, fidelity: Fidelity) -> np.ndarray:
    """(lanes, K, Cv) x (lanes, M, Cv) -> (lanes, K, M) dot-unit results."""
    if fidelity is Fidelity.DEVICE:
        (mu, eu), (mv, ev) = u_op, v_op
        s = np.matmul(mu, mv.transpose(0, 2, 1))  # integers < 2**40: exact in FP64
        return np.ldexp(s, eu + ev.transpose(0, 2, 1) - SCALE_SHIFT)
    return np.matmul(u_op.astype(np.float64), v_op.astype(np.float64).transpose(0, 2, 1)).astype(np.float32)


def transformed_filters(cfg: VectorConfig, filters: np.ndarray, groups: int) -> np.ndarray:
    """K x Cg x R x S stored weights -> (groups, c_slices, R, s_strips, lanes, Kg, C_vec) at FP32."""
    _, g_tr, _ = tile_transforms(cfg)
    k, cg, r, s = filters.shape
    kg = k // groups
    cs = math.ceil(cg / cfg.c_vec)
    sb = math.ceil(s / cfg.s_vec)
    buf = np.zeros((groups, kg, cs * cfg.c_vec, r, sb * cfg.s_vec), dtype=np.float32)
    buf[:, :, :cg, :, :s] = filters.reshape(groups, kg, cg, r, s)
    buf = buf.reshape(groups, kg, cs, cfg.c_vec, r, sb, cfg.s_vec)
    u = apply_transform(g_tr, buf)  # (..., lanes)
    # -> (groups, cs, r, sb, lanes, kg, cv)
    return np.ascontiguousarray(u.transpose(0, 2, 4, 5, 6, 1, 3))


def conv_layer(cfg: VectorConfig, layer: Conv, x: np.ndarray, filters: np.ndarray, bias: np.ndarray,
               fidelity: Fidelity, relu: bool) -> np.ndarray:
    """Run a stride-1 conv on stored inputs (N, C, H, W). Returns FP32 (N, K, P, Q) after bias/ReLU."""
    if layer.stride != 1:
        raise ShapeError("fold strided convolutions before simulating them")
    n, c, h, w = x.shape
    prog = ConvProgram(cfg, layer, (c, h, w))
    bt, _, at = tile_transforms(cfg)
    lanes = bt.shape[0]
    g, kg, cg = layer.groups, prog.Kg, prog.Cg
    P, Q = prog.P, prog.Q
    tiles = math.ceil(Q / cfg.q_vec)
    sb_count = math.ceil(layer.S / cfg.s_vec)
    cs_count = math.ceil(cg / cfg.c_vec)
    width = cfg.q_vec * (tiles - 1) + cfg.s_vec * (sb_count - 1) + cfg.w_vec
    cols = (cfg.q_vec * np.arange(tiles)[:, None] + np.arange(cfg.w_vec)[None, :])  # (T, Wv)

    u_all = transformed_filters(cfg, filters, g)
    u_ops = {}
    for gi in range(g):
        for cs, r, sb in prog.reduction_steps():
            u = u_all[gi, cs, r, sb]  # (lanes, kg, cv)
            if fidelity is Fidelity.DEVICE:
                m, e = prepare(u, fidelity)
                u_ops[gi, cs, r, sb] = (m, e)
            else:
                u_ops[gi, cs, r, sb] = u
    bias32 = np.asarray(bias, dtype=np.float32)

    out = np.empty((n, layer.K, P, Q), dtype=np.float32)
    per_image = lanes * kg * P * tiles
    chunk = max(1, CHUNK_ELEMENTS // per_image)
    for n0 in range(0, n, chunk):
        xs = x[n0:n0 + chunk]
        nb = xs.shape[0]
        xp = np.zeros((nb, g, cs_count * cfg.c_vec, h + 2 * layer.pad, max(width, w + 2 * layer.pad)),
                      dtype=np.float32)
        xp[:, :, :cg, layer.pad:layer.pad + h, layer.pad:layer.pad + w] = xs.reshape(nb, g, cg, h, w)
        m = nb * P * tiles
        for gi in range(g):
            acc = np.zeros((lanes, kg, m), dtype=np.float32)
            for cs, r, sb in prog.reduction_steps():
                stick = xp[:, gi, cs * cfg.c_vec:(cs + 1) * cfg.c_vec, r:r + P][..., cols + cfg.s_vec * sb]
                v = apply_transform(bt, stick)                       # (nb, cv, P, T, lanes)
                v = v.transpose(4, 0, 2, 3, 1).reshape(lanes, m, cfg.c_vec)
                partial = _matmul_partial(u_ops[gi, cs, r, sb], prepare(v, fidelity), fidelity)
                acc = accumulate(acc, partial)
            y = apply_transform(at, acc.transpose(1, 2, 0))          # (kg, m, Qv)
            y = y.reshape(kg, nb, P, tiles * cfg.q_vec)[..., :Q].transpose(1, 0, 2, 3)
            y = y + bias32[gi * kg:(gi + 1) * kg, None, None]
            out[n0:n0 + nb, gi * kg:(gi + 1) * kg] = np.maximum(y, 0) if relu else y
    return out


def fc_layer(cfg: VectorConfig, x: np.ndarray, weights: np.ndarray, bias: np.ndarray,
             fidelity: Fidelity, relu: bool) -> np.ndarray:
    """Batched FC on stored features (N, n_in) and streamed weights (n_out, n_in)."""
    n, n_in = x.shape
    n_out = weights.shape[0]
    if weights.shape[1] != n_in:
        raise ShapeError(f"weights {weights.shape} do not match {n_in} input features")
    prog = FcProgram(cfg, n_in, n_out)
    gpr, lanes, cv = prog.groups_per_row, prog.lanes, cfg.c_vec
    feats = np.zeros((n, gpr * cv), dtype=np.float32)
    feats[:, :n_in] = x
    wts = np.zeros((n_out, gpr * cv), dtype=np.float32)
    wts[:, :n_in] = weights
    f_op = prepare(feats.reshape(n, gpr, cv), fidelity)
    w_op = prepare(wts.reshape(n_out, gpr, cv), fidelity)

    base = (np.arange(n_out) * gpr) % lanes
    rows_with_base = [np.flatnonzero(base == b) for b in range(lanes)]
    acc = np.zeros((lanes, n, n_out), dtype=np.float32)
    for j in range(gpr):
        if fidelity is Fidelity.DEVICE:
            (mf, ef), (mw, ew) = f_op, w_op
            s = mf[:, j, :] @ mw[:, j, :].T
            partial = np.ldexp(s, ef[:, j] + ew[:, j].T - SCALE_SHIFT)
        else:
            partial = (f_op[:, j, :].astype(np.float64) @ w_op[:, j, :].astype(np.float64).T).astype(np.float32)
        for u in range(lanes):
            rows = rows_with_base[(u - j) % lanes]
            if rows.size:
                acc[u][:, rows] = accumulate(acc[u][:, rows], partial[:, rows])
    total = acc[0]
    for u in range(1, lanes):
        total = total + acc[u]
    y = total + np.asarray(bias, dtype=np.float32)
    return np.maximum(y, 0) if relu else y
