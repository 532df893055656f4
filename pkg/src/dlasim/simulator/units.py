"""Cycle-level engine built from the datapath units.

Slow (one numpy step per issued cycle) and meant for small layers; its job is
to pin down the vectorized engine. Per cycle it enforces one read and one
write per stream-buffer bank, reads init from a depth-L shift register, and
drains crossbar FIFOs one word per bank.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np

from dlasim.arch_model import M20K_WORDS, VectorConfig, n_banks, stream_buffer_depths
from dlasim.errors import ShapeError
from dlasim.simulator.arith import Fidelity, accumulate, apply_transform, lane_dot, prepare, tile_transforms
from dlasim.simulator.engine import _matmul_partial, transformed_filters
from dlasim.simulator.schedule import ConvProgram, FcProgram


def bank_of(cfg: VectorConfig, c, x):
    """Stream-buffer bank (column, channel lane) holding feature (c, *, x)."""
    return np.asarray(x) % cfg.w_vec, np.asarray(c) % cfg.c_vec


def bank_occupancy(cfg: VectorConfig, shape) -> int:
    """Words in the fullest bank when a (C, H, W) tensor is stored."""
    c, h, w = shape
    return h * math.ceil(w / cfg.w_vec) * math.ceil(c / cfg.c_vec)


def bank_capacity(cfg: VectorConfig, t, table=None, capacity_words: int = M20K_WORDS) -> int:
    """Words per bank allocated by the stream-buffer model (whole M20Ks)."""
    depths = stream_buffer_depths(cfg, t, table)
    return math.ceil(max(depths.values()) / capacity_words) * capacity_words if depths else 0


class StreamBufferArray:
    """W_vec x C_vec banks, double-buffered: reads hit ``front``, writes land in ``back``."""

    def __init__(self, cfg: VectorConfig, capacity_words: int | None = None):
        self.cfg = cfg
        self.capacity = capacity_words
        self.front = None
        self.back = None
        self.fifos = [deque() for _ in range(n_banks(cfg))]
        self.max_fifo = 0
        self.max_reads = 0
        self.max_writes = 0
        self.peak_occupancy = 0
        self._reads = np.zeros((cfg.w_vec, cfg.c_vec), dtype=np.int64)

    def _check_capacity(self):
        occ = sum(bank_occupancy(self.cfg, a.shape) for a in (self.front, self.back) if a is not None)
        self.peak_occupancy = max(self.peak_occupancy, occ)
        if self.capacity is not None and occ > self.capacity:
            raise ShapeError(f"bank occupancy {occ} exceeds capacity {self.capacity}")

    def load(self, x):
        """Host/DDR fill of the front buffer."""
        self.front = np.array(x, dtype=np.float32)
        self._check_capacity()

    def allocate_back(self, shape):
        self.back = np.zeros(shape, dtype=np.float32)
        self._check_capacity()

    def swap(self):
        self.front, self.back = self.back, None

    def begin_cycle(self):
        self._reads[:] = 0
        self.drain_one()

    def read_stick(self, c0: int, nc: int, y: int, x0: int) -> np.ndarray:
        """A C_vec x W_vec stick at channels c0.. (nc real ones) and columns x0.. of row y; zero outside."""
        cfg = self.cfg
        out = np.zeros((cfg.c_vec, cfg.w_vec), dtype=np.float32)
        c, h, w = self.front.shape
        if not 0 <= y < h:
            return out
        cs = np.arange(c0, c0 + nc)
        xs = np.arange(x0, x0 + cfg.w_vec)
        ok = (xs >= 0) & (xs < w)
        if not ok.any() or nc == 0:
            return out
        out[:nc][:, ok] = self.front[cs[:, None], y, xs[ok][None, :]]
        bx, bc = np.broadcast_arrays(*bank_of(cfg, cs[:, None], xs[ok][None, :]))
        np.add.at(self._reads, (bx.ravel(), bc.ravel()), 1)
        worst = int(self._reads.max())
        self.max_reads = max(self.max_reads, worst)
        if worst > 1:
            raise AssertionError("stream buffer bank read twice in one cycle")
        return out

    def push(self, c: int, y: int, x: int, value: float):
        """Crossbar write request; queued at the bank that owns (c, x)."""
        bx, bc = bank_of(self.cfg, c, x)
        fifo = self.fifos[int(bx) * self.cfg.c_vec + int(bc)]
        fifo.append((c, y, x, value))
        self.max_fifo = max(self.max_fifo, len(fifo))

    def drain_one(self) -> int:
        """Each bank retires at most one queued write; returns words written."""
        n = 0
        for fifo in self.fifos:
            if fifo:
                c, y, x, v = fifo.popleft()
                self.back[c, y, x] = v
                n += 1
        self.max_writes = max(self.max_writes, 1 if n else 0)
        return n

    def pending(self) -> int:
        return sum(len(f) for f in self.fifos)


class FilterCache:
    """Per-PE transformed weights, double-buffered: the next layer loads while this one reads."""

    def __init__(self):
        self.front = None
        self.back = None
        self.reading = False

    def load_next(self, u):
        self.back = u

    def swap(self):
        if self.reading:
            raise AssertionError("filter cache swapped mid-layer")
        self.front, self.back = self.back, None

    def read(self, key):
        return self.front[key]


class ShiftRegisterAccumulators:
    """Depth-L ring per dot unit: a slot read as init is rewritten exactly L cycles later."""

    def __init__(self, depth: int, shape):
        self.depth = depth
        self.regs = np.zeros((depth,) + tuple(shape), dtype=np.float32)
        self.head = 0

    def cycle(self, partial, reset: bool):
        init = np.zeros_like(self.regs[0]) if reset else self.regs[self.head]
        value = accumulate(init, partial)
        self.regs[self.head] = value
        self.head = (self.head + 1) % self.depth
        return value


class CycleEngine:
    def __init__(self, cfg: VectorConfig, pe_order=None, capacity_words: int | None = None):
        self.cfg = cfg
        self.pe_order = np.arange(cfg.k_vec) if pe_order is None else np.asarray(pe_order)
        if sorted(self.pe_order.tolist()) != list(range(cfg.k_vec)):
            raise ValueError("pe_order must be a permutation of range(K_vec)")
        self.capacity = capacity_words
        self.issued = 0
        self.drain_cycles = 0
        self.stats = {}

    def conv(self, layer, x, filters, bias, fidelity: Fidelity, relu: bool) -> np.ndarray:
        """Stored (N, C, H, W) inputs -> (N, K, P, Q) FP32, one image at a time."""
        cfg = self.cfg
        n, c, h, w = x.shape
        prog = ConvProgram(cfg, layer, (c, h, w))
        bt, _, at = tile_transforms(cfg)
        lanes = bt.shape[0]
        kg, cg, kv = prog.Kg, prog.Cg, cfg.k_vec
        k_tiles = math.ceil(kg / kv)

        cache = FilterCache()
        u_all = transformed_filters(cfg, filters, layer.groups)
        u_pad = np.zeros(u_all.shape[:5] + (k_tiles * kv, cfg.c_vec), dtype=np.float32)
        u_pad[..., :kg, :] = u_all
        cache.load_next(u_pad)
        cache.swap()
        bias32 = np.asarray(bias, dtype=np.float32)
        order = self.pe_order

        sb = StreamBufferArray(cfg, self.capacity)
        out = np.empty((n, layer.K, prog.P, prog.Q), dtype=np.float32)
        for i in range(n):
            sb.load(x[i])
            sb.allocate_back((layer.K, prog.P, prog.Q))
            acc = ShiftRegisterAccumulators(cfg.interleave, (lanes, kv))
            cache.reading = True
            for tick in prog.ticks():
                sb.begin_cycle()
                self.issued += 1
                row = tick.out_row + tick.filter_row - layer.pad
                x0 = tick.col_tile * cfg.q_vec + tick.s_strip * cfg.s_vec - layer.pad
                c_lo = tick.c_slice * cfg.c_vec
                stick = sb.read_stick(tick.group * cg + c_lo, max(0, min(cfg.c_vec, cg - c_lo)), row, x0)
                v = apply_transform(bt, stick).T[:, None, :]                  # (lanes, 1, Cv)
                u = cache.read((tick.group, tick.c_slice, tick.filter_row, tick.s_strip))
                # daisy chain: position j of the chain holds filter order[j] of this K tile
                u = u[:, tick.k_tile * kv + order]                             # (lanes, Kv, Cv)
                u_op = prepare(u, fidelity)
                partial = _matmul_partial(u_op, prepare(v, fidelity), fidelity)[..., 0]
                value = acc.cycle(partial, tick.reset)
                if tick.done:
                    self._retire(sb, tick, value, at, order, bias32, relu, prog, kg, layer)
            cache.reading = False
            while sb.pending():
                sb.drain_one()
                self.drain_cycles += 1
            out[i] = sb.back
            sb.swap()
        self.stats = {"max_reads_per_bank": sb.max_reads, "max_writes_per_bank": sb.max_writes,
                      "max_fifo_depth": sb.max_fifo, "peak_bank_occupancy": sb.peak_occupancy}
        return out

    def _retire(self, sb, tick, value, at, order, bias32, relu, prog, kg, layer):
        cfg = self.cfg
        y = tick.out_row
        if y >= prog.P:
            return
        outs = apply_transform(at, value.T)                                  # (Kv, Qv)
        for j, k_local in enumerate(tick.k_tile * cfg.k_vec + order):
            if k_local >= kg:
                continue
            k = tick.group * kg + k_local
            row = outs[j] + bias32[k]
            if relu:
                row = np.maximum(row, 0)
            for q in range(cfg.q_vec):
                xq = tick.col_tile * cfg.q_vec + q
                if xq < prog.Q:
                    sb.push(k, y, xq, row[q])

    def fc(self, x, weights, bias, fidelity: Fidelity, relu: bool) -> np.ndarray:
        """Stored (S_batch, n_in) features against streamed (n_out, n_in) weights."""
        cfg = self.cfg
        n, n_in = x.shape
        n_out = weights.shape[0]
        if n != cfg.s_batch:
            raise ShapeError(f"FC batch of {n} images; the PE caches hold exactly {cfg.s_batch}")
        prog = FcProgram(cfg, n_in, n_out)
        gpr, lanes, cv = prog.groups_per_row, prog.lanes, cfg.c_vec
        feats = np.zeros((n, gpr, cv), dtype=np.float32)
        feats.reshape(n, -1)[:, :n_in] = x
        # PE k caches images k*N .. k*N + N-1; the broadcast weight group meets all of them.
        f_op = prepare(feats, fidelity)
        acc = np.zeros((lanes, n, n_out), dtype=np.float32)
        for batch in prog.ticks():
            self.issued += 1
            for lane, (r, j) in enumerate(batch):
                assert lane == prog.lane_of(r, j)
                group = np.zeros((1, cv), dtype=np.float32)
                lo, hi = j * cv, min(n_in, (j + 1) * cv)
                group[0, :hi - lo] = weights[r, lo:hi]
                w_op = prepare(group, fidelity)
                if fidelity is Fidelity.DEVICE:
                    f_j = (f_op[0][:, j, :], f_op[1][:, j, :])
                    w_b = (np.broadcast_to(w_op[0], (n, cv)), np.broadcast_to(w_op[1], (n, 1)))
                else:
                    f_j = f_op[:, j, :]
                    w_b = np.broadcast_to(w_op, (n, cv))
                acc[lane, :, r] = accumulate(acc[lane, :, r], lane_dot(f_j, w_b, fidelity))
        total = acc[0]
        for u in range(1, lanes):
            total = total + acc[u]
        y = total + np.asarray(bias, dtype=np.float32)
        return np.maximum(y, 0) if relu else y
