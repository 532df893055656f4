"""Sequencer programs: the issue order of every PE cycle.

The conv loop nest, outermost first: group, K tile, row block (L_h rows),
column block (Q_vec * L_w outputs), C_vec slice, filter row, S_vec strip,
then the L = L_h * L_w interleave slots, row-major. Each slot returns to its
accumulator exactly L cycles after it left, which is the shift-register depth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

from dlasim.arch_model import VectorConfig
from dlasim.errors import ShapeError
from dlasim.topology import Conv


@dataclass(frozen=True)
class ConvTick:
    group: int
    k_tile: int
    out_row: int
    col_tile: int        # index of a Q_vec-wide output tile
    c_slice: int
    filter_row: int
    s_strip: int
    slot: int
    reset: bool          # first reduction step of this output tile
    done: bool           # last reduction step


class ConvProgram:
    def __init__(self, cfg: VectorConfig, layer: Conv, in_shape):
        if layer.stride != 1:
            raise ShapeError("the sequencer only issues stride-1 convolutions; fold first")
        self.cfg = cfg
        self.layer = layer
        c, h, w = in_shape
        self.in_shape = tuple(in_shape)
        self.P = h + 2 * layer.pad - layer.R + 1
        self.Q = w + 2 * layer.pad - layer.S + 1
        self.Cg = c // layer.groups
        self.Kg = layer.K // layer.groups

    def reduction_steps(self) -> list[tuple[int, int, int]]:
        """(c_slice, filter_row, s_strip) in issue order."""
        cfg = self.cfg
        return [
            (cs, r, sb)
            for cs in range(math.ceil(self.Cg / cfg.c_vec))
            for r in range(self.layer.R)
            for sb in range(math.ceil(self.layer.S / cfg.s_vec))
        ]

    def output_blocks(self) -> Iterator[tuple[int, int, int, int]]:
        """(group, k_tile, row_block, col_block)."""
        cfg = self.cfg
        for g in range(self.layer.groups):
            for kt in range(math.ceil(self.Kg / cfg.k_vec)):
                for rb in range(math.ceil(self.P / cfg.l_h)):
                    for cb in range(math.ceil(self.Q / (cfg.q_vec * cfg.l_w))):
                        yield g, kt, rb, cb

    def ticks(self) -> Iterator[ConvTick]:
        cfg = self.cfg
        steps = self.reduction_steps()
        last = len(steps) - 1
        for g, kt, rb, cb in self.output_blocks():
            for i, (cs, r, sb) in enumerate(steps):
                for slot in range(cfg.interleave):
                    lh, lw = divmod(slot, cfg.l_w)
                    yield ConvTick(g, kt, rb * cfg.l_h + lh, cb * cfg.l_w + lw, cs, r, sb, slot,
                                   reset=i == 0, done=i == last)

    def count_ticks(self) -> int:
        """Issued cycles, by walking the block structure (one burst of L per block step)."""
        per_block = len(self.reduction_steps()) * self.cfg.interleave
        return sum(per_block for _ in self.output_blocks())


class FcProgram:
    """Weight stream for one FC layer: C_vec-wide groups, W_vec/N groups per cycle.

    Each PE holds N images; dot-unit lane u of every image consumes stream group
    number u, u + lanes, u + 2*lanes, ... so a row's groups rotate across lanes.
    """

    def __init__(self, cfg: VectorConfig, n_in: int, n_out: int):
        self.cfg = cfg
        self.n_in = n_in
        self.n_out = n_out
        self.groups_per_row = math.ceil(n_in / cfg.c_vec)
        self.lanes = cfg.dot_units // cfg.fc_images_per_pe
        if self.lanes * cfg.fc_images_per_pe != cfg.dot_units:
            raise ShapeError("dot units per PE must divide evenly among the images cached in it")

    def lane_of(self, row: int, group: int) -> int:
        return (row * self.groups_per_row + group) % self.lanes

    def ticks(self) -> Iterator[list[tuple[int, int]]]:
        """Per cycle, the (row, group) pairs streamed, one per lane."""
        batch = []
        for row in range(self.n_out):
            for j in range(self.groups_per_row):
                batch.append((row, j))
                if len(batch) == self.lanes:
                    yield batch
                    batch = []
        if batch:
            yield batch

    def count_ticks(self) -> int:
        issued = 0
        pending = 0
        for _ in range(self.n_out):
            pending += self.groups_per_row
            full, pending = divmod(pending, self.lanes)
            issued += full
        return issued + (1 if pending else 0)
