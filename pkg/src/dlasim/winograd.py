"""Winograd minimal filtering F(4,3): four outputs of a 3-tap correlation from
six inputs using six multiplications.

Transforms are derived by Toom-Cook interpolation over exact rationals and
cached. All transform functions act on the last axis, so they batch freely.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

OUTPUTS = 4
TAPS = 3
TILE = OUTPUTS + TAPS - 1
POINTS = (0, 1, -1, 2, -2)  # plus the point at infinity


def _invert(rows: list[list[Fraction]]) -> list[list[Fraction]]:
    n = len(rows)
    aug = [list(row) + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(rows)]
    for col in range(n):
        pivot = next(r for r in range(col, n) if aug[r][col] != 0)
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                factor = aug[r][col]
                aug[r] = [a - factor * b for a, b in zip(aug[r], aug[col])]
    return [row[n:] for row in aug]


def toom_cook(points=POINTS, m=OUTPUTS, r=TAPS):
    """Exact (A^T, G, B^T) for correlation F(m, r) over ``points`` plus infinity."""
    n = m + r - 1
    if len(points) != n - 1 or len(set(points)) != len(points):
        raise ValueError(f"F({m},{r}) needs {n - 1} distinct finite points")
    pts = [Fraction(p) for p in points]
    vander = [[p**j for j in range(n)] for p in pts] + [[Fraction(int(j == n - 1)) for j in range(n)]]
    inv = _invert(vander)
    bt = [[inv[j][i] for j in range(n)] for i in range(n)]
    g = [[p**j for j in range(r)] for p in pts] + [[Fraction(int(j == r - 1)) for j in range(r)]]
    at = [[p**j for p in pts] + [Fraction(int(j == m - 1))] for j in range(m)]
    # Move the Lagrange denominators from B^T into G so the data-side constants are integers.
    for i, p in enumerate(pts):
        denom = Fraction(1)
        for q in pts:
            if q != p:
                denom *= p - q
        g[i] = [v / denom for v in g[i]]
        bt[i] = [v * denom for v in bt[i]]
    return at, g, bt


def sliding_dot(i, f) -> np.ndarray:
    """The four direct 3-tap dot products over a 6-wide window (12 multiplies)."""
    i = np.asarray(i, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    return np.stack([(i[..., k:k + TAPS] * f).sum(-1) for k in range(OUTPUTS)], axis=-1)


class MultiplyCounter:
    """Elementwise multiply that tallies how many scalar products it performed."""

    def __init__(self):
        self.count = 0

    def __call__(self, a, b):
        out = np.multiply(a, b)
        self.count += out.size
        return out


@dataclass(frozen=True)
class WinogradF43:
    input_transform: np.ndarray   # B^T, 6x6
    filter_transform: np.ndarray  # G, 6x3
    output_transform: np.ndarray  # A^T, 4x6
    exact: tuple

    def _mat(self, which: str, dtype) -> np.ndarray:
        return getattr(self, which).astype(dtype)

    def transform_filter(self, f, dtype=np.float64):
        return np.asarray(f, dtype=dtype) @ self._mat("filter_transform", dtype).T

    def transform_input(self, i, dtype=np.float64):
        return np.asarray(i, dtype=dtype) @ self._mat("input_transform", dtype).T

    def inverse(self, m, dtype=np.float64):
        return np.asarray(m, dtype=dtype) @ self._mat("output_transform", dtype).T

    def conv_tile(self, i, f, dtype=np.float64, mul=np.multiply):
        u = self.transform_filter(f, dtype)
        v = self.transform_input(i, dtype)
        return self.inverse(mul(u, v), dtype)

    def max_identity_error(self, trials=1000, seed=0) -> float:
        rng = np.random.default_rng(seed)
        f = rng.uniform(-1, 1, (trials, TAPS))
        i = rng.uniform(-1, 1, (trials, TILE))
        return float(np.abs(self.conv_tile(i, f) - sliding_dot(i, f)).max())


@lru_cache(maxsize=None)
def derive_f43(points=POINTS) -> WinogradF43:
    at, g, bt = toom_cook(points)
    w = WinogradF43(
        input_transform=np.array(bt, dtype=np.float64),
        filter_transform=np.array(g, dtype=np.float64),
        output_transform=np.array(at, dtype=np.float64),
        exact=(tuple(map(tuple, at)), tuple(map(tuple, g)), tuple(map(tuple, bt))),
    )
    err = w.max_identity_error()
    if not err < 1e-10:
        raise ArithmeticError(f"F(4,3) self-check failed: max error {err:g}")
    return w


def transform_filter(f, dtype=np.float64):
    return derive_f43().transform_filter(f, dtype)


def transform_input(i, dtype=np.float64):
    return derive_f43().transform_input(i, dtype)


def output_transform(m, dtype=np.float64):
    return derive_f43().inverse(m, dtype)


def conv_tile_f43(i, f, dtype=np.float64, counter: MultiplyCounter | None = None):
    return derive_f43().conv_tile(i, f, dtype, mul=counter or np.multiply)


def direct_tile(i, f, counter: MultiplyCounter | None = None):
    """Direct sliding-window evaluation, routed through ``counter`` to tally multiplies."""
    mul = counter or np.multiply
    i = np.asarray(i, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    return np.stack([mul(i[..., k:k + TAPS], f).sum(-1) for k in range(OUTPUTS)], axis=-1)
