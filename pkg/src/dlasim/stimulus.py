"""Seeded synthetic weights and images.

Weights are uniform in [-1, 1] scaled by sqrt(6 / fan_in) so activations stay
O(1) through deep stacks; unscaled uniform weights overflow FP16 by conv3.
"""
from __future__ import annotations

import math

import numpy as np

from dlasim.topology import Conv, FullyConnected, Topology, infer_shapes

BIAS_SCALE = 0.1


def _streams(seed: int):
    weights_ss, images_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(weights_ss), np.random.default_rng(images_ss)


def random_weights(t: Topology, seed: int = 0) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    rng, _ = _streams(seed)
    out = {}
    for row, layer in zip(infer_shapes(t), t.layers):
        if isinstance(layer, Conv):
            shape = (layer.K, row.input[0] // layer.groups, layer.R, layer.S)
        elif isinstance(layer, FullyConnected):
            shape = (layer.n_out, math.prod(row.input))
        else:
            continue
        fan_in = math.prod(shape[1:])
        w = rng.uniform(-1, 1, shape) * math.sqrt(6 / fan_in)
        b = rng.uniform(-1, 1, shape[0]) * BIAS_SCALE
        out[row.name] = (w, b)
    return out


def random_images(t: Topology, n: int, seed: int = 0) -> np.ndarray:
    _, rng = _streams(seed)
    return rng.uniform(-1, 1, (n, *t.input_shape))
