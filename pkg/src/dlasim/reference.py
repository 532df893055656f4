"""FP64 reference implementations of every layer type.

These are the ground truth the simulator is diffed against. Feature maps are
``(C, H, W)`` arrays, optionally with a leading batch axis.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from dlasim.errors import MissingWeightsError, ShapeError
from dlasim.topology import Conv, FullyConnected, MaxPool, Norm, ReLU, Softmax, Topology, infer_shapes


def direct_conv(x, filters, bias=None, stride=1, pad=0, groups=1):
    """Cross-correlation with zero padding; filters are K x (C/g) x R x S."""
    x = np.asarray(x, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    batched = x.ndim == 4
    if not batched:
        x = x[None]
    n, c, h, w = x.shape
    k, cg, r, s = filters.shape
    if c % groups or k % groups or cg != c // groups:
        raise ShapeError(f"filters {filters.shape} do not match input {x.shape[1:]} with groups={groups}")
    if bias is not None and np.shape(bias) != (k,):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({k},)")
    p = (h + 2 * pad - r) // stride + 1
    q = (w + 2 * pad - s) // stride + 1
    if p < 1 or q < 1:
        raise ShapeError("filter larger than padded input")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    kg = k // groups
    out = np.zeros((n, k, p, q))
    for g in range(groups):
        xg = xp[:, g * cg:(g + 1) * cg]
        wg = filters[g * kg:(g + 1) * kg]
        acc = out[:, g * kg:(g + 1) * kg]
        for i in range(r):
            for j in range(s):
                window = xg[:, :, i:i + stride * (p - 1) + 1:stride, j:j + stride * (q - 1) + 1:stride]
                acc += np.einsum("kc,ncpq->nkpq", wg[:, :, i, j], window, optimize=True)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out if batched else out[0]


def fully_connected(v, weights, bias=None):
    """``W v + b``. ``v`` is a vector, or an n_in x b matrix holding one image per column."""
    v = np.asarray(v, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or v.shape[0] != weights.shape[1]:
        raise ShapeError(f"weights {weights.shape} incompatible with input {v.shape}")
    out = weights @ v
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (weights.shape[0],):
            raise ShapeError(f"bias shape {bias.shape} != ({weights.shape[0]},)")
        out = out + (bias[:, None] if v.ndim == 2 else bias)
    return out


def lrn_norm(x, n=5, alpha=1e-4, beta=0.75, k=2.0):
    """Cross-channel local response normalization, window clipped at the channel edges."""
    if n % 2 == 0:
        raise ValueError("LRN window must be odd")
    x = np.asarray(x, dtype=np.float64)
    half = n // 2
    sq = x * x
    c = x.shape[-3]
    # cumulative sum over channels with a leading zero plane
    csum = np.concatenate([np.zeros_like(sq[..., :1, :, :]), np.cumsum(sq, axis=-3)], axis=-3)
    lo = np.clip(np.arange(c) - half, 0, c)
    hi = np.clip(np.arange(c) + half + 1, 0, c)
    window = csum[..., hi, :, :] - csum[..., lo, :, :]
    return x / (k + (alpha / n) * window) ** beta


def max_pool(x, window, stride):
    x = np.asarray(x)
    h, w = x.shape[-2:]
    p = (h - window) // stride + 1
    q = (w - window) // stride + 1
    if p < 1 or q < 1:
        raise ShapeError("pool window larger than input")
    view = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(-2, -1))
    return view[..., ::stride, ::stride, :, :][..., :p, :q, :, :].max(axis=(-2, -1))


def relu(x):
    return np.maximum(x, 0)


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - v.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


Weights = Mapping[str, tuple]


def layer_params(weights: Weights, name: str):
    try:
        w, b = weights[name]
    except KeyError:
        raise MissingWeightsError(f"no weights for layer {name!r}") from None
    return np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)


def run_reference(t: Topology, weights: Weights, images) -> list[np.ndarray]:
    """Run every layer at FP64. ``images`` is (C,H,W) or (N,C,H,W).

    Returns one array per layer; FC-and-later outputs are (n,) or (N, n).
    """
    x = np.asarray(images, dtype=np.float64)
    if x.size == 0:
        raise ShapeError("empty input")
    table = infer_shapes(t)
    if x.shape[-3:] != t.input_shape:
        raise ShapeError(f"input {x.shape} does not match topology input {t.input_shape}")
    batched = x.ndim == 4
    outs = []
    for row, layer in zip(table, t.layers):
        if isinstance(layer, Conv):
            w, b = layer_params(weights, row.name)
            x = direct_conv(x, w, b, layer.stride, layer.pad, layer.groups)
            if layer.relu:
                x = relu(x)
        elif isinstance(layer, FullyConnected):
            w, b = layer_params(weights, row.name)
            flat = x.reshape(x.shape[0], -1) if batched else x.reshape(-1)
            x = fully_connected(flat.T, w, b).T
            if layer.relu:
                x = relu(x)
        elif isinstance(layer, ReLU):
            x = relu(x)
        elif isinstance(layer, Norm):
            x = lrn_norm(x, layer.n, layer.alpha, layer.beta, layer.k)
        elif isinstance(layer, MaxPool):
            x = max_pool(x, layer.window, layer.stride)
        elif isinstance(layer, Softmax):
            x = softmax(x.reshape(x.shape[0], -1) if batched else x.reshape(-1))
        outs.append(x)
    return outs
