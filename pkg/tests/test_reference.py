import numpy as np
import pytest

from dlasim.errors import MissingWeightsError, ShapeError
from dlasim.reference import (direct_conv, fully_connected, lrn_norm, max_pool, relu, run_reference, softmax)
from dlasim.stimulus import random_images, random_weights
from dlasim.topology import Conv, Topology


def loop_conv(x, w, b, stride, pad, groups):
    """Second, independent nested-loop convolution (oracle of the oracle)."""
    c, h, wd = x.shape
    k, cg, r, s = w.shape
    p = (h + 2 * pad - r) // stride + 1
    q = (wd + 2 * pad - s) // stride + 1
    out = np.zeros((k, p, q))
    kg = k // groups
    for ko in range(k):
        g = ko // kg
        for y in range(p):
            for xo in range(q):
                acc = b[ko]
                for ci in range(cg):
                    for i in range(r):
                        for j in range(s):
                            yy, xx = y * stride + i - pad, xo * stride + j - pad
                            if 0 <= yy < h and 0 <= xx < wd:
                                acc += w[ko, ci, i, j] * x[g * cg + ci, yy, xx]
                out[ko, y, xo] = acc
    return out


def test_conv_trivial():
    assert direct_conv(np.full((1, 1, 1), 3.0), np.full((1, 1, 1, 1), 2.0), [0.5]).item() == 6.5
    assert direct_conv(np.ones((1, 3, 3)), np.ones((1, 1, 3, 3))).item() == 9.0


@pytest.mark.parametrize("stride,pad,groups", [(1, 2, 2), (2, 1, 1), (1, 0, 4)])
def test_conv_matches_loop_nest(rng, stride, pad, groups):
    # conv2-like: 5x5, pad 2, two groups, shrunk to keep the loop oracle quick
    x = rng.standard_normal((8, 9, 9))
    w = rng.standard_normal((8, 8 // groups, 5, 5))
    b = rng.standard_normal(8)
    np.testing.assert_allclose(direct_conv(x, w, b, stride, pad, groups), loop_conv(x, w, b, stride, pad, groups),
                               rtol=1e-12, atol=1e-12)


def test_conv_linearity(rng):
    x = rng.standard_normal((3, 7, 7))
    w = rng.standard_normal((2, 3, 3, 3))
    a = 3.7
    np.testing.assert_allclose(direct_conv(a * x, w), a * direct_conv(x, w), rtol=1e-12)


def test_conv_shape_mismatch():
    with pytest.raises(ShapeError):
        direct_conv(np.zeros((3, 5, 5)), np.zeros((2, 2, 3, 3)))


def test_fc_identity_and_batch(rng):
    v = rng.standard_normal(5)
    np.testing.assert_array_equal(fully_connected(v, np.eye(5), np.zeros(5)), v)
    batch = np.repeat(v[:, None], 4, axis=1)
    out = fully_connected(batch, rng.standard_normal((3, 5)))
    assert np.all(out == out[:, :1])


def test_fc_equals_conv_view(rng):
    w = rng.standard_normal((8, 4))
    v = rng.standard_normal(4)
    # H = R = n_in, C = W = S = 1
    conv = direct_conv(v.reshape(1, 4, 1), w.reshape(8, 1, 4, 1)).reshape(-1)
    np.testing.assert_allclose(fully_connected(v, w), conv, rtol=1e-12)


def test_lrn(rng):
    x = rng.standard_normal((7, 4, 4))
    np.testing.assert_allclose(lrn_norm(x, 5, 0.0, 0.75, 2.0), x / 2.0 ** 0.75)
    one = rng.standard_normal((1, 3, 3))
    np.testing.assert_allclose(lrn_norm(one, 1, 0.5, 0.75, 1.0), one / (1 + 0.5 * one ** 2) ** 0.75)
    want = np.empty_like(x)
    for c in range(7):
        for i in range(4):
            for j in range(4):
                s = sum(x[cc, i, j] ** 2 for cc in range(max(0, c - 2), min(7, c + 3)))
                want[c, i, j] = x[c, i, j] / (2.0 + 1e-4 / 5 * s) ** 0.75
    np.testing.assert_allclose(lrn_norm(x), want, rtol=1e-13)


def test_max_pool(rng):
    assert np.all(max_pool(np.full((2, 5, 5), 1.5), 3, 2) == 1.5)
    x = rng.standard_normal((3, 13, 13))
    np.testing.assert_array_equal(max_pool(x, 13, 1)[:, 0, 0], x.max(axis=(1, 2)))
    want = np.array([[[x[c, 2 * i:2 * i + 3, 2 * j:2 * j + 3].max() for j in range(6)] for i in range(6)]
                     for c in range(3)])
    np.testing.assert_array_equal(max_pool(x, 3, 2), want)


def test_relu(rng):
    assert np.all(relu(-np.ones(4)) == 0)
    assert np.all(relu(np.arange(1.0, 5)) == np.arange(1.0, 5))
    x = rng.standard_normal(10)
    np.testing.assert_array_equal(relu(x), np.where(x > 0, x, 0))


def test_softmax(rng):
    np.testing.assert_allclose(softmax(np.zeros(4)), np.full(4, 0.25))
    assert softmax(np.array([0.0, 1000.0, 0.0]))[1] == pytest.approx(1.0)
    p = softmax(rng.standard_normal(1000) * 5)
    assert abs(p.sum() - 1) <= 1e-12 and np.all((p > 0) & (p < 1))


def test_run_reference_alexnet(alexnet):
    outs = run_reference(alexnet, random_weights(alexnet, 0), random_images(alexnet, 1, 0)[0])
    assert len(outs) == 21
    assert outs[-1].shape == (1000,)
    assert outs[-1].sum() == pytest.approx(1.0, abs=1e-12)


def test_run_reference_single_conv(rng):
    t = Topology("one", (2, 6, 6), (Conv(K=3, R=3, S=3, pad=1, name="c"),))
    w, b = rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    x = rng.standard_normal((2, 6, 6))
    np.testing.assert_array_equal(run_reference(t, {"c": (w, b)}, x)[0], direct_conv(x, w, b, 1, 1))


def test_run_reference_errors(rng):
    t = Topology("one", (2, 6, 6), (Conv(K=3, R=3, S=3, name="c"),))
    with pytest.raises(MissingWeightsError):
        run_reference(t, {}, rng.standard_normal((2, 6, 6)))
    with pytest.raises(ShapeError):
        run_reference(t, {}, np.zeros((0, 2, 6, 6)))
