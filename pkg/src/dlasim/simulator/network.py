"""The sequencer: walks a topology, runs conv layers image by image and FC
layers batch by batch, and diffs every stage against the FP64 reference.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from dlasim.arch_model import DeviceSpec, VectorConfig, check_fit
from dlasim.errors import InfeasibleConfigError, ShapeError
from dlasim.reference import layer_params, lrn_norm, max_pool, run_reference, softmax
from dlasim.simulator.arith import Fidelity, store
from dlasim.simulator.engine import conv_layer, fc_layer
from dlasim.simulator.schedule import ConvProgram, FcProgram
from dlasim.simulator.units import bank_occupancy, bank_capacity
from dlasim.topology import Conv, FullyConnected, MaxPool, Norm, ReLU, Softmax, Topology, infer_shapes, prepare_convs


@dataclass(frozen=True)
class Thresholds:
    """Pass/fail limits on per-layer error against the oracle."""

    max_rel: float | None = None
    mean_rel: float | None = None
    argmax_agreement: float | None = None
    prob_mean_abs: float | None = None


# Frozen from the FP16 storage-error study (see tests/test_fidelity_study.py).
THRESHOLDS = {
    Fidelity.EXACT_FP32: Thresholds(max_rel=1e-4),
    Fidelity.DEVICE: Thresholds(max_rel=5e-2, mean_rel=1e-2, argmax_agreement=95 / 96, prob_mean_abs=2e-2),
}


@dataclass
class LayerSim:
    name: str
    kind: str
    unit_cycles: int = 0          # per image (conv) or per batch (fc)
    cycles: int = 0               # over the whole run
    max_abs: float = 0.0
    max_rel: float = 0.0
    mean_rel: float = 0.0
    passed: bool = True
    output: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "output"}


@dataclass
class SimResult:
    fidelity: Fidelity
    layers: list[LayerSim]
    n_images: int
    batch_padding: int = 0
    stalls: int = 0
    argmax_agreement: float | None = None
    prob_mean_abs: float | None = None
    warnings: list[str] = field(default_factory=list)
    passed: bool = True

    @property
    def total_cycles(self) -> int:
        return sum(ls.cycles for ls in self.layers)

    @property
    def cycles_per_image(self) -> float:
        return self.total_cycles / self.n_images if self.n_images else 0.0

    def layer(self, name: str) -> LayerSim:
        return next(ls for ls in self.layers if ls.name == name)

    def to_dict(self) -> dict:
        return {
            "fidelity": self.fidelity.value,
            "n_images": self.n_images,
            "batch_padding": self.batch_padding,
            "total_cycles": self.total_cycles,
            "cycles_per_image": self.cycles_per_image,
            "stalls": self.stalls,
            "argmax_agreement": self.argmax_agreement,
            "prob_mean_abs": self.prob_mean_abs,
            "passed": self.passed,
            "warnings": list(self.warnings),
            "layers": [ls.to_dict() for ls in self.layers],
        }


def error_stats(sim, ref) -> tuple[float, float, float]:
    """(max |d|, max |d| / max |ref|, mean |d| / mean |ref|)."""
    sim = np.asarray(sim, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    d = np.abs(sim - ref)
    top = np.abs(ref).max() if ref.size else 0.0
    avg = np.abs(ref).mean() if ref.size else 0.0
    max_abs = float(d.max()) if d.size else 0.0
    return max_abs, (max_abs / top if top else max_abs), (float(d.mean()) / avg if avg else float(d.mean()) if d.size else 0.0)


def _judge(ls: LayerSim, th: Thresholds) -> bool:
    ok = True
    if th.max_rel is not None:
        ok &= ls.max_rel <= th.max_rel
    if th.mean_rel is not None:
        ok &= ls.mean_rel <= th.mean_rel
    return bool(ok)


def run_conv_layer(cfg: VectorConfig, layer: Conv, x, filters, bias=None, fidelity=Fidelity.DEVICE,
                   relu=None, engine: str = "fast") -> LayerSim:
    """One stride-1 conv on raw inputs; storage rounding is applied to inputs and weights."""
    fidelity = Fidelity(fidelity)
    if layer.stride != 1:
        raise ShapeError("run_conv_layer takes stride-1 layers; fold strided convs first")
    x = np.asarray(x)
    single = x.ndim == 3
    xb = x[None] if single else x
    bias = np.zeros(layer.K) if bias is None else bias
    relu = layer.relu if relu is None else relu
    args = (cfg, layer, store(xb, fidelity), store(filters, fidelity), store(bias, fidelity), fidelity, relu)
    if engine == "cycle":
        from dlasim.simulator.units import CycleEngine
        y = CycleEngine(cfg).conv(*args[1:])
    else:
        y = conv_layer(*args)
    prog = ConvProgram(cfg, layer, xb.shape[1:])
    ticks = prog.count_ticks()
    out = store(y, fidelity)
    return LayerSim(layer.name or "conv", "conv", ticks, ticks * len(xb), output=out[0] if single else out)


def run_fc_layers(cfg: VectorConfig, layers: list[tuple[FullyConnected, np.ndarray, np.ndarray]], batch,
                  fidelity=Fidelity.DEVICE) -> list[LayerSim]:
    """A chain of FC layers on one S_batch batch of flattened features (batch, n_in)."""
    fidelity = Fidelity(fidelity)
    x = np.asarray(batch)
    if x.ndim != 2 or x.shape[0] != cfg.s_batch:
        raise ShapeError(f"FC batch must be ({cfg.s_batch}, n_in), got {x.shape}")
    x = store(x, fidelity)
    out = []
    for fc, w, b in layers:
        y = store(fc_layer(cfg, x, store(w, fidelity), store(b, fidelity), fidelity, fc.relu), fidelity)
        ticks = FcProgram(cfg, x.shape[1], w.shape[0]).count_ticks()
        out.append(LayerSim(fc.name or "fc", "fc", ticks, ticks, output=y))
        x = y
    return out


def _trailing_relu(t: Topology, i: int) -> bool:
    return i + 1 < len(t.layers) and isinstance(t.layers[i + 1], ReLU)


def run_network(cfg: VectorConfig, t: Topology, weights, images, fidelity=Fidelity.DEVICE,
                dev: DeviceSpec | None = None, keep_outputs: bool = False) -> SimResult:
    fidelity = Fidelity(fidelity)
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    if images.shape[1:] != t.input_shape:
        raise ShapeError(f"images {images.shape} do not match topology input {t.input_shape}")
    n = len(images)
    if n == 0:
        raise ShapeError("no images")
    table = infer_shapes(t)
    if dev is not None:
        report = check_fit(cfg, t, dev, table)
        if not report.feasible:
            raise InfeasibleConfigError(f"{cfg.label()} does not fit {dev.name}", report)
    for row, layer in zip(table, t.layers):
        if isinstance(layer, (Conv, FullyConnected)):
            layer_params(weights, row.name)  # fail early on missing weights

    refs = run_reference(t, weights, images)
    preps = {p.index: p for p in prepare_convs(t, table)}
    th = THRESHOLDS[fidelity]
    result = SimResult(fidelity, [], n)

    batches = math.ceil(n / cfg.s_batch)
    pad = batches * cfg.s_batch - n
    fc_rows = [row for row in table if row.kind == "fc"]
    if pad and fc_rows:
        msg = f"{n} images padded with {pad} zero images to fill {batches} FC batch(es) of {cfg.s_batch}"
        warnings.warn(msg, stacklevel=2)
        result.warnings.append(msg)
        result.batch_padding = pad

    x = store(images, fidelity)
    fused_relu = False
    for row, layer in zip(table, t.layers):
        ls = LayerSim(row.name, row.kind)
        if isinstance(layer, Conv):
            prep = preps[row.index]
            w, b = layer_params(weights, row.name)
            relu = layer.relu or _trailing_relu(t, row.index)
            xin = prep.plan.fold_input(x)
            cap = bank_capacity(cfg, t, table)
            occ = bank_occupancy(cfg, prep.input) + bank_occupancy(cfg, _stored_shape(t, table, row.index))
            if occ > cap:
                raise ShapeError(f"{row.name}: per-bank occupancy {occ} exceeds the {cap}-word allocation")
            frag = run_conv_layer(cfg, prep.layer, xin, prep.plan.fold_filters(w), b, fidelity, relu)
            ls.unit_cycles, ls.cycles = frag.unit_cycles, frag.cycles
            x = frag.output
            fused_relu = relu and not layer.relu
        elif isinstance(layer, ReLU):
            if not fused_relu:
                x = np.maximum(x, 0)
            fused_relu = False
        elif isinstance(layer, Norm):
            x = store(lrn_norm(x, layer.n, layer.alpha, layer.beta, layer.k), fidelity)
        elif isinstance(layer, MaxPool):
            x = max_pool(x, layer.window, layer.stride)
        elif isinstance(layer, FullyConnected):
            w, b = layer_params(weights, row.name)
            flat = x.reshape(len(x), -1)
            if len(flat) < batches * cfg.s_batch:
                flat = np.concatenate([flat, np.zeros((batches * cfg.s_batch - len(flat), flat.shape[1]), flat.dtype)])
            outs = [run_fc_layers(cfg, [(layer, w, b)], flat[i * cfg.s_batch:(i + 1) * cfg.s_batch], fidelity)[0]
                    for i in range(batches)]
            ls.unit_cycles = outs[0].unit_cycles
            ls.cycles = sum(o.cycles for o in outs)
            x = np.concatenate([o.output for o in outs])
        elif isinstance(layer, Softmax):
            x = softmax(x.reshape(len(x), -1))
        ls.output = x[:n]
        ref = refs[row.index]
        if isinstance(layer, Conv) and fused_relu:
            ref = np.maximum(ref, 0)  # the ReLU unit runs before the output leaves the PEs
        ls.max_abs, ls.max_rel, ls.mean_rel = error_stats(ls.output, ref)
        ls.passed = _judge(ls, th)
        result.layers.append(ls)

    final_ref = refs[-1].reshape(n, -1)
    final = result.layers[-1].output.reshape(n, -1)
    result.argmax_agreement = float(np.mean(final.argmax(1) == final_ref.argmax(1)))
    if isinstance(t.layers[-1], Softmax):
        result.prob_mean_abs = float(np.abs(final - final_ref).mean())
    ok = all(ls.passed for ls in result.layers)
    if th.argmax_agreement is not None:
        ok &= result.argmax_agreement >= th.argmax_agreement - 1e-12
    if th.prob_mean_abs is not None and result.prob_mean_abs is not None:
        ok &= result.prob_mean_abs <= th.prob_mean_abs
    result.passed = bool(ok)
    if not keep_outputs:
        for ls in result.layers:
            ls.output = None
    return result


def _stored_shape(t: Topology, table, index: int):
    """Shape written back to the stream buffer after conv ``index`` (post-pool if a pool follows)."""
    shape = table[index].output
    for row in table[index + 1:]:
        if row.kind in ("conv", "fc", "softmax"):
            break
        shape = row.output
    return shape
