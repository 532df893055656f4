"""CNN topologies: layer definitions, JSON I/O, shape inference and stride folding."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Union

import numpy as np

from dlasim.errors import ShapeError, TopologyError

Shape3 = tuple[int, int, int]


@dataclass(frozen=True)
class Conv:
    K: int
    R: int
    S: int
    stride: int = 1
    pad: int = 0
    groups: int = 1
    relu: bool = False
    C: int | None = None
    name: str = ""
    # Taps per output (per group) that carry real weights; set on folded layers
    # whose filters were zero-padded up to a multiple of the fold factor.
    useful_taps: int | None = None
    kind = "conv"


@dataclass(frozen=True)
class FullyConnected:
    n_out: int
    relu: bool = False
    n_in: int | None = None
    name: str = ""
    kind = "fc"


@dataclass(frozen=True)
class MaxPool:
    window: int
    stride: int
    name: str = ""
    kind = "maxpool"


@dataclass(frozen=True)
class Norm:
    """Cross-channel LRN. Defaults are the standard AlexNet constants."""

    n: int = 5
    alpha: float = 1e-4
    beta: float = 0.75
    k: float = 2.0
    name: str = ""
    kind = "norm"


@dataclass(frozen=True)
class ReLU:
    name: str = ""
    kind = "relu"


@dataclass(frozen=True)
class Softmax:
    name: str = ""
    kind = "softmax"


LayerSpec = Union[Conv, FullyConnected, MaxPool, Norm, ReLU, Softmax]
LAYER_TYPES: dict[str, type] = {
    cls.kind: cls for cls in (Conv, FullyConnected, MaxPool, Norm, ReLU, Softmax)
}


@dataclass(frozen=True)
class Topology:
    name: str
    input_shape: Shape3
    layers: tuple[LayerSpec, ...]
    comment: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))

    def layer_names(self) -> list[str]:
        return [layer_name(layer, i) for i, layer in enumerate(self.layers)]

    def index_of(self, name: str) -> int:
        return self.layer_names().index(name)


def layer_name(layer: LayerSpec, index: int) -> str:
    return layer.name or f"{layer.kind}{index}"


@dataclass(frozen=True)
class LayerShape:
    index: int
    name: str
    kind: str
    input: Shape3
    output: Shape3
    macs: int


class ShapeTable(list):
    """List of LayerShape, one per layer, in topology order."""

    def by_name(self, name: str) -> LayerShape:
        for row in self:
            if row.name == name:
                return row
        raise KeyError(name)

    def conv_rows(self) -> list[LayerShape]:
        return [row for row in self if row.kind == "conv"]

    def format(self) -> str:
        lines = [f"{'#':>3} {'layer':<10} {'kind':<8} {'input':>16} {'output':>16} {'MACs':>14}"]
        for row in self:
            lines.append(
                f"{row.index:>3} {row.name:<10} {row.kind:<8} "
                f"{'x'.join(map(str, row.input)):>16} {'x'.join(map(str, row.output)):>16} "
                f"{row.macs:>14,}"
            )
        return "\n".join(lines)


def conv_output_hw(h: int, w: int, layer: Conv) -> tuple[int, int]:
    p = (h + 2 * layer.pad - layer.R) // layer.stride + 1
    q = (w + 2 * layer.pad - layer.S) // layer.stride + 1
    return p, q


def _check_layer(layer: LayerSpec, i: int) -> None:
    if isinstance(layer, Conv):
        if min(layer.K, layer.R, layer.S, layer.stride, layer.groups) < 1 or layer.pad < 0:
            raise TopologyError("conv dimensions must be positive (pad >= 0)", i)
        if layer.K % layer.groups:
            raise TopologyError(f"K={layer.K} not divisible by groups={layer.groups}", i)
    elif isinstance(layer, FullyConnected):
        if layer.n_out < 1 or (layer.n_in is not None and layer.n_in < 1):
            raise TopologyError("fc sizes must be >= 1", i)
    elif isinstance(layer, MaxPool):
        if layer.window < 1 or layer.stride < 1:
            raise TopologyError("pool window and stride must be >= 1", i)
    elif isinstance(layer, Norm):
        if layer.n < 1 or layer.n % 2 == 0:
            raise TopologyError(f"LRN window n={layer.n} must be odd", i)


def infer_shapes(t: Topology) -> ShapeTable:
    if not t.layers:
        raise TopologyError("no layers")
    if len(t.input_shape) != 3 or min(t.input_shape) < 1:
        raise TopologyError(f"input shape {t.input_shape} must be three positive ints")
    softmax_at = [i for i, layer in enumerate(t.layers) if isinstance(layer, Softmax)]
    if len(softmax_at) > 1 or (softmax_at and softmax_at[0] != len(t.layers) - 1):
        raise TopologyError("softmax must appear once, as the last layer", softmax_at[-1])

    table = ShapeTable()
    c, h, w = t.input_shape
    for i, layer in enumerate(t.layers):
        _check_layer(layer, i)
        macs = 0
        if isinstance(layer, Conv):
            if layer.C is not None and layer.C != c:
                raise TopologyError(f"conv declares C={layer.C} but its input has {c} channels", i)
            if c % layer.groups:
                raise TopologyError(f"C={c} not divisible by groups={layer.groups}", i)
            p, q = conv_output_hw(h, w, layer)
            if p < 1 or q < 1:
                raise ShapeError(f"layer {i}: {layer.R}x{layer.S} filter larger than padded {h}x{w} input")
            out = (layer.K, p, q)
            macs = layer.K * p * q * (c // layer.groups) * layer.R * layer.S
        elif isinstance(layer, FullyConnected):
            n_in = c * h * w
            if layer.n_in is not None and layer.n_in != n_in:
                raise TopologyError(f"fc declares n_in={layer.n_in} but its input has {n_in} elements", i)
            out = (layer.n_out, 1, 1)
            macs = n_in * layer.n_out
        elif isinstance(layer, MaxPool):
            p = (h - layer.window) // layer.stride + 1
            q = (w - layer.window) // layer.stride + 1
            if p < 1 or q < 1:
                raise ShapeError(f"layer {i}: pool window {layer.window} larger than {h}x{w} input")
            out = (c, p, q)
        else:
            out = (c, h, w)
        table.append(LayerShape(i, layer_name(layer, i), layer.kind, (c, h, w), out, macs))
        c, h, w = out
    return table


# ---------------------------------------------------------------------------
# JSON


def layer_to_dict(layer: LayerSpec) -> dict:
    d = {"kind": layer.kind}
    for f in fields(layer):
        value = getattr(layer, f.name)
        if value is None or (f.name == "name" and not value):
            continue
        d[f.name] = value
    return d


def layer_from_dict(d: dict, index: int) -> LayerSpec:
    if not isinstance(d, dict):
        raise TopologyError("layer entry must be an object", index)
    kind = d.get("kind")
    cls = LAYER_TYPES.get(kind)
    if cls is None:
        raise TopologyError(f"unknown layer kind {kind!r}", index)
    allowed = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(allowed) - {"kind"}
    if unknown:
        raise TopologyError(f"unknown keys {sorted(unknown)} for {kind}", index)
    kwargs = {}
    for key, value in d.items():
        if key == "kind":
            continue
        if key == "name":
            if not isinstance(value, str):
                raise TopologyError("name must be a string", index)
        elif key == "relu":
            if not isinstance(value, bool):
                raise TopologyError("relu must be a boolean", index)
        elif key in ("alpha", "beta", "k"):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TopologyError(f"{key} must be a number", index)
            value = float(value)
        elif isinstance(value, bool) or not isinstance(value, int):
            raise TopologyError(f"{key} must be an integer", index)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise TopologyError(f"{kind}: {exc}", index) from None


def to_dict(t: Topology) -> dict:
    d = {"name": t.name, "input": list(t.input_shape), "layers": [layer_to_dict(x) for x in t.layers]}
    if t.comment:
        d["comment"] = t.comment
    return d


def from_dict(d: dict) -> Topology:
    if not isinstance(d, dict):
        raise TopologyError("topology document must be a JSON object")
    unknown = set(d) - {"name", "input", "layers", "comment"}
    if unknown:
        raise TopologyError(f"unknown top-level keys {sorted(unknown)}")
    inp = d.get("input")
    if not (isinstance(inp, list) and len(inp) == 3 and all(isinstance(v, int) and not isinstance(v, bool) for v in inp)):
        raise TopologyError("'input' must be [C, H, W]")
    layers = d.get("layers")
    if not isinstance(layers, list):
        raise TopologyError("'layers' must be a list")
    t = Topology(
        name=str(d.get("name", "")),
        input_shape=tuple(inp),
        layers=tuple(layer_from_dict(x, i) for i, x in enumerate(layers)),
        comment=str(d.get("comment", "")),
    )
    infer_shapes(t)
    return t


def loads(text: str) -> Topology:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"malformed topology JSON: {exc}") from None
    return from_dict(d)


def dumps(t: Topology) -> str:
    return json.dumps(to_dict(t), indent=2) + "\n"


def load_topology(path) -> Topology:
    return loads(Path(path).read_text())


def save_topology(t: Topology, path) -> None:
    Path(path).write_text(dumps(t))


def builtin_alexnet() -> Topology:
    return load_topology(Path(__file__).parent / "data" / "alexnet.json")


BUILTINS = {"alexnet": builtin_alexnet}


def resolve_topology(spec: str) -> Topology:
    """Builtin name or path to a topology JSON file."""
    if spec in BUILTINS:
        return BUILTINS[spec]()
    return load_topology(spec)


# ---------------------------------------------------------------------------
# Stride folding


@dataclass(frozen=True)
class FoldPlan:
    """Space-to-depth rearrangement turning a stride-f conv into a stride-1 conv.

    Folded channel ``c*f*f + py*f + px`` holds input phase (py, px) of original
    channel c; channels of one group stay contiguous.
    """

    factor: int
    in_channels: int
    groups: int
    R: int
    S: int
    pad: int
    in_hw: tuple[int, int]
    folded_hw: tuple[int, int]
    folded_RS: tuple[int, int]

    @property
    def is_identity(self) -> bool:
        return self.factor == 1

    @property
    def folded_channels(self) -> int:
        return self.in_channels * self.factor**2

    def channel_source(self, folded_c: int) -> tuple[int, int, int]:
        """(original channel, row phase, column phase) for a folded channel index."""
        f2 = self.factor**2
        c, phase = divmod(folded_c, f2)
        return c, phase // self.factor, phase % self.factor

    def fold_input(self, x: np.ndarray) -> np.ndarray:
        """(C,H,W) or (N,C,H,W) -> folded, padding included."""
        if self.is_identity:
            return x
        f = self.factor
        hf, wf = self.folded_hw
        lead = x.shape[:-3]
        c, h, w = x.shape[-3:]
        buf = np.zeros(lead + (c, hf * f, wf * f), dtype=x.dtype)
        hh = min(h, hf * f - self.pad)
        ww = min(w, wf * f - self.pad)
        buf[..., self.pad:self.pad + hh, self.pad:self.pad + ww] = x[..., :hh, :ww]
        buf = buf.reshape(lead + (c, hf, f, wf, f))
        # -> (..., c, py, px, hf, wf)
        nd = len(lead)
        buf = buf.transpose(tuple(range(nd)) + (nd, nd + 2, nd + 4, nd + 1, nd + 3))
        return np.ascontiguousarray(buf).reshape(lead + (c * f * f, hf, wf))

    def fold_filters(self, w: np.ndarray) -> np.ndarray:
        """K x (C/g) x R x S -> K x (C/g * f^2) x R_f x S_f with zero taps past R, S."""
        if self.is_identity:
            return w
        f = self.factor
        rf, sf = self.folded_RS
        k, cg = w.shape[:2]
        buf = np.zeros((k, cg, rf * f, sf * f), dtype=w.dtype)
        buf[:, :, : self.R, : self.S] = w
        buf = buf.reshape(k, cg, rf, f, sf, f).transpose(0, 1, 3, 5, 2, 4)
        return np.ascontiguousarray(buf).reshape(k, cg * f * f, rf, sf)


def fold_strided_conv(layer: Conv, shape: Shape3) -> tuple[Conv, FoldPlan]:
    c, h, w = shape
    f = layer.stride
    if f == 1:
        plan = FoldPlan(1, c, layer.groups, layer.R, layer.S, layer.pad, (h, w), (h, w), (layer.R, layer.S))
        return layer, plan
    p, q = conv_output_hw(h, w, layer)
    rf, sf = math.ceil(layer.R / f), math.ceil(layer.S / f)
    folded_hw = (p + rf - 1, q + sf - 1)
    plan = FoldPlan(f, c, layer.groups, layer.R, layer.S, layer.pad, (h, w), folded_hw, (rf, sf))
    folded = replace(
        layer,
        R=rf,
        S=sf,
        stride=1,
        pad=0,
        C=c * f * f,
        useful_taps=(c // layer.groups) * layer.R * layer.S,
    )
    return folded, plan


def useful_taps(layer: Conv, in_channels: int) -> int:
    """Filter taps per output (within one group) that carry real weights."""
    if layer.useful_taps is not None:
        return layer.useful_taps
    return (in_channels // layer.groups) * layer.R * layer.S


@dataclass(frozen=True)
class PreparedConv:
    """A stride-1 conv ready for the accelerator, with its folding plan."""

    index: int
    name: str
    layer: Conv
    input: Shape3
    output: Shape3
    plan: FoldPlan
    original: Conv
    original_input: Shape3

    @property
    def useful_macs(self) -> int:
        k, p, q = self.output
        return k * p * q * useful_taps(self.layer, self.input[0])


def prepare_convs(t: Topology, table: ShapeTable | None = None) -> list[PreparedConv]:
    """Fold every strided conv of ``t``; returns them in topology order."""
    table = table or infer_shapes(t)
    out = []
    for row in table:
        layer = t.layers[row.index]
        if not isinstance(layer, Conv):
            continue
        folded, plan = fold_strided_conv(layer, row.input)
        in_shape = (plan.folded_channels, *plan.folded_hw) if not plan.is_identity else row.input
        out.append(PreparedConv(row.index, row.name, folded, in_shape, row.output, plan, layer, row.input))
    return out
