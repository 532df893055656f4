"""Analytical throughput model: per-layer DSP efficiency and cycles, DDR-bound
correction, batched FC cycles, and end-to-end images per second.

Cycles are padded work divided by the peak issue rate, so quantization
inefficiency adds cycles (equivalently n_cycles = useful / (peak * efficiency)).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from dlasim.arch_model import DeviceSpec, VectorConfig, check_fit
from dlasim.errors import InfeasibleConfigError, ShapeError
from dlasim.topology import Conv, Topology, infer_shapes, prepare_convs, useful_taps

DEFAULT_DERATE = 0.16
BYTES_PER_WEIGHT = 2


@dataclass(frozen=True)
class ConvTrips:
    """Loop-trip counts of the convolution schedule."""

    groups: int
    k_tiles: int
    row_blocks: int
    col_blocks: int
    c_slices: int
    filter_rows: int
    s_strips: int
    interleave: int

    @property
    def cycles(self) -> int:
        return (self.groups * self.k_tiles * self.row_blocks * self.col_blocks
                * self.c_slices * self.filter_rows * self.s_strips * self.interleave)


@dataclass(frozen=True)
class LayerPerf:
    name: str
    kind: str
    dsp_eff: float
    useful_macs: int
    padded_macs: int
    n_cycles: int
    byte_req: int
    byte_ddr: int
    n_real: float
    act_gflops: float
    eff_gflops: float
    images: int = 1  # images covered by n_cycles (S_batch for FC)
    terms: dict = field(default_factory=dict)

    @property
    def cycles_per_image(self) -> float:
        return self.n_real / self.images

    @property
    def ddr_bound(self) -> bool:
        return self.byte_req > self.byte_ddr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cycles_per_image"] = self.cycles_per_image
        d["ddr_bound"] = self.ddr_bound
        return d


@dataclass(frozen=True)
class SystemPerf:
    layers: tuple[LayerPerf, ...]
    total_cycles_per_image: float
    img_per_s_device: float
    img_per_s_system: float
    img_per_s_per_watt: float
    s_batch: int
    derate: float

    def layer(self, name: str) -> LayerPerf:
        return next(lp for lp in self.layers if lp.name == name)

    def to_dict(self) -> dict:
        return {
            "layers": [lp.to_dict() for lp in self.layers],
            "total_cycles_per_image": self.total_cycles_per_image,
            "img_per_s_device": self.img_per_s_device,
            "img_per_s_system": self.img_per_s_system,
            "img_per_s_per_watt": self.img_per_s_per_watt,
            "s_batch": self.s_batch,
            "derate": self.derate,
        }


def _conv_dims(layer: Conv, in_shape):
    if layer.stride != 1:
        raise ShapeError(f"{layer.name or 'conv'}: stride {layer.stride} must be folded first")
    c, h, w = in_shape
    p = h + 2 * layer.pad - layer.R + 1
    q = w + 2 * layer.pad - layer.S + 1
    return c // layer.groups, layer.K // layer.groups, p, q


def conv_trips(cfg: VectorConfig, layer: Conv, in_shape) -> ConvTrips:
    cg, kg, p, q = _conv_dims(layer, in_shape)
    return ConvTrips(
        groups=layer.groups,
        k_tiles=math.ceil(kg / cfg.k_vec),
        row_blocks=math.ceil(p / cfg.l_h),
        col_blocks=math.ceil(q / (cfg.q_vec * cfg.l_w)),
        c_slices=math.ceil(cg / cfg.c_vec),
        filter_rows=layer.R,
        s_strips=math.ceil(layer.S / cfg.s_vec),
        interleave=cfg.interleave,
    )


def efficiency_terms(cfg: VectorConfig, layer: Conv, in_shape) -> dict[str, float]:
    """Per-dimension quantization efficiencies; their product is the DSP efficiency."""
    cg, kg, p, q = _conv_dims(layer, in_shape)
    t = conv_trips(cfg, layer, in_shape)
    s_pad = t.s_strips * cfg.s_vec
    return {
        "q": q / (t.col_blocks * cfg.q_vec * cfg.l_w),
        "p": p / (t.row_blocks * cfg.l_h),
        "k": kg / (t.k_tiles * cfg.k_vec),
        "c": cg / (t.c_slices * cfg.c_vec),
        # taps that hold real weights over taps issued per (channel, row)
        "s": useful_taps(layer, in_shape[0]) / (cg * layer.R * s_pad),
    }


def dsp_efficiency(cfg: VectorConfig, layer: Conv, in_shape) -> float:
    return math.prod(efficiency_terms(cfg, layer, in_shape).values())


def conv_filter_bytes(layer: Conv, in_channels: int) -> int:
    return layer.K * (in_channels // layer.groups) * layer.R * layer.S * BYTES_PER_WEIGHT


def conv_layer_perf(cfg: VectorConfig, layer: Conv, in_shape, next_layer_filter_bytes: int,
                    fmax: float, ddr_bytes_per_cycle: int = 64, name: str = "") -> LayerPerf:
    trips = conv_trips(cfg, layer, in_shape)
    n_cycles = trips.cycles
    _, _, p, q = _conv_dims(layer, in_shape)
    useful = layer.K * p * q * useful_taps(layer, in_shape[0])
    padded = n_cycles * cfg.macs_per_cycle
    eff = useful / padded
    byte_ddr = ddr_bytes_per_cycle * n_cycles
    n_real = n_cycles * max(1.0, next_layer_filter_bytes / byte_ddr)
    act = 2 * cfg.physical_multipliers * fmax * eff / 1e9
    return LayerPerf(
        name=name or layer.name,
        kind="conv",
        dsp_eff=eff,
        useful_macs=useful,
        padded_macs=padded,
        n_cycles=n_cycles,
        byte_req=next_layer_filter_bytes,
        byte_ddr=byte_ddr,
        n_real=n_real,
        act_gflops=act,
        eff_gflops=2 * act if cfg.winograd else act,
        terms=efficiency_terms(cfg, layer, in_shape),
    )


def fc_cycles(cfg: VectorConfig, n_in: int, n_out: int) -> int:
    """Cycles per S_batch batch: the weight stream in C_vec-wide groups, W_vec/N groups per cycle."""
    groups_per_row = math.ceil(n_in / cfg.c_vec)
    lanes = cfg.dot_units // cfg.fc_images_per_pe
    return math.ceil(n_out * groups_per_row / lanes)


def fc_layer_perf(cfg: VectorConfig, n_in: int, n_out: int, fmax: float,
                  ddr_bytes_per_cycle: int = 64, name: str = "fc") -> LayerPerf:
    n_cycles = fc_cycles(cfg, n_in, n_out)
    useful = n_in * n_out * cfg.s_batch
    padded = n_cycles * cfg.fc_weights_per_cycle * cfg.s_batch
    eff = useful / padded
    byte_req = n_in * n_out * BYTES_PER_WEIGHT
    byte_ddr = ddr_bytes_per_cycle * n_cycles
    n_real = n_cycles * max(1.0, byte_req / byte_ddr)
    act = 2 * cfg.physical_multipliers * fmax * eff / 1e9
    return LayerPerf(
        name=name,
        kind="fc",
        dsp_eff=eff,
        useful_macs=useful,
        padded_macs=padded,
        n_cycles=n_cycles,
        byte_req=byte_req,
        byte_ddr=byte_ddr,
        n_real=n_real,
        act_gflops=act,
        eff_gflops=act,
        images=cfg.s_batch,
    )


def network_layer_perf(cfg: VectorConfig, t: Topology, fmax: float, ddr_bytes_per_cycle: int = 64) -> list[LayerPerf]:
    table = infer_shapes(t)
    convs = prepare_convs(t, table)
    out = []
    for i, prep in enumerate(convs):
        # the last conv prefetches nothing: FC weights stream live
        nxt = conv_filter_bytes(convs[i + 1].original, convs[i + 1].original_input[0]) if i + 1 < len(convs) else 0
        out.append(conv_layer_perf(cfg, prep.layer, prep.input, nxt, fmax, ddr_bytes_per_cycle, prep.name))
    for row in table:
        if row.kind == "fc":
            out.append(fc_layer_perf(cfg, row.macs // row.output[0], row.output[0], fmax,
                                     ddr_bytes_per_cycle, row.name))
    return out


def system_throughput(cfg: VectorConfig, t: Topology, dev: DeviceSpec, derate: float = DEFAULT_DERATE,
                      require_feasible: bool = False) -> SystemPerf:
    if not 0 <= derate < 1:
        raise ValueError("derate must be in [0, 1)")
    if require_feasible:
        report = check_fit(cfg, t, dev)
        if not report.feasible:
            raise InfeasibleConfigError(
                f"{cfg.label()} does not fit {dev.name}: {report.limiting_resource.value} over budget", report)
    layers = network_layer_perf(cfg, t, dev.fmax, dev.ddr_bytes_per_cycle)
    total = sum(lp.cycles_per_image for lp in layers)
    device = dev.fmax / total if total else 0.0
    system = device * (1 - derate)
    return SystemPerf(
        layers=tuple(layers),
        total_cycles_per_image=total,
        img_per_s_device=device,
        img_per_s_system=system,
        img_per_s_per_watt=system / dev.board_watts,
        s_batch=cfg.s_batch,
        derate=derate,
    )


def gflops_report(cfg: VectorConfig, t: Topology, dev: DeviceSpec) -> list[dict]:
    return [
        {"layer": lp.name, "eff_gflops": lp.eff_gflops, "act_gflops": lp.act_gflops, "efficiency": lp.dsp_eff}
        for lp in network_layer_perf(cfg, t, dev.fmax, dev.ddr_bytes_per_cycle)
    ]


def format_gflops_table(rows: list[dict]) -> str:
    lines = [f"{'Layer':<8} {'Eff. GFLOPS':>12} {'Act. GFLOPS':>12} {'Eff.':>7}"]
    for r in rows:
        lines.append(f"{r['layer']:<8} {r['eff_gflops']:>12,.0f} {r['act_gflops']:>12,.0f} {r['efficiency']:>7.1%}")
    return "\n".join(lines)

