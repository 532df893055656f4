"""Architecture point, device budget, and the DSP / M20K resource model."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

from dlasim.topology import Conv, FullyConnected, Topology, infer_shapes, prepare_convs, ShapeTable

# Winograd transform logic, in DSPs; deliberately generous.
WINOGRAD_DSP_OVERHEAD = 200
M20K_WORDS = 1024  # 2 words wide x 512 deep, 16-bit words


class Precision(str, Enum):
    FP16_SHARED_EXP = "fp16_shared_exp"
    FP32 = "fp32"


@dataclass(frozen=True)
class VectorConfig:
    c_vec: int = 8
    k_vec: int = 48
    q_vec: int = 4
    w_vec: int = 6
    s_vec: int = 3
    l_w: int = 2
    l_h: int = 3
    winograd: bool = True
    precision: Precision = Precision.FP16_SHARED_EXP

    def __post_init__(self):
        ints = (self.c_vec, self.k_vec, self.q_vec, self.w_vec, self.s_vec, self.l_w, self.l_h)
        if min(ints) < 1:
            raise ValueError(f"vector factors must be positive: {self}")
        if self.w_vec != self.s_vec + self.q_vec - 1:
            raise ValueError(f"W_vec={self.w_vec} must equal S_vec + Q_vec - 1 = {self.s_vec + self.q_vec - 1}")
        if self.winograd and (self.q_vec, self.s_vec, self.w_vec) != (4, 3, 6):
            raise ValueError("Winograd F(4,3) requires Q_vec=4, S_vec=3, W_vec=6")
        object.__setattr__(self, "precision", Precision(self.precision))

    @property
    def interleave(self) -> int:
        return self.l_w * self.l_h

    @property
    def macs_per_cycle(self) -> int:
        """Convolution MACs issued per cycle, counted in the direct (untransformed) domain."""
        return self.q_vec * self.s_vec * self.c_vec * self.k_vec

    @property
    def dot_units(self) -> int:
        """C_vec-wide dot-product units per PE."""
        return self.w_vec if self.winograd else self.q_vec * self.s_vec

    @property
    def physical_multipliers(self) -> int:
        return self.dot_units * self.c_vec * self.k_vec

    @property
    def s_batch(self) -> int:
        return 2 * self.k_vec

    @property
    def fc_images_per_pe(self) -> int:
        return self.s_batch // self.k_vec

    @property
    def fc_weights_per_cycle(self) -> int:
        """F: weights streamed from DDR per cycle in FC mode."""
        return (self.dot_units // self.fc_images_per_pe) * self.c_vec

    def label(self) -> str:
        return f"{self.c_vec}x{self.k_vec}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["precision"] = self.precision.value
        return d


@dataclass(frozen=True)
class DeviceSpec:
    name: str
    dsp_count: int
    m20k_count: int
    fmax_mhz: float
    ddr_bytes_per_cycle: int = 64
    board_watts: float = 45.0
    m20k_capacity_words: int = M20K_WORDS

    @property
    def fmax(self) -> float:
        return self.fmax_mhz * 1e6

    def to_dict(self) -> dict:
        return asdict(self)


DEVICE_KEYS = {f for f in DeviceSpec.__dataclass_fields__}


def device_from_dict(d: dict) -> DeviceSpec:
    unknown = set(d) - DEVICE_KEYS
    if unknown:
        raise ValueError(f"unknown device keys {sorted(unknown)}")
    d = {"name": "custom", **d}
    dev = DeviceSpec(**d)
    if min(dev.fmax_mhz, dev.ddr_bytes_per_cycle, dev.board_watts, dev.m20k_capacity_words) <= 0:
        raise ValueError("device fmax, DDR width, watts and M20K capacity must be positive")
    if dev.dsp_count < 0 or dev.m20k_count < 0:
        raise ValueError("device resource counts must be non-negative")
    return dev


def load_device(path) -> DeviceSpec:
    return device_from_dict(json.loads(Path(path).read_text()))


PRESETS = {"arria10_1150": Path(__file__).parent / "data" / "arria10_1150.json"}
PRESET_ALIASES = {"a10": "arria10_1150", "arria10": "arria10_1150"}


def resolve_device(spec: str) -> DeviceSpec:
    key = PRESET_ALIASES.get(spec, spec)
    if key in PRESETS:
        return load_device(PRESETS[key])
    return load_device(spec)


def arria10_1150() -> DeviceSpec:
    return resolve_device("arria10_1150")


class Limit(str, Enum):
    NONE = "none"
    DSP = "dsp"
    M20K = "m20k"


@dataclass(frozen=True)
class ResourceReport:
    n_dsps: int
    m20k_stream: int
    m20k_filter_cache: int
    feasible: bool
    limiting_resource: Limit
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def m20k_total(self) -> int:
        return self.m20k_stream + self.m20k_filter_cache

    def to_dict(self) -> dict:
        return {
            "n_dsps": self.n_dsps,
            "m20k_stream": self.m20k_stream,
            "m20k_filter_cache": self.m20k_filter_cache,
            "m20k_total": self.m20k_total,
            "feasible": self.feasible,
            "limiting_resource": self.limiting_resource.value,
            "warnings": list(self.warnings),
        }


def dsp_usage(cfg: VectorConfig, winograd_overhead: int = WINOGRAD_DSP_OVERHEAD) -> int:
    # Two 16-bit multiplies per DSP; half a DSP rounds up.
    base = math.ceil((cfg.w_vec - cfg.q_vec + 1) * cfg.q_vec * cfg.k_vec * cfg.c_vec / 2)
    if cfg.winograd:
        return math.ceil(base / 2) + winograd_overhead
    return base


def n_banks(cfg: VectorConfig) -> int:
    return cfg.w_vec * cfg.c_vec


def buffered_layers(t: Topology, table: ShapeTable | None = None) -> list[tuple[str, int, int]]:
    """(conv name, words read from the stream buffer, words written back) per conv layer.

    The input is the (folded) conv input; the output is whatever the ReLU/Norm/Pool
    chain after the conv finally stores, i.e. post-pool when a pool follows.
    """
    table = table or infer_shapes(t)
    out = []
    for prep in prepare_convs(t, table):
        stored = table[prep.index].output
        for row in table[prep.index + 1:]:
            if isinstance(t.layers[row.index], (Conv, FullyConnected)) or row.kind == "softmax":
                break
            stored = row.output
        out.append((prep.name, math.prod(prep.input), math.prod(stored)))
    return out


def stream_buffer_depths(cfg: VectorConfig, t: Topology, table: ShapeTable | None = None) -> dict[str, int]:
    banks = n_banks(cfg)
    return {
        name: math.ceil(words_in / banks) + math.ceil(words_out / banks)
        for name, words_in, words_out in buffered_layers(t, table)
    }


def stream_buffer_m20k(cfg: VectorConfig, t: Topology, table: ShapeTable | None = None,
                       capacity_words: int = M20K_WORDS) -> int:
    depths = stream_buffer_depths(cfg, t, table)
    if not depths:
        return 0
    return math.ceil(max(depths.values()) / capacity_words) * n_banks(cfg)


def filter_cache_m20k(cfg: VectorConfig) -> int:
    return math.ceil(n_banks(cfg) * cfg.k_vec / 2)


def fc_cache_warnings(cfg: VectorConfig, t: Topology, table: ShapeTable | None = None,
                      capacity_words: int = M20K_WORDS) -> list[str]:
    """FC mode keeps S_batch/K_vec images of features in each PE's filter cache."""
    table = table or infer_shapes(t)
    per_pe_words = filter_cache_m20k(cfg) // cfg.k_vec * capacity_words
    warnings = []
    for row in table:
        if row.kind != "fc":
            continue
        need = cfg.fc_images_per_pe * math.prod(row.input)
        if need > per_pe_words:
            warnings.append(f"{row.name}: {need} feature words exceed the {per_pe_words}-word PE cache")
    return warnings


def check_fit(cfg: VectorConfig, t: Topology, dev: DeviceSpec, table: ShapeTable | None = None) -> ResourceReport:
    table = table or infer_shapes(t)
    dsps = dsp_usage(cfg)
    stream = stream_buffer_m20k(cfg, t, table, dev.m20k_capacity_words)
    cache = filter_cache_m20k(cfg)
    if dsps > dev.dsp_count:
        limit = Limit.DSP
    elif stream + cache > dev.m20k_count:
        limit = Limit.M20K
    else:
        limit = Limit.NONE
    return ResourceReport(
        n_dsps=dsps,
        m20k_stream=stream,
        m20k_filter_cache=cache,
        feasible=limit is Limit.NONE,
        limiting_resource=limit,
        warnings=tuple(fc_cache_warnings(cfg, t, table, dev.m20k_capacity_words)),
    )
