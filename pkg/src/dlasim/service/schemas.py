"""Request and response models shared by the HTTP service and the CLI."""
from __future__ import annotations

from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from dlasim.arch_model import VectorConfig


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConfigIn(Strict):
    """Architecture point. S_vec follows from W_vec - Q_vec + 1."""

    c_vec: int = Field(8, ge=1)
    k_vec: int = Field(48, ge=1)
    q_vec: int = Field(4, ge=1)
    w_vec: int = Field(6, ge=1)
    l_w: int = Field(2, ge=1)
    l_h: int = Field(3, ge=1)
    winograd: bool = True

    @model_validator(mode="after")
    def _check(self):
        self.to_config()
        return self

    def to_config(self) -> VectorConfig:
        return VectorConfig(c_vec=self.c_vec, k_vec=self.k_vec, q_vec=self.q_vec, w_vec=self.w_vec,
                            s_vec=self.w_vec - self.q_vec + 1, l_w=self.l_w, l_h=self.l_h,
                            winograd=self.winograd)


# builtin name, a path readable by the server, or an inline document
TopologyRef = Union[str, dict[str, Any]]
DeviceRef = Union[str, dict[str, Any]]


class ValidateRequest(Strict):
    topology: TopologyRef = "alexnet"


class ShapeRow(BaseModel):
    index: int
    name: str
    kind: str
    input: list[int]
    output: list[int]
    macs: int


class ValidateResponse(BaseModel):
    name: str
    layers: list[ShapeRow]
    conv_macs: int
    table: str


class ModelRequest(Strict):
    topology: TopologyRef = "alexnet"
    device: DeviceRef = "arria10_1150"
    config: ConfigIn = ConfigIn()
    derate: float = Field(0.16, ge=0, lt=1)


class ResourcesOut(BaseModel):
    n_dsps: int
    m20k_stream: int
    m20k_filter_cache: int
    m20k_total: int
    feasible: bool
    limiting_resource: str
    warnings: list[str] = []


class LayerPerfOut(BaseModel):
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
    images: int
    cycles_per_image: float
    ddr_bound: bool
    terms: dict[str, float] = {}


class ModelResponse(BaseModel):
    config: dict[str, Any]
    device: dict[str, Any]
    resources: ResourcesOut
    layers: list[LayerPerfOut]
    total_cycles_per_image: float
    img_per_s_device: float
    img_per_s_system: float
    img_per_s_per_watt: float
    s_batch: int
    derate: float


class DseRequest(Strict):
    topology: TopologyRef = "alexnet"
    device: DeviceRef = "arria10_1150"
    fixed: ConfigIn = ConfigIn()
    c_range: list[int] = Field(default_factory=lambda: [4, 8, 16], min_length=1)
    k_range: list[int] = Field(default_factory=lambda: list(range(8, 97, 8)), min_length=1)
    derate: float = Field(0.16, ge=0, lt=1)


class DsePointOut(BaseModel):
    c_vec: int
    k_vec: int
    dsps: int
    m20k_total: int
    feasible: bool
    img_per_s_device: float
    img_per_s_system: float


class DseResponse(BaseModel):
    points: list[DsePointOut]
    best: DsePointOut
    csv: str


class SimulateRequest(Strict):
    topology: TopologyRef = "alexnet"
    device: DeviceRef = "arria10_1150"
    config: ConfigIn = ConfigIn()
    fidelity: Literal["exact_fp32", "device_fp16_shared_exp"] = "device_fp16_shared_exp"
    seed: int = 0
    images: int = Field(96, ge=1)
    weights: Optional[str] = None  # manifest.json of DLAT tensors; seeded random otherwise


class LayerSimOut(BaseModel):
    name: str
    kind: str
    unit_cycles: int
    cycles: int
    max_abs: float
    max_rel: float
    mean_rel: float
    passed: bool


class SimulateResponse(BaseModel):
    fidelity: str
    n_images: int
    batch_padding: int
    total_cycles: int
    cycles_per_image: float
    stalls: int
    argmax_agreement: Optional[float]
    prob_mean_abs: Optional[float]
    passed: bool
    warnings: list[str]
    layers: list[LayerSimOut]


class ErrorResponse(BaseModel):
    error: str
    kind: str
    detail: Optional[dict[str, Any]] = None
