"""(C_vec, K_vec) sweep: resource feasibility plus modeled throughput per grid point."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

from dlasim.arch_model import DeviceSpec, ResourceReport, VectorConfig, check_fit
from dlasim.errors import NoFeasiblePointError
from dlasim.perf_model import DEFAULT_DERATE, SystemPerf, system_throughput
from dlasim.topology import Topology, infer_shapes

DEFAULT_C_RANGE = (4, 8, 16)
DEFAULT_K_RANGE = tuple(range(8, 97, 8))
CSV_HEADER = ["c_vec", "k_vec", "dsps", "m20k_total", "feasible", "img_per_s_device", "img_per_s_system"]


@dataclass(frozen=True)
class DsePoint:
    cfg: VectorConfig
    resources: ResourceReport
    perf: SystemPerf | None
    explored: bool = True  # False when K_vec is not an even multiple of C_vec

    @property
    def feasible(self) -> bool:
        return self.explored and self.resources.feasible

    @property
    def img_per_s_device(self) -> float:
        return self.perf.img_per_s_device if self.perf else 0.0

    @property
    def img_per_s_system(self) -> float:
        return self.perf.img_per_s_system if self.perf else 0.0

    def row(self) -> list:
        return [self.cfg.c_vec, self.cfg.k_vec, self.resources.n_dsps, self.resources.m20k_total,
                int(self.feasible), f"{self.img_per_s_device:.3f}", f"{self.img_per_s_system:.3f}"]

    def to_dict(self) -> dict:
        return dict(zip(CSV_HEADER, [self.cfg.c_vec, self.cfg.k_vec, self.resources.n_dsps,
                                     self.resources.m20k_total, self.feasible,
                                     self.img_per_s_device, self.img_per_s_system]))


def is_explored(c_vec: int, k_vec: int) -> bool:
    return k_vec % c_vec == 0 and (k_vec // c_vec) % 2 == 0


def sweep_grid(t: Topology, dev: DeviceSpec, fixed: VectorConfig | None = None,
               c_range=DEFAULT_C_RANGE, k_range=DEFAULT_K_RANGE, derate: float = DEFAULT_DERATE) -> list[DsePoint]:
    """Every (C_vec, K_vec) pair, C_vec major. Only feasible, explored points carry a SystemPerf."""
    c_range, k_range = list(c_range), list(k_range)
    if not c_range or not k_range:
        raise ValueError("sweep ranges must be non-empty")
    fixed = fixed or VectorConfig()
    table = infer_shapes(t)
    points = []
    for c in c_range:
        for k in k_range:
            cfg = replace(fixed, c_vec=c, k_vec=k)
            res = check_fit(cfg, t, dev, table)
            explored = is_explored(c, k)
            perf = system_throughput(cfg, t, dev, derate) if explored and res.feasible else None
            points.append(DsePoint(cfg, res, perf, explored))
    return points


def select_best(points) -> DsePoint:
    """Highest system img/s; ties go to fewer DSPs, then fewer M20Ks, then smaller K_vec."""
    feasible = [p for p in points if p.feasible]
    if not feasible:
        raise NoFeasiblePointError("no feasible configuration in the sweep")
    return min(feasible, key=lambda p: (-p.img_per_s_system, p.resources.n_dsps,
                                         p.resources.m20k_total, p.cfg.k_vec))


def to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in points:
        w.writerow(p.row())
    return buf.getvalue()
