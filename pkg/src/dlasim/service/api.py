"""Service operations. Each takes a request model and returns a response model;
domain failures surface as DlaError subclasses for the caller to map.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from dlasim import dse as dse_mod
from dlasim.arch_model import DeviceSpec, check_fit, device_from_dict, resolve_device
from dlasim.errors import InfeasibleConfigError, TopologyError
from dlasim.perf_model import system_throughput
from dlasim.service import schemas as s
from dlasim.simulator.network import run_network
from dlasim.stimulus import random_images, random_weights
from dlasim.tensorio import load_weights, write_tensor
from dlasim.topology import Topology, from_dict, infer_shapes, resolve_topology


def get_topology(ref) -> Topology:
    if isinstance(ref, dict):
        return from_dict(ref)
    try:
        return resolve_topology(ref)
    except FileNotFoundError:
        raise TopologyError(f"no builtin topology or file named {ref!r}") from None


def get_device(ref) -> DeviceSpec:
    try:
        return device_from_dict(ref) if isinstance(ref, dict) else resolve_device(ref)
    except FileNotFoundError:
        raise TopologyError(f"no device preset or file named {ref!r}") from None
    except (TypeError, ValueError) as exc:
        raise TopologyError(f"bad device description: {exc}") from None


def validate(req: s.ValidateRequest) -> s.ValidateResponse:
    t = get_topology(req.topology)
    table = infer_shapes(t)
    rows = [s.ShapeRow(index=r.index, name=r.name, kind=r.kind, input=list(r.input), output=list(r.output),
                       macs=r.macs) for r in table]
    return s.ValidateResponse(name=t.name, layers=rows, conv_macs=sum(r.macs for r in table.conv_rows()),
                              table=table.format())


def model(req: s.ModelRequest) -> s.ModelResponse:
    t = get_topology(req.topology)
    dev = get_device(req.device)
    cfg = req.config.to_config()
    report = check_fit(cfg, t, dev)
    if not report.feasible:
        raise InfeasibleConfigError(
            f"{cfg.label()} needs {report.n_dsps} DSPs / {report.m20k_total} M20Ks; "
            f"{dev.name} has {dev.dsp_count} / {dev.m20k_count}", report)
    perf = system_throughput(cfg, t, dev, req.derate)
    d = perf.to_dict()
    return s.ModelResponse(config=cfg.to_dict(), device=dev.to_dict(), resources=report.to_dict(), **d)


def dse(req: s.DseRequest) -> s.DseResponse:
    t = get_topology(req.topology)
    dev = get_device(req.device)
    points = dse_mod.sweep_grid(t, dev, req.fixed.to_config(), req.c_range, req.k_range, req.derate)
    best = dse_mod.select_best(points)
    return s.DseResponse(points=[p.to_dict() for p in points], best=best.to_dict(), csv=dse_mod.to_csv(points))


def simulate(req: s.SimulateRequest, dump_dir=None) -> s.SimulateResponse:
    t = get_topology(req.topology)
    dev = get_device(req.device)
    cfg = req.config.to_config()
    weights = load_weights(req.weights) if req.weights else random_weights(t, req.seed)
    images = random_images(t, req.images, req.seed)
    result = run_network(cfg, t, weights, images, req.fidelity, dev=dev, keep_outputs=dump_dir is not None)
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)
        for ls in result.layers:
            write_tensor(dump_dir / f"{ls.name}.dlat", np.asarray(ls.output, dtype=np.float32))
    return s.SimulateResponse(**result.to_dict())
