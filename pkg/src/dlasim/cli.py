"""Command-line client.

Runs the service operations in-process, or against a running server when
``--server URL`` is given. Exit codes: 0 ok, 2 bad input, 3 infeasible or no
solution, 4 fidelity failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from pydantic import ValidationError

from dlasim.errors import DlaError, InfeasibleConfigError, NoFeasiblePointError
from dlasim.perf_model import format_gflops_table
from dlasim.service import schemas as s

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_FIDELITY = 0, 2, 3, 4

RESPONSES = {
    "validate": s.ValidateResponse,
    "model": s.ModelResponse,
    "dse": s.DseResponse,
    "simulate": s.SimulateResponse,
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _ref(value: str):
    """Inline a local JSON file so a remote server never needs our filesystem."""
    path = Path(value)
    if path.is_file():
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"{value}: malformed JSON: {exc}", EXIT_INPUT) from None
    return value


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        if ":" in part:
            lo, hi, *step = (int(v) for v in part.split(":"))
            out.extend(range(lo, hi + 1, step[0] if step else 1))
        elif part:
            out.append(int(part))
    return out


def call(op: str, req, server: str | None = None):
    if server:
        import httpx

        r = httpx.post(server.rstrip("/") + "/" + op, json=req.model_dump(mode="json"), timeout=None)
        if r.status_code == 200:
            return RESPONSES[op].model_validate(r.json())
        try:
            msg = r.json().get("error") or r.text
        except ValueError:
            msg = r.text
        raise CliError(msg, EXIT_INFEASIBLE if r.status_code == 409 else EXIT_INPUT)
    from dlasim.service import api

    try:
        return getattr(api, op)(req)
    except (InfeasibleConfigError, NoFeasiblePointError) as exc:
        raise CliError(str(exc), EXIT_INFEASIBLE) from None
    except DlaError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None


FLAG_FIELDS = {"cvec": "c_vec", "kvec": "k_vec", "qvec": "q_vec", "wvec": "w_vec", "lw": "l_w", "lh": "l_h"}


def _config(args) -> dict:
    d = {}
    for flag, key in FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None and not isinstance(v, list):  # dse takes lists, swept separately
            d[key] = v
    if args.winograd is not None:
        d["winograd"] = args.winograd == "on"
    return d


def _write(out: str | None, name: str, text: str):
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / name).write_text(text)


def _dump(model) -> str:
    return json.dumps(model.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def cmd_validate(args) -> int:
    resp = call("validate", s.ValidateRequest(topology=_ref(args.topology)), args.server)
    print(resp.table)
    print(f"\n{resp.name}: {len(resp.layers)} layers, {resp.conv_macs:,} conv MACs")
    _write(args.out, "validate.json", _dump(resp))
    return EXIT_OK


def _model_text(resp: s.ModelResponse) -> str:
    rows = [{"layer": lp.name, "eff_gflops": lp.eff_gflops, "act_gflops": lp.act_gflops,
             "efficiency": lp.dsp_eff} for lp in resp.layers]
    r = resp.resources
    cfg = resp.config
    lines = [
        f"config {cfg['c_vec']}x{cfg['k_vec']} (Q_vec={cfg['q_vec']}, W_vec={cfg['w_vec']}, "
        f"L={cfg['l_w']}x{cfg['l_h']}, winograd={'on' if cfg['winograd'] else 'off'}) on {resp.device['name']}",
        f"resources: {r.n_dsps} DSPs, {r.m20k_total} M20Ks ({r.m20k_stream} stream + {r.m20k_filter_cache} filter)",
        "",
        format_gflops_table(rows),
        "",
        f"cycles/image      {resp.total_cycles_per_image:,.2f}",
        f"img/s (device)    {resp.img_per_s_device:,.1f}",
        f"img/s (system)    {resp.img_per_s_system:,.1f}   derate {resp.derate:.0%}",
        f"img/s/W           {resp.img_per_s_per_watt:.2f}   at {resp.device['board_watts']:g} W",
    ]
    lines += [f"warning: {w}" for w in r.warnings]
    return "\n".join(lines)


def cmd_model(args) -> int:
    req = s.ModelRequest(topology=_ref(args.topology), device=_ref(args.device), config=_config(args),
                         derate=args.derate)
    resp = call("model", req, args.server)
    print(_model_text(resp))
    _write(args.out, "model.json", _dump(resp))
    return EXIT_OK


def cmd_dse(args) -> int:
    req = s.DseRequest(topology=_ref(args.topology), device=_ref(args.device), fixed=_config(args),
                       derate=args.derate,
                       **({"c_range": args.cvec} if args.cvec else {}),
                       **({"k_range": args.kvec} if args.kvec else {}))
    resp = call("dse", req, args.server)
    b = resp.best
    if args.out:
        _write(args.out, "dse.csv", resp.csv)
        _write(args.out, "dse.json", _dump(resp))
    else:
        sys.stdout.write(resp.csv)
    n_ok = sum(p.feasible for p in resp.points)
    print(f"best: C_vec={b.c_vec} K_vec={b.k_vec}  {b.img_per_s_system:,.1f} img/s (system), "
          f"{b.dsps} DSPs, {b.m20k_total} M20Ks  [{n_ok}/{len(resp.points)} points feasible]")
    return EXIT_OK


def cmd_simulate(args) -> int:
    req = s.SimulateRequest(topology=_ref(args.topology), device=_ref(args.device), config=_config(args),
                            fidelity=args.fidelity, seed=args.seed, images=args.images, weights=args.weights)
    if args.dump and not args.out:
        raise CliError("--dump needs --out", EXIT_INPUT)
    if args.server:
        resp = call("simulate", req, args.server)
    else:
        from dlasim.service import api

        try:
            resp = api.simulate(req, Path(args.out) / "intermediates" if args.dump else None)
        except (InfeasibleConfigError, NoFeasiblePointError) as exc:
            raise CliError(str(exc), EXIT_INFEASIBLE) from None
        except DlaError as exc:
            raise CliError(str(exc), EXIT_INPUT) from None
    for w in resp.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{'layer':<8} {'cycles':>10} {'max rel':>10} {'mean rel':>10}  ok")
    for ls in resp.layers:
        print(f"{ls.name:<8} {ls.unit_cycles:>10,} {ls.max_rel:>10.2e} {ls.mean_rel:>10.2e}  {'yes' if ls.passed else 'NO'}")
    print(f"\n{resp.n_images} images, {resp.total_cycles:,} cycles ({resp.cycles_per_image:,.2f}/image), "
          f"argmax agreement {resp.argmax_agreement:.4f}, fidelity {resp.fidelity}: "
          f"{'PASS' if resp.passed else 'FAIL'}")
    _write(args.out, "simulate.json", _dump(resp))
    return EXIT_OK if resp.passed else EXIT_FIDELITY


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dlasim", description="FPGA CNN accelerator models and simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, device=True, config=True):
        sp.add_argument("--topology", default="alexnet", help="builtin name or topology JSON path")
        sp.add_argument("--out", help="directory for JSON/CSV outputs")
        sp.add_argument("--server", help="base URL of a running dlasim service")
        if device:
            sp.add_argument("--device", default="arria10_1150", help="device preset or JSON path")
        if config:
            sp.add_argument("--qvec", type=int)
            sp.add_argument("--wvec", type=int)
            sp.add_argument("--lw", type=int)
            sp.add_argument("--lh", type=int)
            sp.add_argument("--winograd", choices=("on", "off"))

    sp = sub.add_parser("validate", help="check a topology and print its shape table")
    common(sp, device=False, config=False)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("model", help="resource and throughput report")
    common(sp)
    sp.add_argument("--cvec", type=int)
    sp.add_argument("--kvec", type=int)
    sp.add_argument("--derate", type=float, default=0.16)
    sp.set_defaults(func=cmd_model)

    sp = sub.add_parser("dse", help="sweep C_vec x K_vec")
    common(sp)
    sp.add_argument("--cvec", type=_int_list, help="list such as 4,8,16 or lo:hi:step")
    sp.add_argument("--kvec", type=_int_list, help="list such as 8:96:8")
    sp.add_argument("--derate", type=float, default=0.16)
    sp.set_defaults(func=cmd_dse)

    sp = sub.add_parser("simulate", help="simulate a network against the FP64 oracle")
    common(sp)
    sp.add_argument("--cvec", type=int)
    sp.add_argument("--kvec", type=int)
    sp.add_argument("--fidelity", default="device_fp16_shared_exp", choices=("exact_fp32", "device_fp16_shared_exp"))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--images", type=int, default=96)
    sp.add_argument("--weights", help="manifest.json of DLAT weight tensors")
    sp.add_argument("--dump", action="store_true", help="write per-layer outputs as DLAT under --out")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
