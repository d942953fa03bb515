"""Command-line interface: ``yamabe-lab <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .concentration import concentration_report, psi, psi_closed_form_p4
from .config import build_manifold, defaults, load_config
from .exceptions import ConfigInvalid, YamabeLabError
from .ground_state import RadialGrid, critical_exponent, gn_report, solve_ground_state
from .report import (
    concentration_radius,
    descent_options,
    dumps,
    epsilon_block,
    field_payload,
    ground_state_block,
    load_field,
    make_params,
    run,
    save_field,
    sweep_rows,
    verify,
    write_json,
    write_sweep_csv,
)
from .solver import constant_start, descend
from .transplant import inclusion_map

log = logging.getLogger("yamabe_lab")


def _config(args):
    return load_config(args.config) if args.config else defaults()


def _emit(obj, out):
    text = dumps(obj)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _eps_list(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty epsilon list")
    return vals


def cmd_ground_state(args):
    q = args.q
    if q is None:
        if args.m is None:
            raise ConfigInvalid({"q": "give --q or --m"})
        q = critical_exponent(args.m + args.n)
    U = solve_ground_state(args.n, q, RadialGrid(r_max=args.r_max, step=args.step))
    out = {"n": U.n, "q": U.q, "u0": U.u0, "norm2_sq": U.norm2_sq, "grad2_sq": U.grad2_sq,
           "normq_q": U.normq_q, "decay_rate": U.decay_rate, "trusted_radius": U.trusted_radius,
           "mE": ((U.q - 2) / (2 * U.q)) * U.normq_q, "version": __version__}
    if args.m is not None:
        out["gn"] = gn_report(U, args.m, args.V).as_dict()
    _emit(out, args.out)
    return 0


def _epsilon(args, cfg):
    return args.epsilon if args.epsilon is not None else min(cfg.epsilons)


def cmd_solve(args):
    cfg = _config(args)
    M = build_manifold(cfg)
    params = make_params(cfg, M, _epsilon(args, cfg))
    if args.start == "constant":
        u0 = constant_start(params)
    else:
        x = int(args.start.split(":")[-1])
        u0 = inclusion_map(M, params, x, concentration_radius(cfg, M)).field
    pt = descend(u0, params, descent_options(cfg), start=args.start)
    meta = {"epsilon": params.epsilon, "p": params.p, "energy": pt.energy, "residual": pt.residual,
            "eq_residual": pt.eq_residual, "converged": pt.converged, "iterations": pt.iterations,
            "start": args.start, "config_hash": cfg.hash}
    out = args.out or "field.json"
    save_field(out, pt.field, M, **meta)
    sys.stdout.write(dumps(meta))
    return 0 if pt.converged else 1


def cmd_multistart(args):
    cfg = _config(args)
    M = build_manifold(cfg)
    eps = _epsilon(args, cfg)
    gs = ground_state_block(cfg, make_params(cfg, M, eps))
    block, _, times = epsilon_block(cfg, M, eps, gs["mE"])
    report = {"version": __version__, "config_hash": cfg.hash, "manifold": M.describe(),
              "ground_state": gs, "runs": [block], "timings": times}
    _emit(report, args.out)
    return 0


def cmd_sweep(args):
    cfg = _config(args)
    if args.eps is not None:
        cfg.params["epsilon"] = args.eps
    report = run(cfg, write=False)
    out = args.out or "sweep.csv"
    write_sweep_csv(out, sweep_rows(report))
    sys.stdout.write(Path(out).read_text())
    return 0


def cmd_concentrate(args):
    u, M, meta = load_field(args.input)
    p = meta.get("p")
    if p is None:
        cfg = _config(args)
        p = make_params(cfg, M, meta.get("epsilon", min(cfg.epsilons))).p
    w = np.maximum(u, 0.0) ** p
    r = args.r if args.r is not None else 0.4 * M.r0
    rep = concentration_report(M, w, r, args.eta).as_dict()
    if not args.full:
        rep.pop("values")
    _emit(rep, args.out)
    return 0


def cmd_bump(args):
    cfg = _config(args)
    M = build_manifold(cfg)
    params = make_params(cfg, M, _epsilon(args, cfg))
    r = args.r if args.r is not None else concentration_radius(cfg, M)
    pt = inclusion_map(M, params, args.x, r)
    payload = field_payload(pt.field, M, epsilon=params.epsilon, p=params.p, r=r, x=args.x,
                            energy=pt.energy, defect=pt.defect, config_hash=cfg.hash)
    write_json(args.out, payload)
    sys.stdout.write(dumps({k: v for k, v in payload.items() if k != "values"}))
    return 0


def cmd_psi(args):
    rows = []
    for d in args.delta:
        row = {"delta": d, "p": args.p, "grid": psi(d, args.p, args.grid, args.grid)}
        if args.p == 4:
            row["closed_form"] = psi_closed_form_p4(d)
        rows.append(row)
    _emit({"psi": rows}, args.out)
    return 0


def cmd_verify(args):
    res = verify(_config(args))
    _emit(res, args.out)
    return 0 if res["passed"] else 1


def cmd_report(args):
    cfg = _config(args)
    out = args.out_dir or cfg.run["output_dir"]
    report = run(cfg, out)
    sys.stdout.write(f"wrote {out}/run.json and {out}/sweep.csv ({len(report['runs'])} epsilon values)\n")
    return 1 if any(b["partial"] for b in report["runs"]) else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="yamabe-lab", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="INI run configuration (defaults are used when omitted)")
        return p

    p = sub.add_parser("ground-state", help="radial ground state and its constants")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--q", type=float)
    p.add_argument("--m", type=int, help="fiber dimension; sets q = p_{m+n} and adds constants")
    p.add_argument("--V", type=float, default=1.0, help="fiber volume for the Yamabe limit")
    p.add_argument("--r-max", type=float, default=40.0)
    p.add_argument("--step", type=float, default=1e-3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ground_state)

    p = with_config(sub.add_parser("solve", help="single descent from a named start"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--start", default="bump:0", help="'constant' or 'bump:VERTEX'")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = with_config(sub.add_parser("multistart", help="multistart search at one epsilon"))
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_multistart)

    p = with_config(sub.add_parser("sweep", help="m_eps over a list of epsilon values"))
    p.add_argument("--eps", type=_eps_list)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = with_config(sub.add_parser("concentrate", help="concentration report for a saved field"))
    p.add_argument("--input", required=True)
    p.add_argument("--r", type=float)
    p.add_argument("--eta", type=float, default=0.9)
    p.add_argument("--full", action="store_true", help="include the per-vertex concentration function")
    p.add_argument("--out")
    p.set_defaults(func=cmd_concentrate)

    p = with_config(sub.add_parser("bump", help="projected transplanted ground state"))
    p.add_argument("--x", type=int, required=True)
    p.add_argument("--r", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out", default="field.json")
    p.set_defaults(func=cmd_bump)

    p = sub.add_parser("psi", help="grid estimate of the splitting constant")
    p.add_argument("--delta", type=_eps_list, default=[0.1, 0.5])
    p.add_argument("--p", type=float, default=4.0)
    p.add_argument("--grid", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=cmd_psi)

    p = with_config(sub.add_parser("verify", help="invariant suite; nonzero exit on failure"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = with_config(sub.add_parser("report", help="full run: run.json and sweep.csv"))
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        sys.stderr.write(dumps({"error": "ConfigInvalid", "errors": exc.errors}))
        return 2
    except YamabeLabError as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
