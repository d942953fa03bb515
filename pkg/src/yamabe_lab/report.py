"""Experiment orchestration and reproducible artifacts (run.json, sweep.csv, field.json)."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from pathlib import Path

import numpy as np

from . import __version__
from .concentration import (
    annular_split,
    concentration_function,
    eta_cutoff_field,
    max_eps_ball_mass,
    psi,
    psi_closed_form_p4,
    robust_center,
)
from .config import RunConfig, build_manifold, defaults, validate
from .exceptions import BadFormat, EmptyPositivePart, NotConcentrated
from .ground_state import gn_report, pohozaev_residuals
from .manifold import DiscreteManifold
from .nehari import (
    ProblemParams,
    dv_inner,
    energy,
    gradient,
    h1_inner,
    lambda_scale,
    quadratic_lower_bound,
    plus_power_integral,
    precondition,
    project,
    relative_defect,
    scaled_equation_residual,
    yamabe_from_energy,
    yamabe_quotient,
)
from .solver import (
    DedupOptions,
    DescentOptions,
    count_vs_category,
    default_starts,
    filter_sublevel,
    multistart,
)
from .transplant import cached_ground_state, default_radius, inclusion_map

log = logging.getLogger(__name__)

SWEEP_HEADER = ["epsilon", "m_eps", "abs_err_mE", "n_solutions", "min_residual"]


# -- deterministic serialization ------------------------------------------------

def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return "%.17g" % x if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{_encode(str(k), indent, level)}: {_encode(obj[k], indent, level + 1)}'
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(pad + it for it in items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.number)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 1) -> str:
    """JSON with sorted keys and every float written with 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(dumps(obj))


# -- field files ----------------------------------------------------------------

def manifold_block(M: DiscreteManifold) -> dict:
    """Config-style description sufficient to rebuild ``M``."""
    p = M.params
    if M.kind == "circle":
        return {"type": "circle", "L": p["L"], "N": p["N"], "cat": M.cat}
    if M.kind == "torus":
        return {"type": "torus", "L1": p["L1"], "L2": p["L2"], "N1": p["N1"], "N2": p["N2"], "cat": M.cat}
    if M.kind == "sphere":
        return {"type": "sphere", "level": p["subdivisions"], "r0_factor": p["r0_factor"], "cat": M.cat}
    return {"type": "mesh", "path": p.get("path"), "r0": M.r0, "cat": M.cat}


def manifold_from_block(block: dict) -> DiscreteManifold:
    cfg = defaults()
    unknown = set(block) - set(cfg.manifold)
    if unknown:
        raise BadFormat(f"unknown manifold keys {sorted(unknown)}")
    cfg.manifold.update(block)
    validate(cfg)
    return build_manifold(cfg)


def field_payload(u, M: DiscreteManifold, **meta) -> dict:
    return {"values": np.asarray(u, dtype=float), "manifold": manifold_block(M),
            "manifold_hash": M.hash, "version": __version__, **meta}


def save_field(path, u, M: DiscreteManifold, **meta) -> None:
    write_json(path, field_payload(u, M, **meta))


def load_field(path, M: DiscreteManifold | None = None):
    """Read a field file, rebuilding (or checking) its manifold by hash."""
    try:
        data = json.loads(Path(path).read_text())
        values = np.asarray(data["values"], dtype=float)
        digest = data["manifold_hash"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise BadFormat(f"{path}: not a field file ({exc})") from exc
    if M is None:
        M = manifold_from_block(data["manifold"])
    if M.hash != digest:
        raise BadFormat(f"{path}: manifold hash {digest} does not match {M.hash}")
    if values.shape != (M.n_vertices,) or not np.all(np.isfinite(values)):
        raise BadFormat(f"{path}: expected {M.n_vertices} finite values")
    return values, M, data


# -- runs -----------------------------------------------------------------------

def descent_options(cfg: RunConfig) -> DescentOptions:
    s = cfg.solver
    return DescentOptions(s["max_iters"], s["step0"], s["armijo_c"], s["shrink"], s["residual_tol"], s["defect_tol"])


def dedup_options(cfg: RunConfig) -> DedupOptions:
    return DedupOptions(cfg.dedup["rel_tol_l2"], cfg.dedup["energy_tol"])


def concentration_radius(cfg: RunConfig, M: DiscreteManifold) -> float:
    r = cfg.concentration["r"]
    return default_radius(M) if r is None else r


def make_params(cfg: RunConfig, M: DiscreteManifold, eps: float) -> ProblemParams:
    return ProblemParams(M, cfg.params["m"], eps, cfg.params["p"])


def ground_state_block(cfg: RunConfig, params: ProblemParams) -> dict:
    U = cached_ground_state(params.n, float(params.p), cfg.ground_state["r_max"], cfg.ground_state["step"])
    rep = gn_report(U, params.m, cfg.params["V"]).as_dict()
    rep.update(q=U.q, u0=U.u0, norm2_sq=U.norm2_sq, grad2_sq=U.grad2_sq, normq_q=U.normq_q,
               decay_rate=U.decay_rate)
    return rep


def _starts(cfg, M, eps):
    k = cfg.solver["starts"]
    return default_starts(M, eps) if k is None else M.sample_vertices(k) if k else np.array([], dtype=int)


def epsilon_block(cfg: RunConfig, M: DiscreteManifold, eps: float, m_E: float):
    """Multistart at one ε with all diagnostics; returns (block, solution set)."""
    params = make_params(cfg, M, eps)
    r, eta = concentration_radius(cfg, M), cfg.concentration["eta"]
    t0 = time.perf_counter()
    sol = multistart(M, params, _starts(cfg, M, eps), cfg.solver["include_constant"], descent_options(cfg),
                     dedup_options(cfg), r=r, eta=eta, workers=cfg.solver["workers"])
    t_solve = time.perf_counter() - t0
    block = {"epsilon": eps, "failures": sol.failures, "solutions": [], "partial": bool(sol.failures)}
    if not len(sol):
        block.update(m_eps=None, abs_err_mE=None, min_residual=None)
        return block, sol, {"multistart": t_solve}
    m_hat = sol[0].energy
    V = cfg.params["V"]
    for pt in sol:
        entry = {
            "energy": pt.energy, "residual": pt.residual, "eq_residual": pt.eq_residual,
            "defect": pt.defect, "relative_defect": relative_defect(pt.field, params),
            "iterations": pt.iterations, "start": pt.start, "peak": pt.peak,
            "center": pt.center, "concentration": pt.concentration,
            "quadratic_bound": quadratic_lower_bound(pt.field, params, m_hat),
            "energy_monotone": bool(np.all(np.diff(pt.energy_history) <= 0)),
            "yamabe_quotient": yamabe_quotient(pt.field, params, V),
        }
        try:
            sd = annular_split(pt, pt.peak, r, cfg.concentration["split_l"], params)
            entry["split"] = {**sd.as_dict(), "bound": sd.split_energy_bound(0.99 * m_hat, params.p)}
            entry["split"]["holds"] = sd.energy >= entry["split"]["bound"]
        except EmptyPositivePart as exc:
            entry["split"] = {"undefined": str(exc)}
        block["solutions"].append(entry)
    xs = M.sample_vertices(cfg.concentration["test_points"])
    incl, rt = [], []
    for x in xs:
        ix = inclusion_map(M, params, int(x), r)
        incl.append(ix.energy)
        c = robust_center(M, np.maximum(ix.field, 0.0) ** params.p, r, eta)
        rt.append(M.distance(int(x), c))
    vertex, ballmass = max_eps_ball_mass(sol[0], params)
    block.update(
        m_eps=m_hat, abs_err_mE=abs(m_hat - m_E), min_residual=min(p.residual for p in sol),
        n_solutions=len(sol), distances=sol.distances,
        category=count_vs_category(sol, M.cat or 1).as_dict(),
        inclusion={"test_points": xs, "energies": incl, "max_energy": max(incl),
                   "excess": max(incl) - m_E, "roundtrip": rt, "roundtrip_ok": bool(max(rt) < 2 * r)},
        eps_ball={"vertex": vertex, "value": ballmass, "ratio": ballmass / (params.p * 2 / (params.p - 2) * m_hat)},
        yamabe_from_energy=yamabe_from_energy(m_hat, params, V),
        low_energy_concentrated=all(
            p.concentration >= 0.9 for p in sol if p.energy < 1.5 * m_hat
        ),
    )
    if cfg.run["sublevel"] is not None:
        block["sublevel"] = {"d": cfg.run["sublevel"], "count": len(filter_sublevel(sol, cfg.run["sublevel"]))}
    return block, sol, {"multistart": t_solve}


def run(cfg: RunConfig, out_dir=None, write: bool = True) -> dict:
    """Full experiment over the configured ε list; writes run.json and sweep.csv."""
    t0 = time.perf_counter()
    M = build_manifold(cfg)
    params0 = make_params(cfg, M, cfg.epsilons[0])
    gs = ground_state_block(cfg, params0)
    report = {
        "version": __version__, "config": cfg.as_dict(), "config_hash": cfg.hash,
        "manifold": M.describe(), "ground_state": gs,
        "params": {"n": params0.n, "m": params0.m, "p": params0.p, "a": params0.a},
        "runs": [], "timings": {},
    }
    for eps in cfg.epsilons:
        block, _, times = epsilon_block(cfg, M, eps, gs["mE"])
        report["runs"].append(block)
        report["timings"][f"epsilon={eps!r}"] = times
    report["timings"]["total"] = time.perf_counter() - t0
    if write:
        out = Path(out_dir or cfg.run["output_dir"])
        write_json(out / "run.json", report)
        write_sweep_csv(out / "sweep.csv", sweep_rows(report))
    return report


def sweep_rows(report: dict) -> list[list]:
    rows = []
    for b in report["runs"]:
        rows.append([b["epsilon"], b["m_eps"], b["abs_err_mE"], len(b["solutions"]), b["min_residual"]])
    return rows


def write_sweep_csv(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fmt = lambda v: "" if v is None else ("%.17g" % v if isinstance(v, float) else str(v))  # noqa: E731
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# -- invariant suite --------------------------------------------------------------

def _check(checks, name, passed, **detail):
    checks.append({"name": name, "passed": bool(passed), **detail})


def _random_fields(rng, M, k):
    base = rng.normal(size=(k, M.n_vertices))
    return 1.0 + 0.5 * base


def verify(cfg: RunConfig) -> dict:
    """Run the invariant suite at the smallest configured ε; ``passed`` is the overall verdict."""
    rng = np.random.default_rng(cfg.run["seed"])
    M = build_manifold(cfg)
    eps = min(cfg.epsilons)
    params = make_params(cfg, M, eps)
    r, eta = concentration_radius(cfg, M), cfg.concentration["eta"]
    checks: list[dict] = []

    us = _random_fields(rng, M, 20)
    cs = rng.uniform(0.1, 10.0, size=20)
    err_h = max(abs(lambda_scale(c * u, params) * c / lambda_scale(u, params) - 1) for u, c in zip(us, cs))
    _check(checks, "lambda_homogeneity", err_h < 1e-12, max_error=err_h)
    err_i = max(np.max(np.abs(project(project(u, params), params) - project(u, params)))
                / np.max(np.abs(project(u, params))) for u in us)
    _check(checks, "projection_idempotence", err_i < 1e-12, max_error=err_i)
    err_s = max(np.max(np.abs(project(c * u, params) - project(u, params))) / np.max(np.abs(project(u, params)))
                for u, c in zip(us, cs))
    _check(checks, "projection_scale_invariance", err_s < 1e-12, max_error=err_s)
    err_n = 0.0
    for u in us:
        v = project(u, params)
        J = energy(v, params)
        ident = eps ** (-params.n) * (0.5 - 1 / params.p) * plus_power_integral(v, params)
        err_n = max(err_n, abs(J - ident) / abs(J))
    _check(checks, "on_nehari_energy_identity", err_n < 1e-10, max_error=err_n)

    h, err_g = 1e-5, 0.0
    for _ in range(100):
        u = _random_fields(rng, M, 1)[0]
        v = rng.normal(size=M.n_vertices)
        exact = dv_inner(gradient(u, params), v, params)
        fd = (energy(u + h * v, params) - energy(u - h * v, params)) / (2 * h)
        err_g = max(err_g, abs(exact - fd) / max(abs(exact), 1e-300))
    _check(checks, "gradient_central_difference", err_g < 1e-6, max_error=err_g)

    g1, g2 = rng.normal(size=(2, M.n_vertices))
    lhs, rhs = h1_inner(precondition(g1, params), g2, params), dv_inner(g1, g2, params)
    _check(checks, "precondition_adjoint", abs(lhs - rhs) <= 1e-8 * abs(rhs), lhs=lhs, rhs=rhs)

    U = cached_ground_state(params.n, float(params.p), cfg.ground_state["r_max"], cfg.ground_state["step"])
    res1, res2 = pohozaev_residuals(U, params.m)
    _check(checks, "pohozaev", max(res1, res2) < 1e-4, res1=res1, res2=res2)

    for d in (0.1, 0.5):
        val = psi(d, params.p)
        detail = {"delta": d, "grid": val}
        ok = val > 1
        if params.p == 4:
            detail["closed_form"] = psi_closed_form_p4(d)
            ok = ok and detail["closed_form"] > 1
        _check(checks, f"psi_above_one[{d}]", ok, **detail)

    sol = multistart(M, params, _starts(cfg, M, eps), cfg.solver["include_constant"], descent_options(cfg),
                     dedup_options(cfg), r=r, eta=eta, workers=cfg.solver["workers"])
    _check(checks, "multistart_converged", len(sol) > 0 and not sol.failures, n=len(sol), failures=sol.failures)
    m_hat = sol[0].energy if len(sol) else math.nan
    tol = cfg.solver["residual_tol"]
    for k, pt in enumerate(sol):
        _check(checks, f"quadratic_bound[{k}]", quadratic_lower_bound(pt.field, params, m_hat))
        _check(checks, f"equation_residual[{k}]", scaled_equation_residual(pt.field, params) < tol)
        _check(checks, f"energy_monotone[{k}]", np.all(np.diff(pt.energy_history) <= 0))
        try:
            sd = annular_split(pt, pt.peak, r, cfg.concentration["split_l"], params)
            bound = sd.split_energy_bound(0.99 * m_hat, params.p)
            _check(checks, f"split_energy_bound[{k}]", sd.energy >= bound and sd.disjoint, energy=sd.energy, bound=bound)
        except EmptyPositivePart:
            pass

    fields = [np.maximum(pt.field, 0.0) ** params.p for pt in sol]
    for x in M.sample_vertices(cfg.concentration["test_points"]):
        v = inclusion_map(M, params, int(x), r).field
        fields.append(np.maximum(v, 0.0) ** params.p)
    bad51, bad52 = [], []
    for k, w in enumerate(fields):
        C = concentration_function(M, w, r)
        if not C.max() > eta:
            continue
        xmax = int(np.argmax(C))
        supp = np.flatnonzero(eta_cutoff_field(M, w, r, eta))
        if not np.all(M.distances_from(xmax)[supp] < 2 * r):
            bad51.append(k)
        try:
            c = robust_center(M, w, r, eta)
        except NotConcentrated:
            bad52.append(k)
            continue
        if not np.all(M.distances_from(c)[C > eta] < 2 * r):
            bad52.append(k)
    _check(checks, "support_containment", not bad51, failing=bad51, fields=len(fields))
    _check(checks, "center_ball_membership", not bad52, failing=bad52, fields=len(fields))

    failures = [c["name"] for c in checks if not c["passed"]]
    return {"passed": not failures, "failures": failures, "checks": checks,
            "epsilon": eps, "config_hash": cfg.hash, "version": __version__}
