"""Run configuration: an INI file with fixed sections and typed keys.

Unknown sections or keys are rejected. All problems found are reported together in
a :class:`ConfigInvalid` keyed by ``section.key``.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .exceptions import ConfigInvalid
from .ground_state import critical_exponent


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "default") else float(text)


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none", "default") else int(text)


SCHEMA = {
    "manifold": {
        "type": (str, "circle"),
        "L": (float, 2 * math.pi),
        "N": (int, 2048),
        "L1": (float, 2 * math.pi),
        "L2": (float, 2 * math.pi),
        "N1": (int, 128),
        "N2": (int, 128),
        "level": (int, 4),
        "r0_factor": (float, 0.9),
        "path": (str, ""),
        "r0": (_opt_float, None),
        "cat": (_opt_int, None),
    },
    "params": {
        "m": (int, 3),
        "epsilon": (_floats, [0.2, 0.1, 0.05]),
        "V": (float, 1.0),
        "p": (_opt_float, None),
    },
    "solver": {
        "max_iters": (int, 2000),
        "step0": (float, 1.0),
        "armijo_c": (float, 1e-4),
        "shrink": (float, 0.5),
        "residual_tol": (float, 1e-8),
        "defect_tol": (float, 1e-8),
        "starts": (_opt_int, None),
        "include_constant": (_bool, True),
        "workers": (int, 1),
    },
    "concentration": {
        "r": (_opt_float, None),
        "eta": (float, 0.9),
        "split_l": (int, 8),
        "test_points": (int, 16),
    },
    "dedup": {
        "rel_tol_l2": (float, 1e-3),
        "energy_tol": (float, 1e-6),
    },
    "run": {
        "seed": (int, 0),
        "output_dir": (str, "out"),
        "sublevel": (_opt_float, None),
    },
    "ground_state": {
        "r_max": (float, 40.0),
        "step": (float, 1e-3),
    },
}

MANIFOLD_DIMS = {"circle": 1, "torus": 2, "sphere": 2, "mesh": 2}


@dataclass
class RunConfig:
    manifold: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    concentration: dict = field(default_factory=dict)
    dedup: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)
    ground_state: dict = field(default_factory=dict)
    source: str | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=repr).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def epsilons(self) -> list[float]:
        return list(self.params["epsilon"])


def defaults() -> RunConfig:
    return RunConfig(**{sec: {k: v[1] for k, v in keys.items()} for sec, keys in SCHEMA.items()})


def parse_config(text: str, source: str | None = None) -> RunConfig:
    """Parse INI text; missing keys take their defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    errors: dict[str, str] = {}
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigInvalid({"file": str(exc)}) from exc
    cfg = defaults()
    cfg.source = source
    for sec in cp.sections():
        if sec not in SCHEMA:
            errors[sec] = "unknown section"
            continue
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                errors[f"{sec}.{key}"] = "unknown key"
                continue
            conv = SCHEMA[sec][key][0]
            try:
                getattr(cfg, sec)[key] = conv(raw)
            except ValueError as exc:
                errors[f"{sec}.{key}"] = f"cannot parse {raw!r}: {exc}"
    if errors:
        raise ConfigInvalid(errors)
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid({"file": f"{path} does not exist"})
    return parse_config(path.read_text(), source=str(path))


def validate(cfg: RunConfig) -> None:
    """Check every value against the preconditions of the module it feeds."""
    e: dict[str, str] = {}
    man, par, sol, con = cfg.manifold, cfg.params, cfg.solver, cfg.concentration
    kind = man["type"]
    if kind not in MANIFOLD_DIMS:
        e["manifold.type"] = f"must be one of {sorted(MANIFOLD_DIMS)}"
    if kind == "circle" and (man["L"] <= 0 or man["N"] < 16):
        e["manifold.N"] = "circle needs L > 0 and N >= 16"
    if kind == "torus" and (min(man["L1"], man["L2"]) <= 0 or min(man["N1"], man["N2"]) < 16):
        e["manifold.N1"] = "torus needs positive lengths and N1, N2 >= 16"
    if kind == "sphere" and man["level"] < 2:
        e["manifold.level"] = "sphere level must be >= 2"
    if kind != "mesh" and man["r0"] is not None:
        e["manifold.r0"] = "r0 is fixed for built-in manifolds; set it only for meshes"
    if kind == "mesh":
        if not man["path"]:
            e["manifold.path"] = "mesh manifold needs a path"
        if man["r0"] is None or man["r0"] <= 0:
            e["manifold.r0"] = "mesh manifold needs a positive r0"
    if man["cat"] is not None and man["cat"] < 1:
        e["manifold.cat"] = "cat must be >= 1"

    eps = par["epsilon"]
    if not eps:
        e["params.epsilon"] = "epsilon list is empty"
    elif any(not x > 0 for x in eps):
        e["params.epsilon"] = "every epsilon must be positive"
    n = MANIFOLD_DIMS.get(kind, 2)
    if par["m"] < 1 or par["m"] + n <= 2:
        e["params.m"] = "need m >= 1 and m + n > 2"
    elif par["p"] is not None and not (2 < par["p"] < critical_exponent(n)):
        e["params.p"] = f"p = {par['p']} is not subcritical: need 2 < p < {critical_exponent(n)}"
    if par["V"] <= 0:
        e["params.V"] = "fiber volume must be positive"

    if not 0 < sol["armijo_c"] < 1:
        e["solver.armijo_c"] = "must lie in (0, 1)"
    if not 0 < sol["shrink"] < 1:
        e["solver.shrink"] = "must lie in (0, 1)"
    for k in ("residual_tol", "defect_tol", "step0"):
        if not sol[k] > 0:
            e[f"solver.{k}"] = "must be positive"
    if sol["max_iters"] < 0:
        e["solver.max_iters"] = "must be nonnegative"
    if sol["starts"] is not None and sol["starts"] < 0:
        e["solver.starts"] = "must be nonnegative"
    if sol["workers"] < 1:
        e["solver.workers"] = "must be >= 1"

    if not 0.5 < con["eta"] < 1:
        e["concentration.eta"] = "eta must lie in (1/2, 1)"
    if con["r"] is not None and con["r"] <= 0:
        e["concentration.r"] = "must be positive"
    if con["split_l"] < 4 or con["split_l"] % 2:
        e["concentration.split_l"] = "must be an even integer >= 4"
    if con["test_points"] < 1:
        e["concentration.test_points"] = "must be >= 1"

    for k in ("rel_tol_l2", "energy_tol"):
        if not cfg.dedup[k] > 0:
            e[f"dedup.{k}"] = "must be positive"
    if not (cfg.ground_state["r_max"] > 0 and cfg.ground_state["step"] > 0):
        e["ground_state.step"] = "r_max and step must be positive"
    if e:
        raise ConfigInvalid(e)


def build_manifold(cfg: RunConfig):
    from .manifold import build_circle, build_flat_torus, build_sphere, load_mesh

    man = cfg.manifold
    kind = man["type"]
    if kind == "circle":
        M = build_circle(man["L"], man["N"], cat=man["cat"] or 2)
    elif kind == "torus":
        M = build_flat_torus(man["L1"], man["L2"], man["N1"], man["N2"], cat=man["cat"] or 3)
    elif kind == "sphere":
        M = build_sphere(man["level"], man["r0_factor"], cat=man["cat"] or 2)
    else:
        path = Path(man["path"])
        if not path.is_absolute() and cfg.source:
            path = Path(cfg.source).parent / path
        M = load_mesh(path, man["r0"], cat=man["cat"])
    return M
