import json
import math

import numpy as np
import pytest

from yamabe_lab.cli import main
from yamabe_lab.config import build_manifold, defaults, load_config, parse_config
from yamabe_lab.exceptions import BadFormat, ConfigInvalid
from yamabe_lab.manifold import build_circle
from yamabe_lab.report import SWEEP_HEADER, dumps, load_field, run, save_field

SMALL_INI = """
[manifold]
type = circle
N = 512

[params]
m = 3
epsilon = 0.3, 0.2

[solver]
starts = 4

[concentration]
test_points = 4
"""


def _errors(text):
    with pytest.raises(ConfigInvalid) as info:
        parse_config(text)
    return info.value.errors


def test_defaults_parse():
    cfg = parse_config("")
    assert cfg.as_dict() == defaults().as_dict()
    assert cfg.epsilons == [0.2, 0.1, 0.05]
    assert cfg.manifold["L"] == pytest.approx(2 * math.pi)


def test_shipped_configs_load():
    for name in ("circle", "torus", "sphere"):
        cfg = load_config(f"configs/{name}.ini")
        assert build_manifold(cfg).kind == name


def test_unknown_key_and_section():
    errs = _errors("[params]\nmu = 3\n[extra]\nx = 1\n")
    assert errs == {"params.mu": "unknown key", "extra": "unknown section"}


@pytest.mark.parametrize("text,key", [
    ("[params]\nepsilon =\n", "params.epsilon"),
    ("[params]\nepsilon = 0.1, -0.2\n", "params.epsilon"),
    ("[concentration]\neta = 0.4\n", "concentration.eta"),
    ("[params]\np = 2.0\n", "params.p"),
    ("[params]\np = 6.5\n[manifold]\ntype = circle\n", None),
    ("[manifold]\ntype = mesh\n", "manifold.path"),
    ("[manifold]\nr0 = 1.0\n", "manifold.r0"),
    ("[concentration]\nsplit_l = 7\n", "concentration.split_l"),
    ("[solver]\nmax_iters = many\n", "solver.max_iters"),
])
def test_invalid_values(text, key):
    if key is None:
        # n = 1 has no upper exponent, so any p > 2 is subcritical
        assert parse_config(text).params["p"] == 6.5
    else:
        assert key in _errors(text)


def test_missing_file():
    with pytest.raises(ConfigInvalid):
        load_config("does/not/exist.ini")


def test_config_hash_tracks_values():
    a, b = parse_config(""), parse_config("[params]\nm = 4\n")
    assert a.hash == parse_config("").hash and a.hash != b.hash


def test_dumps_deterministic():
    obj = {"b": [1.0 / 3, 2], "a": {"y": np.float64(0.1), "x": np.arange(3)}, "c": float("nan"), "d": True}
    text = dumps(obj)
    assert text == dumps(json.loads(dumps(obj)) | {"c": float("nan")})
    assert '"a"' in text.split("\n")[1]
    assert "0.33333333333333331" in text and "0.10000000000000001" in text
    back = json.loads(text)
    assert back["b"][0] == 1.0 / 3 and back["c"] is None


def test_field_roundtrip(tmp_path, rng):
    M = build_circle(2 * math.pi, 64)
    u = rng.normal(size=64)
    save_field(tmp_path / "f.json", u, M, epsilon=0.3)
    v, M2, meta = load_field(tmp_path / "f.json")
    assert np.array_equal(u, v) and M2.hash == M.hash and meta["epsilon"] == 0.3
    with pytest.raises(BadFormat):
        load_field(tmp_path / "f.json", build_circle(2 * math.pi, 65))
    data = json.loads((tmp_path / "f.json").read_text())
    data["manifold_hash"] = "0" * 16
    (tmp_path / "g.json").write_text(json.dumps(data))
    with pytest.raises(BadFormat):
        load_field(tmp_path / "g.json")
    (tmp_path / "h.json").write_text("not json")
    with pytest.raises(BadFormat):
        load_field(tmp_path / "h.json")


@pytest.fixture(scope="module")
def small_cfg():
    return parse_config(SMALL_INI)


def test_run_deterministic(small_cfg, tmp_path):
    r1 = run(small_cfg, tmp_path / "a")
    r2 = run(small_cfg, tmp_path / "b")
    for r in (r1, r2):
        r.pop("timings")
    assert dumps(r1) == dumps(r2)
    assert (tmp_path / "a" / "run.json").exists()
    lines = (tmp_path / "a" / "sweep.csv").read_text().splitlines()
    assert lines[0].split(",") == SWEEP_HEADER and len(lines) == 3
    for b in r1["runs"]:
        assert not b["partial"] and b["m_eps"] < math.pi / (2 * b["epsilon"])


def _write_cfg(tmp_path, text=SMALL_INI):
    p = tmp_path / "cfg.ini"
    p.write_text(text)
    return str(p)


def test_cli_ground_state(capsys):
    assert main(["ground-state", "--n", "1", "--m", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["q"] == 4.0 and out["u0"] == pytest.approx(math.sqrt(2), abs=1e-6)
    assert out["mE"] == pytest.approx(4 / 3, rel=1e-5)


def test_cli_psi(capsys):
    assert main(["psi", "--delta", "0.1,0.5", "--grid", "100"]) == 0
    rows = json.loads(capsys.readouterr().out)["psi"]
    assert [r["delta"] for r in rows] == [0.1, 0.5]
    assert all(r["grid"] >= r["closed_form"] - 1e-12 for r in rows)


def test_cli_bump_solve_concentrate(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    bump = tmp_path / "bump.json"
    assert main(["bump", "--config", cfg, "--x", "10", "--out", str(bump)]) == 0
    capsys.readouterr()
    assert main(["concentrate", "--config", cfg, "--input", str(bump), "--out", str(tmp_path / "c.json")]) == 0
    rep = json.loads((tmp_path / "c.json").read_text())
    assert rep["center"] == 10 and rep["max"] > 0.9 and "values" not in rep
    field = tmp_path / "field.json"
    assert main(["solve", "--config", cfg, "--start", "bump:10", "--out", str(field)]) == 0
    meta = json.loads(capsys.readouterr().out)
    assert meta["converged"] and meta["residual"] < 1e-8
    u, M, data = load_field(field)
    assert data["energy"] == meta["energy"] and M.n_vertices == 512
    assert main(["solve", "--config", cfg, "--start", "constant", "--out", str(field)]) == 0
    assert json.loads(capsys.readouterr().out)["energy"] == pytest.approx(math.pi / (2 * 0.2), rel=1e-12)


def test_cli_sweep(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", cfg, "--eps", "0.3", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_HEADER) and lines[1].startswith("0.29999999999999999,")


def test_cli_verify(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert main(["verify", "--config", cfg]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["passed"] and not res["failures"]


def test_cli_bad_config(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, "[concentration]\neta = 0.4\n")
    assert main(["multistart", "--config", cfg]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ConfigInvalid" and "concentration.eta" in err["errors"]


def test_cli_library_error(tmp_path, capsys):
    assert main(["concentrate", "--input", str(tmp_path / "missing.json")]) == 3
    assert "BadFormat" in capsys.readouterr().err
