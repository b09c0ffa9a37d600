import csv
import io
import json
from pathlib import Path

import pytest

from eigenmap_lab import cli
from eigenmap_lab import verify as vf

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _report(out):
    return json.loads((Path(out) / "report.json").read_text())


# ------------------------------------------------------------------ config validation
def test_invalid_config_field_messages(tmp_path, capsys):
    p = _write(tmp_path, {"domain": "cube", "h": -1, "lambdas": [1.0], "boundary": {"generator": "random_loop"}, "foo": 1})
    with pytest.raises(cli.ConfigError) as exc:
        cli.load_config(p)
    msg = str(exc.value)
    for loc in ("domain", "h", "foo", "boundary"):
        assert loc in msg
    assert cli.main(["solve", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "invalid configuration" in capsys.readouterr().err


@pytest.mark.parametrize("cfg", [
    {"lambdas": [1.0, 1.0], "sigma": [1.0, 1.0]},
    {"lambdas": [1.0]},
    {"lambdas": [1.0, -1.0]},
    {"domain": "half_disk", "lambdas": [1.0, 1.0]},
    {"lambdas": [1.0, 1.0], "boundary": {"generator": "constant"}, "solver": {"tol": 0}},
    {"sweep": {"ms": [1]}},
])
def test_invalid_configs_rejected(tmp_path, cfg):
    with pytest.raises(cli.ConfigError):
        cli.load_config(_write(tmp_path, cfg))


def test_bad_json_and_missing_files(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert cli.main(["mesh", "--config", str(p)]) == cli.EXIT_CONFIG
    assert cli.main(["mesh", "--config", str(tmp_path / "absent.json")]) == cli.EXIT_CONFIG
    q = _write(tmp_path, {"h": 0.2, "lambdas": [1.0, 1.0], "boundary": {"generator": "constant"},
                          "mesh_file": str(tmp_path / "nope.txt")})
    assert cli.main(["solve", "--config", str(q), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_bad_generator_params(tmp_path):
    q = _write(tmp_path, {"h": 0.2, "lambdas": [1.0, 1.0], "boundary": {"generator": "constant", "params": {"x": 1}}})
    assert cli.main(["solve", "--config", str(q), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


# ------------------------------------------------------------------ subcommands
def test_verify_constant_map_all_pass(tmp_path):
    out = tmp_path / "v"
    assert cli.main(["verify", "--config", str(CONFIGS / "constant.json"), "--out", str(out)]) == cli.EXIT_OK
    rep = _report(out)
    assert rep["passed"]
    assert all(e["pass"] for e in rep["entries"].values())


def test_solve_circle_closed_form(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["solve", "--config", str(CONFIGS / "circle_eigenmap.json"), "--out", str(out)]) == cli.EXIT_OK
    rep = _report(out)
    assert rep["closed_form"]["pass"] and rep["closed_form"]["l2_error"] <= 1e-3
    assert rep["converged"] and (out / "phi.txt").exists() and (out / "mesh.txt").exists()


def test_mesh_from_file_matches(tmp_path):
    out = tmp_path / "m"
    base = {"h": 0.2, "lambdas": [1.0, 1.0], "boundary": {"generator": "circle_eigenmap"}}
    assert cli.main(["mesh", "--config", str(_write(tmp_path, base)), "--out", str(out)]) == cli.EXIT_OK
    cfg = dict(base, mesh_file=str(out / "mesh.txt"))
    assert cli.main(["solve", "--config", str(_write(tmp_path, cfg, "b.json")), "--out", str(tmp_path / "s")]) == cli.EXIT_OK
    bad = dict(cfg, domain="half_disk", sigma=[1.0, 1.0], lambdas=None)
    assert cli.main(["solve", "--config", str(_write(tmp_path, bad, "c.json")), "--out", str(tmp_path / "t")]) == cli.EXIT_CONFIG


def test_nonconvergence_exit_status(tmp_path):
    cfg = {"h": 0.2, "lambdas": [1.0, 1.0, 4.0], "boundary": {"generator": "random_loop", "seed": 1},
           "solver": {"max_iter": 1}}
    out = tmp_path / "n"
    assert cli.main(["solve", "--config", str(_write(tmp_path, cfg)), "--out", str(out)]) == cli.EXIT_NONCONVERGED
    assert not _report(out)["converged"]


def test_gauge_and_spectrum(tmp_path):
    cfg = {"h": 0.1, "lambdas": [1.0, 1.0, 4.0], "boundary": {"generator": "symmetric_loop", "params": {"amplitude": 0.02}}}
    p = _write(tmp_path, cfg)
    assert cli.main(["gauge", "--config", str(p), "--out", str(tmp_path / "g")]) == cli.EXIT_OK
    for f in ("frame_P.txt", "potential_xi.txt", "riviere_A.txt", "riviere_B.txt", "dbar_A.txt", "manifest.txt"):
        assert (tmp_path / "g" / f).exists()
    assert cli.main(["spectrum", "--config", str(p), "--out", str(tmp_path / "sp")]) == cli.EXIT_OK
    ws = _report(tmp_path / "sp")["weighted_spectrum"]
    assert ws is not None and len(ws) == 6


def test_manifest_deterministic(tmp_path):
    for d in ("a", "b"):
        assert cli.main(["verify", "--config", str(CONFIGS / "constant.json"), "--out", str(tmp_path / d)]) == cli.EXIT_OK
    ma = (tmp_path / "a" / "manifest.txt").read_text()
    assert ma == (tmp_path / "b" / "manifest.txt").read_text()
    listed = {line.split()[0] for line in ma.splitlines()}
    assert "report.json" in listed and "report.csv" in listed


def test_small_sweep_csv(tmp_path):
    cfg = {"h": 0.2, "sweep": {"ms": [3, 4], "seeds": [1], "steklov": True, "padding": True}}
    out = tmp_path / "sw"
    code = cli.main(["sweep", "--config", str(_write(tmp_path, cfg)), "--out", str(out)])
    assert code in (cli.EXIT_OK, cli.EXIT_CHECK)
    rows = list(csv.DictReader(io.StringIO((out / "report.csv").read_text())))
    keys = {r["key"] for r in rows if r["key"] != "padding_invariance"}
    for k in keys:
        assert sorted(int(r["m"]) for r in rows if r["key"] == k) == [3, 4]
        assert k.split("[")[0] in vf.SWEEP_ANCHORS
    assert any(r["key"] == "padding_invariance" and r["pass"] == "1" for r in rows)
    assert len(list((out / "runs").glob("*.csv"))) == 4
