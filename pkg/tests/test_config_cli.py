from __future__ import annotations

import csv
import io
import json
import os
import shutil

import pytest
import yaml

from kinqsd import cli, kernels
from kinqsd.config import ConfigError, KINDS, dump_config, load_config, parse_config

BASE = {"kind": "simulate", "model": {"name": "free-transport"},
        "domain": {"type": "interval", "left": -1.0, "right": 1.0},
        "integrator": {"dt": 0.001, "max_time": 2.0},
        "params": {"start": {"q": [0.5], "p": [1.0]}}}


def _write(tmp_path, data, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_shipped_configs_validate(configs_dir):
    kinds = set()
    for name in sorted(os.listdir(configs_dir)):
        cfg = load_config(os.path.join(configs_dir, name))
        kinds.add(cfg.kind)
    assert kinds == set(KINDS)


def test_round_trip_through_yaml():
    cfg = parse_config(BASE)
    again = parse_config(yaml.safe_load(dump_config(cfg)))
    assert again.resolved() == cfg.resolved()
    assert again.integrator.crossing == "substep-interpolation"


def test_unknown_keys_and_bad_values_are_named():
    bad = json.loads(json.dumps(BASE))
    bad["integrator"]["dt"] = -1.0
    bad["foo"] = 1
    bad["params"]["colour"] = "red"
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    keys = exc.value.keys
    assert "integrator.dt" in keys and "foo" in keys and "params.colour" in keys


def test_kind_specific_parameter_errors():
    bad = dict(BASE, kind="fleming-viot",
               params={"initial": {"q": [0.0], "p": [0.0]}, "n_particles": 1})
    with pytest.raises(ConfigError) as exc:
        parse_config(bad)
    assert "params.n_particles" in exc.value.keys
    with pytest.raises(ConfigError):
        parse_config(dict(BASE, model={"name": "nope"}))
    with pytest.raises(ConfigError):
        parse_config(dict(BASE, model={"name": "free-transport",
                                       "expression": {"drift": ["0"], "diffusion": [["1"]]}}))


def test_catalog_lists_models_with_parameters():
    cat = cli.catalog()
    for name in ("harmonic-langevin", "double-well-langevin", "nonconservative-langevin"):
        assert name in cat["models"] and cat["models"][name]["description"]
    nc = cat["models"]["nonconservative-langevin"]
    assert "U(q)" in nc["description"] and "ell(q)" in nc["description"]
    assert {"alpha_drift", "beta_drift"} <= set(nc["params"])
    assert set(cat["experiments"]) == set(KINDS)
    buf = io.StringIO()
    cli._print_catalog(False, buf)
    assert "harmonic-langevin" in buf.getvalue()


def test_simulate_writes_exit_csv(tmp_path):
    out = tmp_path / "run"
    status = cli.run(_write(tmp_path, BASE), output_dir=str(out), stream=io.StringIO())
    assert status == 0
    rows = list(csv.DictReader(open(out / "exits.csv")))
    assert len(rows) == 1 and rows[0]["classification"] == "outgoing"
    assert float(rows[0]["exit_time"]) == pytest.approx(0.5, abs=1e-12)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outcome"] == "pass" and "exits.csv" in manifest["artifacts"]
    assert "exit time" in (out / "summary.txt").read_text()


def test_lyapunov_verify_passes(tmp_path, configs_dir):
    out = tmp_path / "ly"
    status = cli.run(os.path.join(configs_dir, "lyapunov_hamiltonian.yaml"),
                     output_dir=str(out), stream=io.StringIO())
    assert status == 0
    rep = json.loads((out / "lyapunov.json").read_text())
    assert rep["passed"] and len(rep["checks"]) == 2


def test_exit_codes(tmp_path):
    # 1: invalid config
    bad = dict(BASE, integrator={"dt": -1})
    assert cli.run(_write(tmp_path, bad), output_dir=str(tmp_path / "a"),
                   stream=io.StringIO()) == 1
    # 1: start outside the domain is a runtime error
    outside = dict(BASE, params={"start": {"q": [3.0], "p": [0.0]}})
    out = tmp_path / "b"
    assert cli.run(_write(tmp_path, outside, "b.yaml"), output_dir=str(out),
                   stream=io.StringIO()) == 1
    assert json.loads((out / "error.json").read_text())["stage"] == "simulate"
    # 2: construction failure (growth condition violated)
    ham = dict(BASE, kind="lyapunov-verify", model={"name": "harmonic-langevin"},
               domain={"type": "full", "dim": 1},
               params={"construction": "hamiltonian", "alpha_drift": 0.9, "beta_drift": 0.0})
    assert cli.run(_write(tmp_path, ham, "c.yaml"), output_dir=str(tmp_path / "c"),
                   stream=io.StringIO()) == 2
    # 3: inconclusive, no exits to test
    ex = dict(BASE, kind="exit-law", domain={"type": "interval", "left": -1.0, "right": 1.0},
              params={"source": {"q": [0.0], "p": [0.0]}, "n_samples": 1000})
    out = tmp_path / "d"
    assert cli.run(_write(tmp_path, ex, "d.yaml"), output_dir=str(out),
                   stream=io.StringIO()) == 3
    assert json.loads((out / "error.json").read_text())["survival_fraction"] == 1.0


def test_main_entry_point(tmp_path, capsys):
    assert cli.main(["catalog", "--json"]) == 0
    assert "models" in json.loads(capsys.readouterr().out)
    assert cli.main(["run", _write(tmp_path, BASE), "--output-dir", str(tmp_path / "m"),
                     "--seed", "3"]) == 0
    manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 3


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="threads only matter for compiled kernels")
def test_manifest_rerun_is_bit_identical_across_threads(tmp_path):
    cfg = dict(BASE, model={"name": "harmonic-langevin"},
               domain={"type": "interval", "left": -1.0, "right": 1.0},
               integrator={"dt": 0.01, "max_time": 3.0}, seed=5,
               params={"start": {"q": [0.0], "p": [0.0]}, "n_samples": 500,
                       "survival_times": [0.5, 1.0, 2.0]})
    first = tmp_path / "first"
    cli.run(_write(tmp_path, cfg), output_dir=str(first), threads=1, stream=io.StringIO())
    again = tmp_path / "again"
    shutil.copy(first / "manifest.json", tmp_path / "manifest.json")
    cli.run(str(tmp_path / "manifest.json"), output_dir=str(again), threads=4,
            stream=io.StringIO())
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((again / "manifest.json").read_text())
    assert m1["artifacts"] == m2["artifacts"] and m1["config"] == m2["config"]
    assert m2["threads"] == 4
