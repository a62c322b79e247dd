import csv
import json
from pathlib import Path

import pytest
import yaml

from pomdp_approx.cli import main
from pomdp_approx.experiment import ExperimentConfig, config_dict, load_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TOY = str(CONFIGS / "finite_toy.yaml")


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def snapshot(out):
    return {p.name: p.read_bytes() for p in sorted(Path(out).iterdir())}


def test_bounds_noninformative(tmp_path, capsys):
    assert main(["bounds", str(CONFIGS / "noninformative.yaml"), "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.strip().endswith("manifest.json")
    q = {r["quantity"]: float(r["value"]) for r in rows(tmp_path / "stability.csv")}
    assert q["delta_O"] == 1.0
    assert q["bound_obs"] == 0.0
    assert q["alpha"] == 1.0 - q["delta_T"]


def test_sweep_table(tmp_path):
    assert main(["sweep", TOY, "--out", str(tmp_path), "--override", "evaluation.n_paths=300"]) == 0
    table = rows(tmp_path / "sweep.csv")
    assert [(int(r["M"]), int(r["N"])) for r in table] == [(2, 0), (2, 1), (4, 0), (4, 1)]
    assert [int(r["state_space"]) for r in table] == [2, 8, 4, 32]
    for r in table:
        assert float(r["gap"]) <= float(r["bound"]) + 3 * float(r["gap_stderr"])


@pytest.mark.parametrize("cmd", ["discretize", "solve-window", "learn-window"])
def test_repeatable_across_workers(tmp_path, cmd):
    args = [cmd, TOY, "--out", str(tmp_path), "--override", "learning.steps=5000"]
    assert main(args) == 0
    first = snapshot(tmp_path)
    assert main(args + ["--workers", "3"]) == 0
    assert snapshot(tmp_path) == first


def test_manifest_reproduces(tmp_path):
    out = tmp_path / "a"
    assert main(["solve-belief", TOY, "--out", str(out), "--seed", "42"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 42 and manifest["subcommand"] == "solve-belief"
    cfg_path = tmp_path / "from_manifest.yaml"
    cfg_path.write_text(yaml.safe_dump(manifest["config"]))
    before = snapshot(out)
    assert main(["solve-belief", str(cfg_path)]) == 0
    assert snapshot(out) == before
    for art in manifest["artifacts"].values():
        assert (out / art["file"]).exists()


def test_config_round_trip(tmp_path):
    cfg = load_config(TOY, ["window.N=2", "sweep.M=[2, 3]"])
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(config_dict(cfg)))
    again = load_config(path)
    assert again == cfg and cfg.window.N == 2 and cfg.sweep.M == [2, 3]
    assert ExperimentConfig.model_validate(config_dict(again)) == cfg


def _write(tmp_path, tree):
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(tree))
    return str(p)


def test_invalid_config_exit_1(tmp_path, capsys):
    base = yaml.safe_load(Path(TOY).read_text())
    assert main(["discretize", _write(tmp_path, dict(base, quantizer={"bogus": 1}))]) == 1
    assert "quantizer.bogus" in capsys.readouterr().err
    no_seed = {k: v for k, v in base.items() if k != "seed"}
    assert main(["discretize", _write(tmp_path, no_seed)]) == 1
    assert "seed" in capsys.readouterr().err
    assert main(["discretize", _write(tmp_path, dict(base, model={"name": "nope"}))]) == 1
    assert "model.name" in capsys.readouterr().err
    assert main(["discretize", str(tmp_path / "missing.yaml")]) == 1


def test_budget_exit_2(tmp_path, capsys):
    code = main(["solve-window", TOY, "--out", str(tmp_path), "--override", "window.N=3",
                 "--override", "window.budget=100"])
    assert code == 2
    assert capsys.readouterr().err.startswith("window:")
