import csv
import json
import subprocess
import sys

import pytest
import yaml

from pcrlab.cli import main


def run(tmp_path, command, config=None, *extra):
    out = tmp_path / "out"
    out.mkdir(exist_ok=True)
    argv = [command, "--out", str(out), *extra]
    if config is not None:
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(config) if isinstance(config, dict) else config)
        argv += ["--config", str(path)]
    return main(argv), out


def load_summary(out):
    return json.loads((out / "summary.json").read_text())


def test_identities_default(tmp_path, capsys):
    code, out = run(tmp_path, "identities")
    assert code == 0
    summary = load_summary(out)
    assert summary["instances"] == 100 and summary["passed"]
    assert summary["max_residual"] <= 1e-10
    assert "max residual" in capsys.readouterr().out
    rows = list(csv.DictReader(open(out / "residuals.csv")))
    assert len(rows) == 100


def test_identities_d_above_p(tmp_path, capsys):
    code, _ = run(tmp_path, "identities", {"study": {"kind": "polynomial", "p": 10, "d": 12, "replicates": 2}})
    assert code == 2
    assert "d=12" in capsys.readouterr().err


def test_identities_zero_tolerance(tmp_path):
    code, out = run(tmp_path, "identities", {"identities": {"tolerance": 0.0}, "grid": {"instances": 10}})
    assert code == 1
    assert not load_summary(out)["passed"]


def test_identities_over_study(tmp_path):
    code, out = run(tmp_path, "identities", {"study": {"kind": "exponential", "alpha": 1.0, "p": 20, "d": 4, "n_grid": [80], "replicates": 5}})
    assert code == 0
    assert load_summary(out)["instances"] == 5


def test_inequalities_default_grid(tmp_path):
    code, out = run(tmp_path, "inequalities")
    assert code == 0
    summary = load_summary(out)
    assert summary["total_violations"] == 0
    assert summary["evaluated_counts"]["bias_gapweighted"] == 100


def test_inequalities_malformed_grouping(tmp_path):
    code, _ = run(tmp_path, "inequalities", {"study": {"grouping_c2": 0.5, "replicates": 2}})
    assert code == 2


def test_mc_isotropic(tmp_path):
    cfg = {"study": {"kind": "isotropic", "p": 20, "n_grid": [50], "d": 5, "replicates": 2000}}
    code, out = run(tmp_path, "mc", cfg)
    assert code == 0
    ref = load_summary(out)["isotropic_reference"][0]
    assert ref["expected_bias"] == 0.75
    assert abs(ref["mean_bias"] - 0.75) <= 3 * ref["se"]
    rows = list(csv.DictReader(open(out / "replicates.csv")))
    assert len(rows) == 2000 and "bias" in rows[0]


def test_mc_single_replicate_flags(tmp_path, capsys):
    code, out = run(tmp_path, "mc", {"study": {"kind": "isotropic", "p": 20, "n_grid": [50], "d": 5, "replicates": 1}})
    assert code == 0
    per_n = load_summary(out)["per_n"][0]
    assert per_n["se_defined"] is False
    assert per_n["std_errors"]["bias"] is None
    assert "standard errors undefined" in capsys.readouterr().out


def test_missing_output_dir(tmp_path):
    assert main(["mc", "--out", str(tmp_path / "nope")]) == 2


@pytest.mark.parametrize(
    "text",
    ["study: [1, 2\n", "bogus: {}\n", "study: {colour: red}\n", "rates: {speed: 3}\n", "- a\n- b\n"],
)
def test_bad_configs_exit_2(tmp_path, text):
    assert run(tmp_path, "mc", text)[0] == 2


def test_usage_errors_exit_2(tmp_path):
    assert main(["frobnicate"]) == 2
    assert main(["mc", "--threads", "x"]) == 2
    assert main(["mc", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 2


def test_rates_two_point_grid(tmp_path, capsys):
    cfg = {
        "study": {"kind": "polynomial", "alpha": 2.0, "p": 40, "n_grid": [100, 400], "d_rule": "poly", "replicates": 30},
        "rates": {"slope_tol": 1.0, "oracle_slope_tol": 1.0, "pilot_replicates": 10, "pilot_margin": 10.0},
    }
    code, out = run(tmp_path, "rates", cfg)
    assert code == 0
    summary = load_summary(out)
    assert summary["slope"]["ci_defined"] is False
    assert summary["oracle"]["ceiling"]["margin"] == 10.0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["pilot_ceiling"]["ceiling"] == summary["oracle"]["ceiling"]["ceiling"]
    assert "CI flagged" in capsys.readouterr().out
    rows = list(csv.DictReader(open(out / "slopes.csv")))
    assert [int(r["n"]) for r in rows] == [100, 400]


def test_rates_slope_failure_exit_1(tmp_path):
    cfg = {
        "study": {"kind": "polynomial", "alpha": 2.0, "p": 40, "n_grid": [100, 200, 400, 800], "d_rule": "poly", "replicates": 20},
        "rates": {"slope_target": 1.0, "slope_tol": 0.1, "oracle": False, "bootstrap": 20},
    }
    assert run(tmp_path, "rates", cfg)[0] == 1


def test_grouping_default(tmp_path):
    code, out = run(tmp_path, "grouping")
    assert code == 0
    sweep = load_summary(out)["sweep"]
    assert sweep["top_decade_variation"] < 0.2 and sweep["r_max"] == 10_000


def test_grouping_isotropic_flags_everything(tmp_path):
    code, out = run(tmp_path, "grouping", {"grouping": {"kind": "isotropic", "p": 30, "d": 10, "sweep": {"r_max": 200}}})
    assert code == 0
    s = load_summary(out)
    assert s["gaps_defined"] == 0 and s["gaps_flagged"] == 29
    assert s["gap_index_below"] == {"defined": False}
    assert s["gap_index_above"] == {"defined": False}
    assert s["grouping"]["blocks"] == [[1, 10]]


def test_grouping_exponential_rel_gap_constant(tmp_path):
    code, out = run(tmp_path, "grouping", {"grouping": {"kind": "exponential", "alpha": 1.0, "p": 40, "d": 8, "sweep": {"r_max": 200}}})
    assert code == 0
    rel = [float(r["rel_gap"]) for r in csv.DictReader(open(out / "gaps.csv"))]
    assert max(rel) - min(rel) <= 1e-12


def test_grouping_bad_parameters(tmp_path):
    assert run(tmp_path, "grouping", {"grouping": {"c2": 0.5}})[0] == 2
    assert run(tmp_path, "grouping", {"grouping": {"d": 500}})[0] == 2
    assert run(tmp_path, "grouping", {"grouping": {"kind": "polynomial", "alpha": 0.5}})[0] == 2


@pytest.mark.parametrize(
    "command,config",
    [
        ("identities", {"grid": {"instances": 20}}),
        ("inequalities", {"grid": {"instances": 20}}),
        ("mc", {"study": {"kind": "polynomial", "p": 20, "n_grid": [60], "d": 4, "replicates": 10}}),
        ("grouping", {"grouping": {"sweep": {"r_max": 300}}}),
    ],
)
def test_reports_reproduce_byte_for_byte(tmp_path, command, config):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(config))
    assert main([command, "--config", str(cfg), "--out", str(a), "--threads", "2"]) == 0
    assert main([command, "--config", str(cfg), "--out", str(b), "--threads", "1"]) == 0
    manifest = json.loads((a / "manifest.json").read_text())
    names = sorted(p.rsplit("/", 1)[-1] for p in manifest["outputs"])
    assert names == sorted(p.name for p in a.iterdir() if p.name != "manifest.json")
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_override(tmp_path):
    cfg = {"study": {"kind": "polynomial", "p": 20, "n_grid": [60], "d": 4, "replicates": 3}}
    code, out = run(tmp_path, "mc", cfg, "--seed", "5")
    assert code == 0
    assert load_summary(out)["config"]["master_seed"] == 5
    assert json.loads((out / "manifest.json").read_text())["master_seed"] == 5


def test_tables_use_17_significant_digits(tmp_path):
    code, out = run(tmp_path, "mc", {"study": {"kind": "polynomial", "p": 20, "n_grid": [60], "d": 4, "replicates": 2}})
    row = next(csv.DictReader(open(out / "replicates.csv")))
    assert row["bias"] == "%.17g" % float(row["bias"])


def test_console_script():
    out = subprocess.run([sys.executable, "-m", "pcrlab.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout
