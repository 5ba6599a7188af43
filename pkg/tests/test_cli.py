import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from mldid import DgpConfig, load_panel, simulate, write_panel_csv
from mldid.cli import cli


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    runner = CliRunner()
    result = runner.invoke(cli, [
        "simulate", "--n", "250", "--periods", "4", "--tau", "x1",
        "--seed", "11", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    return out


def run_cli(args):
    return CliRunner().invoke(cli, args, catch_exceptions=False)


def test_simulate_outputs(sim_dir):
    for name in ("panel.csv", "oracle_cells.csv", "oracle_catt.csv",
                 "manifest.json"):
        assert (sim_dir / name).exists()
    panel = load_panel(sim_dir / "panel.csv")
    assert panel.n_units == 250
    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 11


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        res = run_cli(["simulate", "--n", "120", "--seed", "3",
                       "--out", str(out)])
        assert res.exit_code == 0
    assert (a / "panel.csv").read_bytes() == (b / "panel.csv").read_bytes()
    assert (a / "oracle_cells.csv").read_bytes() == (b / "oracle_cells.csv").read_bytes()


@pytest.fixture(scope="module")
def est_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("est")
    result = CliRunner().invoke(cli, [
        "estimate", "--input", str(sim_dir / "panel.csv"),
        "--out", str(out), "--seed", "5", "--fixed-l1", "0.02",
    ])
    assert result.exit_code == 0, result.output
    return out


def test_estimate_outputs(est_dir):
    for name in ("cells.csv", "dynamics.csv", "catt_panel.csv", "blp.csv",
                 "clan.csv", "dr_cells.csv", "event_study.svg",
                 "manifest.json"):
        assert (est_dir / name).exists(), name


def test_estimate_cells_csv_schema(est_dir):
    with open(est_dir / "cells.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"g", "t", "e", "att", "se", "n_treated",
                            "n_control"}
    keys = {(int(r["g"]), int(r["t"])) for r in rows}
    # 6 post + 3 placebo + 3 reference cells for T=4 with three cohorts.
    assert len(keys) == 12
    ref = [r for r in rows if int(r["t"]) == int(r["g"]) - 1]
    assert all(float(r["att"]) == 0.0 for r in ref)


def test_estimate_svg_has_reference_line(est_dir):
    svg = (est_dir / "event_study.svg").read_text()
    assert "<svg" in svg and "stroke-dasharray" in svg


def test_estimate_deterministic_byte_identical(sim_dir, tmp_path):
    outs = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        res = run_cli(["estimate", "--input", str(sim_dir / "panel.csv"),
                       "--out", str(out), "--seed", "5", "--fixed-l1", "0.02"])
        assert res.exit_code == 0
        outs.append(out)
    for fname in ("cells.csv", "dynamics.csv", "catt_panel.csv", "blp.csv",
                  "clan.csv", "dr_cells.csv"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()


def test_estimate_round_trip_matches_library(sim_dir, est_dir):
    from mldid import EstimatorConfig, LearnerConfig, run_mldid

    panel = load_panel(sim_dir / "panel.csv")
    run = run_mldid(panel, EstimatorConfig(
        seed=5, learners=LearnerConfig(fixed_l1=0.02)))
    with open(est_dir / "cells.csv", newline="") as fh:
        rows = {(int(r["g"]), int(r["t"])): float(r["att"])
                for r in csv.DictReader(fh)}
    for c in run.cells:
        assert rows[(c.g, c.t)] == pytest.approx(c.att, abs=1e-12)


def test_estimate_rejects_group_one(tmp_path):
    bad = tmp_path / "bad.csv"
    lines = ["id,time,group,y,x_1"]
    for unit, grp in (("a", 1), ("b", 0)):
        for t in range(1, 4):
            lines.append(f"{unit},{t},{grp},{t}.0,0.5")
    bad.write_text("\n".join(lines) + "\n")
    res = CliRunner().invoke(cli, ["estimate", "--input", str(bad),
                                   "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    assert "period 1" in res.output


def test_estimate_all_treated_panel_reports_skips(tmp_path):
    rng = np.random.default_rng(0)
    from _utils import make_panel

    panel = make_panel(np.repeat([2, 3, 4], 30), 4,
                       rng.standard_normal((90, 4)),
                       rng.standard_normal((90, 4, 2)))
    path = tmp_path / "allt.csv"
    write_panel_csv(panel, path)
    out = tmp_path / "out"
    res = run_cli(["estimate", "--input", str(path), "--out", str(out),
                   "--fixed-l1", "0.02"])
    assert res.exit_code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    skipped = {(s["g"], s["t"]) for s in manifest["skipped_cells"]}
    assert (2, 4) in skipped and (4, 4) in skipped


def test_benchmark_small_run(tmp_path):
    out = tmp_path / "bench"
    res = run_cli([
        "benchmark", "--n", "300", "--reps", "2", "--seed", "9",
        "--fixed-l1", "0.02", "--out", str(out),
    ])
    assert res.exit_code == 0, res.output
    for name in ("rmse.csv", "blp_avg.csv", "clan.csv", "manifest.json"):
        assert (out / name).exists(), name
    with open(out / "rmse.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert all(int(r["n_reps"]) == 2 for r in rows)
    # Identical rerun produces identical bytes.
    out2 = tmp_path / "bench2"
    res2 = run_cli([
        "benchmark", "--n", "300", "--reps", "2", "--seed", "9",
        "--fixed-l1", "0.02", "--out", str(out2),
    ])
    assert res2.exit_code == 0
    assert (out / "rmse.csv").read_bytes() == (out2 / "rmse.csv").read_bytes()


def test_heterogeneity_from_exported_tables(sim_dir, est_dir, tmp_path):
    out = tmp_path / "het"
    res = run_cli([
        "heterogeneity", "--input", str(sim_dir / "panel.csv"),
        "--catt", str(est_dir / "catt_panel.csv"), "--out", str(out),
    ])
    assert res.exit_code == 0, res.output
    with open(out / "blp.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    targets = {r["target"] for r in rows}
    assert targets == {"catt", "score"}
    assert (out / "clan.csv").exists()


def test_config_file_defaults(tmp_path, sim_dir):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nseed = 5\nfixed-l1 = 0.02\n")
    out = tmp_path / "cfg_out"
    res = run_cli(["--config", str(cfg), "estimate",
                   "--input", str(sim_dir / "panel.csv"), "--out", str(out)])
    assert res.exit_code == 0, res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 5
    assert manifest["config"]["learners"]["fixed_l1"] == 0.02


def test_env_var_override(tmp_path, sim_dir, monkeypatch):
    out = tmp_path / "env_out"
    runner = CliRunner()
    res = runner.invoke(
        cli,
        ["estimate", "--input", str(sim_dir / "panel.csv"), "--out", str(out)],
        env={"MLDID_ESTIMATE_SEED": "77", "MLDID_ESTIMATE_FIXED_L1": "0.02"},
        auto_envvar_prefix="MLDID",
    )
    assert res.exit_code == 0, res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 77
