import json
import subprocess
import sys
import time

import numpy as np
import pandas as pd
import pytest

from sepgen.cli import main
from sepgen.simulate import simulate_dataset


def _write_sm_csvs(tmp_path, n=500, m=800, seed=2):
    ds = simulate_dataset(np.random.default_rng(seed), n, m)
    exp_rows = ds.experiment_rows
    pop_rows = ds.population_rows
    exp = pd.DataFrame({name: ds.column(name)[exp_rows] for name in ds.covariate_names})
    exp["y"] = ds.y[exp_rows]
    exp["t"] = ds.t[exp_rows].astype(int)
    exp["g"] = [f"g{i // 5}" for i in range(n)]  # 5-row clusters
    pop = pd.DataFrame({name: ds.column(name)[pop_rows] for name in ds.covariate_names})
    exp_path = tmp_path / "exp.csv"
    pop_path = tmp_path / "pop.csv"
    exp.to_csv(exp_path, index=False)
    pop.to_csv(pop_path, index=False)
    return exp_path, pop_path


def _base_config(tmp_path, exp_path, pop_path, outdir, extra=""):
    text = f"""
# test configuration
experiment_csv = {exp_path}
population_csv = {pop_path}
outcome = y
treatment = t
cluster = g
covariates = X1,X2,X3,X4,X5,X6,X7,X8,X9
sampling_set = X4,X5
mode = marginal
estimators = ipw,naive
B = 16
seed = 5
p_treat = 0.5
out = {outdir}
{extra}
"""
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


def test_estimate_end_to_end(tmp_path, capsys):
    exp_path, pop_path = _write_sm_csvs(tmp_path)
    outdir = tmp_path / "out"
    cfg = _base_config(tmp_path, exp_path, pop_path, outdir)
    code = main(["estimate", "--config", str(cfg)])
    assert code == 0
    estimates = json.loads((outdir / "estimates.json").read_text())
    kinds = {row["estimator"] for row in estimates}
    assert "ipw" in kinds
    ipw_row = next(r for r in estimates if r["estimator"] == "ipw")
    assert abs(ipw_row["point"] - 5.0) < 2.5
    assert ipw_row["se"] is not None and ipw_row["se"] > 0
    bootstrap = json.loads((outdir / "bootstrap.json").read_text())
    assert bootstrap["B"] == 16
    assert bootstrap["full_sample_solution"]["status"] in ("feasible", "empty_set_sufficient")
    selection = (outdir / "selection.csv").read_text().splitlines()
    assert selection[0] == "variable,frequency"
    assert len(selection) == 10
    assert not list(outdir.glob("*.tmp"))
    out = capsys.readouterr().out
    assert "separating set" in out


def test_estimate_exact_mode(tmp_path):
    exp_path, pop_path = _write_sm_csvs(tmp_path, n=600, m=400, seed=6)
    outdir = tmp_path / "ex"
    cfg = _base_config(
        tmp_path, exp_path, pop_path, outdir,
        extra="mode = exact\nheterogeneity_set = X2,X3\nB = 8\nestimators = ipw,outcome_model",
    )
    assert main(["estimate", "--config", str(cfg)]) == 0
    boot = json.loads((outdir / "bootstrap.json").read_text())
    assert boot["full_sample_solution"]["mode"] == "exact"
    assert boot["full_sample_solution"]["status"] in ("feasible", "empty_set_sufficient")


def test_unknown_config_key_is_fatal(tmp_path):
    exp_path, pop_path = _write_sm_csvs(tmp_path, n=200, m=150)
    cfg = _base_config(tmp_path, exp_path, pop_path, tmp_path / "o", extra="tpyo = 1")
    assert main(["estimate", "--config", str(cfg)]) == 1


def test_exact_mode_requires_heterogeneity_set(tmp_path):
    exp_path, pop_path = _write_sm_csvs(tmp_path, n=200, m=150)
    cfg = _base_config(tmp_path, exp_path, pop_path, tmp_path / "o", extra="mode = exact")
    assert main(["estimate", "--config", str(cfg)]) == 1


def test_malformed_csv_exits_one(tmp_path):
    exp_path = tmp_path / "exp.csv"
    exp_path.write_text("y,t,X1\n1.0,0,bad_value\n2.0,1,0.3\n")
    pop_path = tmp_path / "pop.csv"
    pop_path.write_text("X1\n0.1\n")
    outdir = tmp_path / "o"
    cfg_path = tmp_path / "c.cfg"
    cfg_path.write_text(
        f"experiment_csv = {exp_path}\npopulation_csv = {pop_path}\noutcome = y\n"
        f"treatment = t\ncluster =\ncovariates = X1\nsampling_set = X1\nout = {outdir}\n"
    )
    assert main(["estimate", "--config", str(cfg_path)]) == 1
    assert not outdir.exists() or not list(outdir.iterdir())


def test_all_covariates_unmeasured_exits_three(tmp_path):
    exp_path, pop_path = _write_sm_csvs(tmp_path, n=300, m=200)
    outdir = tmp_path / "o3"
    cfg = _base_config(
        tmp_path, exp_path, pop_path, outdir,
        extra="unmeasured = X1,X2,X3,X4,X5,X6,X7,X8,X9\nB = 8",
    )
    assert main(["estimate", "--config", str(cfg)]) == 3
    assert (outdir / "bootstrap.json").exists()


def test_graph_command_on_noise(tmp_path):
    rng = np.random.default_rng(14)
    n, m = 1500, 200
    exp = pd.DataFrame(rng.standard_normal((n, 3)), columns=["a", "b", "c"])
    exp["y"] = rng.standard_normal(n)
    exp["t"] = (rng.random(n) < 0.5).astype(int)
    pop = pd.DataFrame(rng.standard_normal((m, 3)), columns=["a", "b", "c"])
    exp_path = tmp_path / "e.csv"
    pop_path = tmp_path / "p.csv"
    exp.to_csv(exp_path, index=False)
    pop.to_csv(pop_path, index=False)
    outdir = tmp_path / "g"
    code = main([
        "graph",
        "--experiment_csv", str(exp_path),
        "--population_csv", str(pop_path),
        "--outcome", "y", "--treatment", "t",
        "--covariates", "a,b,c",
        "--sampling_set", "a",
        "--out", str(outdir),
    ])
    assert code == 0
    payload = json.loads((outdir / "graph.json").read_text())
    assert payload["with_treatment"]["edges"] == []
    assert (outdir / "graph.dot").read_text().startswith("graph")


def test_graph_command_finds_structure(tmp_path):
    exp_path, pop_path = _write_sm_csvs(tmp_path, n=5000, m=100, seed=7)
    outdir = tmp_path / "g2"
    code = main([
        "graph",
        "--experiment_csv", str(exp_path),
        "--population_csv", str(pop_path),
        "--outcome", "y", "--treatment", "t", "--cluster", "g",
        "--covariates", "X1,X2,X3,X4,X5,X6,X7,X8,X9",
        "--sampling_set", "X4,X5",
        "--out", str(outdir),
    ])
    assert code == 0
    payload = json.loads((outdir / "graph.json").read_text())
    edges = {(e["from"], e["to"]) for e in payload["without_treatment"]["edges"]}
    assert ("X1", "X4") in edges or ("X4", "X1") in edges


def test_simulate_smoke_and_determinism(tmp_path):
    args = [
        "simulate", "--n", "100", "--m", "150", "--reps", "2", "--seed", "13",
        "--estimators", "ipw",
    ]
    t0 = time.time()
    assert main(args + ["--out", str(tmp_path / "s1")]) == 0
    assert time.time() - t0 < 30
    assert main(args + ["--out", str(tmp_path / "s2")]) == 0
    for name in ("sim_bias.csv", "sim_types.csv"):
        a = (tmp_path / "s1" / name).read_bytes()
        b = (tmp_path / "s2" / name).read_bytes()
        assert a == b
    header = (tmp_path / "s1" / "sim_bias.csv").read_text().splitlines()[0]
    assert header == "n,estimator,set_kind,bias,se,rmse,reps_used"


def test_simulate_rejects_bad_config(tmp_path):
    assert main(["simulate", "--n", "50", "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--reps", "zero", "--out", str(tmp_path)]) == 1


def test_help_lists_config_keys(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    for key in ("--sampling_set", "--heterogeneity_set", "--unmeasured", "--B",
                "--gamma", "--path_cap", "--seed", "--threads", "--out"):
        assert key in text


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "sepgen.cli", "simulate", "--n", "100", "--m", "120",
         "--reps", "1", "--out", "/tmp/sepgen_cli_smoke"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
