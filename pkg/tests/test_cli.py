import json
import os

import numpy as np
import pytest

from paic import ConjugateNormalModel, ObservationSet, sample_conjugate_normal
from paic.cli import main
from paic.fileio import write_draws_csv

FAST_LOGIT_FLAGS = [
    "--chains", "2", "--samples", "1200", "--warmup", "600",
    "--fold-samples", "500", "--fold-warmup", "300",
]


def write_normal_data(path, n=30, seed=0):
    y = np.random.default_rng(seed).normal(0, 1, n)
    with open(path, "w") as f:
        f.write("y\n" + "\n".join(repr(float(v)) for v in y) + "\n")
    return y


def test_compute_normal_with_supplied_draws(tmp_path):
    data_path = tmp_path / "y.csv"
    write_normal_data(data_path)
    m = ConjugateNormalModel(1.0, 0.0, 1e4)
    data = ObservationSet(np.loadtxt(data_path, skiprows=1))
    draws = sample_conjugate_normal(m, data, 5000, seed=1)
    draws_path = tmp_path / "draws.csv"
    write_draws_csv(str(draws_path), draws)
    out = tmp_path / "report.json"
    code = main([
        "compute", "--model", "normal", "--data", str(data_path),
        "--draws", str(draws_path),
        "--criteria", "paic,bpic,waic2,loo,dic",
        "--seed", "7", "--out", str(out),
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert len(payload["reports"]) == 5
    names = {r["criterion"] for r in payload["reports"]}
    assert names == {"paic", "bpic", "waic2", "loo", "dic"}
    for r in payload["reports"]:
        assert r["seed"] == 7
        assert r["value"] == pytest.approx(-2 * r["fit"] + 2 * r["penalty"])
    assert payload["provenance"]["seed"] == 7
    assert "config_hash" in payload["provenance"]
    assert "tool_version" in payload["provenance"]


def test_compute_flat_prior_bpic_partial_success(tmp_path):
    data_path = tmp_path / "y.csv"
    write_normal_data(data_path)
    out = tmp_path / "report.json"
    code = main([
        "compute", "--model", "normal-flat", "--data", str(data_path),
        "--criteria", "paic,bpic", "--seed", "1", "--out", str(out),
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    entries = {r["criterion"]: r for r in payload["reports"]}
    assert "error" in entries["bpic"]
    assert "degenerate prior" in entries["bpic"]["error"]
    assert "error" not in entries["paic"]


def test_compute_malformed_csv_exit_2(tmp_path, capsys):
    data_path = tmp_path / "y.csv"
    data_path.write_text("y\n1.0\nbroken\n")
    code = main([
        "compute", "--model", "normal", "--data", str(data_path),
        "--seed", "1", "--out", str(tmp_path / "r.json"),
    ])
    assert code == 2
    assert ":3" in capsys.readouterr().err


def test_compute_draw_dimension_mismatch_exit_2(tmp_path):
    data_path = tmp_path / "y.csv"
    write_normal_data(data_path)
    draws_path = tmp_path / "draws.csv"
    draws_path.write_text("theta_1,theta_2,chain\n0.1,0.2,0\n0.3,0.4,0\n")
    code = main([
        "compute", "--model", "normal", "--data", str(data_path),
        "--draws", str(draws_path), "--seed", "1",
        "--out", str(tmp_path / "r.json"),
    ])
    assert code == 2


def test_compute_sampler_gate_failure_exit_3(tmp_path, capsys):
    gen = np.random.default_rng(6)
    y = gen.binomial(40, 0.5, size=8)
    data_path = tmp_path / "counts.csv"
    data_path.write_text("y,n_trials\n" + "\n".join(f"{v},40" for v in y) + "\n")
    code = main([
        "compute", "--model", "hier-logit", "--data", str(data_path),
        "--criteria", "waic2", "--seed", "2",
        "--chains", "2", "--samples", "60", "--warmup", "30",
        "--out", str(tmp_path / "r.json"),
    ])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_compute_unknown_criterion_exit_2(tmp_path):
    data_path = tmp_path / "y.csv"
    write_normal_data(data_path)
    code = main([
        "compute", "--model", "normal", "--data", str(data_path),
        "--criteria", "paic,nonsense", "--seed", "1",
        "--out", str(tmp_path / "r.json"),
    ])
    assert code == 2


def test_unknown_flag_rejected(tmp_path):
    code = main(["compute", "--model", "normal", "--data", "x.csv",
                 "--seed", "1", "--out", "r.json", "--bogus"])
    assert code == 2


def test_compute_csv_format(tmp_path):
    data_path = tmp_path / "y.csv"
    write_normal_data(data_path)
    out = tmp_path / "report.csv"
    code = main([
        "compute", "--model", "normal", "--data", str(data_path),
        "--criteria", "paic,waic2", "--seed", "3",
        "--out", str(out), "--format", "csv",
    ])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[1].split(",")[0] == "criterion"
    assert len(lines) == 4  # provenance + header + 2 criteria


def test_compute_hier_logit_binomial_data(tmp_path):
    gen = np.random.default_rng(5)
    y = gen.binomial(40, 0.5, size=8)
    data_path = tmp_path / "counts.csv"
    data_path.write_text("y,n_trials\n" + "\n".join(f"{v},40" for v in y) + "\n")
    out = tmp_path / "r.json"
    code = main([
        "compute", "--model", "hier-logit", "--data", str(data_path),
        "--criteria", "paic,waic2,dic", "--seed", "2", "--out", str(out),
        "--chains", "2", "--samples", "1500", "--warmup", "700",
    ])
    assert code == 0
    payload = json.loads(out.read_text())
    assert {r["criterion"] for r in payload["reports"]} == {"paic", "waic2", "dic"}


def test_experiment_normal_three_cells(tmp_path):
    out = tmp_path / "exp"
    code = main([
        "experiment", "normal", "--reps", "5", "--n", "25,50,100",
        "--sigma-a2", "1.0", "--tau02-rule", "1e4", "--seed", "7",
        "--out", str(out),
    ])
    assert code == 0
    agg = json.loads((out / "aggregates.json").read_text())
    assert len(agg["cells"]) == 3
    rep_lines = (out / "replications.csv").read_text().splitlines()
    assert len(rep_lines) == 1 + 3 * 5 * 7  # header + cells*reps*estimators
    plots = sorted(p.name for p in out.glob("plot_normal__*.csv"))
    assert len(plots) == 8  # seven estimators + the true-bias curve
    truth = (out / "plot_normal__tau02_1e4__sigmaA2_1__true.csv").read_text()
    assert truth.splitlines()[0] == "n,mean_bias"


def test_experiment_logit_deterministic_bytes(tmp_path):
    args = ["experiment", "logit", "--reps", "2", "--seed", "11",
            *FAST_LOGIT_FLAGS]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out", str(out1), "--threads", "1"]) == 0
    assert main(args + ["--out", str(out2), "--threads", "2"]) == 0
    for name in ("replications.csv", "aggregates.json"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_experiment_logit_aggregates_schema(tmp_path):
    out = tmp_path / "exp"
    code = main(["experiment", "logit", "--reps", "2", "--seed", "3",
                 *FAST_LOGIT_FLAGS, "--out", str(out)])
    assert code == 0
    agg = json.loads((out / "aggregates.json").read_text())
    cell = agg["cells"][0]
    for est in ("paic", "bpic", "waic2", "cv"):
        stats = cell["aggregates"][est]
        assert set(stats) == {"actual_err_mean", "actual_err_sd",
                              "abs_err_mean", "abs_err_sd",
                              "sq_err_mean", "sq_err_sd"}


def test_experiment_logit_hopeless_budget_exit_3(tmp_path, capsys):
    code = main([
        "experiment", "logit", "--reps", "2", "--seed", "7",
        "--chains", "2", "--samples", "60", "--warmup", "30",
        "--fold-samples", "60", "--fold-warmup", "30",
        "--out", str(tmp_path / "x"),
    ])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_threads_env_fallback(monkeypatch):
    from paic.cli import default_threads

    monkeypatch.setenv("PAIC_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.delenv("PAIC_THREADS")
    assert default_threads() >= 1


def test_version_flag(capsys):
    code = main(["--version"])
    assert code == 0
    from paic import __version__

    assert __version__ in capsys.readouterr().out
