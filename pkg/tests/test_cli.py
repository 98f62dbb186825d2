import csv
import time

import numpy as np
import pytest

from conftest import make_dataset
from mempate import cli
from mempate.config import parse_text
from mempate.data import Schema, write_dataset

SCHEMA = Schema(outcome="cpd", treatment="arm", source="study", primary="P", covariates=("age", "ftnd"),
                compliance="comp")


@pytest.fixture
def trial(tmp_path):
    data = make_dataset(sizes=(40, 30, 30), p=2, compliance=True, seed=8)
    data = type(data)(y=data.y, a=data.a, source=data.source, X=data.X, sources=data.sources,
                      covariate_names=("age", "ftnd"), c=data.c)
    path = tmp_path / "trial.csv"
    write_dataset(data, path, SCHEMA)
    cfg = tmp_path / "fit.cfg"
    cfg.write_text(f"""# example fit
command = fit
data.path = {path}
schema.outcome = cpd
schema.treatment = arm
schema.source = study
schema.primary = P
schema.covariates = age, ftnd
schema.compliance = comp
blm.formula = age, ftnd, A:age
B = 200
""")
    return cfg


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_fit_writes_table_layout(trial, tmp_path):
    out = tmp_path / "run"
    assert cli.main(["fit", "--config", str(trial), "--seed", "5", "--out", str(out)]) == 0
    rows = read_csv(out / "mem_weights.csv")
    assert rows[0] == ["mem", "S1", "S2", "prior", "log_marginal", "omega", "draws"]
    assert len(rows) == 1 + 4
    assert [r[1:3] for r in rows[1:]] == [["Yes", "Yes"], ["No", "Yes"], ["Yes", "No"], ["No", "No"]]
    omega = np.array([float(r[5]) for r in rows[1:]])
    assert abs(omega.sum() - 1) < 1e-12
    assert sum(int(r[6]) for r in rows[1:]) == 200
    summary = read_csv(out / "pate_summary.csv")
    assert summary[0] == ["mean", "sd", "lower", "upper", "mass", "B"] and summary[1][-1] == "200"
    assert len(read_csv(out / "pate_draws.csv")) == 201
    manifest = parse_text((out / "manifest.txt").read_text())
    assert manifest["seed"] == "5" and manifest["model"] == "blm" and len(manifest["manifest.config_hash"]) == 64
    assert manifest["prior"] == "flat-half" and "version.numpy" in manifest


def test_fit_byte_identical_reruns(trial, tmp_path):
    outs = [tmp_path / n for n in ("a", "b", "c")]
    for o, threads in zip(outs, ("1", "1", "3")):
        assert cli.main(["fit", "--config", str(trial), "--seed", "7", "--out", str(o), "--threads", threads]) == 0
    for name in ("mem_weights.csv", "pate_summary.csv", "pate_draws.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes() == (outs[2] / name).read_bytes()
    assert (outs[0] / "manifest.txt").read_bytes() == (outs[1] / "manifest.txt").read_bytes()


def test_fit_flags_override_config(trial, tmp_path):
    out = tmp_path / "nb"
    assert cli.main(["fit", "--config", str(trial), "--seed", "1", "--out", str(out), "--no-borrow",
                     "--set", "B=10", "--set", "estimand.compliance=fix-compliant",
                     "--set", "blm.include_compliance=true"]) == 0
    rows = read_csv(out / "mem_weights.csv")
    assert [r[5] for r in rows[1:]] == ["0", "0", "0", "1"]
    assert read_csv(out / "pate_summary.csv")[1][-1] == "10"


def test_seed_generated_and_recorded(trial, tmp_path):
    out = tmp_path / "s"
    assert cli.main(["fit", "--config", str(trial), "--out", str(out), "--set", "B=5"]) == 0
    seed = parse_text((out / "manifest.txt").read_text())["seed"]
    again = tmp_path / "s2"
    assert cli.main(["fit", "--config", str(trial), "--out", str(again), "--set", "B=5", "--seed", seed]) == 0
    assert (out / "pate_draws.csv").read_bytes() == (again / "pate_draws.csv").read_bytes()


def test_missing_column_fails_with_name(trial, tmp_path, capsys):
    code = cli.main(["fit", "--config", str(trial), "--seed", "1", "--out", str(tmp_path / "x"),
                     "--set", "schema.covariates=age, weight"])
    assert code != 0
    err = capsys.readouterr().err
    assert "weight" in err and "module=data" in err


def test_block_failure_diagnostic(tmp_path, capsys):
    data = make_dataset(sizes=(20, 20), p=1)
    X = data.X.copy()
    X[data.source_index("S1")] = 1.0
    data = type(data)(y=data.y, a=data.a, source=data.source, X=X, sources=data.sources, covariate_names=("age",))
    path = tmp_path / "d.csv"
    schema = Schema("cpd", "arm", "study", "P", ("age",))
    write_dataset(data, path, schema)
    code = cli.main(["fit", "--seed", "1", "--out", str(tmp_path / "o"), "--set", f"data.path={path}",
                     "--set", "schema.outcome=cpd", "--set", "schema.treatment=arm", "--set", "schema.source=study",
                     "--set", "schema.primary=P", "--set", "schema.covariates=age"])
    assert code == 2
    err = capsys.readouterr().err
    assert "module=mem" in err and "pattern=0" in err and "block=S1" in err


def test_bart_fit_runs(trial, tmp_path):
    out = tmp_path / "bart"
    assert cli.main(["fit", "--config", str(trial), "--model", "bart", "--seed", "2", "--out", str(out),
                     "--set", "B=10", "--set", "bart.m=20", "--set", "bart.n_burn=10",
                     "--set", "bart.n_prior_draws=5"]) == 0
    assert len(read_csv(out / "mem_weights.csv")) == 5
    assert cli.main(["fit", "--config", str(trial), "--model", "bart", "--seed", "2", "--out", str(out),
                     "--set", "bart.depth=3"]) == 2


def test_simulate_grid_rows_and_determinism(tmp_path):
    args = ["simulate", "--seed", "3", "--set", "sim.reps=1", "--set", "B=20"]
    outs = [tmp_path / "a", tmp_path / "b"]
    start = time.perf_counter()
    assert cli.main(args + ["--out", str(outs[0])]) == 0
    assert time.perf_counter() - start < 60
    assert cli.main(args + ["--out", str(outs[1])]) == 0
    rows = read_csv(outs[0] / "mc_results.csv")
    assert len(rows) == 1 + 11 * 2
    assert {r[2] for r in rows[1:]} == {"nb-blm", "blm:flat-half"}
    assert (outs[0] / "mc_results.csv").read_bytes() == (outs[1] / "mc_results.csv").read_bytes()
    assert (outs[0] / "manifest.txt").read_bytes() == (outs[1] / "manifest.txt").read_bytes()


def test_simulate_invalid_scenario(tmp_path, capsys):
    assert cli.main(["simulate", "--seed", "1", "--out", str(tmp_path), "--set", "sim.scenario=9"]) != 0
    assert "scenario" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["fit", "--config", str(tmp_path / "none.cfg")]) == 2


def test_invalid_b(trial, tmp_path):
    assert cli.main(["fit", "--config", str(trial), "--seed", "1", "--out", str(tmp_path), "--set", "B=0"]) == 2
