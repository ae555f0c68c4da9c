import json
import os
import subprocess
import sys

import numpy as np
import pytest

from gaussvasicek.cli import (DEFAULT_SEED, EXIT_GATE, EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK,
                              EXIT_USAGE, Config, config_from_dict, load_config, run, write_all)
from gaussvasicek.exceptions import IoError, ValidationError
from gaussvasicek.kernels import Kernel

MINIMAL = {"kernel": {"family": "ex7", "H": 0.25}, "theta": 1, "mu": 0}
SMALL_MC = {**MINIMAL, "experiment": {"T": 4.0, "n": 100, "replications": 40, "seed": 5}}


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


# -- configuration -------------------------------------------------------------------

def test_minimal_config_gets_defaults(tmp_path):
    cfg = load_config(write_json(tmp_path / "c.json", MINIMAL))
    assert cfg.kernel == Kernel("ex7", H=0.25)
    assert (cfg.n, cfg.replications, cfg.seed) == (2000, 1000, DEFAULT_SEED)
    echoed = cfg.to_dict()["experiment"]
    assert echoed["n"] == 2000 and echoed["replications"] == 1000 and echoed["seed"] == 42
    assert echoed["targets"] == ["theta", "mu", "alpha"]


def test_ex1_at_half_is_rejected(tmp_path):
    path = write_json(tmp_path / "c.json", {**MINIMAL, "kernel": {"family": "ex1", "H": 0.5}})
    with pytest.raises(ValidationError, match=r"H ∈ \(0,½\)∪\(½,1\)"):
        load_config(path)


def test_config_round_trip(tmp_path):
    cfg = load_config(write_json(tmp_path / "c.json", SMALL_MC))
    again = load_config(write_json(tmp_path / "d.json", cfg.to_dict()))
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("data", [
    {**MINIMAL, "colour": "red"},
    {**MINIMAL, "experiment": {"N": 10}},
    {**MINIMAL, "output": {"plot": "x.png"}},
    {**MINIMAL, "output": {"report": 3}},
    {"kernel": {"family": "ex7", "H": 0.25}},
    {**MINIMAL, "theta": -1},
    {**MINIMAL, "experiment": {"n": 1}},
    {**MINIMAL, "experiment": {"T": 100}},
    {**MINIMAL, "experiment": {"model": "ou"}, "mu": 1.0},
    {**MINIMAL, "experiment": {"scheme": "rk4"}},
    [1, 2],
])
def test_invalid_configs(data):
    with pytest.raises(ValidationError):
        config_from_dict(data)


def test_config_io_errors(tmp_path):
    with pytest.raises(IoError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ValidationError):
        load_config(str(bad))


def test_config_dataclass_is_frozen():
    cfg = Config(Kernel("ex7", H=0.25), 1.0)
    with pytest.raises(AttributeError):
        cfg.theta = 2.0


# -- dispatch and exit codes ------------------------------------------------------------------

def test_kernels_json(capsys):
    assert run(["kernels", "--json"]) == EXIT_OK
    out, err = capsys.readouterr()
    rows = json.loads(out)
    assert [r["family"] for r in rows] == ["ex1", "ex2", "ex3", "ex4", "ex5", "ex6", "ex7"]
    for r in rows:
        assert {"beta", "lambda2", "sigmaG2"} <= set(r) and r["theta"] == 1.0
    assert "seed: 42" in err


def test_kernels_table(capsys):
    assert run(["kernels"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[0].split()[:3] == ["kernel", "class", "H"]
    assert len(out.splitlines()) == 1 + 7 + 1


def test_verify_innerproduct_ex4(capsys):
    assert run(["verify-innerproduct", "--family", "ex4", "--trials", "200", "--seed", "7"]) == EXIT_OK
    out, err = capsys.readouterr()
    report = json.loads(out)
    assert report["pass"] and report["seed"] == 7
    assert report["results"][0]["trials"] == 200
    assert "seed: 7" in err


def test_verify_innerproduct_gate_failure(capsys):
    # a tolerance no floating-point result can meet
    code = run(["verify-innerproduct", "--family", "ex7", "--trials", "20", "--tol", "1e-300"])
    assert code == EXIT_GATE
    assert json.loads(capsys.readouterr().out)["pass"] is False


def test_simulate_rejects_single_step(capsys):
    assert run(["simulate", "--family", "ex7", "--H", "0.25", "--n", "1"]) == EXIT_INVALID
    assert "error:" in capsys.readouterr().err


def test_unknown_and_missing_subcommand(capsys):
    assert run(["frobnicate"]) == EXIT_USAGE
    assert "usage:" in capsys.readouterr().err
    assert run([]) == EXIT_USAGE


def test_bad_flag_value_is_invalid_input():
    assert run(["simulate", "--family", "ex7", "--n", "many"]) == EXIT_INVALID
    assert run(["kernels", "--theta", "-1"]) == EXIT_INVALID
    assert run(["kernels", "--seed", "-3"]) == EXIT_INVALID


def test_numerical_failure_exit_code(tmp_path, capsys):
    path = tmp_path / "zero.csv"
    path.write_text("t,value\n0,0\n0.5,0\n1,0\n")
    assert run(["estimate", "--path", str(path)]) == EXIT_NUMERICAL
    assert "DegenerateDenominatorError" in capsys.readouterr().err


def test_missing_input_file_exit_code(tmp_path):
    assert run(["estimate", "--path", str(tmp_path / "nope.csv")]) == EXIT_INVALID


def test_simulate_then_estimate(tmp_path, capsys):
    path = tmp_path / "x.csv"
    assert run(["simulate", "--kernel", '{"family": "ex5", "Hp": 0.5, "K": 0.5}', "--T", "5",
                "--n", "500", "--theta", "1", "--mu", "0.5", "--out", str(path)]) == EXIT_OK
    assert run(["estimate", "--path", str(path)]) == EXIT_OK
    header, row = capsys.readouterr().out.splitlines()
    fields = dict(zip(header.split(","), map(float, row.split(","))))
    assert fields["T"] == 5.0 and fields["n"] == 500
    assert np.isfinite(fields["theta_hat"])


def test_simulate_models(tmp_path):
    outs = {}
    for model in ("noise", "vasicek", "ou", "zeta"):
        path = tmp_path / f"{model}.csv"
        assert run(["simulate", "--family", "ex7", "--H", "0.25", "--n", "50", "--T", "2",
                    "--model", model, "--mu", "0.3", "--out", str(path)]) == EXIT_OK
        outs[model] = path.read_text()
    assert len(set(outs.values())) == 4


def test_decay_and_verify_constants(capsys):
    assert run(["decay", "--family", "ex4"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["pass"] and rep["results"][0]["decreasing"]["cov_ratio"]
    assert run(["verify-constants", "--family", "ex5", "--Hp", "0.5", "--K", "0.5"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["results"][0]["self_similarity_pass"]


# -- determinism and atomic output ---------------------------------------------------------

def test_mc_outputs_byte_identical(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", SMALL_MC)
    runs = []
    for i, threads in enumerate(("1", "3")):
        rep, smp, hist = (tmp_path / f"{name}{i}" for name in ("r.json", "s.csv", "h.csv"))
        assert run(["mc", "--config", cfg, "--out", str(rep), "--samples", str(smp),
                    "--hist", str(hist), "--threads", threads]) == EXIT_OK
        runs.append(tuple(p.read_bytes() for p in (rep, smp, hist)))
    assert runs[0] == runs[1]
    assert "seed: 5" in capsys.readouterr().err
    report = json.loads(runs[0][0])
    assert report["config"]["seed"] == 5 and report["config"]["replications"] == 40


def test_mc_seed_flag_overrides_config(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", SMALL_MC)
    assert run(["mc", "--config", cfg, "--seed", "8", "--replications", "20"]) == EXIT_OK
    out, err = capsys.readouterr()
    assert json.loads(out)["config"]["seed"] == 8 and "seed: 8" in err


def test_mc_output_paths_from_config(tmp_path):
    data = {**SMALL_MC, "output": {"report": str(tmp_path / "rep.json"),
                                   "samples": str(tmp_path / "smp.csv")}}
    assert run(["mc", "--config", write_json(tmp_path / "c.json", data)]) == EXIT_OK
    assert json.loads((tmp_path / "rep.json").read_text())["targets"]
    assert (tmp_path / "smp.csv").read_text().startswith("replication,target,value\n")


def test_mc_failure_leaves_no_files(tmp_path):
    cfg = write_json(tmp_path / "c.json", SMALL_MC)
    report = tmp_path / "r.json"
    missing_dir = tmp_path / "nope" / "s.csv"
    code = run(["mc", "--config", cfg, "--out", str(report), "--samples", str(missing_dir)])
    assert code == EXIT_INVALID
    assert not report.exists()
    assert sorted(os.listdir(tmp_path)) == ["c.json"]


def test_write_all_is_all_or_nothing(tmp_path):
    good = tmp_path / "a.txt"
    with pytest.raises(IoError):
        write_all([("x", str(good)), ("y", str(tmp_path / "missing" / "b.txt"))])
    assert os.listdir(tmp_path) == []
    target_dir = tmp_path / "d"
    target_dir.mkdir()
    with pytest.raises(IoError):
        write_all([("x", str(target_dir))])
    assert os.listdir(tmp_path) == ["d"] and os.listdir(target_dir) == []


def test_simulate_output_deterministic(tmp_path):
    texts = []
    for i in range(2):
        p = tmp_path / f"p{i}.csv"
        run(["simulate", "--family", "ex3", "--H", "0.25", "--n", "64", "--seed", "3",
             "--out", str(p)])
        texts.append(p.read_bytes())
    assert texts[0] == texts[1]


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gaussvasicek.cli", "kernels", "--json"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert proc.stderr.strip() == "seed: 42"
    assert len(json.loads(proc.stdout)) == 7
