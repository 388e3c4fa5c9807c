import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from sparsum.cli import main
from sparsum.tracker import format_orlib, synthetic_panel

SCHEMA = json.loads((Path(__file__).parents[1] / "schemas" / "result.json").read_text())

SMALL_TOML = """
[simulation]
t = 20
m = 8
k_star = 3
p_pos = 2
n_neg = 1
s_star = 0.5
replications = 1
k_max = 4
s_steps = 2
snr = [1.0, 2.0]
"""


def run(argv, capsys):
    rc = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


def validated(text):
    payload = json.loads(text)
    jsonschema.validate(payload, SCHEMA)
    return payload


def write_csv(path, arr):
    np.savetxt(path, np.atleast_2d(arr) if np.ndim(arr) == 2 else np.asarray(arr)[:, None], delimiter=",")
    return path


@pytest.fixture
def toy(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((15, 6))
    y = X @ np.array([0.6, 0.6, -0.2, 0, 0, 0]) + 0.01 * rng.standard_normal(15)
    return write_csv(tmp_path / "X.csv", X), write_csv(tmp_path / "y.csv", y)


def test_solve_orthogonal_scores(tmp_path, capsys):
    y = write_csv(tmp_path / "eta.csv", np.array([0.9, 0.5, 0.1, -0.3]))
    rc, out, _ = run(["solve", "--method", "ortho", "--y", y, "--k", 2, "--s", 0.5], capsys)
    assert rc == 0
    res = validated(out)
    w = np.array(res["weights"])
    assert res["feasible"] and np.count_nonzero(w) <= 2
    assert w.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("method", ["dfo", "mio"])
def test_solve_methods(toy, capsys, method):
    X, y = toy
    rc, out, _ = run(["solve", "--method", method, "--x", X, "--y", y, "--k", 3, "--s", 0.5], capsys)
    assert rc == 0
    res = validated(out)
    assert res["method"] == method and res["feasible"]
    if method == "mio":
        assert res["report"]["status"] == "Optimal"


def test_solve_mio_time_limit(tmp_path, capsys):
    rng = np.random.default_rng(5)
    X = write_csv(tmp_path / "X.csv", rng.standard_normal((30, 80)))
    y = write_csv(tmp_path / "y.csv", rng.standard_normal(30))
    argv = ["solve", "--method", "mio", "--x", X, "--y", y, "--k", 10, "--s", 1, "--time-limit", 0.5]
    rc, out, _ = run(argv, capsys)
    assert rc == 0
    res = validated(out)
    assert res["report"]["status"] == "TimeLimit" and res["feasible"]


def test_solve_export(toy, tmp_path, capsys):
    X, y = toy
    lp = tmp_path / "model.lp"
    rc, out, _ = run(["solve", "--method", "mio", "--x", X, "--y", y, "--k", 2, "--s", 0.5,
                      "--safe-bigm", "--export-mio", lp], capsys)
    assert rc == 0 and lp.read_text().startswith("\\")
    validated(out)


def test_malformed_csv_names_line(tmp_path, capsys):
    X = tmp_path / "X.csv"
    X.write_text("1,2\n3,oops\n")
    y = write_csv(tmp_path / "y.csv", np.ones(2))
    rc, _, err = run(["solve", "--x", X, "--y", y, "--k", 1, "--s", 0], capsys)
    assert rc == 2 and "line 2" in err


@pytest.mark.parametrize("extra", [["--k", 0, "--s", 0], ["--k", 1, "--s", -1], ["--k", 1]])
def test_bad_arguments_exit_2(toy, capsys, extra):
    X, y = toy
    rc, _, _ = run(["solve", "--x", X, "--y", y] + extra, capsys)
    assert rc == 2


def test_simulate_deterministic(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("SPARSUM_SEED", raising=False)
    cfg = tmp_path / "sim.toml"
    cfg.write_text(SMALL_TOML)
    outs = []
    for name in ("a.csv", "b.csv"):
        rc, out, _ = run(["simulate", "--config", cfg, "--out", tmp_path / name], capsys)
        assert rc == 0
        meta = validated(out)
        assert meta["rows"] == 18 and len(meta["configs"]) == 2
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    header = outs[0].decode().splitlines()[0]
    assert header == "method,snr,s_star,measure,mean,stderr,reps"


def test_simulate_seed_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "sim.toml"
    cfg.write_text(SMALL_TOML.replace("snr = [1.0, 2.0]", "snr = 1.0\nseed = 3"))

    def sim(name, *extra):
        run(["simulate", "--config", cfg, "--out", tmp_path / name, *extra], capsys)
        return (tmp_path / name).read_bytes()

    monkeypatch.delenv("SPARSUM_SEED", raising=False)
    base = sim("cfg.csv")
    monkeypatch.setenv("SPARSUM_SEED", "3")
    assert sim("env_same.csv") == base
    monkeypatch.setenv("SPARSUM_SEED", "11")
    env = sim("env.csv")
    assert env != base
    assert sim("flag.csv", "--seed", 3) == base


def test_simulate_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "sim.toml"
    cfg.write_text("t = 20\nbogus = 1\n")
    rc, _, err = run(["simulate", "--config", cfg], capsys)
    assert rc == 2 and "bogus" in err


@pytest.fixture
def orlib(tmp_path):
    path = tmp_path / "indtrack_demo.txt"
    path.write_text(format_orlib(synthetic_panel(m=8, periods=60, seed=2)))
    return path


def test_track_k_list(orlib, tmp_path, capsys):
    weights = tmp_path / "w.csv"
    rc, out, _ = run(["track", "--data", orlib, "--k", "1,3,8", "--weights-out", weights], capsys)
    assert rc == 0
    res = validated(out)
    assert [r["k"] for r in res["results"]] == [1, 3, 8]
    for r in res["results"]:
        assert r["nonzeros"] <= r["k"]
    rows = np.loadtxt(weights, delimiter=",")
    assert rows.shape == (3, 9)


def test_track_export(orlib, tmp_path, capsys):
    lp = tmp_path / "track.lp"
    rc, out, _ = run(["track", "--data", orlib, "--k", "2,4", "--export-mio", lp], capsys)
    assert rc == 0
    res = validated(out)
    assert [Path(p).name for p in res["exported"]] == ["track.k2.lp", "track.k4.lp"]
    assert all(Path(p).exists() for p in res["exported"])


@pytest.mark.parametrize("extra", [["--k", "0"], ["--k", "a,b"], ["--k", "2", "--drop-outliers", "idx:x"]])
def test_track_bad_input(orlib, capsys, extra):
    rc, _, _ = run(["track", "--data", orlib] + extra, capsys)
    assert rc == 2


def test_track_missing_file(tmp_path, capsys):
    rc, _, err = run(["track", "--data", tmp_path / "nope.txt", "--k", "1"], capsys)
    assert rc == 2 and "not found" in err


def test_module_entry_point(tmp_path):
    eta = write_csv(tmp_path / "eta.csv", np.array([0.4, 0.3, -0.1]))
    proc = subprocess.run(
        [sys.executable, "-m", "sparsum", "solve", "--orthogonal", "--y", str(eta), "--k", "2", "--s", "0"],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0, proc.stderr
    assert validated(proc.stdout)["method"] == "ortho"
