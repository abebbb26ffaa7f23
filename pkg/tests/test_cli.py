import csv
import re

import numpy as np
import pytest

from rkhsmdp.cli import main
from rkhsmdp.config import RunConfig
from rkhsmdp.embedding import TransitionSample
from rkhsmdp.files import write_sample_csv

GRID5 = "env.grid_n = 5\nkernel.bandwidth_heuristic = fixed\nkernel.state_bandwidth = 0.5\ncv.lambda = 1e-8\nplanner.threshold = 1e-9\n"


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def cfg(path, text):
    path.write_text(text)
    return str(path)


def test_sample_rows_and_determinism(work, capsys):
    c = cfg(work / "g.cfg", "env.grid_n = 10\n")
    assert main(["sample", "--config", c, "--m", "100", "--seed", "4", "--out", "a.csv"]) == 0
    assert main(["sample", "--config", c, "--m", "100", "--seed", "4", "--out", "b.csv"]) == 0
    a = (work / "a.csv").read_bytes()
    assert a == (work / "b.csv").read_bytes()
    assert len(a.decode().splitlines()) == 101
    assert main(["sample", "--config", c, "--m", "100", "--seed", "5", "--out", "c.csv"]) == 0
    assert (work / "c.csv").read_bytes() != a


def test_sample_pendulum(work):
    assert main(["sample", "--env", "pendulum", "--m", "20", "--out", "p.csv"]) == 0
    header = (work / "p.csv").read_text().splitlines()[0]
    assert header == "x_0,x_1,a,xp_0,xp_1"


def test_sample_unknown_env(work, capsys):
    assert main(["sample", "--env", "moon", "--m", "3", "--out", "x.csv"]) == 2
    assert "moon" in capsys.readouterr().err


def test_plan_exhaustive_gridworld(work, capsys):
    c = cfg(work / "g5.cfg", GRID5)
    assert main(["sample", "--config", c, "--exhaustive", "200", "--out", "ex.csv"]) == 0
    capsys.readouterr()
    assert main(["plan", "--config", c, "--data", "ex.csv", "--out", "plan"]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    nums = dict(re.findall(r"(\w+)=(\S+)", line))
    assert float(nums["residual"]) <= 1e-9
    assert float(nums["gap_to_oracle"]) <= 1e-2
    for name in ("values.csv", "policy.csv", "value.svg", "policy.svg"):
        assert (work / "plan" / name).exists()
    with open(work / "plan" / "values.csv") as fh:
        assert len(list(csv.reader(fh))) == 26

    # evaluating the planner's own greedy policy reproduces the oracle value
    assert main(["eval", "--config", c, "--data", "ex.csv", "--policy", "plan/policy.csv", "--out", "ev"]) == 0
    nums = dict(re.findall(r"(\w+)=(\S+)", capsys.readouterr().out))
    assert float(nums["value_error"]) <= 1e-2


def test_gamma_zero_reports_one_iteration(work, capsys):
    c = cfg(work / "g.cfg", "env.grid_n = 6\nplanner.gamma = 0\ncv.lambda = 1e-3\nkernel.bandwidth_heuristic = fixed\nkernel.state_bandwidth = 1\n")
    main(["sample", "--config", c, "--m", "200", "--out", "s.csv"])
    assert main(["plan", "--config", c, "--data", "s.csv", "--out", "o"]) == 0
    assert "iterations=1 " in capsys.readouterr().out


def test_plan_input_errors(work, capsys):
    (work / "empty.csv").write_text("")
    assert main(["plan", "--data", "empty.csv", "--out", "o"]) == 2
    (work / "bad.csv").write_text("x_0,x_1,a,xp_0,xp_1\n0,0,1,0,1\n0,0,up,0,1\n")
    assert main(["plan", "--data", "bad.csv", "--out", "o"]) == 2
    assert "bad.csv:3" in capsys.readouterr().err
    assert main(["plan", "--data", "missing.csv", "--out", "o"]) == 3
    c = cfg(work / "x.cfg", "kernel.nonsense = 2\n")
    assert main(["plan", "--config", c, "--data", "bad.csv", "--out", "o"]) == 2
    assert "kernel.nonsense" in capsys.readouterr().err
    assert main(["plan", "--config", "nowhere.cfg", "--data", "bad.csv", "--out", "o"]) == 3
    assert main(["plan"]) == 2
    assert main(["frobnicate"]) == 2


def test_undefined_query_exit_code(work, capsys):
    # only action 0 is sampled, so the delta kernel knows nothing about (x', 1)
    S = TransitionSample(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([0, 0]), np.array([[1.0, 0.0], [1.0, 1.0]]))
    write_sample_csv(work / "s.csv", S)
    c = cfg(work / "g.cfg", "env.grid_n = 4\nkernel.bandwidth_heuristic = fixed\nkernel.state_bandwidth = 1\ncv.lambda = 1e-3\n")
    assert main(["plan", "--config", c, "--data", "s.csv", "--out", "o"]) == 4
    assert "sample 0" in capsys.readouterr().err


def test_output_dir_unwritable(work):
    c = cfg(work / "g.cfg", "env.grid_n = 4\n")
    (work / "blocker").write_text("")
    assert main(["sample", "--config", c, "--m", "5", "--out", "blocker/s.csv"]) == 3


def test_bench_grid_summary_shape(work, capsys):
    c = cfg(work / "b.cfg", "env.grid_n = 8\nbench.sizes = 60, 120\nbench.seeds = 2\nkernel.bandwidth_candidates = 1, 2\n")
    assert main(["bench", "--config", c, "--experiment", "grid", "--out-dir", "res"]) == 0
    with open(work / "res" / "grid_summary.csv") as fh:
        rows = [r for r in csv.DictReader(fh) if r["metric"] == "gap"]
    assert [r["size"] for r in rows] == ["60", "120"]
    assert all(r["mean"] and r["stderr"] for r in rows)
    assert (work / "res" / "grid_m60_seed0_policy.svg").exists()
    assert "grid m=60 gap" in capsys.readouterr().out


def test_bench_pendulum_value_grid(work):
    c = cfg(work / "p.cfg", "bench.sizes = 40\nbench.seeds = 1\nenv.reference_resolution = 49\n")
    assert main(["bench", "--config", c, "--experiment", "pendulum", "--out-dir", "res"]) == 0
    grid = np.loadtxt(work / "res" / "pendulum_m40_seed0_estimated_value.csv", delimiter=",")
    assert grid.shape == (25, 25)


def test_bench_value_estimation_and_bad_name(work):
    c = cfg(work / "v.cfg", "env.grid_n = 6\nbench.sizes = 80\nbench.seeds = 1\nkernel.bandwidth_candidates = 1\n")
    assert main(["bench", "--config", c, "--experiment", "value-estimation", "--out-dir", "res"]) == 0
    assert (work / "res" / "value-estimation_summary.csv").exists()
    assert main(["bench", "--experiment", "nope", "--out-dir", "res"]) == 2


def test_defaults_and_threads(work, capsys):
    assert main(["defaults"]) == 0
    text = capsys.readouterr().out
    assert RunConfig.parse(text).values == RunConfig().values
    c = cfg(work / "g.cfg", "env.grid_n = 4\n")
    assert main(["sample", "--config", c, "--m", "5", "--threads", "1", "--out", "s.csv"]) == 0
    assert main(["sample", "--config", c, "--m", "5", "--threads", "0", "--out", "s.csv"]) == 2
