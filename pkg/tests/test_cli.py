import json
import os
import subprocess
import sys
from fractions import Fraction
from pathlib import Path

import pytest

from optstop.cli import main
from optstop.config import box_of, build_problem, load_config, x0_of
from optstop.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_PUT = """
[problem]
preset = gbm
mu = -0.06
sigma = 0.2
T = 1
x0 = 100
terminal = "max(100 - x, 0)"

[solver]
n_space = 101
n_time = 50
lattice_scheme = binomial
lattice_steps = 100

[mc]
n_paths = 2000
n_steps = 25
seed = 11
degree = 3
"""


@pytest.fixture
def small_put(tmp_path):
    path = tmp_path / "put.ini"
    path.write_text(SMALL_PUT)
    return str(path)


def run(argv):
    return main([str(a) for a in argv])


# config -------------------------------------------------------------------------

def test_config_defaults_and_overrides(small_put):
    cfg = load_config(small_put, ["mc.seed=5", "solver.box=50:150", "problem.terminal='x'"])
    assert cfg.mc.seed == 5 and cfg.mc.n_paths == 2000
    assert box_of(cfg.solver, 1) == ((50.0, 150.0),)
    assert cfg.problem.terminal == "x"
    assert x0_of(cfg.problem) == [100]


@pytest.mark.parametrize("override", ["mc.seed=abc", "nosection.key=1", "mc.nokey=1", "mc.seed"])
def test_bad_overrides(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_unknown_section(tmp_path):
    path = tmp_path / "bad.ini"
    path.write_text("[weird]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_exact_problem_keeps_rationals():
    cfg = load_config(str(CONFIGS / "dpp.ini"))
    p = build_problem(cfg.problem, exact=True)
    assert p.drift(0, [[Fraction(0)]])[0][0] == Fraction(1, 4)


def test_expression_preset():
    cfg = load_config(None, ["problem.preset=expr", "problem.d=2", "problem.m=2", "problem.x0=0,0",
                             "problem.drift=0;x_1", "problem.diffusion=1;0;0;1",
                             "problem.terminal=x_1 + x_2"])
    p = build_problem(cfg.problem)
    assert p.d == 2 and p.drift(0.0, [[2.0, 0.0]]).tolist() == [[0.0, 2.0]]


# exit codes ----------------------------------------------------------------------

def test_key_equality_report(tmp_path, capsys):
    assert run(["verify", "key-equality", "--spaces", 100, "--seed", 7, "--out", tmp_path]) == 0
    assert "100/100 gap=0" in capsys.readouterr().out
    doc = json.loads((tmp_path / "verify_key-equality.json").read_text())
    assert doc["passed"] == doc["total"] == 100


def test_verify_dpp_exit_zero(tmp_path, capsys):
    assert run(["verify", "dpp", "--config", CONFIGS / "dpp.ini", "--out", tmp_path]) == 0
    doc = json.loads((tmp_path / "verify_dpp.json").read_text())
    assert doc["ok"] and all(d.get("max_residual", 0) == 0 for d in doc["details"] if d["exact"])


def test_verification_failure_exit_one(tmp_path, monkeypatch):
    from optstop import suites

    def failing(*args, **kwargs):
        return suites.SuiteResult("key-equality", 0, 1, "0/1")

    monkeypatch.setattr(suites, "key_equality_suite", failing)
    assert run(["verify", "key-equality", "--out", tmp_path]) == 1


def test_usage_errors_exit_two(tmp_path, small_put):
    assert run(["solve", "--config", small_put, "--set", "problem.terminal=max(100 - x",
                "--out", tmp_path]) == 2
    assert run(["solve", "--config", tmp_path / "missing.ini", "--out", tmp_path]) == 2
    with pytest.raises(SystemExit) as err:
        run(["frobnicate"])
    assert err.value.code == 2


def test_numerical_failure_exit_three(tmp_path, small_put):
    assert run(["solve", "--config", small_put, "--set", "solver.max_iter=1", "--out", tmp_path]) == 3


def test_binary_exit_codes(tmp_path):
    exe = [sys.executable, "-m", "optstop.cli"]
    ok = subprocess.run(exe + ["verify", "smallest-optimal", "--gain-tables", "2", "--out", str(tmp_path)],
                        capture_output=True, text=True)
    assert ok.returncode == 0, ok.stderr
    bad = subprocess.run(exe + ["tree", "--set", "solver.lattice_scheme=hexagonal", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert bad.returncode == 2


# subcommands ---------------------------------------------------------------------

def test_solve_square(tmp_path):
    assert run(["solve", "--config", CONFIGS / "x2.ini", "--out", tmp_path]) == 0
    report = json.loads((tmp_path / "residual.json").read_text())
    assert report["value_at_x0"] == pytest.approx(1.0, abs=0.01)
    assert report["terminal_gap"] == 0
    assert (tmp_path / "surface.csv").read_text().startswith("layer,time,node_index,x_1,")


def test_tree_writes_rule(tmp_path):
    assert run(["tree", "--config", CONFIGS / "dpp.ini", "--out", tmp_path, "--format", "csv"]) == 0
    assert (tmp_path / "tree_rule.csv").exists()
    rows = dict(line.split(",", 1) for line in (tmp_path / "tree.csv").read_text().splitlines()[1:])
    assert rows["exact"] == "1" and rows["max_violation"] == "0"


SUBCOMMANDS = [
    ["solve"], ["tree"], ["simulate"], ["price"], ["compare"],
    ["verify", "approx", "--spaces", "3"],
    ["verify", "dpp", "--depth", "3", "--taus", "3"],
    ["verify", "key-equality", "--spaces", "5"],
    ["verify", "smallest-optimal", "--gain-tables", "2"],
]


def _artifacts(folder):
    return {name: (Path(folder) / name).read_bytes() for name in sorted(os.listdir(folder))}


@pytest.mark.parametrize("fmt", ["json", "csv"])
@pytest.mark.parametrize("argv", SUBCOMMANDS, ids=lambda a: "-".join(a[:2]))
def test_reruns_are_byte_identical(tmp_path, small_put, argv, fmt):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(argv + ["--config", small_put, "--out", out, "--format", fmt]) == 0
    first, second = _artifacts(a), _artifacts(b)
    assert first and first == second


def test_assumption_spot_check_is_advisory_unless_strict(tmp_path):
    argv = ["solve", "--config", CONFIGS / "x2.ini", "--set", "solver.n_space=41", "--set",
            "solver.n_time=10", "--set", "solver.spot_check_samples=200", "--set", "problem.terminal=x^4",
            "--out", tmp_path]
    assert run(argv) == 0
    report = json.loads((tmp_path / "residual.json").read_text())
    assert report["assumption_flags"]
    assert run(argv + ["--set", "solver.strict_assumptions=true"]) == 2
