"""Acceptance criteria, one test each, at the stated tolerances.

Each test appends a PASS/FAIL line to ``RESULTS``; ``conftest.py`` prints
them in the terminal summary.  Run ``python tests/test_acceptance.py`` to get
the lines without pytest.
"""

import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from optstop import lattice, montecarlo, pde, suites
from optstop.cli import main
from optstop.model import bachelier
from optstop.sde import simulate

RESULTS = []


def record(number, name, ok, detail):
    line = f"criterion {number} [{name}]: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)
    return ok


def timed(fn, *args, **kwargs):
    start = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - start


def test_criterion_1_key_equality():
    res, secs = timed(suites.key_equality_suite, 100, 7)
    gaps = [d["gap"] for d in res.details]
    ok = res.ok and all(g == 0 for g in gaps) and all(d["restricted_equal"] for d in res.details) \
        and secs < 60
    assert record(1, "key equality", ok, f"{res.summary}; {secs:.1f} s (limit 60 s)")


def test_criterion_2_smallest_optimal():
    res, secs = timed(suites.smallest_optimal_suite, 50, 7)
    ok = res.ok and secs < 60
    assert record(2, "smallest optimal", ok, f"{res.summary}; {secs:.1f} s (limit 60 s)")


def test_criterion_3_dpp():
    res, secs = timed(suites.dpp_suite, None, 4, 20, 7)
    exact_zero = all(d["max_residual"] == 0 for d in res.details if d.get("exact") and "skipped" not in d)
    ok = res.ok and exact_zero and not any("skipped" in d for d in res.details)
    assert record(3, "dynamic programming", ok, f"{res.summary}; {secs:.1f} s")


def test_criterion_4_approximation():
    res, secs = timed(suites.approx_suite, 50, 7)
    ok = res.ok and res.total > 0
    assert record(4, "approximation", ok, f"{res.summary}; {secs:.1f} s")


def test_criterion_5_closed_form_pde():
    p = bachelier(0.0, 1.0, 1.0, "x^2")
    grid = pde.Grid(((-6.0, 6.0),), 400, 400)
    surface, secs = timed(pde.solve_variational_inequality, p, grid)
    v = surface.value_at([[0.0]])[0]
    x = grid.nodes[:, 0]
    exact = np.array([x * x + (1.0 - t) for t in grid.times])
    injected = pde.PdeSurface(grid, exact, x * x, np.zeros_like(exact, dtype=bool), "exact", 0.5, 1e-9)
    res = pde.viscosity_residual_report(injected, p)["interior_pde_residual_on_continuation"]
    ok = abs(v - 1.0) <= 0.01 and res <= 1e-10 and secs < 30
    assert record(5, "closed-form PDE", ok,
                  f"v(0,0)={v:.6f}, injected residual {res:.2e}; solve {secs:.1f} s (limit 30 s)")


def test_criterion_6_jensen():
    p = bachelier(0.0, 1.0, 1.0, "4 - x^2")
    grid = pde.Grid(((-6.0, 6.0),), 401, 400)
    surface = pde.solve_variational_inequality(p, grid)
    interior = ~grid.boundary
    g = surface.obstacle
    scale = float(np.max(np.abs(g)))
    gap = float(np.max(np.abs(surface.values[:, interior] - g[interior])))
    region = pde.extract_continuation_region(surface)
    stops_now = float(np.mean(~region.masks[0][interior]))
    ok = gap <= 0.01 * scale and stops_now >= 0.99
    assert record(6, "Jensen / immediate stopping", ok,
                  f"max|v-g|={gap:.2e} (limit {0.01 * scale:.3g}), stop at layer 0 on {100 * stops_now:.1f}%")


def test_criterion_7_cross_method(put_problem, put_surface):
    start = time.perf_counter()
    p = put_problem
    v_pde = float(put_surface.value_at([[100.0]])[0])
    v_tree = float(lattice.root_value(p, 0.0, 100.0, 2000, "binomial"))
    bundle = simulate(p, 0.0, 100.0, 100, 100_000, seed=11)
    ls = montecarlo.longstaff_schwartz(p, bundle, 4)
    rule = montecarlo.evaluate_rule(p, bundle, put_surface)
    secs = time.perf_counter() - start

    def close(a, b, se):
        return abs(a - b) <= max(3 * se, 0.005 * abs(b))

    pairs = {
        "pde-lattice": close(v_pde, v_tree, 0.0),
        "pde-lsmc": close(ls.mean, v_pde, ls.std_error),
        "lattice-lsmc": close(ls.mean, v_tree, ls.std_error),
        "rule-pde": close(rule.mean, v_pde, rule.std_error),
    }
    ok = all(pairs.values()) and secs < 300
    assert record(7, "cross-method put", ok,
                  f"pde {v_pde:.4f}, lattice {v_tree:.4f}, lsmc {ls.mean:.4f}+-{ls.std_error:.3f}, "
                  f"rule {rule.mean:.4f}+-{rule.std_error:.3f}; "
                  + ", ".join(f"{k} {'ok' if v else 'off'}" for k, v in pairs.items())
                  + f"; {secs:.1f} s (limit 300 s)")


def test_criterion_8_complementarity_scaling(put_problem):
    full, early = [], []
    for n in (100, 200, 400):
        grid = pde.default_grid(put_problem, [100.0], n + 1, n)
        s = pde.solve_variational_inequality(put_problem, grid)
        full.append(pde.viscosity_residual_report(s, put_problem)["complementarity_max"])
        early.append(pde.viscosity_residual_report(s, put_problem, t_max=0.5)["complementarity_max"])
    ratios = [b / a for a, b in zip(full, full[1:])]
    early_ratios = [b / a for a, b in zip(early, early[1:])]
    ok = all(0.35 <= r <= 0.65 for r in ratios)
    assert record(8, "complementarity scaling", ok,
                  "complementarity_max " + ", ".join(f"{c:.3g}" for c in full)
                  + " (ratios " + ", ".join(f"{r:.2f}" for r in ratios) + ", need 0.35-0.65); "
                  "restricted to t <= T/2: " + ", ".join(f"{c:.3g}" for c in early)
                  + " (ratios " + ", ".join(f"{r:.2f}" for r in early_ratios) + ")")


DETERMINISM_CONFIG = """
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
lattice_steps = 200

[mc]
n_paths = 4000
n_steps = 25
seed = 11
degree = 4

[verify]
spaces = 10
gain_tables = 3
approx_spaces = 5
chain_depth = 4
taus = 5
"""

COMMANDS = [["solve"], ["tree"], ["simulate"], ["price"], ["compare"],
            ["verify", "approx"], ["verify", "dpp"], ["verify", "key-equality"],
            ["verify", "smallest-optimal"]]


def test_criterion_9_determinism(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(DETERMINISM_CONFIG)
    differing = []
    for argv in COMMANDS:
        for fmt in ("json", "csv"):
            outs = []
            for rep in (0, 1):
                out = tmp_path / f"{'-'.join(argv)}-{fmt}-{rep}"
                assert main(argv + ["--config", str(cfg), "--out", str(out), "--format", fmt]) == 0
                outs.append({f: (out / f).read_bytes() for f in sorted(os.listdir(out))})
            if not outs[0] or outs[0] != outs[1]:
                differing.append(f"{' '.join(argv)} ({fmt})")
    ok = not differing
    assert record(9, "determinism", ok,
                  f"{len(COMMANDS)} subcommands x 2 formats re-run; "
                  + ("all byte-identical" if ok else "differ: " + ", ".join(differing)))


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__)), "-q", "-p", "no:cacheprovider"]))
