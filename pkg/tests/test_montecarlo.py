import json

import numpy as np
import pytest
from scipy.stats import norm

from optstop import lattice, montecarlo, pde
from optstop.errors import ConditioningError, ConfigError, CoverageError
from optstop.model import _state_expr, bachelier, gbm
from optstop.sde import simulate


def test_deterministic_running_gain():
    p = bachelier(0.0, 0.0, 1.0, "0", f="1")
    b = simulate(p, 0.0, 0.0, 20, 50, seed=1)
    est = montecarlo.longstaff_schwartz(p, b, 2)
    assert est.mean == pytest.approx(1.0, abs=1e-12) and est.std_error == 0


def _black_scholes_call(s, k, sigma, T):
    d1 = (np.log(s / k) + 0.5 * sigma**2 * T) / (sigma * np.sqrt(T))
    return s * norm.cdf(d1) - k * norm.cdf(d1 - sigma * np.sqrt(T))


def test_convex_obstacle_on_driftless_gbm_matches_european():
    p = gbm(0.0, 0.2, 1.0, "max(x - 100, 0)")
    b = simulate(p, 0.0, 100.0, 50, 20_000, seed=3)
    est = montecarlo.longstaff_schwartz(p, b, 3)
    assert abs(est.mean - _black_scholes_call(100.0, 100.0, 0.2, 1.0)) < 3 * est.std_error


@pytest.fixture(scope="module")
def put_bundle(put_problem):
    return simulate(put_problem, 0.0, 100.0, 50, 40_000, seed=11)


def test_put_lsmc_against_dense_tree(put_problem, put_bundle, put_tree_5000):
    est = montecarlo.longstaff_schwartz(put_problem, put_bundle, 4)
    assert abs(est.mean - put_tree_5000) <= max(3 * est.std_error, 0.01 * put_tree_5000)
    assert est.method_tag == "lsmc" and est.n_paths == 40_000 and est.seed == 11


def test_lsmc_is_deterministic(put_problem, put_bundle):
    a = montecarlo.longstaff_schwartz(put_problem, put_bundle, 3)
    b = montecarlo.longstaff_schwartz(put_problem, put_bundle, 3)
    assert a == b


def test_out_of_sample_lsmc(put_problem, put_bundle, put_tree_5000):
    fresh = simulate(put_problem, 0.0, 100.0, 50, 40_000, seed=12)
    est = montecarlo.longstaff_schwartz(put_problem, put_bundle, 3, oos_bundle=fresh)
    assert est.method_tag == "lsmc-oos" and est.seed == 12
    assert abs(est.mean - put_tree_5000) <= max(3 * est.std_error, 0.01 * put_tree_5000)
    with pytest.raises(ConfigError):
        montecarlo.longstaff_schwartz(put_problem, put_bundle, 3,
                                      oos_bundle=simulate(put_problem, 0.0, 100.0, 10, 100, seed=1))


def test_ill_conditioned_basis(put_problem):
    b = simulate(put_problem, 0.0, 100.0, 10, 2000, seed=1)
    with pytest.raises(ConditioningError, match="degree"):
        montecarlo.longstaff_schwartz(put_problem, b, 20)


def test_immediate_and_terminal_rules():
    p = bachelier(0.0, 1.0, 1.0, "x")
    b = simulate(p, 0.0, 2.0, 50, 20_000, seed=4)
    now = montecarlo.evaluate_rule(p, b, "immediate")
    assert now.mean == 2.0 and now.std_error == 0
    end = montecarlo.evaluate_rule(p, b, "terminal")
    assert abs(end.mean - 2.0) < 3 * end.std_error


def test_square_rule_waits_to_the_end():
    p = bachelier(0.0, 1.0, 1.0, "x^2")
    surface = pde.solve_variational_inequality(p, pde.Grid(((-7.0, 7.0),), 281, 100))
    b = simulate(p, 0.0, 0.5, 100, 20_000, seed=5)
    est = montecarlo.evaluate_rule(p, b, surface)
    assert est.method_tag == "rule-pde"
    assert abs(est.mean - (0.25 + 1.0)) < 3 * est.std_error + 0.01


def test_coverage_error_on_small_box():
    p = bachelier(0.0, 1.0, 1.0, "x^2")
    surface = pde.solve_variational_inequality(p, pde.Grid(((-0.5, 0.5),), 21, 10))
    b = simulate(p, 0.0, 0.0, 10, 2000, seed=6)
    with pytest.raises(CoverageError, match="box"):
        montecarlo.evaluate_rule(p, b, surface)


def test_pde_rule_on_put(put_problem, put_bundle, put_surface):
    rule = montecarlo.evaluate_rule(put_problem, put_bundle, put_surface)
    ls = montecarlo.longstaff_schwartz(put_problem, put_bundle, 4)
    v = put_surface.value_at([[100.0]])[0]
    assert rule.offgrid_fraction <= 0.05
    # never beats the value, and at least as good as the regression rule (up to noise)
    assert rule.mean <= v + 3 * rule.std_error + 0.01 * v
    assert rule.mean >= ls.mean - 3 * np.hypot(rule.std_error, ls.std_error)


def test_lattice_rule_on_put(put_problem, put_bundle):
    chain = lattice.build_chain(put_problem, 0.0, 100.0, 100, "binomial")
    surface = lattice.snell_envelope(chain, put_problem)
    est = montecarlo.evaluate_rule(put_problem, put_bundle, surface)
    assert est.method_tag == "rule-lattice"
    assert est.mean == pytest.approx(float(surface.root_value), rel=0.01)


def test_raising_obstacle_never_lowers_rule_value():
    p = gbm(0.06, 0.2, 1.0, "max(100 - x, 0)")
    higher = p.with_obstacle(_state_expr("g", "max(100 - x, 0) + 2"))
    b = simulate(p, 0.0, 100.0, 50, 5000, seed=8)

    def pde_rule(q):
        return montecarlo.evaluate_rule(q, b, pde.solve_variational_inequality(
            q, pde.default_grid(q, [100.0], 201, 50)))

    def lattice_rule(q):
        return montecarlo.evaluate_rule(q, b, lattice.snell_envelope(
            lattice.build_chain(q, 0.0, 100.0, 50, "binomial"), q))

    for rule in (pde_rule, lattice_rule):
        assert rule(higher).mean >= rule(p).mean


def test_bad_rule_source(put_problem, put_bundle):
    with pytest.raises(ConfigError):
        montecarlo.evaluate_rule(put_problem, put_bundle, "sometimes")


def test_estimate_outputs(tmp_path):
    est = montecarlo.ValueEstimate(1.5, 0.1, 10, 3, "lsmc")
    montecarlo.write_estimate_json(est, tmp_path / "e.json")
    doc = json.loads((tmp_path / "e.json").read_text())
    assert doc["method"] == "lsmc" and doc["mean"] == 1.5
    montecarlo.append_estimate_csv(est, tmp_path / "e.csv")
    montecarlo.append_estimate_csv(est, tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == ",".join(montecarlo.CSV_HEADER) and len(lines) == 3
