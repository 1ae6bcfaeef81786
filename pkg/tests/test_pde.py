import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optstop import lattice, pde
from optstop.errors import ConfigError, ConvergenceError, StabilityError, StencilError
from optstop.model import _state_expr, bachelier, from_expression_strings, gbm


def line(n=41, box=(-2.0, 2.0), n_time=10, **kw):
    return pde.Grid((box,), n, n_time, **kw)


# operator --------------------------------------------------------------------

@pytest.mark.parametrize("phi, p, expected", [
    ("1", bachelier(0.3, 1.7, 1.0, "x"), 0.0),
    ("x", bachelier(1.0, 0.8, 1.0, "x"), 1.0),
    ("x^2", bachelier(0.0, 1.0, 1.0, "x"), 1.0),
])
def test_generator_examples(phi, p, expected):
    grid = line()
    values = _state_expr("phi", phi)(0, grid.nodes)
    values = np.broadcast_to(values, (grid.n_nodes,)).astype(float)
    for node in (1, 7, 20, 39):
        assert pde.generator_apply(p, grid, values, 0, node) == pytest.approx(expected, abs=1e-12)


def test_generator_cross_term():
    # phi = x1 x2 under covariance [[1, r], [r, 1]]: L phi = r
    p = from_expression_strings(2, 2, 1.0, ["0", "0"], ["1", "0", "0.5", "sqrt(0.75)"], "0", "x_1")
    grid = pde.Grid(((-1.0, 1.0), (-1.0, 1.0)), (11, 11), 4)
    phi = grid.nodes[:, 0] * grid.nodes[:, 1]
    assert pde.generator_apply(p, grid, phi, 0, 5 * 11 + 5) == pytest.approx(0.5, abs=1e-12)


def test_stencil_needs_interior_node():
    grid = line()
    with pytest.raises(StencilError):
        pde.generator_apply(bachelier(0.0, 1.0, 1.0, "x"), grid, np.zeros(grid.n_nodes), 0, 0)


def test_grid_validation():
    with pytest.raises(ConfigError):
        pde.Grid(((1.0, 0.0),), 10, 10)
    with pytest.raises(ConfigError):
        pde.Grid(((0.0, 1.0),), 2, 10)
    with pytest.raises(ConfigError):
        pde.Grid(((0.0, 1.0),), 10, 10, boundary_mode="neumann")


# solver ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def square():
    p = bachelier(0.0, 1.0, 1.0, "x^2")
    grid = pde.Grid(((-6.0, 6.0),), 401, 400)
    return p, pde.solve_variational_inequality(p, grid)


def test_square_closed_form(square):
    p, surface = square
    assert surface.value_at([[0.0]])[0] == pytest.approx(1.0, abs=0.01)
    rep = pde.viscosity_residual_report(surface, p)
    assert rep["terminal_gap"] == 0
    assert rep["obstacle_violation"] == 0


def test_injected_analytic_surface(square):
    p, surface = square
    grid = surface.grid
    x = grid.nodes[:, 0]
    exact = np.array([x * x + (1.0 - t) for t in grid.times])
    injected = pde.PdeSurface(grid, exact, x * x, np.zeros_like(exact, dtype=bool), "exact", 0.5, 1e-9)
    rep = pde.viscosity_residual_report(injected, p)
    assert rep["interior_pde_residual_on_continuation"] <= 1e-10


def test_square_region_is_interior_before_horizon(square):
    _, surface = square
    region = pde.extract_continuation_region(surface)
    interior = ~surface.grid.boundary
    assert np.array_equal(region.masks[0], interior)
    assert np.array_equal(region.masks[-2], interior)
    assert not region.masks[-1].any()


def test_concave_obstacle_is_stopped_now():
    p = bachelier(0.0, 1.0, 1.0, "4 - x^2")
    surface = pde.solve_variational_inequality(p, pde.Grid(((-6.0, 6.0),), 201, 100))
    interior = ~surface.grid.boundary
    assert np.max(np.abs(surface.values[:, interior] - surface.obstacle[interior])) <= 0.01 * 32
    assert surface.active[0, interior].mean() == 1.0


def test_constant_obstacle_has_empty_region():
    p = bachelier(0.0, 1.0, 1.0, "3")
    surface = pde.solve_variational_inequality(p, line())
    assert not pde.extract_continuation_region(surface).masks.any()


def test_put_against_dense_tree(put_surface, put_tree_5000):
    v = put_surface.value_at([[100.0]])[0]
    assert v == pytest.approx(put_tree_5000, rel=0.005)


def test_put_terminal_gap_and_obstacle(put_surface, put_problem):
    rep = pde.viscosity_residual_report(put_surface, put_problem)
    assert rep["terminal_gap"] == 0
    assert rep["obstacle_violation"] <= put_surface.tol


def test_exercise_boundary_rises_toward_strike():
    # positive drift makes early exercise worthwhile
    p = gbm(0.06, 0.2, 1.0, "max(100 - x, 0)")
    surface = pde.solve_variational_inequality(p, pde.default_grid(p, [100.0], 401, 400))
    region = pde.extract_continuation_region(surface)
    b = np.array([region.boundary(k) for k in range(0, 400, 40)])
    assert np.all(np.isfinite(b))
    assert np.all(np.diff(b) > 0)
    assert 75 < b[0] < b[-1] < 100
    tree = lattice.root_value(p, 0.0, 100.0, 2000, "binomial")
    assert surface.value_at([[100.0]])[0] == pytest.approx(tree, rel=0.005)


def test_negative_drift_put_never_exercises(put_surface):
    region = pde.extract_continuation_region(put_surface)
    x = put_surface.grid.axes[0]
    inside = (x > 1.0) & (x < 199.0)
    assert region.masks[0][inside].all()


def test_psor_matches_policy_iteration(put_problem):
    grid = pde.default_grid(put_problem, [100.0], 201, 100)
    a = pde.solve_variational_inequality(put_problem, grid, "psor", tol=1e-10)
    b = pde.solve_variational_inequality(put_problem, grid, "policy-iteration", tol=1e-10)
    assert np.max(np.abs(a.values - b.values)) <= 10 * 1e-10 * max(1.0, np.max(np.abs(a.values)))


def test_explicit_projection_agrees_when_stable():
    p = bachelier(0.0, 1.0, 1.0, "max(1 - x, 0)")
    grid = pde.Grid(((-5.0, 5.0),), 101, 400)
    explicit = pde.solve_variational_inequality(p, grid, "explicit-projection")
    implicit = pde.solve_variational_inequality(p, grid)
    assert explicit.value_at([[0.0]])[0] == pytest.approx(implicit.value_at([[0.0]])[0], rel=1e-3)


def test_explicit_projection_cfl():
    p = bachelier(0.0, 1.0, 1.0, "max(1 - x, 0)")
    with pytest.raises(StabilityError, match="CFL"):
        pde.solve_variational_inequality(p, pde.Grid(((-5.0, 5.0),), 401, 10), "explicit-projection")


def test_iteration_cap_raises_convergence_error(put_problem):
    grid = pde.default_grid(put_problem, [100.0], 101, 10)
    with pytest.raises(ConvergenceError):
        pde.solve_variational_inequality(put_problem, grid, max_iter=1)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 0.5), st.floats(-1.0, 1.0))
def test_obstacle_monotonicity(bump, centre):
    p = bachelier(0.1, 1.0, 1.0, "max(1 - x, 0)")
    higher = p.with_obstacle(_state_expr("g", f"max(1 - x, 0) + {bump:.6f}*exp(-(x - {centre:.6f})^2)"))
    grid = pde.Grid(((-5.0, 5.0),), 81, 40)
    lo = pde.solve_variational_inequality(p, grid, tol=1e-12)
    hi = pde.solve_variational_inequality(higher, grid, tol=1e-12)
    assert np.all(hi.values >= lo.values - 1e-10)


def test_two_dimensional_max_call():
    # max of two driftless coordinates: a convex obstacle, so waiting is optimal
    p = from_expression_strings(2, 2, 1.0, ["0", "0"], ["1", "0", "0", "1"], "0", "max(x_1, x_2)")
    grid = pde.Grid(((-5.0, 5.0), (-5.0, 5.0)), (61, 61), 40)
    surface = pde.solve_variational_inequality(p, grid)
    # E[max(W1, W2)] = 1/sqrt(pi) for independent standard normals
    assert surface.value_at([[0.0, 0.0]])[0] == pytest.approx(1 / np.sqrt(np.pi), rel=0.02)


# refinement ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def refinement(put_problem):
    out = []
    for n in (100, 200, 400):
        grid = pde.default_grid(put_problem, [100.0], n + 1, n)
        s = pde.solve_variational_inequality(put_problem, grid)
        out.append((pde.viscosity_residual_report(s, put_problem),
                    pde.viscosity_residual_report(s, put_problem, t_max=0.5)))
    return out


def test_complementarity_halves_away_from_horizon(refinement):
    c = [half["complementarity_max"] for _, half in refinement]
    for a, b in zip(c, c[1:]):
        assert 0.35 <= b / a <= 0.65


@pytest.mark.xfail(strict=True, reason="the obstacle kink at the horizon dominates; see notes")
def test_complementarity_halves_over_whole_horizon(refinement):
    c = [full["complementarity_max"] for full, _ in refinement]
    for a, b in zip(c, c[1:]):
        assert 0.35 <= b / a <= 0.65


# output ---------------------------------------------------------------------------------

def test_exports(tmp_path):
    p = bachelier(0.0, 1.0, 1.0, "x^2")
    surface = pde.solve_variational_inequality(p, line(n=5, n_time=2))
    region = pde.extract_continuation_region(surface)
    pde.export_surface_csv(surface, tmp_path / "s.csv")
    pde.export_plot_data(surface, region, tmp_path / "a.csv", tmp_path / "b.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "layer,time,node_index,x_1,value,obstacle,active"
    assert len(rows) == 1 + 3 * 5
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == "time,boundary"
