import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optstop.errors import ConfigError, DimensionError, EvaluationError
from optstop.model import (
    bachelier,
    from_expression_strings,
    realized_gain,
    realized_gains,
    spot_check_assumptions,
)


def test_terminal_only_gain():
    p = bachelier(0.0, 1.0, 1.0, "x")
    r = realized_gain(p, [0, 0.5, 1], [1.0, 3.5, 2.0], 1)
    assert r.total == 3.5 and r.integral_part == 0


def test_constant_rate_riemann_sum():
    p = bachelier(0.0, 1.0, 1.0, "0", f="1")
    times = np.linspace(0, 1, 9)
    r = realized_gain(p, times, np.zeros(9), 8)
    assert r.total == pytest.approx(1.0, abs=1e-15)


def test_time_dependent_rate():
    p = bachelier(0.0, 1.0, 1.0, "0", f="t")
    assert realized_gain(p, [0, 0.5, 1], [0, 0, 0], 2).total == 0.25


def test_misaligned_path():
    p = bachelier(0.0, 1.0, 1.0, "x")
    with pytest.raises(DimensionError):
        realized_gain(p, [0, 0.5, 1], [1.0, 2.0], 1)
    with pytest.raises(DimensionError):
        realized_gain(p, [0, 0.5, 1], [1.0, 2.0, 3.0], 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=12), st.data())
def test_gain_additive_over_split(xs, data):
    p = bachelier(0.0, 1.0, 1.0, "x^2", f="t*x + 1")
    times = np.linspace(0, 1, len(xs))
    n = len(xs) - 1
    j = data.draw(st.integers(0, n))
    k = data.draw(st.integers(j, n))
    whole = realized_gain(p, times, xs, k)
    head = realized_gain(p, times[: j + 1], xs[: j + 1], j)
    tail = realized_gain(p, times[j:], xs[j:], k - j)
    assert whole.integral_part == pytest.approx(head.integral_part + tail.integral_part, abs=1e-12)
    assert whole.terminal_part == tail.terminal_part


def test_vectorised_gain_matches_scalar():
    p = bachelier(0.0, 1.0, 1.0, "max(1 - x, 0)", f="x")
    rng = np.random.default_rng(0)
    times = np.linspace(0, 1, 6)
    states = rng.normal(size=(4, 6, 1))
    stops = np.array([0, 2, 5, 3])
    integral, terminal = realized_gains(p, times, states, stops)
    for i in range(4):
        r = realized_gain(p, times, states[i], stops[i])
        assert integral[i] == pytest.approx(r.integral_part, abs=1e-14)
        assert terminal[i] == r.terminal_part


def test_spot_check_constant_drift():
    rep = spot_check_assumptions(bachelier(0.0, 1.0, 1.0, "x"), [(-3, 3)], 200)
    assert rep.lipschitz_estimate_b == 0
    assert rep.lipschitz_estimate_sigma == 0


def test_spot_check_linear_drift_constant_two():
    p = from_expression_strings(1, 1, 1.0, ["2*x"], ["1"], "0", "x")
    for n in (10, 100, 1000):
        rep = spot_check_assumptions(p, [(-5, 5)], n)
        assert rep.lipschitz_estimate_b == pytest.approx(2.0, rel=1e-9)


def test_spot_check_flags_growth():
    p = bachelier(0.0, 1.0, 1.0, "x^2", q=1.0)
    rep = spot_check_assumptions(p, [(-1000, 1000)], 500)
    assert any("growth" in v for v in rep.violations)
    ok = spot_check_assumptions(bachelier(0.0, 1.0, 1.0, "x^2", q=2.0), [(-1000, 1000)], 500)
    assert ok.violations == []


def test_spot_check_deterministic_and_monotone():
    p = from_expression_strings(1, 1, 1.0, ["x^3/100"], ["sqrt(abs(x) + 1)"], "0", "x")
    a = spot_check_assumptions(p, [(-4, 4)], 64, seed=3)
    b = spot_check_assumptions(p, [(-4, 4)], 64, seed=3)
    assert a == b
    prev = 0.0
    for n in (8, 16, 32, 64, 128):
        est = spot_check_assumptions(p, [(-4, 4)], n, seed=3).lipschitz_estimate_b
        assert est >= prev
        prev = est


def test_spot_check_rejects_bad_box():
    p = bachelier(0.0, 1.0, 1.0, "x")
    with pytest.raises(ConfigError):
        spot_check_assumptions(p, [(1, 1)], 10)
    with pytest.raises(ConfigError):
        spot_check_assumptions(p, [(0, 1)], 1)


def test_non_finite_coefficient_names_itself():
    p = from_expression_strings(1, 1, 1.0, ["log(x)"], ["1"], "0", "x")
    with pytest.raises(EvaluationError, match="'b'"):
        spot_check_assumptions(p, [(-1, 1)], 20)
