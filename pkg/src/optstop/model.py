"""Continuous-time stopping problem: coefficients, presets, realized gains."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import expr as E
from .errors import ConfigError, DimensionError, EvaluationError


@dataclass(frozen=True)
class CoefficientFn:
    """A total function of ``(t, x)`` with a declared output shape.

    ``fn`` is vectorised: ``x`` has shape ``(..., d)`` and the result must
    broadcast to ``(...,) + shape``.  ``t`` broadcasts against the batch
    dimensions of ``x``.
    """

    name: str
    shape: tuple
    fn: Callable = field(repr=False)
    sources: tuple | None = None
    state_only: bool = False

    def __call__(self, t, x):
        x = np.asarray(x)
        batch = x.shape[:-1]
        out = self.fn(t, x)
        out = np.asarray(out)
        try:
            out = np.broadcast_to(out, batch + self.shape)
        except ValueError:
            raise DimensionError(
                f"{self.name}: output shape {out.shape} does not match {batch + self.shape}"
            ) from None
        if out.dtype.kind == "f":
            bad = ~np.isfinite(out)
            if bad.any():
                idx = np.argwhere(bad)[0]
                point = x[tuple(idx[: len(batch)])] if batch else x
                tt = np.broadcast_to(np.asarray(t), batch)[tuple(idx[: len(batch)])] if batch else t
                raise EvaluationError(
                    self.name, (float(tt), np.asarray(point, dtype=float).tolist()), out[tuple(idx)]
                )
        return out


def constant(name, value, shape=()):
    value = np.asarray(value)

    def fn(t, x):
        return np.broadcast_to(value, x.shape[:-1] + shape)

    return CoefficientFn(name, shape, fn)


def from_expressions(name, sources, shape, d, state_only=False):
    """Coefficient whose components are parsed expressions.

    ``sources`` is a flat sequence of expression strings in row-major order.
    """
    variables = {"t", *(f"x_{i}" for i in range(1, d + 1))}
    if d == 1:
        variables.add("x")
    if state_only:
        variables.discard("t")
    n = int(np.prod(shape)) if shape else 1
    if len(sources) != n:
        raise ConfigError(f"{name}: expected {n} expression(s), got {len(sources)}")
    asts = tuple(E.parse_expr(s, variables) for s in sources)

    def fn(t, x):
        env = {f"x_{i + 1}": x[..., i] for i in range(d)}
        if d == 1:
            env["x"] = x[..., 0]
        if not state_only:
            env["t"] = t
        batch = x.shape[:-1]
        exact = x.dtype == object
        comps = []
        for a in asts:
            v = E.evaluate(a, env, exact=exact)
            comps.append(np.broadcast_to(np.asarray(v, dtype=object if exact else float), batch))
        out = np.stack(comps, axis=-1) if comps else np.zeros(batch)
        return out.reshape(batch + shape)

    return CoefficientFn(name, shape, fn, sources=tuple(sources), state_only=state_only)


@dataclass(frozen=True)
class StoppingProblem:
    """``dX = b dt + sigma dW`` on ``[t, T]``, gain ``int f ds + g(X_tau)``.

    ``coordinate`` tells the lattice builder which variable has (nearly)
    constant coefficients: ``"log"`` for multiplicative models.
    """

    d: int
    m: int
    T: float
    b: CoefficientFn
    sigma: CoefficientFn
    f: CoefficientFn
    g: CoefficientFn
    growth_hint_q: float = 2.0
    kind: str = "custom"
    coordinate: str = "identity"
    positive_state: bool = False

    def __post_init__(self):
        if self.d < 1 or self.m < 1:
            raise ConfigError("d and m must be at least 1")
        if not self.T > 0:
            raise ConfigError("horizon T must be positive")
        if self.b.shape != (self.d,):
            raise DimensionError(f"drift shape {self.b.shape} != ({self.d},)")
        if self.sigma.shape != (self.d, self.m):
            raise DimensionError(f"diffusion shape {self.sigma.shape} != ({self.d}, {self.m})")
        if self.f.shape != () or self.g.shape != ():
            raise DimensionError("f and g must be scalar")
        if not self.growth_hint_q >= 0:
            raise ConfigError("growth exponent q must be nonnegative")

    def drift(self, t, x):
        return self.b(t, x)

    def diffusion(self, t, x):
        return self.sigma(t, x)

    def covariance(self, t, x):
        s = self.sigma(t, x)
        return np.einsum("...ik,...jk->...ij", s, s)

    def running(self, t, x):
        return self.f(t, x)

    def terminal(self, x):
        return self.g(0, x)

    def with_obstacle(self, g: CoefficientFn) -> "StoppingProblem":
        return StoppingProblem(
            self.d, self.m, self.T, self.b, self.sigma, self.f, g,
            self.growth_hint_q, self.kind, self.coordinate, self.positive_state,
        )


# presets -------------------------------------------------------------------

def _state_expr(name, src, d=1):
    return from_expressions(name, [src], (), d, state_only=True)


def _running(f, d):
    if f is None:
        return constant("f", 0.0)
    if isinstance(f, CoefficientFn):
        return f
    if isinstance(f, str):
        return from_expressions("f", [f], (), d)
    return constant("f", f)


def _terminal(g, d):
    if isinstance(g, CoefficientFn):
        return g
    if isinstance(g, str):
        return _state_expr("g", g, d)
    return constant("g", g)


def bachelier(mu, sigma, T, g, f=None, d=1, q=2.0):
    """Arithmetic Brownian motion ``b = mu``, ``sigma = s I``."""
    b = constant("b", np.full(d, mu, dtype=object if isinstance(mu, Fraction) else float), (d,))
    s = constant("sigma", _scaled_identity(sigma, d), (d, d))
    return StoppingProblem(d, d, T, b, s, _running(f, d), _terminal(g, d), q, kind="bachelier")


def gbm(mu, nu, T, g, f=None, d=1, q=2.0):
    """Geometric Brownian motion ``b = mu x``, ``sigma = diag(nu x)``."""
    mu, nu = float(mu), float(nu)

    def drift(t, x):
        return mu * x

    def diffusion(t, x):
        return nu * x[..., :, None] * np.eye(d)

    return StoppingProblem(
        d, d, T,
        CoefficientFn("b", (d,), drift),
        CoefficientFn("sigma", (d, d), diffusion),
        _running(f, d), _terminal(g, d), q,
        kind="gbm", coordinate="log", positive_state=True,
    )


def ornstein_uhlenbeck(kappa, mean, sigma, T, g, f=None, d=1, q=2.0):
    """Mean reversion ``b = kappa (mean - x)``, ``sigma = s I``."""
    kappa, mean = float(kappa), float(mean)

    def drift(t, x):
        return kappa * (mean - x)

    s = constant("sigma", _scaled_identity(float(sigma), d), (d, d))
    return StoppingProblem(
        d, d, T, CoefficientFn("b", (d,), drift), s, _running(f, d), _terminal(g, d), q, kind="ou"
    )


def _scaled_identity(s, d):
    if isinstance(s, Fraction):
        out = np.full((d, d), Fraction(0), dtype=object)
        for i in range(d):
            out[i, i] = s
        return out
    return float(s) * np.eye(d)


def from_expression_strings(d, m, T, b, sigma, f, g, q=2.0):
    """Problem built entirely from expression text (``sigma`` row-major)."""
    return StoppingProblem(
        d, m, T,
        from_expressions("b", list(b), (d,), d),
        from_expressions("sigma", list(sigma), (d, m), d),
        from_expressions("f", [f], (), d),
        from_expressions("g", [g], (), d, state_only=True),
        q,
    )


PRESETS = {"bachelier": bachelier, "gbm": gbm, "ou": ornstein_uhlenbeck}


# assumption spot check ----------------------------------------------------

@dataclass
class AssumptionReport:
    lipschitz_estimate_b: float
    lipschitz_estimate_sigma: float
    growth_estimate_fg: float
    violations: list


def _lipschitz(coef, t, x, y):
    num = coef(t, x) - coef(t, y)
    num = np.sqrt(np.sum(num.reshape(num.shape[0], -1) ** 2, axis=1))
    den = np.linalg.norm(x - y, axis=1)
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if ok.any() else 0.0


def _samples(box, T, n, seed):
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    d = len(box)
    rng = np.random.Generator(np.random.Philox(seed))
    # one row per sample so that a larger draw extends a smaller one
    u = rng.random((n, 1 + 2 * d))
    t = u[:, 0] * T
    x = lo + (hi - lo) * u[:, 1 : 1 + d]
    y = lo + (hi - lo) * u[:, 1 + d :]
    local = x + 1e-3 * (hi - lo) * (u[:, 1 + d :] - 0.5)
    return t, x, y, local


def _estimates(p, box, n, seed):
    t, x, y, local = _samples(box, p.T, n, seed)
    xs = np.concatenate([x, x])
    ys = np.concatenate([y, local])
    ts = np.concatenate([t, t])
    lb = _lipschitz(p.b, ts, xs, ys)
    ls = _lipschitz(p.sigma, ts, xs, ys)
    growth = (np.abs(p.f(t, x)) + np.abs(p.terminal(x))) / (
        1.0 + np.linalg.norm(x, axis=1) ** p.growth_hint_q
    )
    return lb, ls, float(np.max(growth))


def spot_check_assumptions(p: StoppingProblem, box, n_samples: int, seed: int = 0,
                           blowup: float = 1.5) -> AssumptionReport:
    """Empirical Lipschitz and growth constants over ``box``.

    Flags (never raises for) estimates that grow by more than ``blowup``
    when the sample count is doubled, or for the growth constant, when the
    box is dilated by 2 about its centre.
    """
    if n_samples < 2:
        raise ConfigError("n_samples must be at least 2")
    if len(box) != p.d or any(not lo < hi for lo, hi in box):
        raise ConfigError("box must be a nonempty region with one [lo, hi] per dimension")
    lb, ls, gr = _estimates(p, box, n_samples, seed)
    lb2, ls2, gr2 = _estimates(p, box, 2 * n_samples, seed)
    centre = [(lo + hi) / 2 for lo, hi in box]
    wide = [(c - (hi - lo), c + (hi - lo)) for c, (lo, hi) in zip(centre, box)]
    _, _, gr_wide = _estimates(p, wide, n_samples, seed)

    violations = []
    if lb2 > blowup * max(lb, 1e-300):
        violations.append(f"lipschitz(b) grows under sample doubling: {lb:.6g} -> {lb2:.6g}")
    if ls2 > blowup * max(ls, 1e-300):
        violations.append(f"lipschitz(sigma) grows under sample doubling: {ls:.6g} -> {ls2:.6g}")
    if gr2 > blowup * max(gr, 1e-300):
        violations.append(f"growth(f,g) grows under sample doubling: {gr:.6g} -> {gr2:.6g}")
    if gr_wide > blowup * max(gr, 1e-300):
        violations.append(
            f"growth(f,g) exceeds q={p.growth_hint_q:g} on a dilated box: {gr:.6g} -> {gr_wide:.6g}"
        )
    return AssumptionReport(max(lb, lb2), max(ls, ls2), max(gr, gr2), violations)


# realized gain --------------------------------------------------------------

@dataclass(frozen=True)
class RealizedGain:
    integral_part: float
    terminal_part: float

    @property
    def total(self):
        return self.integral_part + self.terminal_part


def _as_path(path, d):
    path = np.asarray(path)
    if path.ndim == 1 and d == 1:
        path = path[:, None]
    return path


def realized_gain(p: StoppingProblem, times, path, stop_index: int) -> RealizedGain:
    """Left-Riemann integral of ``f`` up to ``stop_index`` plus ``g`` there."""
    times = np.asarray(times)
    path = _as_path(path, p.d)
    if path.ndim != 2 or path.shape[0] != len(times) or path.shape[1] != p.d:
        raise DimensionError(
            f"path of shape {path.shape} is not aligned with {len(times)} times in dimension {p.d}"
        )
    if not 0 <= stop_index < len(times):
        raise DimensionError(f"stop index {stop_index} outside [0, {len(times)})")
    k = stop_index
    integral = 0
    if k > 0:
        rates = p.running(times[:k], path[:k])
        integral = sum(rates[i] * (times[i + 1] - times[i]) for i in range(k))
    terminal = p.terminal(path[k][None, :])[0]
    return RealizedGain(_scalar(integral), _scalar(terminal))


def _scalar(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.item()
    return v


def realized_gains(p: StoppingProblem, times, states, stop_indices):
    """Vectorised ``realized_gain`` over a bundle: returns (integral, terminal)."""
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    stop = np.asarray(stop_indices)
    n_paths, n_points, d = states.shape
    if n_points != len(times) or d != p.d or stop.shape != (n_paths,):
        raise DimensionError("states, times and stop indices are not aligned")
    if stop.min() < 0 or stop.max() >= n_points:
        raise DimensionError("stop index out of range")
    rates = p.running(times[:-1], states[:, :-1])
    acc = np.zeros((n_paths, n_points))
    np.cumsum(rates * np.diff(times), axis=1, out=acc[:, 1:])
    rows = np.arange(n_paths)
    integral = acc[rows, stop]
    terminal = p.terminal(states[rows, stop])
    return integral, terminal
