"""Monte Carlo estimators on simulated path bundles.

``longstaff_schwartz`` builds a regression stopping rule backward in time and
reports its in-sample (low-biased) value; ``evaluate_rule`` runs a given
stopping rule forward on paths.  Both use the gain ``sum f dt + g(X_tau)``
accumulated on the bundle's time grid.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import combinations_with_replacement

import numpy as np

from .errors import ConditioningError, ConfigError, CoverageError
from .io import append_rows, dumps
from .lattice import ValueSurface, default_epsilon
from .model import StoppingProblem
from .pde import PdeSurface, active_threshold, interpolate
from .sde import PathBundle

MAX_CONDITION = 1e12
MAX_OFFGRID = 0.05


@dataclass(frozen=True)
class ValueEstimate:
    mean: float
    std_error: float
    n_paths: int
    seed: int
    method_tag: str
    offgrid_fraction: float = 0.0

    def to_dict(self):
        d = asdict(self)
        return {"method": d.pop("method_tag"), **d}


def write_estimate_json(est: ValueEstimate, path):
    with open(path, "w") as fh:
        fh.write(dumps(est.to_dict()))


CSV_HEADER = ["method", "mean", "std_error", "n_paths", "seed", "offgrid_fraction"]


def append_estimate_csv(est: ValueEstimate, path):
    d = est.to_dict()
    append_rows(path, CSV_HEADER, [[d[k] for k in CSV_HEADER]])


def _estimate(samples, n, seed, tag, offgrid=0.0):
    samples = np.asarray(samples, dtype=float)
    se = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return ValueEstimate(float(samples.mean()), se, n, seed, tag, float(offgrid))


def _cumulative_running(p, bundle):
    times = bundle.times
    rates = np.asarray(p.running(times[:-1], bundle.states[:, :-1]), dtype=float)
    acc = np.zeros((bundle.n_paths, bundle.n_steps + 1))
    np.cumsum(rates * np.diff(times), axis=1, out=acc[:, 1:])
    return acc


def _gains(p, bundle, acc, stop):
    rows = np.arange(bundle.n_paths)
    g = np.asarray(p.terminal(bundle.states[rows, stop]), dtype=float)
    return acc[rows, stop] + g


# regression --------------------------------------------------------------------

def _exponents(d, degree):
    out = [()]
    for k in range(1, degree + 1):
        out += list(combinations_with_replacement(range(d), k))
    return out


@dataclass(frozen=True)
class _Regression:
    centre: np.ndarray
    scale: np.ndarray
    keep: np.ndarray  # dimensions with spread
    exponents: tuple
    coef: np.ndarray

    def basis(self, x):
        z = (x[:, self.keep] - self.centre) / self.scale
        cols = [np.ones(len(x))]
        for e in self.exponents[1:]:
            cols.append(np.prod(z[:, list(e)], axis=1))
        return np.stack(cols, axis=1)

    def predict(self, x):
        return self.basis(x) @ self.coef


def _fit(x, y, degree, k):
    centre = x.mean(axis=0)
    scale = x.std(axis=0)
    keep = scale > 1e-14 * np.maximum(1.0, np.abs(centre))
    exps = tuple(_exponents(int(keep.sum()), degree)) if keep.any() else ((),)
    reg = _Regression(centre[keep], scale[keep], keep, exps, np.zeros(len(exps)))
    B = reg.basis(x)
    coef, _, rank, sv = np.linalg.lstsq(B, y, rcond=None)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if cond > MAX_CONDITION or rank < B.shape[1]:
        raise ConditioningError(
            f"regression at step {k} is ill-conditioned (condition {cond:.3g}); lower the basis degree"
        )
    return _Regression(reg.centre, reg.scale, keep, exps, coef)


def _candidates(g_k, regress_on):
    """Paths used for the regression and eligible for stopping at one step."""
    if regress_on == "all":
        return np.ones(len(g_k), dtype=bool)
    above = g_k > g_k.min()
    # all paths at the floor (e.g. a constant obstacle): nothing to separate
    return above if above.any() else np.ones(len(g_k), dtype=bool)


def longstaff_schwartz(p: StoppingProblem, bundle: PathBundle, degree: int = 3,
                       oos_bundle: PathBundle | None = None,
                       regress_on: str = "in-the-money") -> ValueEstimate:
    """Regression rule on polynomial features of the state.

    With ``regress_on="in-the-money"`` each step regresses only on paths
    whose obstacle exceeds its smallest value across paths, and only those
    may stop there; ``"all"`` uses every path.  The in-sample estimate reuses
    the regression paths and is biased low; with ``oos_bundle`` the fitted
    rule is re-priced on fresh paths instead.
    """
    if degree < 1:
        raise ConfigError("basis degree must be at least 1")
    if regress_on not in ("in-the-money", "all"):
        raise ConfigError("regress_on must be 'in-the-money' or 'all'")
    N = bundle.n_steps
    acc = _cumulative_running(p, bundle)
    stop = np.full(bundle.n_paths, N)
    g_all = np.asarray(p.terminal(bundle.states), dtype=float)  # (n, N+1)
    fits = [None] * N
    for k in range(N - 1, 0, -1):
        sel = np.nonzero(_candidates(g_all[:, k], regress_on))[0]
        y = _gains(p, bundle, acc, stop)[sel] - acc[sel, k]
        x = bundle.states[sel, k]
        reg = _fit(x, y, degree, k)
        fits[k] = (reg, g_all[:, k].min())
        ex = g_all[sel, k] >= reg.predict(x)
        stop[sel[ex]] = k
    y0 = _gains(p, bundle, acc, stop)
    stop_now = bool(g_all[0, 0] >= y0.mean())
    if oos_bundle is None:
        if stop_now:
            return ValueEstimate(float(g_all[0, 0]), 0.0, bundle.n_paths, bundle.seed, "lsmc")
        return _estimate(y0, bundle.n_paths, bundle.seed, "lsmc")
    if oos_bundle.n_steps != N:
        raise ConfigError("out-of-sample bundle needs the same time grid")
    g_oos = np.asarray(p.terminal(oos_bundle.states), dtype=float)
    if stop_now:
        return ValueEstimate(float(g_oos[0, 0]), 0.0, oos_bundle.n_paths, oos_bundle.seed, "lsmc-oos")
    stop = np.full(oos_bundle.n_paths, N)
    live = np.ones(oos_bundle.n_paths, dtype=bool)
    for k in range(1, N):
        reg, floor = fits[k]
        cand = np.ones(oos_bundle.n_paths, dtype=bool) if regress_on == "all" else g_oos[:, k] > floor
        ex = live & cand & (g_oos[:, k] >= reg.predict(oos_bundle.states[:, k]))
        stop[ex] = k
        live &= ~ex
    gains = _gains(p, oos_bundle, _cumulative_running(p, oos_bundle), stop)
    return _estimate(gains, oos_bundle.n_paths, oos_bundle.seed, "lsmc-oos")


# rule evaluation ------------------------------------------------------------------

def _previous_layer(layer_times, t):
    """Index of the last surface layer at or before ``t`` (adapted lookup)."""
    return int(np.searchsorted(layer_times, t + 1e-12 * max(1.0, abs(t)), side="right") - 1)


def _chain_interpolate(chain, field_values, k, x):
    """Interpolate a per-node field of lattice layer ``k`` at ``x``, clamped to its nodes.

    Outside a layer's range the nearest node's value is used: early layers of
    a recombining lattice are narrower than the spread of simulated paths.
    """
    states = np.asarray(chain.layers[k], dtype=float)
    vals = np.asarray(field_values, dtype=float)
    if chain.d == 1:
        xs = states[:, 0]
        order = np.argsort(xs, kind="stable")
        return np.interp(x[:, 0], xs[order], vals[order])
    axes = [np.unique(states[:, j]) for j in range(2)]
    n = len(axes[0])
    if n == 1:
        return np.full(len(x), vals[0])
    grid_vals = np.empty((n, n))
    grid_vals[np.searchsorted(axes[0], states[:, 0]), np.searchsorted(axes[1], states[:, 1])] = vals
    pos = []
    for j in range(2):
        xc = np.clip(x[:, j], axes[j][0], axes[j][-1])
        i = np.clip(np.searchsorted(axes[j], xc, side="right") - 1, 0, n - 2)
        pos.append((i, (xc - axes[j][i]) / (axes[j][i + 1] - axes[j][i])))
    (a, wa), (b, wb) = pos
    return (grid_vals[a, b] * (1 - wa) * (1 - wb) + grid_vals[a + 1, b] * wa * (1 - wb)
            + grid_vals[a, b + 1] * (1 - wa) * wb + grid_vals[a + 1, b + 1] * wa * wb)


def _chain_span(chain):
    last = np.asarray(chain.layers[-1], dtype=float)
    return last.min(axis=0), last.max(axis=0)


def evaluate_rule(p: StoppingProblem, bundle: PathBundle, rule_source, epsilon=None,
                  max_offgrid: float = MAX_OFFGRID) -> ValueEstimate:
    """Stop each path at the first grid time where the interpolated ``v - g <= epsilon``.

    ``rule_source`` is a ``PdeSurface``, a lattice ``ValueSurface``,
    ``"immediate"`` or ``"terminal"``.  Surfaces are read at the last layer
    not after the path time.  Paths outside the surface's range stop there
    (value taken as ``g``); more than ``max_offgrid`` of them is an error.
    For a lattice the range is the span of its last layer; inside it, states
    beyond a narrower early layer take the nearest node's ``v - g``.
    """
    N = bundle.n_steps
    acc = _cumulative_running(p, bundle)
    n = bundle.n_paths
    if isinstance(rule_source, str):
        if rule_source == "immediate":
            stop = np.zeros(n, dtype=int)
        elif rule_source == "terminal":
            stop = np.full(n, N)
        else:
            raise ConfigError(f"unknown rule source {rule_source!r}")
        return _estimate(_gains(p, bundle, acc, stop), n, bundle.seed, f"rule-{rule_source}")

    if isinstance(rule_source, PdeSurface):
        grid = rule_source.grid
        layer_times = grid.times
        if epsilon is None:
            epsilon = active_threshold(rule_source.values, rule_source.tol)

        def lookup(k, x):
            return interpolate(grid, rule_source.values[k], x)

        tag = "rule-pde"
    elif isinstance(rule_source, ValueSurface):
        chain = rule_source.chain
        layer_times = np.asarray(chain.times, dtype=float)
        if epsilon is None:
            epsilon = float(default_epsilon(rule_source.values, chain.exact))

        lo, hi = _chain_span(chain)
        gaps = [np.asarray(v, dtype=float) - np.asarray(g, dtype=float)
                for v, g in zip(rule_source.values, rule_source.obstacle)]

        def lookup(k, x):
            # compare on v - g so that a clamped lookup keeps the nearest node's decision
            inside = np.all((x >= lo) & (x <= hi), axis=1)
            g = np.asarray(p.terminal(x), dtype=float)
            return _chain_interpolate(chain, gaps[k], k, x) + g, inside

        tag = "rule-lattice"
    else:
        raise ConfigError("rule source must be a PdeSurface, ValueSurface, 'immediate' or 'terminal'")

    stop = np.full(n, N)
    live = np.ones(n, dtype=bool)
    offgrid = np.zeros(n, dtype=bool)
    for j in range(N):
        idx = np.nonzero(live)[0]
        if idx.size == 0:
            break
        t = bundle.times[j]
        k = _previous_layer(layer_times, t)
        if k < 0:
            raise ConfigError("rule surface starts after the bundle")
        x = bundle.states[idx, j]
        v, inside = lookup(k, x)
        g = np.asarray(p.terminal(x), dtype=float)
        v = np.where(inside, v, g)
        now = v - g <= epsilon
        offgrid[idx[~inside]] = True
        stop[idx[now]] = j
        live[idx[now]] = False
    frac = float(offgrid.mean())
    if frac > max_offgrid:
        raise CoverageError(
            f"{100 * frac:.1f}% of paths left the surface's range; enlarge the box"
        )
    return _estimate(_gains(p, bundle, acc, stop), n, bundle.seed, tag, frac)
