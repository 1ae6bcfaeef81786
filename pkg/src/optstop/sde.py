"""Seeded Euler-Maruyama simulation with retained Brownian increments.

Randomness is drawn per block of ``BLOCK`` paths from a Philox stream keyed
by ``(seed, block)``, path-major within the block, so path ``i`` sees the
same normals whatever ``n_paths`` is and however blocks are scheduled.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError, EvaluationError
from .io import fmt
from .model import StoppingProblem

BLOCK = 256


@dataclass(frozen=True)
class PathBundle:
    t0: float
    times: np.ndarray  # (n_steps + 1,)
    states: np.ndarray  # (n_paths, n_steps + 1, d)
    increments: np.ndarray  # (n_paths, n_steps, m)
    seed: int

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def n_steps(self):
        return len(self.times) - 1

    @property
    def x0(self):
        return self.states[0, 0]


def block_normals(seed: int, block: int, n_paths: int, n_steps: int, m: int):
    gen = np.random.Generator(np.random.Philox(key=int(seed) + (int(block) << 64)))
    return gen.standard_normal((n_paths, n_steps, m))


def _step(p, t, x, dt, dw):
    drift = p.drift(t, x)
    sig = p.diffusion(t, x)
    noise = sig[..., 0] * dw[:, None, 0]
    for j in range(1, dw.shape[1]):
        noise = noise + sig[..., j] * dw[:, None, j]
    return x + drift * dt + noise


def _first_bad_row(p, t, x):
    """Row whose coefficients are the first to fail (for error reporting)."""
    for r in range(len(x)):
        try:
            p.drift(t, x[r : r + 1])
            p.diffusion(t, x[r : r + 1])
        except EvaluationError:
            return r
    return 0


def _integrate(p, times, x_start, dws, first_path, start=None):
    """Euler recursion over ``times``; ``start[i]`` delays path ``i``'s start."""
    n, n_steps, _ = dws.shape
    states = np.empty((n, n_steps + 1, x_start.shape[-1]))
    states[:, 0] = x_start if start is None else np.nan
    if start is None:
        start = np.zeros(n, dtype=int)
    else:
        rows = np.arange(n)
        states[rows, start] = x_start
    with np.errstate(all="ignore"):
        for i in range(n_steps):
            active = np.nonzero(start <= i)[0]
            if active.size == 0:
                continue
            dt = times[i + 1] - times[i]
            try:
                nxt = _step(p, times[i], states[active, i], dt, dws[active, i])
            except EvaluationError as exc:
                raise DivergenceError(first_path + int(active[_first_bad_row(p, times[i], states[active, i])]), i) from exc
            bad = ~np.isfinite(nxt).all(axis=1)
            if bad.any():
                raise DivergenceError(first_path + int(active[np.argmax(bad)]), i + 1)
            states[active, i + 1] = nxt
    return states


def simulate(p: StoppingProblem, t0: float, x0, n_steps: int, n_paths: int, seed: int,
             workers: int = 1) -> PathBundle:
    """Euler-Maruyama paths of ``X^{t0,x0}`` on a uniform grid of ``[t0, T]``."""
    if not 0 <= t0 < p.T:
        raise ConfigError(f"t0={t0} must lie in [0, T)")
    if n_steps < 1 or n_paths < 1:
        raise ConfigError("n_steps and n_paths must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (p.d,):
        raise DimensionError(f"initial state has shape {x0.shape}, expected ({p.d},)")
    times = np.linspace(t0, p.T, n_steps + 1)
    sqrt_dt = np.sqrt(np.diff(times))[None, :, None]

    def run(block):
        lo = block * BLOCK
        n = min(BLOCK, n_paths - lo)
        dws = block_normals(seed, block, n, n_steps, p.m) * sqrt_dt
        states = _integrate(p, times, np.broadcast_to(x0, (n, p.d)), dws, lo)
        return states, dws

    blocks = range((n_paths + BLOCK - 1) // BLOCK)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    states = np.concatenate([s for s, _ in parts])
    dws = np.concatenate([w for _, w in parts])
    return PathBundle(float(t0), times, states, dws, int(seed))


def restart_at(p: StoppingProblem, bundle: PathBundle, stop_indices) -> PathBundle:
    """Restart every path at its own index from the stopped state.

    The retained increments from the stop index onward are replayed, so the
    tails reproduce the original bundle bitwise.  Entries before a path's
    stop index are copied from the input.
    """
    stop = np.asarray(stop_indices, dtype=int)
    if stop.shape != (bundle.n_paths,):
        raise DimensionError("need one stop index per path")
    if stop.size and (stop.min() < 0 or stop.max() > bundle.n_steps):
        raise DimensionError(f"stop index outside [0, {bundle.n_steps}]")
    rows = np.arange(bundle.n_paths)
    x_start = bundle.states[rows, stop]
    tails = _integrate(p, bundle.times, x_start, bundle.increments, 0, start=stop)
    keep = np.arange(bundle.n_steps + 1)[None, :] < stop[:, None]
    states = np.where(keep[..., None], bundle.states, tails)
    return PathBundle(bundle.t0, bundle.times, states, bundle.increments, bundle.seed)


def moment_check(bundle: PathBundle, p_exponent: int):
    """Empirical ``E[sup_s |X_s|^p]`` and its ratio to ``1 + |x0|^p``."""
    if p_exponent < 2:
        raise ConfigError("moment exponent must be at least 2")
    norms = np.linalg.norm(bundle.states, axis=2)
    sup_moment = float(np.mean(np.max(norms, axis=1) ** p_exponent))
    x0 = float(np.linalg.norm(bundle.x0))
    return {"sup_moment": sup_moment, "bound_ratio": sup_moment / (1.0 + x0**p_exponent)}


def bundle_rows(bundle: PathBundle):
    d = bundle.states.shape[2]
    for i in range(bundle.n_paths):
        for k in range(bundle.n_steps + 1):
            yield [i, k, bundle.times[k], *(bundle.states[i, k, j] for j in range(d))]


def export_csv(bundle: PathBundle, path):
    """Rows ``path,step,time,x_1..x_d`` ordered by path then step."""
    d = bundle.states.shape[2]
    header = ["path", "step", "time"] + [f"x_{j + 1}" for j in range(d)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in bundle_rows(bundle):
            fh.write(",".join(fmt(v) for v in row) + "\n")
