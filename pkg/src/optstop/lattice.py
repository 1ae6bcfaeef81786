"""Recombining Markov-chain approximations and exact Snell envelopes.

Chains live on an index grid in a *lattice coordinate* ``y``: either the
state itself or its logarithm (``problem.coordinate == "log"``), chosen so
that the diffusion is close to constant there.  Transition probabilities
match the first two local moments of ``y``:

* binomial (d = 1): ``y +- h``, ``h = sigma_y sqrt(dt)``;
* trinomial (d = 1): ``y + {-h, 0, h}``, ``h = lambda sigma_y sqrt(dt)``;
* tensor-trinomial (d = 2): product of trinomial marginals plus a corner
  correction carrying the covariance.

With ``exact=True`` states and probabilities are ``Fraction`` objects and
every value below is computed without rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import isqrt

import numpy as np

from .enumeration.space import FiniteFilteredSpace, GainTable, StoppingTimeTable, bits
from .errors import AdaptednessError, ConfigError, SizeError, StabilityError
from .io import fmt
from .model import StoppingProblem

SCHEMES = ("binomial", "trinomial", "tensor-trinomial")
TRINOMIAL_STRETCH = 3**0.5
SPACING_DENOMINATOR = 1000


def _exact_sqrt(q):
    q = Fraction(q)
    n, d = isqrt(q.numerator), isqrt(q.denominator)
    if n * n != q.numerator or d * d != q.denominator:
        raise ConfigError(f"sqrt({q}) is irrational; pass an explicit rational spacing")
    return Fraction(n, d)


def _rational(v):
    """``Fraction`` with Python-int parts (numpy integers overflow silently)."""
    if isinstance(v, Fraction):
        return Fraction(int(v.numerator), int(v.denominator))
    if isinstance(v, (int, np.integer)):
        return Fraction(int(v))
    if isinstance(v, str):
        return Fraction(v)
    return Fraction(float(v))


def _lift(a, exact):
    """Exact mode: floats from coefficient functions become their exact rationals."""
    a = np.asarray(a)
    if not exact:
        return a
    out = np.empty(a.shape, dtype=object)
    out.ravel()[:] = [_rational(v) for v in a.ravel()]
    return out


def _offsets(scheme):
    if scheme == "binomial":
        return np.array([[-1], [1]])
    if scheme == "trinomial":
        return np.array([[-1], [0], [1]])
    return np.array([[a, c] for a in (-1, 0, 1) for c in (-1, 0, 1)])


def _layer_index(scheme, k):
    if scheme == "binomial":
        return (2 * np.arange(k + 1) - k)[:, None]
    r = np.arange(-k, k + 1)
    if scheme == "trinomial":
        return r[:, None]
    a, c = np.meshgrid(r, r, indexing="ij")
    return np.stack([a.ravel(), c.ravel()], axis=1)


def _node_of(scheme, k, idx):
    """Node number in layer ``k`` of lattice offsets ``idx`` (shape (..., d))."""
    if scheme == "binomial":
        return (idx[..., 0] + k) // 2
    if scheme == "trinomial":
        return idx[..., 0] + k
    return (idx[..., 0] + k) * (2 * k + 1) + (idx[..., 1] + k)


@dataclass(frozen=True)
class _Geometry:
    """Everything needed to generate layers on demand."""

    problem: StoppingProblem
    scheme: str
    t0: object
    dt: object
    n_steps: int
    y0: np.ndarray
    h: np.ndarray
    exact: bool

    def time(self, k):
        return self.t0 + k * self.dt

    def index(self, k):
        return _layer_index(self.scheme, k)

    def states(self, k):
        idx = self.index(k)
        if self.exact:
            y = np.empty(idx.shape, dtype=object)
            for j in range(idx.shape[1]):
                y[:, j] = [self.y0[j] + int(i) * self.h[j] for i in idx[:, j]]
        else:
            y = self.y0 + idx * self.h
        return np.exp(y) if self.problem.coordinate == "log" else y

    def children(self, k):
        idx = self.index(k)
        off = _offsets(self.scheme)
        return _node_of(self.scheme, k + 1, idx[:, None, :] + off[None, :, :])

    def probabilities(self, k, x=None):
        x = self.states(k) if x is None else x
        mu, cov = _lattice_moments(self.problem, self.time(k), x, self.exact)
        probs = _match(self.scheme, mu, cov, self.h, self.dt, self.exact)
        _check_probs(probs, k, self.exact)
        return probs


def _lattice_moments(p, t, x, exact=False):
    """Drift and covariance of the lattice coordinate at states ``x``."""
    mu = _lift(p.drift(t, x), exact)
    cov = _lift(p.covariance(t, x), exact)
    if p.coordinate == "log":
        xi = x[:, :, None] * x[:, None, :]
        diag = np.einsum("nii->ni", cov)
        mu = mu / x - diag / (2 * x * x)
        cov = cov / xi
    return mu, cov


def _match(scheme, mu, cov, h, dt, exact):
    one = Fraction(1) if exact else 1.0
    if scheme == "binomial":
        m1 = mu[:, 0] * dt
        var = cov[:, 0, 0] * dt
        target = h[0] * h[0]
        bad = (var != target) if exact else np.abs(var - target) > 1e-9 * target
        if np.any(bad):
            raise ConfigError(
                "binomial scheme needs a constant diffusion in the lattice coordinate; "
                "use the trinomial scheme"
            )
        up = (one + m1 / h[0]) / 2
        return np.stack([one - up, up], axis=1)

    def marginal(i):
        m1 = mu[:, i] * dt
        m2 = cov[:, i, i] * dt + m1 * m1
        a = m2 / (h[i] * h[i])
        b = m1 / h[i]
        pu = (a + b) / 2
        pd = (a - b) / 2
        return np.stack([pd, one - pu - pd, pu], axis=1)

    if scheme == "trinomial":
        return marginal(0)
    p1, p2 = marginal(0), marginal(1)
    corr = cov[:, 0, 1] * dt / (4 * h[0] * h[1])
    probs = p1[:, :, None] * p2[:, None, :]
    signs = np.array([[1, 0, -1], [0, 0, 0], [-1, 0, 1]])
    probs = probs + signs[None, :, :] * corr[:, None, None]
    return probs.reshape(len(mu), 9)


def _check_probs(probs, k, exact):
    lo = 0 if exact else -1e-14
    bad = np.argwhere((probs < lo) | (probs > 1 - lo))
    if len(bad):
        node, branch = bad[0]
        raise StabilityError(
            f"transition probability {probs[node, branch]} outside [0, 1] at layer {k}, "
            f"node {node}; reduce the time step"
        )


def _geometry(p, t0, x0, n_steps, scheme, exact=False, spacing=None, stretch=None):
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if n_steps < 1:
        raise ConfigError("n_steps must be at least 1")
    want_d = 2 if scheme == "tensor-trinomial" else 1
    if p.d != want_d:
        raise ConfigError(f"{scheme} lattices need d = {want_d}, problem has d = {p.d}")
    if exact and p.coordinate != "identity":
        raise ConfigError("exact lattices need the identity coordinate")
    if exact:
        t0 = _rational(t0)
        dt = (_rational(p.T) - t0) / n_steps
        x0 = np.array([_rational(v) for v in np.atleast_1d(np.asarray(x0, dtype=object))], dtype=object)
    else:
        t0 = float(t0)
        dt = (p.T - t0) / n_steps
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not dt > 0:
        raise ConfigError("t0 must lie before the horizon")
    if p.coordinate == "log":
        if np.any(x0 <= 0):
            raise ConfigError("log lattice needs a positive initial state")
        y0 = np.log(x0)
    else:
        y0 = x0
    if spacing is None:
        mu, cov = _lattice_moments(p, t0, x0[None, :], exact)
        h = []
        for i in range(p.d):
            var = cov[0, i, i] * dt
            if scheme == "binomial":
                if var == 0:
                    raise ConfigError("binomial scheme needs positive diffusion at the root")
                h.append(_exact_sqrt(var) if exact else float(np.sqrt(var)))
            elif var == 0:
                # no noise: one branch lands exactly on x + b dt
                drift = abs(mu[0, i])
                h.append((drift if drift != 0 else 1) * dt)
            else:
                lam = TRINOMIAL_STRETCH if stretch is None else stretch
                hi = lam * float(np.sqrt(float(var)))
                # exact chains need a rational spacing; the nearest small-denominator
                # rational keeps the stretch close to the float default
                h.append(Fraction(hi).limit_denominator(SPACING_DENOMINATOR) if exact else hi)
        spacing = h
    h = np.array([_rational(v) for v in spacing], dtype=object) if exact else \
        np.asarray(spacing, dtype=float).reshape(p.d)
    return _Geometry(p, scheme, t0, dt, n_steps, y0, h, exact)


@dataclass(frozen=True)
class ChainApprox:
    scheme: str
    t0: object
    dt: object
    coordinate: str
    exact: bool
    spacing: np.ndarray
    layers: list  # per k: (n_k, d) states
    children: list  # per k < N: (n_k, branches) child node numbers in layer k+1
    probs: list  # per k < N: (n_k, branches)

    @property
    def n_steps(self):
        return len(self.layers) - 1

    @property
    def d(self):
        return self.layers[0].shape[1]

    @property
    def times(self):
        return [self.t0 + k * self.dt for k in range(self.n_steps + 1)]

    @cached_property
    def paths(self):
        return chain_path_space(self)


def build_chain(p: StoppingProblem, t0, x0, n_steps: int, scheme: str = "trinomial",
                exact: bool = False, spacing=None, stretch=None) -> ChainApprox:
    """Recombining lattice rooted at ``x0`` with moment-matched transitions."""
    geo = _geometry(p, t0, x0, n_steps, scheme, exact, spacing, stretch)
    layers, children, probs = [], [], []
    for k in range(n_steps + 1):
        x = geo.states(k)
        layers.append(x)
        if k < n_steps:
            children.append(geo.children(k))
            probs.append(geo.probabilities(k, x))
    return ChainApprox(scheme, geo.t0, geo.dt, p.coordinate, exact, geo.h, layers, children, probs)


def _relative(err, target):
    scale = np.abs(target)
    return np.where(scale > 0, np.abs(err) / np.where(scale > 0, scale, 1), np.abs(err))


def moment_errors(chain: ChainApprox, p: StoppingProblem):
    """Per layer, the largest relative mismatch of the local mean and covariance.

    At each node ``E[dX]`` is compared with ``b dt`` and ``Cov[dX]`` with
    ``sigma sigma^T dt``; components whose target vanishes contribute their
    absolute error.  Returns arrays ``mean_err[k]``, ``cov_err[k]`` for ``k < N``.
    """
    mean_err, cov_err = [], []
    for k in range(chain.n_steps):
        x = np.asarray(chain.layers[k], dtype=float)
        nxt = np.asarray(chain.layers[k + 1], dtype=float)[chain.children[k]]  # (n, B, d)
        w = np.asarray(chain.probs[k], dtype=float)
        dx = nxt - x[:, None, :]
        mean = np.einsum("nb,nbi->ni", w, dx)
        second = np.einsum("nb,nbi,nbj->nij", w, dx, dx)
        cov = second - mean[:, :, None] * mean[:, None, :]
        t = float(chain.times[k])
        dt = float(chain.dt)
        b = p.drift(t, x) * dt
        c = p.covariance(t, x) * dt
        mean_err.append(np.max(_relative(mean - b, b)))
        cov_err.append(np.max(_relative(cov - c, c)))
    return np.array(mean_err), np.array(cov_err)


# Snell envelope --------------------------------------------------------------

@dataclass
class ValueSurface:
    chain: ChainApprox
    values: list  # per layer (n_k,)
    obstacle: list  # g at each node
    running: list  # f(t_k, x) dt per node, k < N
    continuation_value: list  # running + E[V_{k+1}], k < N
    continuation_flag: list  # per layer, strict continuation > obstacle

    @property
    def root_value(self):
        return self.values[0][0]


def _backward_step(values_next, children, probs, running, obstacle):
    cont = running + (probs * values_next[children]).sum(axis=1)
    return np.maximum(obstacle, cont), cont


def _obstacle(p, x, exact):
    g = p.terminal(x)
    return _lift(g, True) if exact else np.asarray(g, dtype=float)


def _running(p, t, x, dt, exact):
    f = p.running(t, x)
    return (_lift(f, True) if exact else np.asarray(f, dtype=float)) * dt


def snell_envelope(chain: ChainApprox, p: StoppingProblem) -> ValueSurface:
    """``V_N = g``, ``V_k = max(g, f dt + E[V_{k+1}])`` on every node."""
    N = chain.n_steps
    times = chain.times
    obstacle = [_obstacle(p, x, chain.exact) for x in chain.layers]
    running = [_running(p, times[k], chain.layers[k], chain.dt, chain.exact) for k in range(N)]
    values = [None] * (N + 1)
    cont = [None] * N
    values[N] = obstacle[N].copy()
    for k in range(N - 1, -1, -1):
        values[k], cont[k] = _backward_step(
            values[k + 1], chain.children[k], chain.probs[k], running[k], obstacle[k]
        )
    flags = [c > g for c, g in zip(cont, obstacle)]
    flags.append(np.zeros(len(obstacle[N]), dtype=bool))
    flags = [np.asarray(f, dtype=bool) for f in flags]
    return ValueSurface(chain, values, obstacle, running, cont, flags)


def root_value(p: StoppingProblem, t0, x0, n_steps: int, scheme: str = "binomial",
               exact: bool = False, spacing=None, stretch=None):
    """Snell value at the root without storing the lattice (large ``n_steps``)."""
    geo = _geometry(p, t0, x0, n_steps, scheme, exact, spacing, stretch)
    x = geo.states(n_steps)
    values = _obstacle(p, x, exact)
    for k in range(n_steps - 1, -1, -1):
        x = geo.states(k)
        values, _ = _backward_step(
            values, geo.children(k), geo.probabilities(k, x),
            _running(p, geo.time(k), x, geo.dt, exact), _obstacle(p, x, exact),
        )
    return values[0]


@dataclass(frozen=True)
class StoppingRule:
    """Stop at a node iff ``value - obstacle <= epsilon``."""

    stop: list  # per layer boolean arrays
    epsilon: object

    def continuation_region(self, k):
        return np.nonzero(~self.stop[k])[0]


def default_epsilon(values, exact):
    if exact:
        return Fraction(0)
    scale = max(float(np.max(np.abs(np.asarray(v, dtype=float)))) for v in values)
    return 10 * np.finfo(float).eps * scale


def smallest_optimal_rule(surface: ValueSurface, epsilon=None) -> StoppingRule:
    if epsilon is None:
        epsilon = default_epsilon(surface.values, surface.chain.exact)
    stop = [np.asarray(v - g <= epsilon, dtype=bool) for v, g in zip(surface.values, surface.obstacle)]
    stop[-1] = np.ones_like(stop[-1])
    return StoppingRule(stop, epsilon)


def verify_supermartingale(surface: ValueSurface, chain: ChainApprox = None, p=None):
    """Supermartingale violation and the martingale gap on continuation nodes."""
    chain = chain or surface.chain
    violation = 0
    gap = 0
    for k in range(chain.n_steps):
        step = surface.running[k] + (chain.probs[k] * surface.values[k + 1][chain.children[k]]).sum(axis=1)
        diff = step - surface.values[k]
        violation = max(violation, max(max(diff), 0))
        flag = surface.continuation_flag[k]
        if np.any(flag):
            gap = max(gap, max(abs(diff[flag])))
    return {"max_violation": violation, "equality_gap_on_continuation": gap}


# path space view ---------------------------------------------------------------

PATH_CAP = 200_000


@dataclass(frozen=True)
class ChainPaths:
    """Non-recombining expansion of a chain: one atom per positive-probability path."""

    space: FiniteFilteredSpace
    nodes: np.ndarray  # (n_atoms, N+1) node number at each layer
    edge_prob: list  # per k >= 1: (n_blocks_k,) probability of the edge into each F_k block


def chain_path_space(chain: ChainApprox, cap=PATH_CAP) -> ChainPaths:
    paths = [((0,), Fraction(1) if chain.exact else 1.0, ())]
    for k in range(chain.n_steps):
        nxt = []
        for nodes, pr, edges in paths:
            n = nodes[-1]
            for child, q in zip(chain.children[k][n], chain.probs[k][n]):
                if q > 0:
                    nxt.append((nodes + (int(child),), pr * q, edges + (q,)))
        paths = nxt
        if len(paths) > cap:
            raise SizeError(f"chain has more than {cap} paths", len(paths))
    probs = tuple(pr for _, pr, _ in paths)
    if not chain.exact:
        total = sum(probs)
        probs = tuple(pr / total for pr in probs)
    nodes = np.array([n for n, _, _ in paths])
    partitions = []
    edge_prob = [None]
    for k in range(chain.n_steps + 1):
        groups = {}
        for i, (n, _, e) in enumerate(paths):
            groups.setdefault(n[: k + 1], []).append(i)
        blocks = [sum(1 << i for i in grp) for _, grp in sorted(groups.items(), key=lambda kv: kv[1][0])]
        partitions.append(tuple(blocks))
        if k:
            edge_prob.append(np.array(
                [paths[grp[0]][2][k - 1] for _, grp in sorted(groups.items(), key=lambda kv: kv[1][0])],
                dtype=object if chain.exact else float,
            ))
    space = FiniteFilteredSpace(probs, tuple(chain.times), tuple(partitions))
    return ChainPaths(space, nodes, edge_prob)


def chain_gains(chain: ChainApprox, surface: ValueSurface) -> GainTable:
    """Gains on the path space: ``f dt`` increments and obstacle values."""
    nodes = chain.paths.nodes
    running = tuple(tuple(surface.running[k][nodes[:, k]]) for k in range(chain.n_steps))
    terminal = tuple(tuple(surface.obstacle[k][nodes[:, k]]) for k in range(chain.n_steps + 1))
    return GainTable(running, terminal)


def rule_stopping_time(chain: ChainApprox, rule: StoppingRule) -> StoppingTimeTable:
    """First layer at which the rule says stop, per path."""
    nodes = chain.paths.nodes
    stop = []
    for row in nodes:
        for k, n in enumerate(row):
            if rule.stop[k][n]:
                stop.append(k)
                break
    return StoppingTimeTable(tuple(stop))


def verify_dpp(chain: ChainApprox, surface: ValueSurface, tau_prime: StoppingTimeTable):
    """``|v(0, x0) - max_tau E[... v(tau', X_tau') 1{tau >= tau'}]|``.

    The inner maximum is a backward induction on the path tree in which
    values are frozen at ``v`` on ``{tau' = k}``.
    """
    cp = chain.paths
    space = cp.space
    if not space.is_adapted(tau_prime):
        raise AdaptednessError("tau' is not adapted to the chain filtration")
    N = chain.n_steps
    W = [None] * (N + 1)
    for k in range(N, -1, -1):
        part = space.partitions[k]
        row = []
        for b, mask in enumerate(part):
            i = bits(mask & -mask)[0]
            node = cp.nodes[i, k]
            tp = tau_prime.stop[i]
            if tp <= k:
                row.append(surface.values[k][node])
                continue
            kids = space.children[k][b]
            acc = None
            for c in kids:
                term = cp.edge_prob[k + 1][c] * W[k + 1][c]
                acc = term if acc is None else acc + term
            cont = surface.running[k][node] + acc
            g = surface.obstacle[k][node]
            row.append(g if g >= cont else cont)
        W[k] = row
    return abs(surface.values[0][0] - W[0][0])


# export ---------------------------------------------------------------------------

def surface_rows(surface: ValueSurface):
    chain = surface.chain
    for k, x in enumerate(chain.layers):
        t = chain.times[k]
        for n in range(len(x)):
            yield [k, t, n, *x[n], surface.values[k][n], surface.obstacle[k][n],
                   bool(surface.continuation_flag[k][n])]


def export_surface_csv(surface: ValueSurface, path):
    """Rows ``layer,time,node,x_1..x_d,value,obstacle,continuation`` by layer then node."""
    d = surface.chain.d
    header = ["layer", "time", "node"] + [f"x_{j + 1}" for j in range(d)] + \
        ["value", "obstacle", "continuation"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in surface_rows(surface):
            fh.write(",".join(fmt(v) for v in row) + "\n")


def export_rule_csv(surface: ValueSurface, rule: StoppingRule, path):
    """Rows ``layer,time,node,x_1..x_d,stop``."""
    chain = surface.chain
    header = ["layer", "time", "node"] + [f"x_{j + 1}" for j in range(chain.d)] + ["stop"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k, x in enumerate(chain.layers):
            for n in range(len(x)):
                row = [k, chain.times[k], n, *x[n], bool(rule.stop[k][n])]
                fh.write(",".join(fmt(v) for v in row) + "\n")
