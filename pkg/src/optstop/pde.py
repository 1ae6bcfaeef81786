"""Finite differences for the obstacle problem ``max{v_t + L v + f, g - v} = 0``.

Space is a tensor grid (d <= 2) with central differences; cross
derivatives use the four-point stencil.  Time stepping is the theta scheme
going backward from ``v(T) = g``; every step is a linear complementarity
problem

    A v >= rhs,   v >= g,   (A v - rhs) * (v - g) = 0,

solved by projected SOR, by policy (Howard) iteration, or, for the fully
explicit scheme, by projecting the explicit update onto ``v >= g``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numba
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .errors import ConfigError, ConvergenceError, StabilityError, StencilError
from .io import dumps, fmt
from .model import StoppingProblem

SCHEMES = ("psor", "policy-iteration", "explicit-projection")
BOUNDARY_MODES = ("dirichlet-g", "linear-extrapolation")


@dataclass(frozen=True)
class Grid:
    box: tuple  # ((lo, hi), ...) per dimension
    n_space: tuple  # points per dimension
    n_time: int
    boundary_mode: str = "dirichlet-g"
    t0: float = 0.0
    T: float = 1.0

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        n = tuple(int(v) for v in np.atleast_1d(self.n_space))
        if len(n) == 1 and len(box) > 1:
            n = n * len(box)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "n_space", n)
        if not 1 <= len(box) <= 2:
            raise ConfigError("PDE grids support d = 1 or 2")
        if len(n) != len(box):
            raise ConfigError("n_space and box disagree on the dimension")
        if any(not lo < hi for lo, hi in box):
            raise ConfigError("every box side needs lo < hi")
        if any(v < 3 for v in n):
            raise ConfigError("n_space must be at least 3")
        if self.n_time < 1:
            raise ConfigError("n_time must be at least 1")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ConfigError(f"boundary_mode must be one of {BOUNDARY_MODES}")
        if not self.T > self.t0:
            raise ConfigError("grid needs t0 < T")

    @property
    def d(self):
        return len(self.box)

    @property
    def shape(self):
        return self.n_space

    @property
    def n_nodes(self):
        return int(np.prod(self.n_space))

    @property
    def axes(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.box, self.n_space)]

    @property
    def h(self):
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.box, self.n_space)])

    @property
    def dt(self):
        return (self.T - self.t0) / self.n_time

    @property
    def times(self):
        return np.linspace(self.t0, self.T, self.n_time + 1)

    @property
    def nodes(self):
        """Node coordinates, C order (last dimension fastest)."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def boundary(self):
        idx = np.indices(self.n_space).reshape(self.d, -1)
        mask = np.zeros(self.n_nodes, dtype=bool)
        for j, n in enumerate(self.n_space):
            mask |= (idx[j] == 0) | (idx[j] == n - 1)
        return mask


def default_grid(p: StoppingProblem, x0, n_space, n_time, t0=0.0, n_std=6.0,
                 boundary_mode="dirichlet-g") -> Grid:
    """Box of ``n_std`` standard deviations of the driftless linearized process.

    For problems with a positive state the lower side is clipped at 0.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    cov = p.covariance(t0, x0)
    std = np.sqrt(np.diag(cov) * (p.T - t0))
    std = np.where(std > 0, std, 1.0)
    lo = x0 - n_std * std
    hi = x0 + n_std * std
    if p.positive_state:
        lo = np.maximum(lo, 0.0)
    return Grid(tuple(zip(lo, hi)), n_space, n_time, boundary_mode, t0, p.T)


# spatial operator ----------------------------------------------------------------

def _strides(shape):
    return [int(np.prod(shape[j + 1:])) for j in range(len(shape))]


def generator_matrix(p: StoppingProblem, grid: Grid, t):
    """Sparse ``L_h`` at time ``t``; boundary rows are zero."""
    x = grid.nodes
    interior = np.nonzero(~grid.boundary)[0]
    xi = x[interior]
    b = np.asarray(p.drift(t, xi), dtype=float)
    a = np.asarray(p.covariance(t, xi), dtype=float) / 2
    h = grid.h
    st = _strides(grid.shape)
    rows, cols, vals = [], [], []

    def add(offset, w):
        rows.append(interior)
        cols.append(interior + offset)
        vals.append(w)

    centre = np.zeros(len(interior))
    for j in range(grid.d):
        up = b[:, j] / (2 * h[j]) + a[:, j, j] / h[j] ** 2
        down = -b[:, j] / (2 * h[j]) + a[:, j, j] / h[j] ** 2
        add(st[j], up)
        add(-st[j], down)
        centre -= 2 * a[:, j, j] / h[j] ** 2
    if grid.d == 2:
        w = 2 * a[:, 0, 1] / (4 * h[0] * h[1])
        for s0, s1 in product((1, -1), repeat=2):
            add(s0 * st[0] + s1 * st[1], s0 * s1 * w)
    add(0, centre)
    L = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_nodes, grid.n_nodes),
    )
    return L


def generator_apply(p: StoppingProblem, grid: Grid, phi, k: int, node: int):
    """``(L_h phi)`` at one interior node of layer ``k``."""
    if grid.boundary[node]:
        raise StencilError(f"node {node} lies on the boundary; the stencil needs neighbours")
    phi = np.asarray(phi, dtype=float).ravel()
    L = generator_matrix(p, grid, grid.times[k])
    row = L.getrow(node)
    return float(row.data @ phi[row.indices])


def _running(p, grid, t):
    return np.asarray(p.running(t, grid.nodes), dtype=float)


def _cfl(p, grid, t):
    x = grid.nodes[~grid.boundary]
    cov = np.asarray(p.covariance(t, x), dtype=float)
    diag = np.einsum("nii->ni", cov)
    return grid.dt * float(np.max((diag / grid.h**2).sum(axis=1)))


# linear complementarity solvers --------------------------------------------------

@numba.njit(cache=True)
def _psor(indptr, indices, data, rhs, lower, v, omega, tol, max_iter):
    n = len(rhs)
    err = np.inf
    for it in range(max_iter):
        err = 0.0
        for i in range(n):
            s = rhs[i]
            diag = 0.0
            for q in range(indptr[i], indptr[i + 1]):
                j = indices[q]
                if j == i:
                    diag = data[q]
                else:
                    s -= data[q] * v[j]
            new = v[i] + omega * (s / diag - v[i])
            if new < lower[i]:
                new = lower[i]
            e = abs(new - v[i])
            if e > err:
                err = e
            v[i] = new
        if err < tol:
            return it + 1, err
    return -1, err


def _policy_iteration(A, rhs, lower, v, tol, max_iter):
    n = len(rhs)
    eye = sp.identity(n, format="csr")
    active = None
    for it in range(max_iter):
        new_active = (A @ v - rhs) > (v - lower)
        if active is not None and np.array_equal(new_active, active):
            return v, it
        active = new_active
        keep = sp.diags((~active).astype(float))
        pin = sp.diags(active.astype(float))
        M = (keep @ A + pin @ eye).tocsc()
        v = spsolve(M, np.where(active, lower, rhs))
    res = float(np.max(np.minimum(np.abs(A @ v - rhs), np.abs(v - lower))))
    raise ConvergenceError(f"policy iteration did not settle in {max_iter} iterations", res)


def _boundary_rows(grid):
    """Row spec for each boundary node: ``(node, inner1, inner2)`` along its first boundary axis."""
    idx = np.indices(grid.shape).reshape(grid.d, -1)
    st = _strides(grid.shape)
    out = []
    for node in np.nonzero(grid.boundary)[0]:
        for j, n in enumerate(grid.shape):
            if idx[j, node] == 0:
                out.append((node, node + st[j], node + 2 * st[j]))
                break
            if idx[j, node] == n - 1:
                out.append((node, node - st[j], node - 2 * st[j]))
                break
    return out


def _system(L, grid, theta, dt, brows):
    """``I - theta dt L`` with boundary rows replaced according to the mode."""
    n = grid.n_nodes
    A = (sp.identity(n, format="csr") - theta * dt * L).tolil()
    if grid.boundary_mode == "linear-extrapolation":
        for node, i1, i2 in brows:
            A.rows[node] = []
            A.data[node] = []
            A[node, node] = 1.0
            A[node, i1] = -2.0
            A[node, i2] = 1.0
    else:
        for node, _, _ in brows:
            A.rows[node] = [node]
            A.data[node] = [1.0]
    return A.tocsr()


def _extrapolate(v, grid):
    w = v.reshape(grid.shape).copy()
    for j in range(grid.d):
        w = np.moveaxis(w, j, 0)
        w[0] = 2 * w[1] - w[2]
        w[-1] = 2 * w[-2] - w[-3]
        w = np.moveaxis(w, 0, j)
    return w.ravel()


@dataclass
class PdeSurface:
    grid: Grid
    values: np.ndarray  # (n_time + 1, n_nodes)
    obstacle: np.ndarray  # (n_nodes,)
    active: np.ndarray  # (n_time + 1, n_nodes) bool
    scheme: str
    theta: float
    tol: float
    iterations: list = field(default_factory=list)

    @property
    def times(self):
        return self.grid.times

    def value_at(self, x, k=0):
        """Multilinear interpolation of layer ``k`` at points ``x`` (shape (n, d))."""
        vals, _ = interpolate(self.grid, self.values[k], x)
        return vals


def active_threshold(values, tol):
    return max(tol, 1e-12 * float(np.max(np.abs(values))))


def solve_variational_inequality(p: StoppingProblem, grid: Grid, scheme: str = "psor",
                                 theta_weight: float = 0.5, tol: float = 1e-9,
                                 max_iter: int = 10_000, omega: float = 1.2,
                                 rannacher_steps: int = 2) -> PdeSurface:
    """Backward theta-scheme; each step an LCP solved by ``scheme``.

    ``rannacher_steps`` initial steps (from the horizon) are fully implicit.
    ``explicit-projection`` ignores ``theta_weight`` and checks the CFL bound.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    if grid.d != p.d:
        raise ConfigError(f"grid has d = {grid.d}, problem has d = {p.d}")
    if not 0 <= theta_weight <= 1:
        raise ConfigError("theta_weight must lie in [0, 1]")
    if abs(grid.T - p.T) > 1e-12:
        raise ConfigError("grid horizon differs from the problem horizon")
    N = grid.n_time
    dt = grid.dt
    times = grid.times
    g = np.asarray(p.terminal(grid.nodes), dtype=float)
    V = np.empty((N + 1, grid.n_nodes))
    V[N] = g
    brows = _boundary_rows(grid)
    bnodes = np.array([r[0] for r in brows], dtype=int)
    L_next = generator_matrix(p, grid, times[N])
    f_next = _running(p, grid, times[N])
    iterations = []
    for k in range(N - 1, -1, -1):
        L_k = generator_matrix(p, grid, times[k])
        f_k = _running(p, grid, times[k])
        v_next = V[k + 1]
        if scheme == "explicit-projection":
            c = _cfl(p, grid, times[k + 1])
            if c > 1:
                raise StabilityError(
                    f"explicit step violates the CFL bound (dt * sum a/h^2 = {c:.3g} > 1); "
                    "use more time steps"
                )
            v = v_next + dt * (L_next @ v_next + f_next)
            if grid.boundary_mode == "linear-extrapolation":
                v = _extrapolate(v, grid)
            else:
                v[bnodes] = g[bnodes]
            V[k] = np.maximum(v, g)
            iterations.append(1)
        else:
            theta = 1.0 if N - 1 - k < rannacher_steps else theta_weight
            rhs = v_next + (1 - theta) * dt * (L_next @ v_next) + dt * (theta * f_k + (1 - theta) * f_next)
            rhs[bnodes] = 0.0 if grid.boundary_mode == "linear-extrapolation" else g[bnodes]
            A = _system(L_k, grid, theta, dt, brows)
            start = np.maximum(v_next, g)
            if scheme == "psor":
                v = start.copy()
                its, err = _psor(A.indptr, A.indices, A.data, rhs, g, v, omega, tol, max_iter)
                if its < 0:
                    raise ConvergenceError(
                        f"PSOR did not converge in {max_iter} sweeps at layer {k}", err
                    )
            else:
                v, its = _policy_iteration(A, rhs, g, start, tol, max_iter)
            V[k] = v
            iterations.append(its)
        L_next, f_next = L_k, f_k
    thr = active_threshold(V, tol)
    active = (V - g) <= thr
    return PdeSurface(grid, V, g, active, scheme, theta_weight, tol, iterations[::-1])


# interpolation ----------------------------------------------------------------------

def interpolate(grid: Grid, field_values, x):
    """Multilinear interpolation; returns (values, inside) with clipped values outside."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    fv = np.asarray(field_values, dtype=float).reshape(grid.shape)
    lo = np.array([b[0] for b in grid.box])
    hi = np.array([b[1] for b in grid.box])
    inside = np.all((x >= lo) & (x <= hi), axis=1)
    u = (np.clip(x, lo, hi) - lo) / grid.h
    n = np.array(grid.shape)
    i0 = np.minimum(np.floor(u).astype(int), n - 2)
    w = u - i0
    out = np.zeros(len(x))
    for corner in product((0, 1), repeat=grid.d):
        c = np.array(corner)
        weight = np.prod(np.where(c, w, 1 - w), axis=1)
        out += weight * fv[tuple((i0 + c).T)]
    return out, inside


# reports ------------------------------------------------------------------------------

def pde_residual(surface: PdeSurface, p: StoppingProblem):
    """``(v_{k+1} - v_k)/dt + L_h v_k + f`` at every layer ``k < N`` (boundary rows 0)."""
    grid = surface.grid
    V = surface.values
    R = np.zeros((grid.n_time, grid.n_nodes))
    for k in range(grid.n_time):
        t = grid.times[k]
        R[k] = (V[k + 1] - V[k]) / grid.dt + generator_matrix(p, grid, t) @ V[k] + _running(p, grid, t)
    R[:, grid.boundary] = 0.0
    return R


def viscosity_residual_report(surface: PdeSurface, p: StoppingProblem, grid: Grid = None,
                              t_max: float = None):
    """Equation residual where the solution is numerically smooth.

    A consistency check of the discrete solution against the variational
    inequality; it does not test the viscosity property itself.  With
    ``t_max`` the interior and complementarity maxima only cover layers with
    ``t <= t_max`` (the terminal kink of the obstacle dominates near ``T``).
    """
    grid = grid or surface.grid
    V, g = surface.values, surface.obstacle
    R = pde_residual(surface, p)
    interior = ~grid.boundary
    gap = V[:-1] - g
    cont = (~surface.active[:-1]) & interior
    rows = np.ones(grid.n_time, dtype=bool)
    if t_max is not None:
        rows = grid.times[:-1] <= t_max + 1e-12 * max(1.0, abs(t_max))
    cont &= rows[:, None]
    comp = np.minimum(np.abs(R), np.abs(gap))[rows][:, interior]
    return {
        "terminal_gap": float(np.max(np.abs(V[-1] - g))),
        "obstacle_violation": float(max(np.max(g - V), 0.0)),
        "interior_pde_residual_on_continuation": float(np.max(np.abs(R[cont]))) if cont.any() else 0.0,
        "complementarity_max": float(np.max(comp)) if comp.size else 0.0,
    }


@dataclass
class ContinuationRegion:
    masks: np.ndarray  # (n_time + 1, n_nodes) v - g > epsilon
    boundaries: list  # d = 1: per layer, abscissae where v - g - epsilon changes sign
    flags: list  # non-fatal notes about single-node oscillation
    epsilon: float

    def boundary(self, k):
        """First free-boundary abscissa at layer ``k`` (nan when there is none)."""
        b = self.boundaries[k]
        return float(b[0]) if len(b) else float("nan")


def _crossing(x0, x1, y0, y1, iters=60):
    # bisection on the linear interpolant between two nodes
    lo, hi, flo = x0, x1, y0
    for _ in range(iters):
        mid = (lo + hi) / 2
        fm = y0 + (y1 - y0) * (mid - x0) / (x1 - x0)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return (lo + hi) / 2


def extract_continuation_region(surface: PdeSurface, epsilon=None) -> ContinuationRegion:
    grid = surface.grid
    if epsilon is None:
        epsilon = active_threshold(surface.values, surface.tol)
    diff = surface.values - surface.obstacle - epsilon
    masks = diff > 0
    interior = ~grid.boundary
    masks &= interior
    boundaries = []
    if grid.d == 1:
        x = grid.axes[0]
        for k in range(grid.n_time + 1):
            row = np.where(masks[k], diff[k], np.minimum(diff[k], 0.0))
            pts = []
            for i in range(1, grid.shape[0] - 2):
                if (row[i] > 0) != (row[i + 1] > 0):
                    pts.append(_crossing(x[i], x[i + 1], row[i], row[i + 1]))
            boundaries.append(np.array(pts))
    else:
        boundaries = [np.array([])] * (grid.n_time + 1)
    counts = masks.sum(axis=1)
    flags = []
    for k in range(1, grid.n_time):
        a, b = counts[k] - counts[k - 1], counts[k + 1] - counts[k]
        if a * b < 0 and max(abs(a), abs(b)) <= 1:
            flags.append(f"layer {k}: region size oscillates by a single node")
    return ContinuationRegion(masks, boundaries, flags, float(epsilon))


# export ---------------------------------------------------------------------------------

def export_surface_csv(surface: PdeSurface, path):
    """Rows ``layer,time,node_index,x_1[,x_2],value,obstacle,active`` by layer then node."""
    grid = surface.grid
    x = grid.nodes
    header = ["layer", "time", "node_index"] + [f"x_{j + 1}" for j in range(grid.d)] + \
        ["value", "obstacle", "active"]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k, t in enumerate(grid.times):
            for n in range(grid.n_nodes):
                row = [k, t, n, *x[n], surface.values[k, n], surface.obstacle[n], bool(surface.active[k, n])]
                fh.write(",".join(fmt(v) for v in row) + "\n")


def write_report_json(report, path):
    with open(path, "w") as fh:
        fh.write(dumps(report))


def export_plot_data(surface: PdeSurface, region: ContinuationRegion, path_profile, path_boundary):
    """``x_1..x_d,value,obstacle`` at the first layer, and ``time,boundary`` (d = 1)."""
    grid = surface.grid
    with open(path_profile, "w") as fh:
        fh.write(",".join([f"x_{j + 1}" for j in range(grid.d)] + ["value", "obstacle"]) + "\n")
        for n, xn in enumerate(grid.nodes):
            fh.write(",".join(fmt(v) for v in [*xn, surface.values[0, n], surface.obstacle[n]]) + "\n")
    with open(path_boundary, "w") as fh:
        fh.write("time,boundary\n")
        for k, t in enumerate(grid.times):
            fh.write(f"{fmt(t)},{fmt(region.boundary(k))}\n")


__all__ = [
    "Grid", "PdeSurface", "ContinuationRegion", "default_grid", "generator_matrix",
    "generator_apply", "solve_variational_inequality", "interpolate", "pde_residual",
    "viscosity_residual_report", "extract_continuation_region", "export_surface_csv",
    "write_report_json", "export_plot_data",
]
