"""Exact conditional values on finite spaces by exhaustive enumeration.

All comparisons are done on integers: probabilities and gains are scaled
to a common denominator, so conditional expectations on a fixed event are
compared through their numerators.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import lcm

import numpy as np

from ..errors import SizeError, StructureError
from .space import (
    DEFAULT_CAP,
    FiniteFilteredSpace,
    GainTable,
    StoppingTimeTable,
    _children,
    bits,
    count_stopping_times,
)


def stopping_time_matrix(space, partitions=None, lower=None, cap=DEFAULT_CAP):
    """All stopping times as an integer array of shape (count, n_atoms)."""
    total = count_stopping_times(space, partitions, lower)
    if total > cap:
        raise SizeError(f"{total} stopping times exceed the cap of {cap}", total)
    parts = space.partitions if partitions is None else partitions
    kids = space.children if partitions is None else _children(parts, space.n_atoms)
    last = len(parts) - 1
    memo = {}

    def options(k, b):
        key = (k, b)
        if key in memo:
            return memo[key]
        atoms = bits(parts[k][b])
        rows = []
        if lower is None or all(lower[i] <= k for i in atoms):
            rows.append(np.full((1, len(atoms)), k, dtype=np.int64))
        if k < last:
            sub_atoms, sub = _cartesian([options(k + 1, c) for c in kids[k][b]])
            order = np.argsort(sub_atoms)
            rows.append(sub[:, order])
        out = (atoms, np.concatenate(rows) if rows else np.zeros((0, len(atoms)), np.int64))
        memo[key] = out
        return out

    atoms, mat = _cartesian([options(0, b) for b in range(len(parts[0]))])
    result = np.empty_like(mat)
    result[:, atoms] = mat
    return result


def _cartesian(parts):
    atoms = []
    mat = np.zeros((1, 0), dtype=np.int64)
    for a, m in parts:
        na, nb = mat.shape[0], m.shape[0]
        mat = np.concatenate([np.repeat(mat, nb, axis=0), np.tile(m, (na, 1))], axis=1)
        atoms.extend(a)
    return np.array(atoms, dtype=np.int64), mat


@dataclass(frozen=True)
class _Scaled:
    """Integer images of the probabilities (``w``) and of the gain table."""

    w: np.ndarray  # (n,) int
    reward: np.ndarray  # (N+1, n) int: cumulative running + terminal
    cum: np.ndarray  # (N+1, n) int: cumulative running only
    scale: int  # gains were multiplied by this

    @classmethod
    def build(cls, space, gains):
        gains.check(space)
        if not space.exact:
            raise StructureError("exact enumeration needs rational probabilities")
        probs = [Fraction(p) for p in space.probs]
        pden = lcm(*(p.denominator for p in probs))
        w = [int(p * pden) for p in probs]
        cum = gains.cumulative()
        vals = [Fraction(v) for row in cum for v in row]
        vals += [Fraction(v) for row in gains.terminal for v in row]
        scale = lcm(*(v.denominator for v in vals))
        cum_i = [[int(Fraction(v) * scale) for v in row] for row in cum]
        term_i = [[int(Fraction(v) * scale) for v in row] for row in gains.terminal]
        reward = [[c + t for c, t in zip(cr, tr)] for cr, tr in zip(cum_i, term_i)]
        bound = max(max(abs(v) for row in reward for v in row), 1) * 2 * max(w) * len(w)
        dtype = np.int64 if bound < 2**62 else object
        return cls(np.array(w, dtype=dtype), np.array(reward, dtype=dtype),
                   np.array(cum_i, dtype=dtype), scale)

    def numerators(self, stops, blocks):
        """For each stopping time (row) and block mask: sum_{i in block} w_i reward_i."""
        cols = np.arange(stops.shape[1])
        weighted = self.reward[stops, cols] * self.w
        return np.stack([weighted[:, bits(b)].sum(axis=1) for b in blocks], axis=1)

    def offset(self, theta_stop, block):
        """sum_{i in block} w_i cum_i(theta): the running gain before theta."""
        idx = bits(block)
        return sum(int(self.w[i]) * int(self.cum[theta_stop[i], i]) for i in idx)

    def mass(self, block):
        return sum(int(self.w[i]) for i in bits(block))

    def value(self, numerator, block):
        return Fraction(int(numerator), self.scale * self.mass(block))


def value_brute_force(space: FiniteFilteredSpace, gains: GainTable, theta: StoppingTimeTable,
                      restrict_to_H: bool = False, cap=DEFAULT_CAP):
    """Conditional value on each F_theta atom, by enumeration.

    Maximises ``E[sum_{theta <= i < tau} running_i + terminal_tau | A]`` over
    F-stopping times ``tau >= theta`` or, with ``restrict_to_H``, over
    H-stopping times with ``tau >= theta`` on ``A``.  Returns a dict
    ``mask -> Fraction`` keyed by F_theta atom.
    """
    if restrict_to_H and space.product is None:
        raise StructureError("restrict_to_H needs a product structure")
    atoms = space.stopped_sigma_atoms(theta)
    sc = _Scaled.build(space, gains)
    out = {}
    if not restrict_to_H:
        stops = stopping_time_matrix(space, lower=theta.stop, cap=cap)
        best = sc.numerators(stops, [m for _, m in atoms]).max(axis=0)
        for (k, m), num in zip(atoms, best):
            out[m] = sc.value(num - sc.offset(theta.stop, m), m)
        return out
    for k in sorted({k for k, _ in atoms}):
        group = [m for kk, m in atoms if kk == k]
        lower = (k,) * space.n_atoms
        stops = stopping_time_matrix(space, space.product.H, lower=lower, cap=cap)
        best = sc.numerators(stops, group).max(axis=0)
        for m, num in zip(group, best):
            out[m] = sc.value(num - sc.offset(theta.stop, m), m)
    return out


def vtilde_table(space: FiniteFilteredSpace, gains: GainTable, cap=DEFAULT_CAP):
    """Deterministic map ``(k, G-atom, H_k-block) -> value``.

    For each start index ``k`` and starting information ``g & h`` the value
    uses only H-stopping times valued in ``[k, N]``.
    """
    if space.product is None:
        raise StructureError("vtilde needs a product structure")
    sc = _Scaled.build(space, gains)
    G, H = space.product.G, space.product.H
    table = {}
    for k in range(space.N + 1):
        cells = [(g, h) for g in G for h in H[k] if g & h]
        stops = stopping_time_matrix(space, H, lower=(k,) * space.n_atoms, cap=cap)
        best = sc.numerators(stops, [g & h for g, h in cells]).max(axis=0)
        start = (k,) * space.n_atoms
        for (g, h), num in zip(cells, best):
            table[(k, g, h)] = sc.value(num - sc.offset(start, g & h), g & h)
    return table


def verify_key_equality(space: FiniteFilteredSpace, theta: StoppingTimeTable, gains: GainTable,
                        cap=DEFAULT_CAP):
    """Largest gap between ``vtilde(theta, state)`` and the F-esssup at theta.

    Returns ``(gap, rows)`` where rows lists, per F_theta atom, the two sides.
    """
    if space.product is None:
        raise StructureError("key equality needs a product structure")
    esssup = value_brute_force(space, gains, theta, cap=cap)
    table = vtilde_table(space, gains, cap=cap)
    G, H = space.product.G, space.product.H
    rows = []
    gap = Fraction(0)
    for k, m in space.stopped_sigma_atoms(theta):
        g = next(b for b in G if b & m)
        h = next(b for b in H[k] if b & m)
        lhs = table[(k, g, h)]
        rhs = esssup[m]
        gap = max(gap, abs(lhs - rhs))
        rows.append({"time_index": k, "atoms": bits(m), "vtilde": lhs, "esssup": rhs})
    return gap, rows


def snell_envelope(space: FiniteFilteredSpace, gains: GainTable):
    """Exact backward induction; returns ``(S, G)`` as per-block lists."""
    gains.check(space)
    cum = gains.cumulative()
    reward = [[c + t for c, t in zip(cr, tr)] for cr, tr in zip(cum, gains.terminal)]
    N = space.N
    block_p = [[space.prob(b) for b in part] for part in space.partitions]
    Gk = [[reward[k][bits(b)[0]] for b in part] for k, part in enumerate(space.partitions)]
    S = [None] * (N + 1)
    S[N] = list(Gk[N])
    for k in range(N - 1, -1, -1):
        S[k] = []
        for b, kids in enumerate(space.children[k]):
            cont = sum(block_p[k + 1][c] * S[k + 1][c] for c in kids) / block_p[k][b]
            S[k].append(max(Gk[k][b], cont))
    return S, Gk


def first_contact_time(space: FiniteFilteredSpace, gains: GainTable):
    """Smallest optimal stopping time: first index where S = G."""
    S, Gk = snell_envelope(space, gains)
    stop = []
    for i in range(space.n_atoms):
        for k in range(space.N + 1):
            b = space.owner[k][i]
            if S[k][b] == Gk[k][b]:
                stop.append(k)
                break
    return StoppingTimeTable(tuple(stop))


def expected_gain(space, gains, tau: StoppingTimeTable):
    cum = gains.cumulative()
    return sum(
        space.probs[i] * (cum[k][i] + gains.terminal[k][i]) for i, k in enumerate(tau.stop)
    )


def verify_smallest_optimal(space: FiniteFilteredSpace, gains: GainTable, cap=DEFAULT_CAP):
    """Check that the first-contact time is optimal and below every optimum."""
    sc = _Scaled.build(space, gains)
    stops = stopping_time_matrix(space, cap=cap)
    nums = sc.numerators(stops, [space.full])[:, 0]
    best = nums.max()
    optimal = stops[nums == best]
    tau_hat = first_contact_time(space, gains)
    hat = np.array(tau_hat.stop)
    attains = expected_gain(space, gains, tau_hat) == sc.value(best, space.full)
    below = bool(np.all(optimal >= hat[None, :]))
    return {
        "optimal_set": [StoppingTimeTable(tuple(int(v) for v in row)) for row in optimal],
        "tau_hat": tau_hat,
        "value": sc.value(best, space.full),
        "is_smallest": bool(attains and below),
    }
