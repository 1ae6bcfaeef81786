"""Finite filtered probability spaces and stopping-time tables.

Events are represented as Python ``int`` bitmasks over atom indices; a
partition is a tuple of disjoint masks covering ``full``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import prod

from ..errors import AdaptednessError, SizeError, StructureError

DEFAULT_CAP = 10**6


def bits(mask):
    """Atom indices contained in ``mask`` (ascending)."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


def mask_of(indices):
    m = 0
    for i in indices:
        m |= 1 << i
    return m


def _block_index(partition, n):
    owner = [None] * n
    for b, mask in enumerate(partition):
        for i in bits(mask):
            owner[i] = b
    return owner


def join(p, q):
    """Coarsest common refinement of two partitions."""
    out = []
    for a in p:
        for b in q:
            if a & b:
                out.append(a & b)
    return tuple(sorted(out, key=_lowest))


def _lowest(mask):
    return (mask & -mask).bit_length()


def measurable(event, partition):
    """True if ``event`` is a union of blocks of ``partition``."""
    return all((event & b) in (0, b) for b in partition)


@dataclass(frozen=True)
class ProductStructure:
    """``F_k = G v H_k`` with ``G`` independent of ``H_N``."""

    G: tuple  # partition of omega
    H: tuple  # per time index, a partition of omega


@dataclass(frozen=True)
class FiniteFilteredSpace:
    probs: tuple
    times: tuple
    partitions: tuple  # per time index
    product: ProductStructure | None = None
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.check:
            self.validate()

    @property
    def n_atoms(self):
        return len(self.probs)

    @property
    def N(self):
        return len(self.times) - 1

    @property
    def full(self):
        return (1 << self.n_atoms) - 1

    @cached_property
    def owner(self):
        """``owner[k][atom]`` is the index of the block of F_k holding ``atom``."""
        return tuple(tuple(_block_index(p, self.n_atoms)) for p in self.partitions)

    @cached_property
    def children(self):
        """``children[k][b]``: indices of F_{k+1} blocks inside block ``b`` of F_k."""
        out = []
        for k in range(self.N):
            nxt = self.partitions[k + 1]
            kids = [[] for _ in self.partitions[k]]
            for c, mask in enumerate(nxt):
                kids[self.owner[k][_lowest(mask) - 1]].append(c)
            out.append(tuple(tuple(x) for x in kids))
        return tuple(out)

    def prob(self, mask):
        return sum((self.probs[i] for i in bits(mask)), Fraction(0) if self.exact else 0.0)

    @cached_property
    def exact(self):
        return all(isinstance(p, (Fraction, int)) for p in self.probs)

    def validate(self):
        n = self.n_atoms
        if n == 0:
            raise StructureError("omega is empty")
        if len(self.partitions) != len(self.times):
            raise StructureError("need one partition per time index")
        if any(not a < b for a, b in zip(self.times, self.times[1:])):
            raise StructureError("times must be strictly increasing")
        if any(p < 0 for p in self.probs):
            raise StructureError("negative probability")
        total = sum(self.probs)
        if self.exact and total != 1:
            raise StructureError(f"probabilities sum to {total}, not 1")
        if not self.exact and abs(total - 1) > 1e-12:
            raise StructureError(f"probabilities sum to {total}, not 1")
        for k, part in enumerate(self.partitions):
            _check_partition(part, self.full, f"F_{k}")
            if k and not all(measurable(b, part) for b in self.partitions[k - 1]):
                raise StructureError(f"F_{k} does not refine F_{k - 1}")
        if self.product is not None:
            self._validate_product()

    def _validate_product(self):
        G, H = self.product.G, self.product.H
        _check_partition(G, self.full, "G")
        if len(H) != len(self.partitions):
            raise StructureError("need one H partition per time index")
        for k, part in enumerate(H):
            _check_partition(part, self.full, f"H_{k}")
            if k and not all(measurable(b, part) for b in H[k - 1]):
                raise StructureError(f"H_{k} does not refine H_{k - 1}")
            if set(join(G, part)) != set(self.partitions[k]):
                raise StructureError(f"F_{k} is not the join of G and H_{k}")
        # independence checked on generators: atoms of G against atoms of H_N
        for a in G:
            for b in H[-1]:
                lhs = self.prob(a & b)
                rhs = self.prob(a) * self.prob(b)
                if (lhs != rhs) if self.exact else abs(lhs - rhs) > 1e-12:
                    raise StructureError("G and H_N are not independent")

    # F_theta -----------------------------------------------------------------

    def stopped_sigma_atoms(self, theta: "StoppingTimeTable"):
        """Atoms of F_theta, built as level sets {theta = k} cut by F_k blocks.

        Returns a list of ``(k, mask)``.
        """
        self.check_adapted(theta)
        out = []
        for k in range(self.N + 1):
            level = mask_of(i for i, s in enumerate(theta.stop) if s == k)
            if not level:
                continue
            for b in self.partitions[k]:
                if b & level:
                    out.append((k, b & level))
        return out

    def check_adapted(self, tau: "StoppingTimeTable", partitions=None, name="F"):
        partitions = self.partitions if partitions is None else partitions
        if len(tau.stop) != self.n_atoms:
            raise AdaptednessError("stopping time table does not cover omega")
        if any(not 0 <= s <= self.N for s in tau.stop):
            raise AdaptednessError("stopping time takes a value outside the time grid")
        for k, part in enumerate(partitions):
            event = mask_of(i for i, s in enumerate(tau.stop) if s <= k)
            if not measurable(event, part):
                raise AdaptednessError(f"{{tau <= {k}}} is not {name}_{k}-measurable")

    def is_adapted(self, tau, partitions=None):
        try:
            self.check_adapted(tau, partitions)
        except AdaptednessError:
            return False
        return True

    def is_H_adapted(self, tau):
        if self.product is None:
            raise StructureError("space has no product structure")
        return self.is_adapted(tau, self.product.H)


def _check_partition(part, full, name):
    seen = 0
    for b in part:
        if b == 0:
            raise StructureError(f"{name} has an empty block")
        if seen & b:
            raise StructureError(f"{name} blocks overlap")
        seen |= b
    if seen != full:
        raise StructureError(f"{name} does not cover omega")


@dataclass(frozen=True)
class StoppingTimeTable:
    stop: tuple  # time index per atom

    def __le__(self, other):
        return all(a <= b for a, b in zip(self.stop, other.stop))


@dataclass(frozen=True)
class GainTable:
    """Per (time index, atom): running increment and terminal gain."""

    running: tuple  # running[k][atom], k = 0..N-1
    terminal: tuple  # terminal[k][atom], k = 0..N

    def check(self, space: FiniteFilteredSpace):
        if len(self.terminal) != space.N + 1 or len(self.running) != space.N:
            raise StructureError("gain table does not match the time grid")
        for k, row in enumerate(self.terminal):
            _check_constant(row, space.partitions[k], f"terminal[{k}]")
        for k, row in enumerate(self.running):
            _check_constant(row, space.partitions[k], f"running[{k}]")

    def cumulative(self):
        """``C[k][atom]``: sum of running increments before time index ``k``."""
        n = len(self.terminal[0])
        zero = self.terminal[0][0] * 0
        acc = [tuple(zero for _ in range(n))]
        for row in self.running:
            acc.append(tuple(a + r for a, r in zip(acc[-1], row)))
        return acc


def _check_constant(row, partition, name):
    for b in partition:
        vals = {row[i] for i in bits(b)}
        if len(vals) > 1:
            raise StructureError(f"{name} is not measurable (varies on a block)")


# counting and enumeration ----------------------------------------------------

def _can_stop(k, mask, lower):
    if lower is None:
        return True
    return all(lower[i] <= k for i in bits(mask))


def count_stopping_times(space, partitions=None, lower=None):
    """Count via count(block) = [stop allowed] + prod(count(children)).

    ``lower`` (per atom) restricts to stopping times ``tau >= lower``.
    """
    parts = space.partitions if partitions is None else partitions
    kids = space.children if partitions is None else _children(parts, space.n_atoms)
    memo = {}

    def count(k, b):
        key = (k, b)
        if key not in memo:
            mask = parts[k][b]
            c = 1 if _can_stop(k, mask, lower) else 0
            if k < len(parts) - 1:
                c += prod(count(k + 1, ch) for ch in kids[k][b])
            memo[key] = c
        return memo[key]

    return prod(count(0, b) for b in range(len(parts[0])))


def _children(parts, n):
    out = []
    for k in range(len(parts) - 1):
        owner = _block_index(parts[k], n)
        kids = [[] for _ in parts[k]]
        for c, mask in enumerate(parts[k + 1]):
            kids[owner[_lowest(mask) - 1]].append(c)
        out.append(tuple(tuple(x) for x in kids))
    return tuple(out)


def iter_stopping_times(space, partitions=None, lower=None, cap=DEFAULT_CAP):
    """Yield every stopping time (adapted to ``partitions``, default F)."""
    total = count_stopping_times(space, partitions, lower)
    if total > cap:
        raise SizeError(f"{total} stopping times exceed the cap of {cap}", total)
    parts = space.partitions if partitions is None else partitions
    kids = space.children if partitions is None else _children(parts, space.n_atoms)
    memo = {}

    def options(k, b):
        # each option is a tuple of (atom, k) assignments
        key = (k, b)
        if key in memo:
            return memo[key]
        mask = parts[k][b]
        out = []
        if _can_stop(k, mask, lower):
            out.append(tuple((i, k) for i in bits(mask)))
        if k < len(parts) - 1:
            for combo in _product([options(k + 1, ch) for ch in kids[k][b]]):
                out.append(combo)
        memo[key] = out
        return out

    n = space.n_atoms
    for combo in _product([options(0, b) for b in range(len(parts[0]))]):
        stop = [0] * n
        for i, k in combo:
            stop[i] = k
        yield StoppingTimeTable(tuple(stop))


def _product(option_lists):
    if not option_lists:
        yield ()
        return
    head, *rest = option_lists
    if not rest:
        yield from head
        return
    for tail in _product(rest):
        for h in head:
            yield h + tail


def enumerate_stopping_times(space, partitions=None, lower=None, cap=DEFAULT_CAP):
    return list(iter_stopping_times(space, partitions, lower, cap))
