"""Decomposition of an F-stopping time into H-stopping times on G-cells.

Given ``F_k = G v H_k`` and an F-stopping time ``tau`` the construction
produces a partition ``{Bhat^sigma}`` of omega by G-events and H-stopping
times ``tau^sigma`` with ``tau = sum_sigma tau^sigma 1_{Bhat^sigma}``:

1. each level set ``{tau = t_j}`` is written as a finite union of
   rectangles ``B & C`` with ``B`` in G and ``C`` in H_{t_j};
2. level sets are made disjoint (``A_j minus earlier A_k``), keeping the
   rectangle form, and the leftover event gets the last level;
3. the G-parts inside one level are made disjoint through sign patterns
   over the rectangles of that level;
4. the resulting single-rectangle pieces are combined across levels through
   sign patterns over all pieces, giving the cells and their H-times.

On a finite space the rectangle form in step 1 is exact, so the
approximating sequence is constant and reconstruction must be exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product as iproduct

from ..errors import AdaptednessError, SizeError, StructureError
from .space import FiniteFilteredSpace, StoppingTimeTable, bits, mask_of, measurable

MAX_PATTERN_BITS = 16


@dataclass
class Piece:
    time_index: int
    B: int
    C: int
    pattern: tuple = ()


@dataclass
class Cell:
    pattern: tuple
    B: int  # Bhat^sigma
    C: list  # Chat^sigma_j per piece j
    component: StoppingTimeTable  # tau^sigma


@dataclass
class Stage:
    n: int
    levels: list  # time indices t_1 < ... < t_M
    rectangles: dict  # step 1: level -> [(B, C)]
    disjoint: dict  # step 2: level -> [(B, C)] (key None for the leftover event)
    pieces: list  # step 3 output, ordered by level
    pattern_count: int  # |Sigma| = 2^M' - 1 for M' pieces
    cells: list  # step 4 cells with nonempty Bhat^sigma
    reconstructed: StoppingTimeTable


@dataclass
class ApproximationTrace:
    stages: list = field(default_factory=list)
    reconstruction_exact: bool = False
    components_H_adapted: bool = False
    cells_partition_omega: bool = False

    @property
    def ok(self):
        return self.reconstruction_exact and self.components_H_adapted and self.cells_partition_omega

    @property
    def partition(self):
        return [c.B for c in self.stages[-1].cells]

    @property
    def components(self):
        return [c.component for c in self.stages[-1].cells]


def _rect_event(rects):
    m = 0
    for B, C in rects:
        m |= B & C
    return m


def default_rectangles(space: FiniteFilteredSpace, event: int, k: int):
    """Rectangles covering ``event`` in F_k: one per distinct H-section.

    G-atoms whose sections ``{h : g & h subset of event}`` coincide share
    one rectangle.
    """
    G, H = space.product.G, space.product.H[k]
    by_section = {}
    for g in G:
        C = 0
        for h in H:
            cell = g & h
            if cell and cell & event:
                if cell & event != cell:
                    raise AdaptednessError(f"level set is not F_{k}-measurable")
                C |= h
        if C:
            by_section[C] = by_section.get(C, 0) | g
    return [(B, C) for C, B in sorted(by_section.items())]


def _check_rectangles(space, rects, k, event):
    G, H = space.product.G, space.product.H[k]
    for B, C in rects:
        if not measurable(B, G):
            raise StructureError("rectangle G-part is not a union of G atoms")
        if not measurable(C, H):
            raise StructureError(f"rectangle H-part is not H_{k}-measurable")
    if _rect_event(rects) != event:
        raise StructureError("rectangles do not cover the level set exactly")


def _difference(rects, others, space):
    """Rectangle form of ``union(rects) minus union(others)``.

    ``(B & C) minus (B' & C') = (B - B') & C  union  (B & B') & (C - C')``.
    """
    full = space.full
    out = list(rects)
    for B2, C2 in others:
        nxt = []
        for B, C in out:
            for nb, nc in ((B & ~B2 & full, C), (B & B2, C & ~C2 & full)):
                if nb & nc:
                    nxt.append((nb, nc))
        out = nxt
    return out


def _patterns(n):
    if n > MAX_PATTERN_BITS:
        raise SizeError(f"{n} rectangles give 2^{n} sign patterns", 2**n)
    return [s for s in iproduct((0, 1), repeat=n) if any(s)]


def approximate_stopping_time(space: FiniteFilteredSpace, tau: StoppingTimeTable,
                              rectangles=None) -> ApproximationTrace:
    """Run the four-step construction for ``tau`` and check the result.

    ``rectangles`` optionally maps a time index to a list of ``(B, C)``
    masks describing ``{tau = t_k}``; the default uses one rectangle per
    distinct H-section.
    """
    if space.product is None:
        raise StructureError("approximation needs a product structure G v H")
    space.check_adapted(tau)
    full = space.full
    levels = sorted(set(tau.stop))

    # step 1
    rects = {}
    for k in levels:
        event = mask_of(i for i, s in enumerate(tau.stop) if s == k)
        if rectangles is not None and k in rectangles:
            given = [(int(B), int(C)) for B, C in rectangles[k]]
            _check_rectangles(space, given, k, event)
            rects[k] = given
        else:
            rects[k] = default_rectangles(space, event, k)

    # step 2
    disjoint = {}
    earlier = []
    for k in levels:
        disjoint[k] = _difference(rects[k], earlier, space)
        earlier.extend(rects[k])
    leftover = _difference([(full, full)], earlier, space)
    if leftover:
        disjoint[levels[-1]] = disjoint[levels[-1]] + leftover
    disjoint[None] = leftover

    # step 3
    pieces = []
    for k in levels:
        rs = disjoint[k]
        for sigma in _patterns(len(rs)):
            B = full
            C = 0
            for (Bi, Ci), s in zip(rs, sigma):
                B &= Bi if s else ~Bi & full
                C |= Ci if s else 0
            if B & C:
                pieces.append(Piece(k, B, C, sigma))
        covered = _rect_event([(p.B, p.C) for p in pieces if p.time_index == k])
        if covered != _rect_event(rs):
            raise StructureError(f"step 3 lost part of level {k}")

    # step 4
    M = len(pieces)
    realised = {}
    for i in range(space.n_atoms):
        sigma = tuple(1 if p.B >> i & 1 else 0 for p in pieces)
        realised[sigma] = realised.get(sigma, 0) | (1 << i)
    cells = []
    recon = [None] * space.n_atoms
    for sigma, Bhat in sorted(realised.items(), reverse=True):
        chat = []
        used = 0
        for j, p in enumerate(pieces):
            if j == M - 1:
                cj = ~used & full
            elif sigma[j]:
                cj = p.C & ~used & full
            else:
                cj = 0
            chat.append(cj)
            used |= p.C if sigma[j] else 0
        comp = [None] * space.n_atoms
        for j, cj in enumerate(chat):
            for i in bits(cj):
                comp[i] = pieces[j].time_index
        if any(v is None for v in comp):
            raise StructureError("step 4 sets do not cover omega")
        component = StoppingTimeTable(tuple(comp))
        cells.append(Cell(sigma, Bhat, chat, component))
        for i in bits(Bhat):
            recon[i] = comp[i]

    stage = Stage(
        n=1, levels=levels, rectangles=rects, disjoint=disjoint, pieces=pieces,
        pattern_count=2**M - 1, cells=cells, reconstructed=StoppingTimeTable(tuple(recon)),
    )
    trace = ApproximationTrace([stage])
    trace.reconstruction_exact = stage.reconstructed == tau
    trace.components_H_adapted = all(space.is_H_adapted(c.component) for c in cells)
    union = 0
    disjoint_cells = True
    for c in cells:
        disjoint_cells &= not (union & c.B)
        union |= c.B
    trace.cells_partition_omega = disjoint_cells and union == full and all(
        measurable(c.B, space.product.G) for c in cells
    )
    return trace
