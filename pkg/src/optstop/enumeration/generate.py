"""Reproducible random finite spaces, gain tables and stopping times.

Every generator takes a ``random.Random`` and the parameters below; bump
``MANIFEST["version"]`` whenever a default changes so that logged seeds keep
their meaning.
"""

from __future__ import annotations

import random
from fractions import Fraction
from itertools import product

from .space import (
    FiniteFilteredSpace,
    GainTable,
    ProductStructure,
    StoppingTimeTable,
    bits,
    count_stopping_times,
    join,
    mask_of,
)

MANIFEST = {
    "version": 1,
    "product": {"max_g_atoms": 3, "max_depth": 3, "max_branch": 3, "weight_range": [1, 4],
                "stopping_time_cap": 20000},
    "gains": {"numerator_range": [-3, 3], "denominators": [1, 2, 3]},
    "binary": {"max_depth": 3, "weight_range": [1, 3]},
}


def _weights(rng, n, lo, hi):
    w = [rng.randint(lo, hi) for _ in range(n)]
    s = sum(w)
    return [Fraction(x, s) for x in w]


def _random_tree(rng, depth, max_branch):
    """Nested children counts: a tree is a list of subtrees (leaf = [])."""
    if depth == 0:
        return []
    return [_random_tree(rng, depth - 1, max_branch) for _ in range(rng.randint(1, max_branch))]


def tree_space(tree, depth, weights_for, times=None, g_probs=None):
    """Space whose H-filtration follows ``tree``; optional independent G factor.

    ``weights_for(n)`` returns ``n`` conditional branch probabilities.
    """
    leaves = []  # (prob, path of child indices)

    def walk(node, path, p):
        if len(path) == depth:
            leaves.append((p, path))
            return
        ws = weights_for(len(node))
        for i, (child, w) in enumerate(zip(node, ws)):
            walk(child, path + (i,), p * w)

    walk(tree, (), Fraction(1))
    g_probs = g_probs or [Fraction(1)]
    L = len(leaves)
    probs = tuple(pg * pl for pg in g_probs for pl, _ in leaves)
    H = []
    for k in range(depth + 1):
        groups = {}
        for j, (_, path) in enumerate(leaves):
            groups.setdefault(path[:k], []).append(j)
        H.append(tuple(
            mask_of(g * L + j for g in range(len(g_probs)) for j in grp)
            for _, grp in sorted(groups.items())
        ))
    G = tuple(mask_of(g * L + j for j in range(L)) for g in range(len(g_probs)))
    parts = tuple(join(G, h) for h in H)
    times = tuple(times or range(depth + 1))
    return FiniteFilteredSpace(probs, times, parts, ProductStructure(G, tuple(H)))


def random_product_space(rng: random.Random, params=None):
    """Random G x H space within the manifest bounds and stopping-time cap."""
    params = params or MANIFEST["product"]
    lo, hi = params["weight_range"]
    while True:
        n_g = rng.randint(1, params["max_g_atoms"])
        depth = rng.randint(1, params["max_depth"])
        tree = _random_tree(rng, depth, params["max_branch"])
        g_probs = _weights(rng, n_g, lo, hi)
        space = tree_space(tree, depth, lambda n: _weights(rng, n, lo, hi), g_probs=g_probs)
        if count_stopping_times(space) <= params["stopping_time_cap"]:
            return space


def binary_shapes(depth):
    """Every refinement tree of the given depth with 1 or 2 children per node."""
    if depth == 0:
        return [[]]
    subs = binary_shapes(depth - 1)
    out = [[s] for s in subs]
    out += [[a, b] for a, b in product(subs, subs)]
    return out


def all_binary_spaces(rng: random.Random, max_depth=None, params=None):
    """All binary refinement shapes up to ``max_depth`` with random weights."""
    params = params or MANIFEST["binary"]
    max_depth = max_depth or params["max_depth"]
    lo, hi = params["weight_range"]
    spaces = []
    for depth in range(1, max_depth + 1):
        for tree in binary_shapes(depth):
            spaces.append(tree_space(tree, depth, lambda n: _weights(rng, n, lo, hi)))
    return spaces


def random_gains(rng: random.Random, space: FiniteFilteredSpace, params=None):
    """Adapted rational gains; small ranges so that ties are common."""
    params = params or MANIFEST["gains"]
    lo, hi = params["numerator_range"]
    dens = params["denominators"]

    def row(k):
        vals = [None] * space.n_atoms
        for b in space.partitions[k]:
            v = Fraction(rng.randint(lo, hi), rng.choice(dens))
            for i in bits(b):
                vals[i] = v
        return tuple(vals)

    running = tuple(row(k) for k in range(space.N))
    terminal = tuple(row(k) for k in range(space.N + 1))
    return GainTable(running, terminal)


def random_stopping_time(rng: random.Random, space: FiniteFilteredSpace, partitions=None,
                         stop_prob=0.4):
    """Random adapted time: stop on each block with probability ``stop_prob``."""
    parts = space.partitions if partitions is None else partitions
    stop = [None] * space.n_atoms

    def visit(k, mask):
        if k == len(parts) - 1 or rng.random() < stop_prob:
            for i in bits(mask):
                stop[i] = k
            return
        for b in parts[k + 1]:
            if b & mask:
                visit(k + 1, b & mask)

    for b in parts[0]:
        visit(0, b)
    return StoppingTimeTable(tuple(stop))
