"""JSON schema for finite spaces, stopping times, gains and traces.

Space document::

    {"schema": "optstop.space/1",
     "n_atoms": n,
     "probabilities": ["p/q", ...],          # one per atom
     "times": ["p/q", ...],                  # t_0 < ... < t_N
     "filtration": [[[i, ...], ...], ...],   # per time index, blocks as atom lists
     "product": {"G": [[i, ...], ...],       # optional
                 "H": [[[i, ...], ...], ...]}}

Stopping times are ``{"schema": "optstop.stopping_time/1", "stop": [k, ...]}``;
gains are ``{"schema": "optstop.gains/1", "running": [[...]], "terminal": [[...]]}``
with rationals as ``"p/q"`` strings.
"""

from __future__ import annotations

import json
from fractions import Fraction

from ..errors import ConfigError
from ..io import dumps
from .space import FiniteFilteredSpace, GainTable, ProductStructure, StoppingTimeTable, bits, mask_of

SPACE_SCHEMA = "optstop.space/1"
TAU_SCHEMA = "optstop.stopping_time/1"
GAINS_SCHEMA = "optstop.gains/1"
TRACE_SCHEMA = "optstop.trace/1"


def _q(v):
    v = Fraction(v)
    return f"{v.numerator}/{v.denominator}"


def _partition(part):
    return [bits(b) for b in part]


def _unpartition(blocks):
    return tuple(mask_of(b) for b in blocks)


def space_to_dict(space: FiniteFilteredSpace):
    doc = {
        "schema": SPACE_SCHEMA,
        "n_atoms": space.n_atoms,
        "probabilities": [_q(p) for p in space.probs],
        "times": [_q(t) for t in space.times],
        "filtration": [_partition(p) for p in space.partitions],
    }
    if space.product is not None:
        doc["product"] = {
            "G": _partition(space.product.G),
            "H": [_partition(p) for p in space.product.H],
        }
    return doc


def space_from_dict(doc) -> FiniteFilteredSpace:
    if doc.get("schema") != SPACE_SCHEMA:
        raise ConfigError(f"expected schema {SPACE_SCHEMA!r}")
    probs = tuple(Fraction(p) for p in doc["probabilities"])
    if len(probs) != doc["n_atoms"]:
        raise ConfigError("probability list does not match n_atoms")
    product = None
    if "product" in doc:
        product = ProductStructure(
            _unpartition(doc["product"]["G"]),
            tuple(_unpartition(p) for p in doc["product"]["H"]),
        )
    return FiniteFilteredSpace(
        probs,
        tuple(Fraction(t) for t in doc["times"]),
        tuple(_unpartition(p) for p in doc["filtration"]),
        product,
    )


def tau_to_dict(tau: StoppingTimeTable):
    return {"schema": TAU_SCHEMA, "stop": list(tau.stop)}


def tau_from_dict(doc) -> StoppingTimeTable:
    if doc.get("schema") != TAU_SCHEMA:
        raise ConfigError(f"expected schema {TAU_SCHEMA!r}")
    return StoppingTimeTable(tuple(int(k) for k in doc["stop"]))


def gains_to_dict(gains: GainTable):
    return {
        "schema": GAINS_SCHEMA,
        "running": [[_q(v) for v in row] for row in gains.running],
        "terminal": [[_q(v) for v in row] for row in gains.terminal],
    }


def gains_from_dict(doc) -> GainTable:
    if doc.get("schema") != GAINS_SCHEMA:
        raise ConfigError(f"expected schema {GAINS_SCHEMA!r}")
    return GainTable(
        tuple(tuple(Fraction(v) for v in row) for row in doc["running"]),
        tuple(tuple(Fraction(v) for v in row) for row in doc["terminal"]),
    )


def trace_to_dict(trace):
    stages = []
    for st in trace.stages:
        stages.append({
            "n": st.n,
            "levels": st.levels,
            "step1_rectangles": {str(k): [[bits(B), bits(C)] for B, C in r]
                                 for k, r in st.rectangles.items()},
            "step2_disjoint": {("leftover" if k is None else str(k)): [[bits(B), bits(C)] for B, C in r]
                               for k, r in st.disjoint.items()},
            "step3_pieces": [{"level": p.time_index, "pattern": list(p.pattern),
                              "B": bits(p.B), "C": bits(p.C)} for p in st.pieces],
            "step4_pattern_count": st.pattern_count,
            "cells": [{"pattern": list(c.pattern), "B": bits(c.B),
                       "C": [bits(x) for x in c.C], "component": list(c.component.stop)}
                      for c in st.cells],
            "reconstructed": list(st.reconstructed.stop),
        })
    return {
        "schema": TRACE_SCHEMA,
        "stages": stages,
        "reconstruction_exact": trace.reconstruction_exact,
        "components_H_adapted": trace.components_H_adapted,
        "cells_partition_omega": trace.cells_partition_omega,
    }


def load(path):
    with open(path) as fh:
        return json.load(fh)


def store(path, doc):
    with open(path, "w") as fh:
        fh.write(dumps(doc))
