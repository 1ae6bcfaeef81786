"""Exhaustive verification suites on finite spaces and small chains.

Each suite returns a ``SuiteResult``; ``passed == total`` means every exact
check held.  Seeds are fed to ``random.Random`` so runs are reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction

from . import lattice
from .enumeration import (
    all_binary_spaces,
    approximate_stopping_time,
    enumerate_stopping_times,
    random_gains,
    random_product_space,
    random_stopping_time,
    value_brute_force,
    verify_key_equality,
    verify_smallest_optimal,
)
from .enumeration.space import StoppingTimeTable
from .errors import ConfigError
from .model import bachelier


@dataclass
class SuiteResult:
    name: str
    passed: int
    total: int
    summary: str
    details: list = field(default_factory=list)

    @property
    def ok(self):
        return self.passed == self.total

    def to_dict(self):
        return {"suite": self.name, "passed": self.passed, "total": self.total,
                "ok": self.ok, "summary": self.summary, "details": self.details}


def key_equality_suite(n_spaces: int = 100, seed: int = 7) -> SuiteResult:
    """Value over H-times started from the stopped state equals the F-esssup.

    Per space: one random F-stopping time ``theta`` and one gain table; the
    restricted and unrestricted brute-force values must agree atomwise too.
    """
    rng = random.Random(seed)
    passed = 0
    worst = Fraction(0)
    details = []
    for i in range(n_spaces):
        space = random_product_space(rng)
        gains = random_gains(rng, space)
        theta = random_stopping_time(rng, space)
        gap, _ = verify_key_equality(space, theta, gains)
        full = value_brute_force(space, gains, theta)
        restricted = value_brute_force(space, gains, theta, restrict_to_H=True)
        same = full == restricted
        worst = max(worst, gap)
        ok = gap == 0 and same
        passed += ok
        details.append({"space": i, "n_atoms": space.n_atoms, "depth": space.N,
                        "gap": gap, "restricted_equal": same})
    return SuiteResult("key-equality", passed, n_spaces,
                       f"{passed}/{n_spaces} gap={worst}", details)


def smallest_optimal_suite(gain_tables: int = 50, seed: int = 7, max_depth: int = 3) -> SuiteResult:
    """First contact with the Snell envelope is optimal and below every optimum."""
    rng = random.Random(seed)
    spaces = all_binary_spaces(rng, max_depth)
    passed = total = 0
    details = []
    for s, space in enumerate(spaces):
        bad = 0
        for _ in range(gain_tables):
            res = verify_smallest_optimal(space, random_gains(rng, space))
            ok = res["is_smallest"]
            passed += ok
            bad += not ok
            total += 1
        details.append({"space": s, "n_atoms": space.n_atoms, "depth": space.N, "failures": bad})
    return SuiteResult("smallest-optimal", passed, total,
                       f"{passed}/{total} over {len(spaces)} spaces", details)


def approx_suite(n_spaces: int = 50, seed: int = 7) -> SuiteResult:
    """Every adapted time is rebuilt from H-times on a G-partition."""
    rng = random.Random(seed)
    passed = total = 0
    details = []
    for i in range(n_spaces):
        space = random_product_space(rng)
        taus = enumerate_stopping_times(space)
        good = sum(approximate_stopping_time(space, tau).ok for tau in taus)
        passed += good
        total += len(taus)
        details.append({"space": i, "stopping_times": len(taus), "reconstructed": good})
    return SuiteResult("approx", passed, total, f"{passed}/{total} stopping times", details)


def default_dpp_problems():
    """Small rational problems with both kinks and running gains."""
    q = Fraction
    return [
        ("abs", bachelier(q(0), q(1), 1.0, "abs(x)")),
        ("put-like", bachelier(q(1, 4), q(1), 1.0, "max(1 - x, 0)", f="x/2")),
        ("square", bachelier(q(-1, 2), q(1, 2), 1.0, "x^2 - x", f="-1/4")),
    ]


FLOAT_RTOL = 1e-12


def dpp_suite(problems=None, depth: int = 4, taus: int = 20, seed: int = 7,
              schemes=("binomial", "trinomial")) -> SuiteResult:
    """Dynamic programming identity for random adapted intermediate times.

    Rational chains must give residual 0 exactly; float chains a residual
    at most ``FLOAT_RTOL`` relative to ``max(1, |v0|)``.
    """
    rng = random.Random(seed)
    problems = problems if problems is not None else default_dpp_problems()
    passed = total = 0
    worst_float = 0.0
    details = []
    for name, p in problems:
        for scheme in schemes:
            for exact in (True, False):
                try:
                    chain = lattice.build_chain(p, 0, 0, depth, scheme, exact=exact)
                except ConfigError as exc:  # exact mode may be impossible for this problem
                    details.append({"problem": name, "scheme": scheme, "exact": exact,
                                    "skipped": str(exc)})
                    continue
                surface = lattice.snell_envelope(chain, p)
                space = chain.paths.space
                times = [StoppingTimeTable((0,) * space.n_atoms),
                         StoppingTimeTable((depth,) * space.n_atoms)]
                times += [random_stopping_time(rng, space) for _ in range(taus)]
                worst = 0
                for tau in times:
                    r = lattice.verify_dpp(chain, surface, tau)
                    if exact:
                        ok = r == 0
                    else:
                        rel = float(r) / max(1.0, abs(float(surface.root_value)))
                        worst_float = max(worst_float, rel)
                        ok = rel <= FLOAT_RTOL
                    worst = max(worst, r)
                    passed += ok
                    total += 1
                details.append({"problem": name, "scheme": scheme, "exact": exact,
                                "n_taus": len(times), "max_residual": worst})
    return SuiteResult("dpp", passed, total,
                       f"{passed}/{total} residual checks; max float relative residual "
                       f"{worst_float:.3g}", details)


def chain_optimality_suite(problems=None, depth: int = 4, schemes=("binomial", "trinomial")):
    """Backward induction against enumeration of every chain stopping time.

    The root value must equal the enumerated maximum and the rule's first
    stop must be the smallest optimal time.  Trinomial chains use one layer
    less: a depth-4 ternary tree has about 3.9e8 stopping times.
    """
    problems = problems if problems is not None else default_dpp_problems()
    passed = total = 0
    details = []
    for name, p in problems:
        for scheme in schemes:
            n = depth if scheme == "binomial" else depth - 1
            chain = lattice.build_chain(p, 0, 0, n, scheme, exact=True)
            surface = lattice.snell_envelope(chain, p)
            res = verify_smallest_optimal(chain.paths.space, lattice.chain_gains(chain, surface))
            rule = lattice.rule_stopping_time(chain, lattice.smallest_optimal_rule(surface))
            ok = res["is_smallest"] and res["value"] == surface.root_value and res["tau_hat"] == rule
            passed += ok
            total += 1
            details.append({"problem": name, "scheme": scheme, "depth": n,
                            "value": surface.root_value, "ok": ok})
    return SuiteResult("chain-optimality", passed, total, f"{passed}/{total} chains", details)


SUITES = {
    "key-equality": key_equality_suite,
    "smallest-optimal": smallest_optimal_suite,
    "approx": approx_suite,
    "dpp": dpp_suite,
}

