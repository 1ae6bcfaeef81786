"""Put value by PDE, binomial tree, regression Monte Carlo and PDE-rule replay.

With negative drift the put is never exercised early, so the PDE rule and the
terminal rule coincide; try --mu 0.06 to see them separate.

Usage: python scripts/cross_method.py [--mu -0.06] [--paths 100000]
"""

import argparse

from optstop import lattice, montecarlo, pde
from optstop.model import gbm
from optstop.sde import simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mu", type=float, default=-0.06)
    ap.add_argument("--sigma", type=float, default=0.2)
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--degree", type=int, default=4)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--tree-steps", type=int, nargs="+", default=[500, 1000, 2000, 4000])
    args = ap.parse_args()

    p = gbm(args.mu, args.sigma, 1.0, "max(100 - x, 0)")
    surface = pde.solve_variational_inequality(p, pde.default_grid(p, [100.0], 401, 400))
    v_pde = float(surface.value_at([[100.0]])[0])
    print(f"pde 401x400          {v_pde:.5f}")
    for n in args.tree_steps:
        print(f"binomial {n:>5} steps  {float(lattice.root_value(p, 0.0, 100.0, n, 'binomial')):.5f}")
    print(f"trinomial 1000 steps {float(lattice.root_value(p, 0.0, 100.0, 1000, 'trinomial')):.5f}")

    bundle = simulate(p, 0.0, 100.0, args.steps, args.paths, seed=args.seed)
    fresh = simulate(p, 0.0, 100.0, args.steps, args.paths, seed=args.seed + 1)
    for est in (montecarlo.longstaff_schwartz(p, bundle, args.degree),
                montecarlo.longstaff_schwartz(p, bundle, args.degree, oos_bundle=fresh),
                montecarlo.evaluate_rule(p, bundle, surface),
                montecarlo.evaluate_rule(p, bundle, "terminal")):
        print(f"{est.method_tag:<20} {est.mean:.5f} +- {est.std_error:.5f}")


if __name__ == "__main__":
    main()
