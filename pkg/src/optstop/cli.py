"""Command-line front end.

Exit codes: 0 success, 1 a verification check failed, 2 usage or
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import lattice, montecarlo, pde, sde, suites
from .model import spot_check_assumptions
from .config import RunConfig, box_of, build_problem, load_config, t0_of, x0_of
from .errors import ConfigError, NumericalError, OptStopError, UsageError, VerificationFailure
from .io import dumps, write_rows

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _common(sp):
    sp.add_argument("--config", help="INI run configuration")
    sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override one config value (repeatable)")
    sp.add_argument("--out", help="output directory (overrides output.dir)")
    sp.add_argument("--seed", type=int, help="seed for mc and verify sections")
    sp.add_argument("--format", choices=("csv", "json"), help="summary format")


def build_parser():
    parser = _Parser(prog="optstop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [
        ("solve", "finite-difference solve, residual report and surface CSV"),
        ("tree", "lattice Snell envelope and stopping-rule CSV"),
        ("simulate", "Euler-Maruyama path bundle CSV"),
        ("price", "PDE solve, rule evaluation and regression Monte Carlo"),
        ("compare", "PDE vs lattice vs Monte Carlo summary"),
    ]:
        _common(sub.add_parser(name, help=text))
    verify = sub.add_parser("verify", help="exhaustive finite-space checks")
    verify.add_argument("suite", choices=sorted(suites.SUITES))
    verify.add_argument("--spaces", type=int, help="number of random spaces")
    verify.add_argument("--gain-tables", type=int, help="gain tables per binary space")
    verify.add_argument("--depth", type=int, help="chain depth for dpp")
    verify.add_argument("--taus", type=int, help="random intermediate times per chain for dpp")
    _common(verify)
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config, args.set)
    if args.out:
        cfg.output.dir = args.out
    if args.seed is not None:
        cfg.mc.seed = args.seed
        cfg.verify.seed = args.seed
    if args.format:
        cfg.output.format = args.format
    if cfg.output.format not in ("csv", "json"):
        raise UsageError("output.format must be csv or json")
    os.makedirs(cfg.output.dir, exist_ok=True)
    return cfg


def _out(cfg, name):
    return os.path.join(cfg.output.dir, name)


def _summary(cfg, name, record: dict):
    """Write a flat record as ``name.json`` or a two-column ``name.csv``."""
    if cfg.output.format == "json":
        path = _out(cfg, name + ".json")
        with open(path, "w") as fh:
            fh.write(dumps(record))
    else:
        path = _out(cfg, name + ".csv")
        write_rows(path, ["key", "value"],
                   [[k, v if not isinstance(v, (list, dict)) else dumps(v).strip()]
                    for k, v in sorted(record.items())])
    return path


def _table(cfg, name, estimates):
    if cfg.output.format == "json":
        path = _out(cfg, name + ".json")
        with open(path, "w") as fh:
            fh.write(dumps([e.to_dict() for e in estimates]))
    else:
        path = _out(cfg, name + ".csv")
        write_rows(path, montecarlo.CSV_HEADER,
                   [[e.to_dict()[k] for k in montecarlo.CSV_HEADER] for e in estimates])
    return path


def _float_x0(cfg):
    return np.array([float(v) for v in x0_of(cfg.problem)])


def _grid(cfg, p):
    sc = cfg.solver
    x0 = _float_x0(cfg)
    t0 = float(t0_of(cfg.problem))
    box = box_of(sc, p.d)
    if box is None:
        return pde.default_grid(p, x0, sc.n_space, sc.n_time, t0, sc.n_std, sc.boundary)
    return pde.Grid(box, sc.n_space, sc.n_time, sc.boundary, t0, p.T)


def _epsilon(cfg):
    e = cfg.solver.epsilon.strip()
    return float(e) if e else None


def _solve(cfg, p):
    sc = cfg.solver
    grid = _grid(cfg, p)
    surface = pde.solve_variational_inequality(
        p, grid, sc.scheme, sc.theta, sc.tol, sc.max_iter, sc.omega, sc.rannacher_steps
    )
    return grid, surface


def _assumptions(cfg, p, grid):
    sc = cfg.solver
    if sc.spot_check_samples <= 0:
        return None
    rep = spot_check_assumptions(p, grid.box, sc.spot_check_samples, cfg.mc.seed)
    if rep.violations and sc.strict_assumptions:
        raise ConfigError("assumption spot check failed: " + "; ".join(rep.violations))
    for line in rep.violations:
        print(f"advisory: {line}", file=sys.stderr)
    return rep


def cmd_solve(cfg):
    p = build_problem(cfg.problem)
    assumptions = _assumptions(cfg, p, _grid(cfg, p))
    grid, surface = _solve(cfg, p)
    report = pde.viscosity_residual_report(surface, p, grid)
    if assumptions is not None:
        report["assumption_flags"] = list(assumptions.violations)
    region = pde.extract_continuation_region(surface, _epsilon(cfg))
    x0 = _float_x0(cfg)
    report.update({
        "value_at_x0": float(surface.value_at(x0[None, :])[0]),
        "x0": x0.tolist(),
        "scheme": surface.scheme,
        "n_space": list(grid.n_space),
        "n_time": grid.n_time,
        "box": [list(b) for b in grid.box],
        "region_flags": len(region.flags),
    })
    pde.export_surface_csv(surface, _out(cfg, "surface.csv"))
    pde.export_plot_data(surface, region, _out(cfg, "plot_profile.csv"), _out(cfg, "plot_boundary.csv"))
    _summary(cfg, "residual", report)
    print(f"v(t0, x0) = {report['value_at_x0']:.10g}; complementarity_max = "
          f"{report['complementarity_max']:.3g}")
    return EXIT_OK


def _chain(cfg):
    sc = cfg.solver
    p = build_problem(cfg.problem, exact=sc.lattice_exact)
    x0 = x0_of(cfg.problem) if sc.lattice_exact else _float_x0(cfg)
    chain = lattice.build_chain(p, t0_of(cfg.problem) if sc.lattice_exact else float(t0_of(cfg.problem)),
                                x0, sc.lattice_steps, sc.lattice_scheme, exact=sc.lattice_exact)
    return p, chain


def cmd_tree(cfg):
    p, chain = _chain(cfg)
    surface = lattice.snell_envelope(chain, p)
    eps = _epsilon(cfg)
    rule = lattice.smallest_optimal_rule(surface, eps)
    lattice.export_surface_csv(surface, _out(cfg, "tree_surface.csv"))
    lattice.export_rule_csv(surface, rule, _out(cfg, "tree_rule.csv"))
    sm = lattice.verify_supermartingale(surface)
    record = {"root_value": surface.root_value, "scheme": chain.scheme, "n_steps": chain.n_steps,
              "exact": chain.exact, "epsilon": rule.epsilon,
              "stops_at_root": bool(rule.stop[0][0]), **sm}
    _summary(cfg, "tree", record)
    print(f"root value = {surface.root_value}")
    return EXIT_OK


def _bundle(cfg, p, seed=None):
    mc = cfg.mc
    return sde.simulate(p, float(t0_of(cfg.problem)), _float_x0(cfg), mc.n_steps, mc.n_paths,
                        mc.seed if seed is None else seed, mc.workers)


def cmd_simulate(cfg):
    p = build_problem(cfg.problem)
    bundle = _bundle(cfg, p)
    sde.export_csv(bundle, _out(cfg, "paths.csv"))
    record = {"n_paths": bundle.n_paths, "n_steps": bundle.n_steps, "seed": bundle.seed,
              **sde.moment_check(bundle, 2)}
    _summary(cfg, "simulate", record)
    print(f"{bundle.n_paths} paths x {bundle.n_steps} steps written")
    return EXIT_OK


def cmd_price(cfg):
    p = build_problem(cfg.problem)
    grid, surface = _solve(cfg, p)
    bundle = _bundle(cfg, p)
    v = float(surface.value_at(_float_x0(cfg)[None, :])[0])
    rule = montecarlo.evaluate_rule(p, bundle, surface, _epsilon(cfg))
    ls = montecarlo.longstaff_schwartz(p, bundle, cfg.mc.degree)
    pde_row = montecarlo.ValueEstimate(v, 0.0, 0, cfg.mc.seed, "pde")
    _table(cfg, "price", [pde_row, rule, ls])
    pde.export_surface_csv(surface, _out(cfg, "surface.csv"))
    for e in (pde_row, rule, ls):
        print(f"{e.method_tag:<12} {e.mean:.8g} +- {e.std_error:.2g}")
    return EXIT_OK


def cmd_compare(cfg):
    p = build_problem(cfg.problem)
    _, surface = _solve(cfg, p)
    x0 = _float_x0(cfg)
    v_pde = float(surface.value_at(x0[None, :])[0])
    sc = cfg.solver
    v_tree = float(lattice.root_value(p, float(t0_of(cfg.problem)), x0, sc.lattice_steps, sc.lattice_scheme))
    bundle = _bundle(cfg, p)
    ls = montecarlo.longstaff_schwartz(p, bundle, cfg.mc.degree)
    rows = [
        montecarlo.ValueEstimate(v_pde, 0.0, 0, cfg.mc.seed, "pde"),
        montecarlo.ValueEstimate(v_tree, 0.0, 0, cfg.mc.seed, f"lattice-{sc.lattice_scheme}"),
        ls,
    ]
    _table(cfg, "compare", rows)
    for e in rows:
        print(f"{e.method_tag:<18} {e.mean:.8g} +- {e.std_error:.2g}")
    return EXIT_OK


def cmd_verify(cfg, args):
    vc = cfg.verify
    name = args.suite
    if name == "key-equality":
        res = suites.key_equality_suite(args.spaces or vc.spaces, vc.seed)
    elif name == "smallest-optimal":
        res = suites.smallest_optimal_suite(args.gain_tables or vc.gain_tables, vc.seed)
    elif name == "approx":
        res = suites.approx_suite(args.spaces or vc.approx_spaces, vc.seed)
    else:
        problems = None
        if args.config:
            problems = [("config", build_problem(cfg.problem, exact=True))]
        res = suites.dpp_suite(problems, args.depth or vc.chain_depth, args.taus or vc.taus, vc.seed)
    _summary(cfg, f"verify_{name}", res.to_dict())
    print(f"{name}: {res.summary}")
    if not res.ok:
        raise VerificationFailure(f"{name}: {res.total - res.passed} check(s) failed")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "tree": cmd_tree, "simulate": cmd_simulate,
            "price": cmd_price, "compare": cmd_compare}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        if args.command == "verify":
            return cmd_verify(cfg, args)
        return COMMANDS[args.command](cfg)
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OptStopError as exc:  # pragma: no cover - every subclass is mapped above
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
