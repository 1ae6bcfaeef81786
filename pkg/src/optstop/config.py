"""Run configuration: an INI file with five sections.

::

    [problem]
    preset = gbm            ; bachelier | gbm | ou | expr
    d = 1
    m = 1                   ; expr only
    T = 1
    t0 = 0
    x0 = 100                ; comma separated for d > 1
    mu = -0.06              ; bachelier/gbm drift, ou mean-reversion speed is kappa
    sigma = 0.2
    kappa = 1
    mean = 0
    drift = "0"             ; expr: d expressions separated by ';'
    diffusion = "1"         ; expr: d*m expressions, row-major, ';'
    running = "0"           ; f(t, x); any preset
    terminal = "max(100 - x, 0)"

    [solver]
    scheme = psor           ; psor | policy-iteration | explicit-projection
    theta = 0.5
    tol = 1e-9
    max_iter = 10000
    omega = 1.2
    rannacher_steps = 2
    n_space = 401
    n_time = 400
    n_std = 6
    box =                   ; optional "lo:hi" per dimension, ',' separated
    boundary = dirichlet-g
    lattice_scheme = binomial
    lattice_steps = 2000
    lattice_exact = false
    epsilon =               ; optional rule threshold

    [mc]
    n_paths = 100000
    n_steps = 100
    seed = 11
    degree = 4
    workers = 1

    [verify]
    spaces = 100
    gain_tables = 50
    approx_spaces = 50
    chain_depth = 4
    taus = 20
    seed = 7

    [output]
    dir = out
    format = json           ; json | csv for summaries; surfaces and paths are csv

Values may be quoted; ``--set section.key=value`` overrides any key.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from fractions import Fraction

from .errors import ConfigError
from .model import PRESETS, StoppingProblem, from_expression_strings


def _unquote(v: str) -> str:
    v = v.strip()
    if len(v) >= 2 and v[0] == v[-1] and v[0] in "\"'":
        return v[1:-1]
    return v


def _number(v):
    """Rational when the text is an exact decimal or ``p/q``, else float."""
    text = _unquote(str(v))
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        pass
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}") from None


def _bool(v):
    t = _unquote(str(v)).lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


@dataclass
class ProblemConfig:
    preset: str = "bachelier"
    d: int = 1
    m: int = 1
    T: str = "1"
    t0: str = "0"
    x0: str = "0"
    mu: str = "0"
    sigma: str = "1"
    kappa: str = "1"
    mean: str = "0"
    drift: str = ""
    diffusion: str = ""
    running: str = "0"
    terminal: str = "x^2"


@dataclass
class SolverConfig:
    scheme: str = "psor"
    theta: float = 0.5
    tol: float = 1e-9
    max_iter: int = 10_000
    omega: float = 1.2
    rannacher_steps: int = 2
    n_space: int = 401
    n_time: int = 400
    n_std: float = 6.0
    box: str = ""
    boundary: str = "dirichlet-g"
    lattice_scheme: str = "trinomial"
    lattice_steps: int = 200
    lattice_exact: bool = False
    epsilon: str = ""
    # 0 disables the Lipschitz/growth spot check; strict turns its flags into errors
    spot_check_samples: int = 0
    strict_assumptions: bool = False


@dataclass
class McConfig:
    n_paths: int = 10_000
    n_steps: int = 100
    seed: int = 11
    degree: int = 3
    workers: int = 1


@dataclass
class VerifyConfig:
    spaces: int = 100
    gain_tables: int = 50
    approx_spaces: int = 50
    chain_depth: int = 4
    taus: int = 20
    seed: int = 7


@dataclass
class OutputConfig:
    dir: str = "out"
    format: str = "json"


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    mc: McConfig = field(default_factory=McConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def set(self, section: str, key: str, value: str):
        sec = getattr(self, section, None)
        if sec is None or section.startswith("_") or section == "set":
            raise ConfigError(f"unknown config section [{section}]")
        types = {f.name: f.type for f in fields(sec)}
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        kind = types[key]
        try:
            if kind == "int":
                val = int(_unquote(value))
            elif kind == "float":
                val = float(_unquote(value))
            elif kind == "bool":
                val = _bool(value)
            else:
                val = _unquote(value)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot read {value!r} as {kind}") from None
        setattr(sec, key, val)


SECTIONS = ("problem", "solver", "mc", "verify", "output")


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                cfg.set(section, key, value)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        cfg.set(section.strip(), key.strip(), value)
    return cfg


def _split(text, sep):
    return [s.strip() for s in text.split(sep) if s.strip()]


def x0_of(pc: ProblemConfig):
    vals = [_number(v) for v in _split(pc.x0, ",")]
    if len(vals) != pc.d:
        raise ConfigError(f"x0 has {len(vals)} entries, expected d = {pc.d}")
    return vals


def t0_of(pc: ProblemConfig):
    return _number(pc.t0)


def box_of(sc: SolverConfig, d):
    if not sc.box.strip():
        return None
    sides = []
    for part in _split(sc.box, ","):
        try:
            lo, hi = part.split(":")
            sides.append((float(lo), float(hi)))
        except ValueError:
            raise ConfigError(f"box side {part!r} is not lo:hi") from None
    if len(sides) != d:
        raise ConfigError(f"box has {len(sides)} sides, expected {d}")
    return tuple(sides)


def build_problem(pc: ProblemConfig, exact: bool = False) -> StoppingProblem:
    """Problem from the config; ``exact`` keeps preset parameters rational."""
    def num(v):
        q = _number(v)
        return q if exact and isinstance(q, Fraction) else float(q)

    T = _number(pc.T)
    running = pc.running.strip() or "0"
    terminal = pc.terminal.strip()
    if not terminal:
        raise ConfigError("[problem] terminal is required")
    if pc.preset == "expr":
        drift = _split(pc.drift, ";")
        diff = _split(pc.diffusion, ";")
        return from_expression_strings(pc.d, pc.m, float(T), drift, diff, running, terminal)
    if pc.preset not in PRESETS:
        raise ConfigError(f"unknown preset {pc.preset!r}; choose from {sorted(PRESETS)} or 'expr'")
    if pc.preset == "ou":
        return PRESETS["ou"](num(pc.kappa), num(pc.mean), num(pc.sigma), float(T),
                             terminal, f=running, d=pc.d)
    return PRESETS[pc.preset](num(pc.mu), num(pc.sigma), float(T), terminal, f=running, d=pc.d)
