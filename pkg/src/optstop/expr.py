"""Small arithmetic expression language for coefficient specification.

Grammar, loosest to tightest::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := number | name | name '(' args ')' | '(' expr ')'

so ``-x^2`` is ``-(x^2)`` and ``2^-1`` is ``2^(-1)``.  Numeric literals are
kept as exact fractions; evaluation converts them to floats unless the
inputs are themselves exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ParseError, UsageError

UNARY_FUNCS = ("exp", "log", "sqrt", "abs")
BINARY_FUNCS = ("max", "min")


@dataclass(frozen=True)
class Const:
    value: Fraction


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # neg | exp | log | sqrt | abs
    arg: object


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    fn: str  # max | min
    args: tuple


_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(src):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(src[pos:]) - len(src[pos:].lstrip()))
            raise ParseError(f"unexpected character {src[bad]!r}", _byte_offset(src, bad))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


def _byte_offset(src, index):
    return len(src[:index].encode("utf-8"))


def default_variables(d=9):
    names = {"t", "x"}
    names.update(f"x_{i}" for i in range(1, d + 1))
    return names


class _Parser:
    def __init__(self, src, variables):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0
        self.variables = variables

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message, tok=None):
        tok = tok or self.peek()
        return ParseError(message, _byte_offset(self.src, tok[2]))

    def expect(self, value):
        tok = self.take()
        if tok[1] != value or tok[0] not in ("op",):
            raise self.error(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok)
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise self.error(f"unexpected token {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            node = Binary(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[0] == "op" and self.peek()[1] in "*/":
            op = self.take()[1]
            node = Binary(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Unary("neg", self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return Binary("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return Const(Fraction(text))
        if kind == "name":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                return self.call(text, tok)
            if text in UNARY_FUNCS or text in BINARY_FUNCS:
                raise self.error(f"function {text!r} needs an argument list", tok)
            if text not in self.variables:
                raise self.error(f"unknown identifier {text!r}", tok)
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise self.error(f"unexpected token {text or 'end of input'!r}", tok)

    def call(self, name, tok):
        self.expect("(")
        args = [self.expr()]
        while self.peek()[0] == "op" and self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if name in UNARY_FUNCS:
            if len(args) != 1:
                raise self.error(f"{name}() takes 1 argument, got {len(args)}", tok)
            return Unary(name, args[0])
        if name in BINARY_FUNCS:
            if len(args) != 2:
                raise self.error(f"{name}() takes 2 arguments, got {len(args)}", tok)
            return Call(name, tuple(args))
        raise self.error(f"unknown function {name!r}", tok)


def parse_expr(src: str, variables=None):
    """Parse ``src`` into an AST.  ``variables`` is the set of allowed names."""
    if not src or not src.strip():
        raise ParseError("empty expression", 0)
    if variables is None:
        variables = default_variables()
    return _Parser(src, set(variables)).parse()


def free_variables(node):
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Const):
        return set()
    if isinstance(node, Unary):
        return free_variables(node.arg)
    if isinstance(node, Binary):
        return free_variables(node.left) | free_variables(node.right)
    return set().union(*(free_variables(a) for a in node.args))


# printing -----------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def _format_const(value: Fraction):
    if value.denominator == 1:
        return str(value.numerator)
    # exact decimal when the denominator only has factors 2 and 5
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"({value.numerator}/{value.denominator})"
    k = max(twos, fives)
    scaled = abs(value) * 10**k
    digits = str(scaled.numerator).rjust(k + 1, "0")
    text = digits[:-k] + "." + digits[-k:]
    return ("-" if value < 0 else "") + text


def to_source(node) -> str:
    """Render an AST back to text.

    Trees built by the parser (decimal constants) round-trip to an identical
    AST; other rationals print as a parenthesised quotient.
    """
    return _print(node, 0)


def _print(node, parent_prec):
    if isinstance(node, Const):
        return _format_const(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.fn}({_print(node.args[0], 0)}, {_print(node.args[1], 0)})"
    if isinstance(node, Unary):
        if node.op != "neg":
            return f"{node.op}({_print(node.arg, 0)})"
        text = "-" + _print(node.arg, _PREC["neg"])
        return f"({text})" if parent_prec > _PREC["neg"] else text
    prec = _PREC[node.op]
    if node.op == "^":
        # right associative: the left side needs strictly higher precedence
        left = _print(node.left, prec + 1)
        right = _print(node.right, _PREC["neg"])
    else:
        left = _print(node.left, prec)
        right = _print(node.right, prec + 1)
    text = f"{left} {node.op} {right}" if prec == 1 else f"{left}{node.op}{right}"
    return f"({text})" if parent_prec > prec else text


# evaluation ---------------------------------------------------------------

def _is_exact(value):
    if isinstance(value, (Fraction, int)):
        return True
    return isinstance(value, np.ndarray) and value.dtype == object


def evaluate(node, env, exact=None):
    """Evaluate ``node`` with variables bound in ``env``.

    Values may be Python numbers, numpy arrays (vectorised evaluation), or
    object arrays of ``Fraction`` for exact arithmetic.  Non-finite results
    are returned as-is; callers decide whether to flag them.
    """
    if exact is None:
        exact = any(_is_exact(v) and not isinstance(v, int) for v in env.values())
    with np.errstate(all="ignore"):
        return _eval(node, env, exact)


def _eval(node, env, exact):
    if isinstance(node, Const):
        return node.value if exact else float(node.value)
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise UsageError(f"variable {node.name!r} is not bound") from None
    if isinstance(node, Unary):
        a = _eval(node.arg, env, exact)
        if node.op == "neg":
            return -a
        if node.op == "abs":
            return abs(a) if not isinstance(a, np.ndarray) else np.abs(a)
        if exact:
            raise UsageError(f"{node.op}() is not available in exact arithmetic")
        return getattr(np, node.op)(a)
    if isinstance(node, Call):
        a = _eval(node.args[0], env, exact)
        b = _eval(node.args[1], env, exact)
        fn = np.maximum if node.fn == "max" else np.minimum
        if exact and not isinstance(a, np.ndarray) and not isinstance(b, np.ndarray):
            return max(a, b) if node.fn == "max" else min(a, b)
        return fn(a, b)
    a = _eval(node.left, env, exact)
    b = _eval(node.right, env, exact)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    if exact and isinstance(b, Fraction) and b.denominator != 1:
        raise UsageError("non-integer powers are not available in exact arithmetic")
    if exact and isinstance(b, Fraction):
        b = int(b)
    return a**b
