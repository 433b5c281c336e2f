"""Scalar expressions over chart coordinates.

Expressions are plain sympy trees restricted to rational constants, named
symbols, sums, products, integer powers, ``sin``, ``cos`` and ``log|.|``.
Every symbol is created real.  This module owns the text grammar, the
canonical printer, the normal form and the equivalence test used by the
rest of the package.

Grammar (whitespace is ignored)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("+" | "-") unary | power
    power   := atom ("^" exponent)?
    exponent:= ["-"] INT | "(" ["-"] INT ")"
    atom    := NUMBER | "pi" | IDENT | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := "sin" | "cos" | "log"

``log`` always means the logarithm of the absolute value.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import sympy
from sympy import cos, sin

Expr = sympy.Expr

ZERO = sympy.Integer(0)
ONE = sympy.Integer(1)


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, position: int, text: str = ""):
        super().__init__(f"{message} at position {position}")
        self.position = position
        self.text = text


class DomainError(ArithmeticError):
    """Evaluation hit a pole or the zero of a logarithm."""


class UnboundSymbolError(KeyError):
    pass


class LogAbs(sympy.Function):
    """``log(|u|)``; its derivative is ``1/u`` on both sides of zero."""

    nargs = 1

    @classmethod
    def eval(cls, arg):
        if arg.is_Number:
            if arg.is_zero:
                raise DomainError("log of zero")
            a = abs(arg)
            return ZERO if a == 1 else sympy.log(a)
        if arg.could_extract_minus_sign():
            return cls(-arg)
        return None

    def fdiff(self, argindex=1):
        return 1 / self.args[0]

    def _sympystr(self, printer):
        return "log(%s)" % printer._print(self.args[0])

    def _eval_is_real(self):
        return True


_NUMERIC_FUNCS_MATH = {"LogAbs": lambda u: math.log(abs(u)), "log": math.log}
_NUMERIC_FUNCS_NUMPY = {"LogAbs": lambda u: np.log(np.abs(u)), "log": np.log}


@lru_cache(maxsize=None)
def symbol(name: str) -> sympy.Symbol:
    return sympy.Symbol(name, real=True)


def symbols(names: Iterable[str]) -> tuple[sympy.Symbol, ...]:
    return tuple(symbol(n) for n in names)


def as_expr(value) -> Expr:
    """Coerce text, numbers or sympy objects to an expression.

    Floats are read through their decimal repr so that ``0.5`` becomes the
    exact rational ``1/2``.
    """
    if isinstance(value, sympy.Basic):
        return value
    if isinstance(value, str):
        return parse(value)
    if isinstance(value, bool):
        raise TypeError("booleans are not expressions")
    if isinstance(value, int):
        return sympy.Integer(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite constant {value!r}")
        return sympy.Rational(repr(value))
    raise TypeError(f"cannot make an expression from {type(value).__name__}")


# -- parsing -----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_FUNCS = {"sin": sin, "cos": cos, "log": LogAbs}


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            bad = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[bad]!r}", bad, text)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, found {found}", pos, self.text)

    def error(self, message: str):
        raise ExprSyntaxError(message, self.peek()[2], self.text)

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.error("empty expression")
        e = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(f"unexpected {val!r}", pos, self.text)
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            rhs = self.term()
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self) -> Expr:
        e = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            rhs = self.unary()
            if op == "*":
                e = e * rhs
            else:
                if rhs == 0:
                    raise DomainError("division by the constant zero")
                e = e / rhs
        return e

    def unary(self) -> Expr:
        if self.peek()[1] == "-":
            self.take()
            return -self.unary()
        if self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] != "^":
            return base
        self.take()
        wrapped = self.peek()[1] == "("
        if wrapped:
            self.take()
        sign = 1
        if self.peek()[1] == "-":
            self.take()
            sign = -1
        kind, val, pos = self.take()
        if kind != "num" or not val.isdigit():
            raise ExprSyntaxError("exponent must be an integer literal", pos, self.text)
        if wrapped:
            self.expect(")")
        n = sign * int(val)
        if n < 0 and base == 0:
            raise DomainError("negative power of zero")
        return base**n

    def atom(self) -> Expr:
        kind, val, pos = self.take()
        if kind == "num":
            return sympy.Rational(val)
        if kind == "ident":
            if val in _FUNCS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return _FUNCS[val](arg)
            if val == "pi":
                return sympy.pi
            return symbol(val)
        if val == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(val)
        raise ExprSyntaxError(f"unexpected {found}", pos, self.text)


def parse(text: str) -> Expr:
    """Parse ``text`` in the expression grammar.

    >>> parse("A*sin(z)+C*cos(y)")
    A*sin(z) + C*cos(y)
    """
    return _Parser(text).parse()


def to_text(e) -> str:
    """Canonical text form; ``parse(to_text(e))`` rebuilds ``e``."""
    return sympy.sstr(as_expr(e), order=None).replace("**", "^")


# -- calculus ----------------------------------------------------------------

def diff(e, var, declared: Iterable[str] | None = None) -> Expr:
    """Exact partial derivative, normalized.

    When ``declared`` is given, ``var`` must be one of those names.
    """
    name = var if isinstance(var, str) else var.name
    if declared is not None and name not in set(declared):
        raise UnboundSymbolError(f"undeclared symbol {name!r}")
    return normalize(sympy.diff(as_expr(e), symbol(name)))


def _pythagorean(p: Expr) -> Expr:
    """Rewrite ``cos(a)^n`` (n >= 2) through ``cos^2 = 1 - sin^2``."""
    def is_cos_power(q):
        return (
            q.is_Pow
            and isinstance(q.base, cos)
            and q.exp.is_Integer
            and q.exp >= 2
        )

    def reduce(q):
        n = int(q.exp)
        a = q.base.args[0]
        return cos(a) ** (n % 2) * (1 - sin(a) ** 2) ** (n // 2)

    p = sympy.expand(p)
    if not p.has(cos):
        return p
    return sympy.expand(p.replace(is_cos_power, reduce))


@lru_cache(maxsize=65536)
def _normalize(e: Expr) -> Expr:
    if e.is_Atom:
        return e
    funcs = e.atoms(sin, cos, LogAbs)
    if funcs:
        inner = {}
        for f in funcs:
            arg = _normalize(f.args[0])
            if arg != f.args[0]:
                inner[f] = f.func(arg)
        if inner:
            e = e.xreplace(inner)
    e = sympy.cancel(e)
    num, den = sympy.fraction(e)
    num2, den2 = _pythagorean(num), _pythagorean(den)
    if num2 != num or den2 != den:
        e = sympy.cancel(num2 / den2)
    return e


def normalize(e) -> Expr:
    """Canonical form: a reduced quotient of expanded polynomials in the
    symbols and function atoms, with ``cos`` kept to degree at most one per
    argument.  Idempotent."""
    return _normalize(as_expr(e))


def is_zero(e) -> bool:
    return normalize(e) == 0


def free_names(e) -> set[str]:
    return {s.name for s in as_expr(e).free_symbols}


def substitute(e, values: Mapping[str, object]) -> Expr:
    if not values:
        return as_expr(e)
    e = as_expr(e)
    mapping = {symbol(k): as_expr(v) for k, v in values.items()}
    return e.xreplace(mapping)


# -- numerics ----------------------------------------------------------------

@lru_cache(maxsize=4096)
def _math_function(e: Expr, names: tuple[str, ...]):
    return sympy.lambdify(symbols(names), e, modules=[_NUMERIC_FUNCS_MATH, "math"])


@lru_cache(maxsize=4096)
def _numpy_function(e: Expr, names: tuple[str, ...]):
    return sympy.lambdify(symbols(names), e, modules=[_NUMERIC_FUNCS_NUMPY, "numpy"])


def evaluate(e, point: Mapping[str, float], params: Mapping[str, float] | None = None) -> float:
    """Evaluate at one point; poles and ``log 0`` raise :class:`DomainError`."""
    e = as_expr(e)
    values = dict(params or {})
    values.update(point)
    missing = free_names(e) - set(values)
    if missing:
        raise UnboundSymbolError(f"unbound symbols: {', '.join(sorted(missing))}")
    names = tuple(sorted(free_names(e)))
    f = _math_function(e, names)
    try:
        value = f(*(float(values[n]) for n in names))
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise DomainError(f"cannot evaluate {to_text(e)}: {exc}") from None
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"non-finite value of {to_text(e)}")
    return value


def numpy_function(e, names: Sequence[str]):
    """Vectorized evaluator ``f(*arrays)``; poles give non-finite entries."""
    e = as_expr(e)
    names = tuple(names)
    missing = free_names(e) - set(names)
    if missing:
        raise UnboundSymbolError(f"unbound symbols: {', '.join(sorted(missing))}")
    raw = _numpy_function(e, names)

    def f(*arrays):
        with np.errstate(all="ignore"):
            out = raw(*arrays)
        shape = np.broadcast(*arrays).shape if arrays else ()
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    return f


def math_function(e, names: Sequence[str]):
    """Scalar evaluator using :mod:`math`; raises on poles."""
    e = as_expr(e)
    names = tuple(names)
    missing = free_names(e) - set(names)
    if missing:
        raise UnboundSymbolError(f"unbound symbols: {', '.join(sorted(missing))}")
    return _math_function(e, names)


# -- equivalence -------------------------------------------------------------

@dataclass(frozen=True)
class Equivalence:
    holds: bool
    sampled: bool
    points: int = 0

    def __bool__(self) -> bool:
        return self.holds


def equivalent(a, b, *, samples: int = 64, seed: int = 0, rtol: float = 1e-10,
               box: float = 2.5) -> Equivalence:
    """Decide ``a == b``.

    A zero normal form of ``a - b`` settles it symbolically.  Otherwise the
    two sides are compared at ``samples`` pseudo-random pole-free points; a
    positive answer from sampling is flagged ``sampled``.
    """
    a, b = as_expr(a), as_expr(b)
    if normalize(a - b) == 0:
        return Equivalence(True, False)
    names = tuple(sorted(free_names(a) | free_names(b)))
    if not names:
        return Equivalence(False, False)
    fa, fb = _math_function(a, names), _math_function(b, names)
    rng = random.Random(seed)
    good = 0
    attempts = 0
    while good < samples and attempts < 20 * samples:
        attempts += 1
        vals = [rng.uniform(-box, box) for _ in names]
        try:
            va, vb = float(fa(*vals)), float(fb(*vals))
        except (ZeroDivisionError, ValueError, OverflowError):
            continue
        if not (math.isfinite(va) and math.isfinite(vb)):
            continue
        if abs(va - vb) > rtol * max(1.0, abs(va), abs(vb)):
            return Equivalence(False, True, good + 1)
        good += 1
    return Equivalence(good >= samples, True, good)
