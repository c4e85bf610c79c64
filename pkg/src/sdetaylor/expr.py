"""Symbolic expressions for drift/diffusion fields: parse, differentiate,
simplify, and compile to fast numeric evaluators.

The grammar (EBNF, see also docs/grammar.md):

    expr    = term  { ("+" | "-") term } ;
    term    = unary { ("*" | "/") unary } ;
    unary   = "-" unary | power ;
    power   = atom [ "^" unary ] ;              (* right-associative *)
    atom    = NUMBER | NAME | NAME "(" expr ")" | "(" expr ")" ;

Function names are restricted to sin, cos, exp, log, sqrt.  Any other NAME
must be a declared symbol (x1..xn, t).  Expressions are immutable trees and
safe to share between threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expression",
    "Const",
    "Var",
    "Unary",
    "Binary",
    "ExprError",
    "ParseError",
    "UnknownSymbolError",
    "EvaluationDomainError",
    "parse",
    "differentiate",
    "simplify",
    "compile_field",
    "CompiledField",
    "evaluate",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "pow_",
    "neg",
    "func",
    "to_source",
]

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")


class ExprError(Exception):
    pass


class ParseError(ExprError):
    """Syntax error; carries the 0-based offset of the offending token."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownSymbolError(ExprError):
    def __init__(self, name, offset):
        super().__init__(f"unknown symbol '{name}' (at offset {offset})")
        self.name = name
        self.offset = offset


class EvaluationDomainError(ExprError):
    """Raised when evaluation produced a non-finite result (log/sqrt/div/pow
    outside their domains)."""


@dataclass(frozen=True, slots=True)
class Const:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ExprError("constants must be finite")


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class Unary:
    op: str  # neg, sin, cos, exp, log, sqrt
    a: "Expression"


@dataclass(frozen=True, slots=True)
class Binary:
    op: str  # add, sub, mul, div, pow
    a: "Expression"
    b: "Expression"


Expression = Const | Var | Unary | Binary


def const(v):
    return Const(float(v))


def var(name):
    return Var(name)


def add(a, b):
    return Binary("add", a, b)


def sub(a, b):
    return Binary("sub", a, b)


def mul(a, b):
    return Binary("mul", a, b)


def div(a, b):
    return Binary("div", a, b)


def pow_(a, b):
    return Binary("pow", a, b)


def neg(a):
    return Unary("neg", a)


def func(name, a):
    if name not in FUNCTIONS:
        raise ExprError(f"unknown function '{name}'")
    return Unary(name, a)


_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ParseError(f"unexpected character {stripped[0]!r}", len(text) - len(stripped))
        if m.lastgroup == "num":
            tokens.append(("num", m.group("num"), m.start("num")))
        elif m.lastgroup == "name":
            tokens.append(("name", m.group("name"), m.start("name")))
        else:
            tokens.append(("op", m.group("op"), m.start("op")))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text, symbols):
        self.text = text
        self.symbols = frozenset(symbols)
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def next(self):
        tok = self.peek()
        self.i += 1
        return tok

    def eof_offset(self):
        return len(self.text)

    def expect_op(self, sym):
        tok = self.next()
        if tok is None:
            raise ParseError(f"expected '{sym}', found end of input", self.eof_offset())
        if tok[0] != "op" or tok[1] != sym:
            raise ParseError(f"expected '{sym}', found '{tok[1]}'", tok[2])

    def parse(self):
        e = self.expr()
        tok = self.peek()
        if tok is not None:
            raise ParseError(f"unexpected token '{tok[1]}'", tok[2])
        return e

    def expr(self):
        e = self.term()
        while True:
            tok = self.peek()
            if tok is not None and tok[0] == "op" and tok[1] in "+-":
                self.next()
                rhs = self.term()
                e = add(e, rhs) if tok[1] == "+" else sub(e, rhs)
            else:
                return e

    def term(self):
        e = self.unary()
        while True:
            tok = self.peek()
            if tok is not None and tok[0] == "op" and tok[1] in "*/":
                self.next()
                rhs = self.unary()
                e = mul(e, rhs) if tok[1] == "*" else div(e, rhs)
            else:
                return e

    def unary(self):
        tok = self.peek()
        if tok is not None and tok[0] == "op" and tok[1] == "-":
            self.next()
            return neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok is not None and tok[0] == "op" and tok[1] == "^":
            self.next()
            return pow_(base, self.unary())
        return base

    def atom(self):
        tok = self.next()
        if tok is None:
            raise ParseError("unexpected end of input", self.eof_offset())
        kind, text, offset = tok
        if kind == "num":
            return const(float(text))
        if kind == "name":
            nxt = self.peek()
            if nxt is not None and nxt[0] == "op" and nxt[1] == "(":
                if text not in FUNCTIONS:
                    raise UnknownSymbolError(text, offset)
                self.next()
                arg = self.expr()
                self.expect_op(")")
                return Unary(text, arg)
            if text not in self.symbols:
                raise UnknownSymbolError(text, offset)
            return Var(text)
        if text == "(":
            e = self.expr()
            self.expect_op(")")
            return e
        raise ParseError(f"unexpected token '{text}'", offset)


def parse(text, symbols):
    """Parse an infix formula over the declared symbols into an Expression.

    Args:
      text: formula using +, -, *, /, ^, parentheses, and sin/cos/exp/log/sqrt.
      symbols: iterable of declared variable names.

    Raises:
      ParseError: on malformed input, with the offending offset.
      UnknownSymbolError: on an undeclared name.
    """
    return _Parser(text, symbols).parse()


_ZERO = Const(0.0)
_ONE = Const(1.0)


def differentiate(e, v):
    """Return the partial derivative of ``e`` with respect to symbol ``v``."""
    match e:
        case Const():
            return _ZERO
        case Var(name):
            return _ONE if name == v else _ZERO
        case Unary("neg", a):
            return neg(differentiate(a, v))
        case Unary("sin", a):
            return mul(Unary("cos", a), differentiate(a, v))
        case Unary("cos", a):
            return neg(mul(Unary("sin", a), differentiate(a, v)))
        case Unary("exp", a):
            return mul(e, differentiate(a, v))
        case Unary("log", a):
            return div(differentiate(a, v), a)
        case Unary("sqrt", a):
            return div(differentiate(a, v), mul(const(2.0), e))
        case Binary("add", a, b):
            return add(differentiate(a, v), differentiate(b, v))
        case Binary("sub", a, b):
            return sub(differentiate(a, v), differentiate(b, v))
        case Binary("mul", a, b):
            return add(mul(differentiate(a, v), b), mul(a, differentiate(b, v)))
        case Binary("div", a, b):
            num = sub(mul(differentiate(a, v), b), mul(a, differentiate(b, v)))
            return div(num, mul(b, b))
        case Binary("pow", a, Const(c)):
            # d(a^c) = c * a^(c-1) * a'
            return mul(mul(const(c), pow_(a, const(c - 1.0))), differentiate(a, v))
        case Binary("pow", a, b):
            # a^b = exp(b log a):  a^b * (b' log a + b a'/a)
            inner = add(
                mul(differentiate(b, v), Unary("log", a)),
                div(mul(b, differentiate(a, v)), a),
            )
            return mul(e, inner)
    raise ExprError(f"cannot differentiate node {e!r}")


def _is_const(e, v=None):
    return isinstance(e, Const) and (v is None or e.value == v)


_FOLD = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b if b != 0.0 else math.nan,
    "pow": lambda a, b: math.pow(a, b) if (a > 0.0 or float(b).is_integer()) else math.nan,
    "neg": lambda a: -a,
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": lambda a: math.log(a) if a > 0.0 else math.nan,
    "sqrt": lambda a: math.sqrt(a) if a >= 0.0 else math.nan,
}


def _simplify_once(e):
    match e:
        case Const() | Var():
            return e
        case Unary(op, a):
            a = _simplify_once(a)
            if isinstance(a, Const):
                # fold only when the result stays finite
                try:
                    val = _FOLD[op](a.value)
                except OverflowError:
                    val = math.inf
                if math.isfinite(val):
                    return Const(val)
            if op == "neg" and isinstance(a, Unary) and a.op == "neg":
                return a.a
            return Unary(op, a)
        case Binary(op, a, b):
            a = _simplify_once(a)
            b = _simplify_once(b)
            if isinstance(a, Const) and isinstance(b, Const):
                try:
                    val = _FOLD[op](a.value, b.value)
                except (OverflowError, ValueError):
                    val = math.nan
                if math.isfinite(val):
                    return Const(val)
            if op == "add":
                if _is_const(a, 0.0):
                    return b
                if _is_const(b, 0.0):
                    return a
                if a == b:
                    return Binary("mul", Const(2.0), a)
            elif op == "sub":
                if _is_const(b, 0.0):
                    return a
                if a == b:
                    return _ZERO
                if _is_const(a, 0.0):
                    return neg(b)
            elif op == "mul":
                if _is_const(a, 0.0) or _is_const(b, 0.0):
                    return _ZERO
                if _is_const(a, 1.0):
                    return b
                if _is_const(b, 1.0):
                    return a
            elif op == "div":
                if _is_const(b, 1.0):
                    return a
            elif op == "pow":
                if _is_const(b, 1.0):
                    return a
                if _is_const(b, 0.0):
                    return _ONE
            return Binary(op, a, b)
    raise ExprError(f"cannot simplify node {e!r}")


def simplify(e):
    """Apply the fixed rewrite set to a fixpoint.

    Rules: constant folding (kept unfolded when the fold is non-finite),
    0*e -> 0, 1*e -> e, e+0 -> e, e+e -> 2*e and e-e -> 0 for identical
    subtrees, e-0 -> e, 0-e -> -e, e/1 -> e, e^1 -> e, e^0 -> 1,
    -(-e) -> e.  Idempotent.
    """
    while True:
        s = _simplify_once(e)
        if s == e:
            return s
        e = s


def evaluate(e, env):
    """Tree-walking evaluation with an {name: value} environment.

    Raises EvaluationDomainError when the result is not finite.
    """
    val = _eval(e, env)
    if not math.isfinite(val):
        raise EvaluationDomainError(f"expression evaluated to {val}")
    return val


def _eval(e, env):
    match e:
        case Const(v):
            return v
        case Var(name):
            return float(env[name])
        case Unary(op, a):
            x = _eval(a, env)
            try:
                return _FOLD[op](x)
            except OverflowError:
                return math.inf
        case Binary(op, a, b):
            x = _eval(a, env)
            y = _eval(b, env)
            try:
                return _FOLD[op](x, y)
            except (OverflowError, ValueError):
                return math.nan
    raise ExprError(f"cannot evaluate node {e!r}")


_NP_FUNCS = {"sin": "np.sin", "cos": "np.cos", "exp": "np.exp", "log": "np.log", "sqrt": "np.sqrt"}
_BIN_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "**"}


def to_source(e):
    """Render the tree as a (fully parenthesized) Python/numpy expression."""
    match e:
        case Const(v):
            # parenthesized so "-c ** 2" cannot reassociate under Python's **
            return f"({v!r})" if v < 0 else repr(v)
        case Var(name):
            return name
        case Unary("neg", a):
            return f"(-{to_source(a)})"
        case Unary(op, a):
            return f"{_NP_FUNCS[op]}({to_source(a)})"
        case Binary(op, a, b):
            return f"({to_source(a)} {_BIN_SYM[op]} {to_source(b)})"
    raise ExprError(f"cannot render node {e!r}")


class CompiledField:
    """A compiled scalar field over an ordered variable list.

    Calling the field with positional scalars or same-shaped arrays (one per
    variable, in order) evaluates the tree semantics with numpy; no symbolic
    work happens at call time.  Domain violations (log of a negative number,
    0/0, ...) yield NaN/inf in the output; use eval_checked to turn those
    into EvaluationDomainError.
    """

    __slots__ = ("order", "source", "_fn", "expression")

    def __init__(self, expression, order, source, fn):
        self.expression = expression
        self.order = tuple(order)
        self.source = source
        self._fn = fn

    def __call__(self, *args):
        with np.errstate(all="ignore"):
            return self._fn(*args)

    def eval_checked(self, *args):
        out = self(*args)
        if not np.all(np.isfinite(out)):
            raise EvaluationDomainError("compiled field produced a non-finite value")
        return out

    def __repr__(self):
        return f"CompiledField({', '.join(self.order)} -> {self.source})"


def _free_vars(e, acc):
    match e:
        case Const():
            pass
        case Var(name):
            acc.add(name)
        case Unary(_, a):
            _free_vars(a, acc)
        case Binary(_, a, b):
            _free_vars(a, acc)
            _free_vars(b, acc)
    return acc


def compile_field(e, order):
    """Compile an Expression to a CompiledField over the given variable order.

    Every free variable of ``e`` must appear in ``order``; extra variables in
    ``order`` are accepted (and ignored by the evaluator).
    """
    order = tuple(order)
    missing = _free_vars(e, set()) - set(order)
    if missing:
        raise ExprError(f"variables {sorted(missing)} not in compilation order {order}")
    src = to_source(e)
    lam = f"lambda {', '.join(order)}: {src}" if order else f"lambda: {src}"
    fn = eval(lam, {"np": np})  # noqa: S307 - source is generated from the AST only
    return CompiledField(e, order, src, fn)
