"""Differential operators over SDE models and the per-scheme coefficient
fields.

The drift generator bundles first- and second-order terms,

    L f = df/dt + sum_i a_i df/dx_i
          + 1/2 sum_j sum_{l,i} B[l][j] B[i][j] d2f/dx_l dx_i,

the diffusion directions are G0_i f = sum_j B[j][i] df/dx_j, and the
corrected drift for the alternative calculus is abar = a - 1/2 sum_j G0_j B_j
with its first-order generator Lbar f = df/dt + sum_i abar_i df/dx_i
(equal to L - 1/2 sum G0 G0 applied to f).

build_scheme_fields resolves every operator word a chosen scheme prints
(e.g. "G L G B" across all noise-index tuples), differentiates symbolically,
simplifies, and compiles each one exactly once, sharing common suffixes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from . import expr
from .expr import Expression

__all__ = [
    "SdeModel",
    "SchemeFields",
    "SchemeTerm",
    "OperatorError",
    "apply_L",
    "apply_G0",
    "apply_Gp",
    "a_bar",
    "apply_Lbar",
    "scheme_terms",
    "deterministic_tail",
    "build_scheme_fields",
    "SUPPORTED_ORDERS",
]

SUPPORTED_ORDERS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)


class OperatorError(Exception):
    pass


@dataclass(frozen=True)
class SdeModel:
    """An n-dimensional diffusion with m independent noise components.

    drift: n expressions a_i(x, t); diffusion: n rows of m expressions
    B[row][col]; x0: initial state.  Symbols are fixed as x1..xn and t.
    """

    n: int
    m: int
    drift: tuple
    diffusion: tuple
    x0: tuple

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise OperatorError("dimensions must be positive")
        if len(self.drift) != self.n or len(self.x0) != self.n:
            raise OperatorError("drift/x0 length must equal n")
        if len(self.diffusion) != self.n or any(len(r) != self.m for r in self.diffusion):
            raise OperatorError("diffusion must be an n x m matrix")

    @property
    def state_symbols(self):
        return tuple(f"x{i + 1}" for i in range(self.n))

    @property
    def symbols(self):
        return self.state_symbols + ("t",)

    @classmethod
    def from_strings(cls, drift, diffusion, x0):
        n = len(drift)
        m = len(diffusion[0]) if diffusion else 0
        symbols = [f"x{i + 1}" for i in range(n)] + ["t"]
        a = tuple(expr.parse(s, symbols) for s in drift)
        b = tuple(tuple(expr.parse(s, symbols) for s in row) for row in diffusion)
        return cls(n=n, m=m, drift=a, diffusion=b, x0=tuple(float(v) for v in x0))

    def diffusion_column(self, i):
        """Column i (1-based) of the diffusion matrix as an n-vector."""
        if not 1 <= i <= self.m:
            raise OperatorError(f"noise index {i} out of range 1..{self.m}")
        return tuple(row[i - 1] for row in self.diffusion)


def _d(e, name):
    return expr.simplify(expr.differentiate(e, name))


def apply_L(model, f):
    """Drift generator applied componentwise to an expression vector."""
    xs = model.state_symbols
    out = []
    for phi in f:
        acc = _d(phi, "t")
        grads = [_d(phi, x) for x in xs]
        for ai, gi in zip(model.drift, grads):
            acc = expr.add(acc, expr.mul(ai, gi))
        for j in range(model.m):
            for l in range(model.n):
                second = [_d(grads[l], x) for x in xs]
                for i in range(model.n):
                    if second[i] == expr.Const(0.0):
                        continue
                    term = expr.mul(
                        expr.mul(model.diffusion[l][j], model.diffusion[i][j]),
                        second[i],
                    )
                    acc = expr.add(acc, expr.mul(expr.const(0.5), term))
        out.append(expr.simplify(acc))
    return out


def apply_G0(model, i, f):
    """Diffusion-direction derivative sum_j B[j][i] d/dx_j, componentwise."""
    col = model.diffusion_column(i)
    xs = model.state_symbols
    out = []
    for phi in f:
        acc = expr.const(0.0)
        for bj, x in zip(col, xs):
            acc = expr.add(acc, expr.mul(bj, _d(phi, x)))
        out.append(expr.simplify(acc))
    return out


def apply_Gp(model, p, i, f):
    """Commutator ladder G_p = (G_{p-1} L - L G_{p-1}) / p."""
    if p < 1:
        raise OperatorError("p must be >= 1")

    def g_prev(vec):
        if p == 1:
            return apply_G0(model, i, vec)
        return apply_Gp(model, p - 1, i, vec)

    left = g_prev(apply_L(model, f))
    right = apply_L(model, g_prev(f))
    inv = expr.const(1.0 / p)
    return [
        expr.simplify(expr.mul(inv, expr.sub(a, b))) for a, b in zip(left, right)
    ]


@lru_cache(maxsize=None)
def a_bar(model):
    """Corrected drift a - 1/2 sum_j G0_j B_j."""
    out = list(model.drift)
    for j in range(1, model.m + 1):
        gb = apply_G0(model, j, model.diffusion_column(j))
        out = [expr.sub(o, expr.mul(expr.const(0.5), g)) for o, g in zip(out, gb)]
    return tuple(expr.simplify(o) for o in out)


def apply_Lbar(model, f):
    """First-order corrected generator df/dt + sum abar_i df/dx_i."""
    ab = a_bar(model)
    xs = model.state_symbols
    out = []
    for phi in f:
        acc = _d(phi, "t")
        for ai, x in zip(ab, xs):
            acc = expr.add(acc, expr.mul(ai, _d(phi, x)))
        out.append(expr.simplify(acc))
    return out


# -- scheme term tables --------------------------------------------------------
#
# Words are abstract operator sequences, leftmost applied last: "G" is a
# diffusion direction (consuming one noise index, left to right), "L" the
# generator, and the final letter the operand ("B" consumes the last noise
# index; "a" is the drift).  Under the alternative calculus "L" resolves to
# Lbar and "a" to abar; deterministic tails carry their own literal words.
# Each part is (integral weights | None, rational coefficient, dt power):
# the term's factor is sum over parts of coef * dt^power * I_weights.

@dataclass(frozen=True)
class SchemeTerm:
    word: tuple
    parts: tuple

    @property
    def arity(self):
        return sum(1 for w in self.word if w == "G") + (1 if self.word[-1] == "B" else 0)


def _t(word, *parts):
    return SchemeTerm(tuple(word.split()), tuple(parts))


_STOCHASTIC_TERMS = {
    0.5: [
        _t("B", ((0,), Fraction(1), 0)),
    ],
    1.0: [
        _t("G B", ((0, 0), Fraction(1), 0)),
    ],
    1.5: [
        _t("G a", ((0,), Fraction(1), 1), ((1,), Fraction(1), 0)),
        _t("L B", ((1,), Fraction(-1), 0)),
        _t("G G B", ((0, 0, 0), Fraction(1), 0)),
    ],
    2.0: [
        _t("G L B", ((1, 0), Fraction(1), 0), ((0, 1), Fraction(-1), 0)),
        _t("L G B", ((1, 0), Fraction(-1), 0)),
        _t("G G a", ((0, 1), Fraction(1), 0), ((0, 0), Fraction(1), 1)),
        _t("G G G B", ((0, 0, 0, 0), Fraction(1), 0)),
    ],
    2.5: [
        _t("G L a", ((2,), Fraction(1, 2), 0), ((1,), Fraction(1), 1), ((0,), Fraction(1, 2), 2)),
        _t("L L B", ((2,), Fraction(1, 2), 0)),
        _t("L G a", ((2,), Fraction(-1), 0), ((1,), Fraction(-1), 1)),
        _t("G L G B", ((1, 0, 0), Fraction(1), 0), ((0, 1, 0), Fraction(-1), 0)),
        _t("G G L B", ((0, 1, 0), Fraction(1), 0), ((0, 0, 1), Fraction(-1), 0)),
        _t("G G G a", ((0, 0, 0), Fraction(1), 1), ((0, 0, 1), Fraction(1), 0)),
        _t("L G G B", ((1, 0, 0), Fraction(-1), 0)),
        _t("G G G G B", ((0, 0, 0, 0, 0), Fraction(1), 0)),
    ],
    3.0: [
        _t("G G L a", ((0, 2), Fraction(1, 2), 0), ((0, 1), Fraction(1), 1), ((0, 0), Fraction(1, 2), 2)),
        _t("L L G B", ((2, 0), Fraction(1, 2), 0)),
        _t("G L G a", ((1, 1), Fraction(1), 0), ((0, 2), Fraction(-1), 0), ((1, 0), Fraction(1), 1), ((0, 1), Fraction(-1), 1)),
        _t("L G L B", ((1, 1), Fraction(1), 0), ((2, 0), Fraction(-1), 0)),
        _t("G L L B", ((0, 2), Fraction(1, 2), 0), ((2, 0), Fraction(1, 2), 0), ((1, 1), Fraction(-1), 0)),
        _t("L G G a", ((1, 0), Fraction(-1), 1), ((1, 1), Fraction(-1), 0)),
        _t("G G G G a", ((0, 0, 0, 0), Fraction(1), 1), ((0, 0, 0, 1), Fraction(1), 0)),
        _t("G G L G B", ((0, 1, 0, 0), Fraction(1), 0), ((0, 0, 1, 0), Fraction(-1), 0)),
        _t("L G G G B", ((1, 0, 0, 0), Fraction(-1), 0)),
        _t("G L G G B", ((1, 0, 0, 0), Fraction(1), 0), ((0, 1, 0, 0), Fraction(-1), 0)),
        _t("G G G L B", ((0, 0, 1, 0), Fraction(1), 0), ((0, 0, 0, 1), Fraction(-1), 0)),
        _t("G G G G G B", ((0, 0, 0, 0, 0, 0), Fraction(1), 0)),
    ],
}


def scheme_terms(order):
    """Cumulative stochastic term list of the scheme with this order."""
    if order not in SUPPORTED_ORDERS:
        raise OperatorError(f"unsupported order {order}")
    out = []
    for level in SUPPORTED_ORDERS:
        if level > order:
            break
        out.extend(_STOCHASTIC_TERMS[level])
    return out


def deterministic_tail(order, calculus):
    """Literal deterministic terms (word, coefficient, dt power).

    The printed alternative-calculus schemes keep the plain generator in the
    order-1.5 dt^2/2 tail and the order-2.5 dt^3/6 tail; orders >= 2.0 carry
    the corrected generator, and only the order-3.0 scheme upgrades the
    dt^3/6 term.
    """
    if calculus == "ito":
        tails = [(("a",), Fraction(1), 1)]
        if order >= 1.5:
            tails.append((("L", "a"), Fraction(1, 2), 2))
        if order >= 2.5:
            tails.append((("L", "L", "a"), Fraction(1, 6), 3))
        return tails
    tails = [(("ab",), Fraction(1), 1)]
    if order == 1.5:
        tails.append((("plainL", "plaina"), Fraction(1, 2), 2))
    elif order >= 2.0:
        tails.append((("Lb", "ab"), Fraction(1, 2), 2))
    if order == 2.5:
        tails.append((("plainL", "plainL", "plaina"), Fraction(1, 6), 3))
    elif order == 3.0:
        tails.append((("Lb", "Lb", "ab"), Fraction(1, 6), 3))
    return tails


class SchemeFields:
    """Compiled coefficient fields of one (model, order, calculus) triple.

    fields maps (word, noise-index tuple) to a list of n compiled component
    evaluators; eval() stacks them into a (paths, n) array.
    """

    def __init__(self, model, order, calculus, fields, terms, tails):
        self.model = model
        self.order = order
        self.calculus = calculus
        self.fields = fields
        self.terms = terms
        self.tails = tails

    def eval(self, word, ituple, state_cols, t):
        comps = self.fields[(word, ituple)]
        return np.stack([np.broadcast_to(f(*state_cols, t), state_cols[0].shape) for f in comps], axis=-1)


def _resolve(word, calculus):
    if calculus == "ito":
        table = {"G": "G", "L": "L", "a": "a", "B": "B"}
    else:
        table = {"G": "G", "L": "Lb", "a": "ab", "B": "B"}
    out = []
    for op in word:
        out.append(table.get(op, op))
    return tuple(out)


@lru_cache(maxsize=8)
def build_scheme_fields(model, order, calculus):
    """Differentiate, simplify, and compile every operator superposition the
    chosen scheme references, each index tuple exactly once.

    Noise indices are threaded left to right through the "G" slots of a
    word; the final "B" operand consumes the last index.  Common suffixes
    (e.g. the "G B" inside every "... G B" word) are resolved once.
    """
    if calculus not in ("ito", "stratonovich"):
        raise OperatorError(f"unsupported calculus {calculus!r}")
    if calculus == "stratonovich" and order < 1.0:
        raise OperatorError("stratonovich schemes start at order 1.0")
    terms = scheme_terms(order)
    tails = deterministic_tail(order, calculus)
    syms = model.symbols
    cache = {}

    def base_vector(opname, ituple):
        if opname in ("a", "plaina"):
            return model.drift
        if opname == "ab":
            return a_bar(model)
        return model.diffusion_column(ituple[0])

    def apply_op(opname, i, vec):
        if opname == "G":
            return apply_G0(model, i, vec)
        if opname in ("L", "plainL"):
            return apply_L(model, vec)
        if opname == "Lb":
            return apply_Lbar(model, vec)
        raise OperatorError(f"unknown operator {opname!r}")

    def resolve_exprs(resolved, ituple):
        key = (resolved, ituple)
        hit = cache.get(key)
        if hit is not None:
            return hit
        if len(resolved) == 1:
            vec = base_vector(resolved[0], ituple)
        elif resolved[0] == "G":
            vec = apply_op("G", ituple[0], resolve_exprs(resolved[1:], ituple[1:]))
        else:
            vec = apply_op(resolved[0], None, resolve_exprs(resolved[1:], ituple))
        cache[key] = vec
        return vec

    fields = {}
    for term in terms:
        resolved = _resolve(term.word, calculus)
        for ituple in itertools.product(range(1, model.m + 1), repeat=term.arity):
            if (term.word, ituple) in fields:
                continue
            vec = resolve_exprs(resolved, ituple)
            fields[(term.word, ituple)] = [expr.compile_field(e, syms) for e in vec]
    for word, _, _ in tails:
        vec = resolve_exprs(word, ())
        fields[(word, ())] = [expr.compile_field(e, syms) for e in vec]
    return SchemeFields(model, order, calculus, fields, terms, tails)
