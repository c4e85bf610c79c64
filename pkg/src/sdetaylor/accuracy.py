"""Truncation-level selection and exact mean-square approximation errors.

For every multi-dimensional integral a scheme consumes, the truncation level
q is the smallest value whose normalized Parseval residual at unit step,

    R(w, q) = 1/D(w) - sum over the dense box j in {0..q}^k of C(dt=1)^2,

falls below accuracy_constant * dt^e, where e = r + 1 - (k + 2*sum l) and
r/2 is the scheme's strong order.  The (0,0) pair has the closed form
R = 1/(4(2q+1)) (from sum_{i<=q} 1/(4 i^2 - 1) = q/(2q+1)), so its level
comes from a ceiling formula rather than a search.  Residual subtractions
happen in exact rational arithmetic; floats only enter the final comparison.

The multiplier factors k! of the generic error bound are dropped from the
selection conditions; the bound itself stays available as error_bound.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from weakref import WeakKeyDictionary

import numpy as np

from .coeffs import (
    DEFAULT_CAPS,
    SUPPORTED_WEIGHTS,
    CoeffError,
    CoeffKey,
    norm_denominator,
    norm_Ik,
    scale,
    scaled_square_at_unit_step,
)

__all__ = [
    "ORDERS",
    "ORDER_WEIGHTS",
    "Q_LABELS",
    "QSet",
    "AccuracyError",
    "condition_exponent",
    "pair_q_closed_form",
    "unit_residual",
    "select_q",
    "coeff_tensor",
    "exact_error_distinct",
    "exact_error_pattern",
    "error_bound",
]

ORDERS = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)

# r = 2 * order; schemes of order r/2 keep terms with k + 2(j + sum l) <= r
_ORDER_R = {0.5: 1, 1.0: 2, 1.5: 3, 2.0: 4, 2.5: 5, 3.0: 6}

# Weight tuples of the iterated integrals each scheme order consumes
# (cumulative; singles are exact and never need a truncation level).
ORDER_WEIGHTS = {
    0.5: [(0,)],
    1.0: [(0,), (0, 0)],
    1.5: [(0,), (1,), (0, 0), (0, 0, 0)],
    2.0: [(0,), (1,), (0, 0), (1, 0), (0, 1), (0, 0, 0), (0, 0, 0, 0)],
    2.5: [
        (0,), (1,), (2,),
        (0, 0), (1, 0), (0, 1),
        (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
        (0, 0, 0, 0),
        (0, 0, 0, 0, 0),
    ],
    3.0: [
        (0,), (1,), (2,),
        (0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2),
        (0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
        (0, 0, 0, 0), (1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1),
        (0, 0, 0, 0, 0),
        (0, 0, 0, 0, 0, 0),
    ],
}

# Published labels of the truncation numbers; (1,0) and (0,1) share one.
Q_LABELS = {
    (0, 0): "q",
    (0, 0, 0): "q1",
    (0, 1): "q2",
    (1, 0): "q2",
    (0, 0, 0, 0): "q3",
    (0, 0, 0, 0, 0): "q4",
    (2, 0): "q5",
    (1, 1): "q6",
    (0, 2): "q7",
    (0, 0, 1): "q8",
    (0, 1, 0): "q9",
    (1, 0, 0): "q10",
    (0, 0, 0, 1): "q11",
    (0, 0, 1, 0): "q12",
    (0, 1, 0, 0): "q13",
    (1, 0, 0, 0): "q14",
    (0, 0, 0, 0, 0, 0): "q15",
}

_SHARED = {(0, 1): (1, 0), (1, 0): (0, 1)}


class AccuracyError(Exception):
    pass


@dataclass
class QSet:
    """Selected truncation levels for one (order, calculus, dt, C) run."""

    order: float
    calculus: str
    delta: float
    accuracy_constant: float
    levels: dict = field(default_factory=dict)     # weight tuple -> q
    residuals: dict = field(default_factory=dict)  # weight tuple -> achieved R
    capped: set = field(default_factory=set)       # tuples where the cap bound

    def q_for(self, weights):
        return self.levels[weights]

    @property
    def cap_applied(self):
        return bool(self.capped)

    def max_level(self):
        return max(self.levels.values(), default=0)

    def report_lines(self):
        lines = []
        for w in sorted(self.levels, key=lambda w: (len(w), w)):
            label = Q_LABELS[w]
            mark = " (capped)" if w in self.capped else ""
            lines.append(
                f"{label} {w}: q={self.levels[w]} residual={self.residuals[w]:.6e}{mark}"
            )
        return lines


def condition_exponent(weights, order):
    """Step-size exponent e of the selection condition R <= C * dt^e."""
    r = _ORDER_R[order]
    return r + 1 - (len(weights) + 2 * sum(weights))


def pair_q_closed_form(order, delta, accuracy_constant):
    """Smallest q >= 1 with 1/(4(2q+1)) <= C * dt^(r-1), by the ceiling
    formula for the telescoping (0,0) residual."""
    e = condition_exponent((0, 0), order)
    bound = accuracy_constant * delta**e
    need = (1.0 / (4.0 * bound) - 1.0) / 2.0
    return max(1, math.ceil(need - 1e-12))


_PS_CACHE = WeakKeyDictionary()  # store -> {weights: [partial sums by q]}


def _partial_sums(weights, q, store):
    """Exact Parseval partial sums at dt = 1 for q' = 0..q, extended
    incrementally shell by shell and cached per store."""
    per_store = _PS_CACHE.setdefault(store, {})
    sums = per_store.setdefault(weights, [])
    if len(sums) > q:
        return sums
    # grow the backing box geometrically so cap-length walks stay cheap
    cap = DEFAULT_CAPS.get(weights, q)
    store.ensure_box(weights, max(q, min(cap, 2 * len(sums) + 2)))
    k = len(weights)
    while len(sums) <= q:
        qq = len(sums)
        shell = Fraction(0)
        for idx in itertools.product(range(qq + 1), repeat=k):
            if qq and max(idx) < qq:
                continue
            key = CoeffKey(weights, idx)
            shell += scaled_square_at_unit_step(key, store.get(key))
        sums.append((sums[-1] if sums else Fraction(0)) + shell)
    return sums


def unit_residual(weights, q, store):
    """Exact rational R(w, q) at dt = 1 from the cached coefficients."""
    if weights not in SUPPORTED_WEIGHTS or len(weights) < 2:
        raise AccuracyError(f"no selection condition for weights {weights}")
    if weights == (0, 0):
        return Fraction(1, 4 * (2 * q + 1))
    sums = _partial_sums(weights, q, store)
    return Fraction(1, norm_denominator(weights)) - sums[q]


def select_q(order, calculus, delta, accuracy_constant, store):
    """Pick every truncation level a scheme of this order needs.

    Caps from the published coefficient inventory are applied with a flag
    instead of failing; the achieved residual is recorded either way.
    """
    if order not in _ORDER_R:
        raise AccuracyError(f"unsupported order {order}")
    if calculus not in ("ito", "stratonovich"):
        raise AccuracyError(f"unsupported calculus {calculus!r}")
    if calculus == "stratonovich" and order < 1.0:
        raise AccuracyError("stratonovich schemes start at order 1.0")
    if delta <= 0 or accuracy_constant <= 0:
        raise AccuracyError("delta and accuracy constant must be positive")

    qset = QSet(order, calculus, delta, accuracy_constant)
    for w in ORDER_WEIGHTS[order]:
        if len(w) < 2 or w in qset.levels:
            continue
        e = condition_exponent(w, order)
        bound = accuracy_constant * delta**e
        if w == (0, 0):
            q = pair_q_closed_form(order, delta, accuracy_constant)
            qset.levels[w] = q
            qset.residuals[w] = 1.0 / (4.0 * (2 * q + 1))
            continue
        cap = DEFAULT_CAPS[w]
        chosen = None
        residual = None
        for q in range(cap + 1):
            residual = float(unit_residual(w, q, store))
            if residual <= bound:
                chosen = q
                break
        if chosen is None:
            chosen = cap
            qset.capped.add(w)
        qset.levels[w] = chosen
        qset.residuals[w] = residual
    # (1,0) and (0,1) share one published level: take the larger
    if (0, 1) in qset.levels:
        q_shared = max(qset.levels[(0, 1)], qset.levels[(1, 0)])
        for w in ((0, 1), (1, 0)):
            if qset.levels[w] != q_shared:
                qset.levels[w] = q_shared
                qset.residuals[w] = float(unit_residual(w, q_shared, store))
    return qset


def coeff_tensor(weights, q, delta, store):
    """Dense scaled-coefficient tensor over {0..q}^k, axes innermost first."""
    store.ensure_box(weights, q)
    k = len(weights)
    out = np.empty((q + 1,) * k)
    import itertools

    for idx in itertools.product(range(q + 1), repeat=k):
        key = CoeffKey(weights, idx)
        out[idx] = scale(key, store.get(key), delta)
    return out


def exact_error_distinct(weights, q, delta, store):
    """Mean-square error for pairwise-different noise indices:
    norm - sum of squared coefficients over the box."""
    if weights == (0, 0):
        return delta**2 / (4.0 * (2 * q + 1))
    if len(weights) == 1:
        # singles are represented exactly once q >= weight
        return 0.0 if q >= weights[0] else norm_Ik(weights, delta)
    c = coeff_tensor(weights, q, delta, store)
    err = norm_Ik(weights, delta) - float(np.sum(c * c))
    return max(err, 0.0)


def _pattern_groups(pattern):
    groups = {}
    for pos, idx in enumerate(pattern):
        groups.setdefault(idx, []).append(pos)
    return [tuple(g) for g in groups.values()]


def _group_permutations(k, groups):
    """Position permutations generated by permuting within each group."""
    import itertools

    perms = [()]
    base = list(range(k))
    group_perms = []
    for g in groups:
        group_perms.append(list(itertools.permutations(g)))
    out = []
    for combo in itertools.product(*group_perms):
        p = base.copy()
        for g, target in zip(groups, combo):
            for src, dst in zip(g, target):
                p[src] = dst
        out.append(tuple(p))
    return out


def exact_error_pattern(weights, q, delta, pattern, store):
    """Exact mean-square error for a repeated-noise-index pattern.

    The error is norm - sum_j C_j * (sum over the permutation subgroup of
    coefficients with positions permuted inside each equal-index group).
    Patterns with repeats are supported for k <= 5 plus the all-equal case;
    the pairwise-distinct pattern reduces to exact_error_distinct.
    """
    k = len(weights)
    if len(pattern) != k:
        raise AccuracyError("pattern length must match weights")
    groups = _pattern_groups(pattern)
    if all(len(g) == 1 for g in groups):
        return exact_error_distinct(weights, q, delta, store)
    if k == 6 and len(groups) != 1:
        raise AccuracyError("repeated-index patterns beyond full coincidence "
                            "are not available for multiplicity 6")
    c = coeff_tensor(weights, q, delta, store)
    total = 0.0
    for p in _group_permutations(k, groups):
        total += float(np.sum(c * np.transpose(c, p)))
    return float(norm_Ik(weights, delta)) - total


def error_bound(weights, q, delta, store):
    """Generic upper bound k! * (norm - Parseval partial sum), valid for any
    combination of noise indices."""
    return math.factorial(len(weights)) * exact_error_distinct(weights, q, delta, store)
