"""Exact Fourier-Legendre coefficients of iterated-integral kernels, their
time-step scalings, and a persistent text-file cache.

A raw coefficient for weight exponents (l_1..l_k) and Legendre degrees
(j_1..j_k), both innermost first, is the exact rational

    cbar = (-1)^(l_1+...+l_k) *
           integral over -1 < x_1 < ... < x_k < 1 of
           prod_s (1+x_s)^(l_s) P_{j_s}(x_s) dx_1...dx_k,

and the step-scaled coefficient used by the integral approximations is

    C = prod_s sqrt(2 j_s + 1) / 2^(k + sum l) * dt^((k + 2 sum l)/2) * cbar.

All exact arithmetic happens in the shifted Legendre basis: series are
{degree: Fraction} maps, products use the Adams linearization of P_m * P_n,
and antiderivatives use (P_{j+1} - P_{j-1}) / (2j+1), which vanishes at -1.
Floats appear only after the dt-scaling.
"""

from __future__ import annotations

import math
import os
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

__all__ = [
    "CoeffKey",
    "CoeffStore",
    "CoeffError",
    "UnsupportedWeightsError",
    "SUPPORTED_WEIGHTS",
    "DEFAULT_CAPS",
    "MAX_LEGENDRE_DEGREE",
    "legendre",
    "cbar",
    "scale",
    "scaled_square_at_unit_step",
    "norm_denominator",
    "norm_Ik",
    "generate_range",
]

MAX_LEGENDRE_DEGREE = 64

# Weight tuples with closed-form kernels elsewhere in the package: singles and
# the (0,0) pair.  The remaining sixteen are the series-summed integrals of
# multiplicities 2..6 that the order-1.5..3.0 schemes need.
SUPPORTED_WEIGHTS = frozenset(
    [
        (0,),
        (1,),
        (2,),
        (0, 0),
        (0, 1),
        (1, 0),
        (0, 2),
        (2, 0),
        (1, 1),
        (0, 0, 0),
        (1, 0, 0),
        (0, 1, 0),
        (0, 0, 1),
        (0, 0, 0, 0),
        (1, 0, 0, 0),
        (0, 1, 0, 0),
        (0, 0, 1, 0),
        (0, 0, 0, 1),
        (0, 0, 0, 0, 0),
        (0, 0, 0, 0, 0, 0),
    ]
)

# Per-position generation caps matching the published coefficient inventory.
DEFAULT_CAPS = {
    (0, 0, 0): 56,
    (1, 0): 15,
    (0, 1): 15,
    (0, 0, 0, 0): 15,
    (0, 0, 0, 0, 0): 6,
    (1, 0, 0): 6,
    (0, 1, 0): 6,
    (0, 0, 1): 6,
    (2, 0): 2,
    (1, 1): 2,
    (0, 2): 2,
    (1, 0, 0, 0): 2,
    (0, 1, 0, 0): 2,
    (0, 0, 1, 0): 2,
    (0, 0, 0, 1): 2,
    (0, 0, 0, 0, 0, 0): 2,
}


class CoeffError(Exception):
    pass


class UnsupportedWeightsError(CoeffError):
    def __init__(self, weights):
        super().__init__(f"unsupported weight tuple {weights}")
        self.weights = weights


@dataclass(frozen=True, slots=True)
class CoeffKey:
    """Weight exponents and Legendre degrees, innermost position first."""

    weights: tuple
    indices: tuple

    def __post_init__(self):
        if self.weights not in SUPPORTED_WEIGHTS:
            raise UnsupportedWeightsError(self.weights)
        if len(self.indices) != len(self.weights):
            raise CoeffError("weights and indices must have equal length")
        if any(j < 0 or j > MAX_LEGENDRE_DEGREE for j in self.indices):
            raise CoeffError(f"Legendre degree out of range in {self.indices}")

    @property
    def k(self):
        return len(self.weights)


@lru_cache(maxsize=None)
def legendre(j):
    """Monomial coefficients (constant term first) of the Legendre
    polynomial P_j, as exact Fractions via the Bonnet recurrence."""
    if j < 0:
        raise CoeffError("negative Legendre degree")
    if j > MAX_LEGENDRE_DEGREE:
        raise CoeffError(f"Legendre degree {j} exceeds cap {MAX_LEGENDRE_DEGREE}")
    if j == 0:
        return (Fraction(1),)
    if j == 1:
        return (Fraction(0), Fraction(1))
    pm2 = legendre(j - 2)
    pm1 = legendre(j - 1)
    out = [Fraction(0)] * (j + 1)
    for i, c in enumerate(pm1):
        out[i + 1] += Fraction(2 * j - 1, j) * c
    for i, c in enumerate(pm2):
        out[i] -= Fraction(j - 1, j) * c
    return tuple(out)


# -- Legendre-basis series algebra -------------------------------------------

@lru_cache(maxsize=None)
def _a(s):
    # (2s)! / (2^s s!^2), the Adams linearization building block
    return Fraction(math.factorial(2 * s), (2**s) * math.factorial(s) ** 2)


@lru_cache(maxsize=None)
def _adams_row(m, n):
    """P_m * P_n = sum_r row[r] * P_{m+n-2r}, r = 0..min(m,n)."""
    if m < n:
        m, n = n, m
    row = []
    for r in range(n + 1):
        c = _a(m - r) * _a(r) * _a(n - r) / _a(m + n - r)
        c *= Fraction(2 * (m + n) - 4 * r + 1, 2 * (m + n) - 2 * r + 1)
        row.append(c)
    return tuple(row)


def _mul_P(series, n):
    """Multiply a Legendre series by P_n."""
    if n == 0:
        return dict(series)
    out = {}
    for m, c in series.items():
        row = _adams_row(m, n)
        top = m + n
        for r, a in enumerate(row):
            d = top - 2 * r
            out[d] = out.get(d, 0) + c * a
    return {d: c for d, c in out.items() if c}


def _mul_xplus1(series):
    """Multiply by (1 + x) using Bonnet's x*P_j recursion."""
    out = dict(series)
    for j, c in series.items():
        if j == 0:
            out[1] = out.get(1, 0) + c
            continue
        out[j + 1] = out.get(j + 1, 0) + c * Fraction(j + 1, 2 * j + 1)
        out[j - 1] = out.get(j - 1, 0) + c * Fraction(j, 2 * j + 1)
    return {d: c for d, c in out.items() if c}


def _antiderivative(series):
    """Integral from -1 to x of the series; exact, vanishes at x = -1."""
    out = {}
    for j, c in series.items():
        if j == 0:
            out[1] = out.get(1, 0) + c
            out[0] = out.get(0, 0) + c
        else:
            w = Fraction(1, 2 * j + 1)
            out[j + 1] = out.get(j + 1, 0) + c * w
            out[j - 1] = out.get(j - 1, 0) - c * w
    return {d: c for d, c in out.items() if c}


def _level_integrand(acc, weight, j):
    s = acc
    for _ in range(weight):
        s = _mul_xplus1(s)
    return _mul_P(s, j)


def cbar(key):
    """Exact rational value of the nested Fourier-Legendre integral for the
    key, including the (-1)^(sum of weights) sign convention."""
    acc = {0: Fraction(1)}
    k = key.k
    for pos in range(k - 1):
        integrand = _level_integrand(acc, key.weights[pos], key.indices[pos])
        acc = _antiderivative(integrand)
    for _ in range(key.weights[k - 1]):
        acc = _mul_xplus1(acc)
    # orthogonality: int_{-1}^{1} P_j * acc = 2/(2j+1) * acc[j]
    j = key.indices[k - 1]
    value = Fraction(2, 2 * j + 1) * acc.get(j, Fraction(0))
    if sum(key.weights) % 2:
        value = -value
    return value


def scale(key, cbar_value, delta):
    """Step-scaled real coefficient C from the raw rational cbar."""
    if delta <= 0:
        raise CoeffError("delta must be positive")
    k = key.k
    lsum = sum(key.weights)
    pref = math.prod(math.sqrt(2 * j + 1) for j in key.indices)
    pref /= 2.0 ** (k + lsum)
    return pref * delta ** ((k + 2 * lsum) / 2.0) * float(Fraction(cbar_value))


def scaled_square_at_unit_step(key, cbar_value):
    """Exact rational C^2 at dt = 1: prod(2j+1) * cbar^2 / 4^(k + sum l).

    This is what the truncation-selection conditions sum, so it stays
    rational until the final comparison.
    """
    k = key.k
    lsum = sum(key.weights)
    num = 1
    for j in key.indices:
        num *= 2 * j + 1
    c = Fraction(cbar_value)
    return c * c * Fraction(num, 4 ** (k + lsum))


def norm_denominator(weights):
    """Exact D with ||K||^2 = dt^(k + 2 sum l) / D over the ordered simplex."""
    d = 1
    p = 0
    for l in weights:
        p += 2 * l + 1
        d *= p
    return d


def norm_Ik(weights, delta):
    """L2 norm squared of the iterated-integral kernel over the simplex."""
    if weights not in SUPPORTED_WEIGHTS:
        raise UnsupportedWeightsError(weights)
    k = len(weights)
    lsum = sum(weights)
    return delta ** (k + 2 * lsum) / norm_denominator(weights)


# -- persistent store ---------------------------------------------------------

_HEADER = "SDEMATH-COEFF v1"


@dataclass(eq=False)
class CoeffStore:
    """Exact-coefficient cache with a sorted, diffable text backing file.

    Line format after the header: ``k|l-tuple|j-tuple|numerator/denominator``.
    Reads are safe from multiple threads once warmed; writes (generation)
    serialize behind a lock.
    """

    path: str | os.PathLike | None = None
    readonly: bool = False
    on_generate: object = None  # callback(weights, jmax, count) after a fill
    _data: dict = field(default_factory=dict)
    _dirty: bool = field(default=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _boxes: dict = field(default_factory=dict, repr=False)  # weights -> done jmax

    def __post_init__(self):
        if self.path is not None and os.path.exists(self.path):
            self.load()

    def __len__(self):
        return len(self._data)

    def __contains__(self, key):
        return key in self._data

    def load(self):
        try:
            with open(self.path, "r", encoding="ascii") as fh:
                header = fh.readline().rstrip("\n")
                if header != _HEADER:
                    raise CoeffError(f"{self.path}: unrecognized header {header!r}")
                data = {}
                for line_no, line in enumerate(fh, start=2):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        _, ws, js, val = line.split("|")
                        weights = tuple(int(x) for x in ws.split(","))
                        indices = tuple(int(x) for x in js.split(","))
                        data[CoeffKey(weights, indices)] = Fraction(val)
                    except (ValueError, CoeffError) as exc:
                        raise CoeffError(f"{self.path}:{line_no}: bad record ({exc})") from exc
        except OSError as exc:
            raise CoeffError(f"cannot read coefficient cache {self.path}: {exc}") from exc
        self._data = data
        self._dirty = False
        self._rebuild_box_index()

    def flush(self):
        if self.path is None or not self._dirty:
            return
        tmp = f"{self.path}.tmp"
        try:
            with open(tmp, "w", encoding="ascii") as fh:
                fh.write(_HEADER + "\n")
                for key in sorted(self._data, key=lambda k: (k.k, k.weights, k.indices)):
                    v = self._data[key]
                    ws = ",".join(str(x) for x in key.weights)
                    js = ",".join(str(x) for x in key.indices)
                    fh.write(f"{key.k}|{ws}|{js}|{v.numerator}/{v.denominator}\n")
            os.replace(tmp, self.path)
        except OSError as exc:
            raise CoeffError(f"cannot write coefficient cache {self.path}: {exc}") from exc
        self._dirty = False

    def get(self, key):
        """Return the exact coefficient, computing and caching on a miss."""
        val = self._data.get(key)
        if val is None:
            if self.readonly:
                raise CoeffError(
                    f"coefficient {key.weights}/{key.indices} missing and "
                    "on-demand generation is disabled"
                )
            val = cbar(key)
            with self._lock:
                self._data[key] = val
                self._dirty = True
        return val

    def put(self, key, value):
        with self._lock:
            self._data[key] = Fraction(value)
            self._dirty = True

    def ensure_box(self, weights, jmax):
        """Make sure the dense index box {0..jmax}^k is present; returns the
        number of coefficients newly computed."""
        if weights not in SUPPORTED_WEIGHTS:
            raise UnsupportedWeightsError(weights)
        if self._boxes.get(weights, -1) >= jmax:
            return 0
        return generate_range(self, weights, jmax)

    def _rebuild_box_index(self):
        """Recover, per weight tuple, the largest dense box the cache holds:
        the largest J with every index tuple of max degree <= J present."""
        hist = {}
        for key in self._data:
            shell = hist.setdefault(key.weights, {})
            top = max(key.indices)
            shell[top] = shell.get(top, 0) + 1
        boxes = {}
        for weights, shells in hist.items():
            k = len(weights)
            done = -1
            cum = 0
            j = 0
            while True:
                cum += shells.get(j, 0)
                if cum == (j + 1) ** k:
                    done = j
                    j += 1
                else:
                    break
            boxes[weights] = done
        self._boxes = boxes


def generate_range(store, weights, jmax):
    """Fill the dense box {0..jmax}^k for one weight tuple into the store.

    Intermediate antiderivatives are shared along the nesting, so the whole
    box costs about (jmax+1)^(k-1) series products.  Returns the number of
    coefficients written.
    """
    if weights not in SUPPORTED_WEIGHTS:
        raise UnsupportedWeightsError(weights)
    if jmax > MAX_LEGENDRE_DEGREE:
        raise CoeffError(f"jmax {jmax} exceeds degree cap {MAX_LEGENDRE_DEGREE}")
    k = len(weights)
    sign = -1 if sum(weights) % 2 else 1
    count = 0
    zero = Fraction(0)
    with store._lock:
        def rec(pos, acc, prefix):
            nonlocal count
            weighted = acc
            for _ in range(weights[pos]):
                weighted = _mul_xplus1(weighted)
            if pos == k - 1:
                # the whole innermost loop is orthogonality read-offs
                for j in range(jmax + 1):
                    val = Fraction(2, 2 * j + 1) * weighted.get(j, zero)
                    store._data[CoeffKey(weights, prefix + (j,))] = sign * val
                    count += 1
                return
            for j in range(jmax + 1):
                integrand = _mul_P(weighted, j)
                rec(pos + 1, _antiderivative(integrand), prefix + (j,))

        rec(0, {0: Fraction(1)}, ())
        store._dirty = True
        if jmax > store._boxes.get(weights, -1):
            store._boxes[weights] = jmax
    store.flush()
    return count
