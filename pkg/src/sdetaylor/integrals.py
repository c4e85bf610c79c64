"""Mean-square approximation of iterated Ito and Stratonovich stochastic
integrals of multiplicities 1..6 from one shared matrix of per-step Gaussian
draws.

Singles have exact finite formulas; the (0,0) pair has its antisymmetric
closed series; everything else is a dense truncated multiple series over the
scaled Fourier-Legendre coefficients.  Ito values carry the pair-partition
indicator corrections (sign (-1)^r over r disjoint index pairs with matching
noise and series indices); Stratonovich values are the plain product sums.
All evaluators are vectorized over a leading path axis.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import accuracy
from .rng import NormalStreams

__all__ = [
    "GaussianDraws",
    "IntegralKey",
    "IntegralSet",
    "IntegralError",
    "draw",
    "ito_single",
    "ito_pair00",
    "strat_pair00",
    "ito_general",
    "strat_general",
    "pair_matchings",
    "build_integral_set",
]

_LETTERS = "abcdef"


class IntegralError(Exception):
    pass


@dataclass(frozen=True)
class GaussianDraws:
    """Standard normals zeta[path, i-1, j] shared by all integrals of one
    step; i = 1..m is the noise component, j = 0..jmax the basis degree."""

    zeta: np.ndarray

    def __post_init__(self):
        if self.zeta.ndim != 3:
            raise IntegralError("draws must have shape (paths, m, jmax+1)")

    @property
    def paths(self):
        return self.zeta.shape[0]

    @property
    def m(self):
        return self.zeta.shape[1]

    @property
    def jmax(self):
        return self.zeta.shape[2] - 1

    def component(self, i, upto=None):
        """zeta for 1-based noise index i, degrees 0..upto."""
        stop = self.zeta.shape[2] if upto is None else upto + 1
        return self.zeta[:, i - 1, :stop]


def draw(streams: NormalStreams, m, jmax):
    """One step's draw matrix from per-path streams.

    Consumes exactly m*(jmax+1) normals (2 uniforms each) per path, filled
    row-major by (noise index, degree).
    """
    if jmax < 2:
        raise IntegralError("jmax must be at least 2")
    flat = streams.normals(m * (jmax + 1))
    return GaussianDraws(flat.reshape(streams.n_paths, m, jmax + 1))


@dataclass(frozen=True)
class IntegralKey:
    weights: tuple
    indices: tuple  # noise components, 1-based
    calculus: str = "ito"

    def __post_init__(self):
        if len(self.weights) > 6:
            raise IntegralError("multiplicity above 6 is not supported")
        if len(self.weights) != len(self.indices):
            raise IntegralError("weights and noise indices must align")


def ito_single(weight, i, draws, delta):
    """Exact single integrals for polynomial weights 0, 1, 2."""
    z = draws.component(i)
    if weight == 0:
        return np.sqrt(delta) * z[:, 0]
    if weight == 1:
        return -(delta**1.5) / 2.0 * (z[:, 0] + z[:, 1] / np.sqrt(3.0))
    if weight == 2:
        return (delta**2.5) / 3.0 * (
            z[:, 0] + np.sqrt(3.0) / 2.0 * z[:, 1] + z[:, 2] / (2.0 * np.sqrt(5.0))
        )
    raise IntegralError(f"no exact single formula for weight {weight}")


def ito_pair00(i1, i2, draws, q, delta):
    """Double integral with unit weights via the antisymmetric series.

    For i1 == i2 the series cancels exactly and the value collapses to the
    closed form (dt * zeta_0^2 - dt)/2.
    """
    if q < 1:
        raise IntegralError("pair truncation level must be >= 1")
    z1 = draws.component(i1)
    if i1 == i2:
        return 0.5 * delta * (z1[:, 0] ** 2 - 1.0)
    if q > draws.jmax:
        raise IntegralError(f"draws carry degrees up to {draws.jmax}, need {q}")
    z2 = draws.component(i2)
    i = np.arange(1, q + 1)
    w = 1.0 / np.sqrt(4.0 * i**2 - 1.0)
    s = (z1[:, 0:q] * z2[:, 1 : q + 1] - z1[:, 1 : q + 1] * z2[:, 0:q]) @ w
    return 0.5 * delta * (z1[:, 0] * z2[:, 0] + s)


def strat_pair00(i1, i2, draws, q, delta):
    """Stratonovich (0,0) pair: the Ito value plus dt/2 on the diagonal."""
    out = ito_pair00(i1, i2, draws, q, delta)
    if i1 == i2:
        out = out + 0.5 * delta
    return out


@lru_cache(maxsize=None)
def pair_matchings(k):
    """All selections of r >= 1 disjoint unordered position pairs from
    {1..k} with their leftover positions, ordered by r."""
    if not 1 <= k <= 6:
        raise IntegralError("multiplicity must be 1..6")
    out = []
    for r in range(1, k // 2 + 1):
        out.extend(_pairings(tuple(range(1, k + 1)), r))
    return tuple(out)


def _perfect_matchings(positions):
    if not positions:
        return [()]
    first, rest = positions[0], positions[1:]
    out = []
    for idx, second in enumerate(rest):
        remaining = rest[:idx] + rest[idx + 1 :]
        for pairs in _perfect_matchings(remaining):
            out.append(((first, second),) + pairs)
    return out


def _pairings(positions, r):
    out = []
    for chosen in itertools.combinations(positions, 2 * r):
        leftover = tuple(p for p in positions if p not in chosen)
        for pairs in _perfect_matchings(chosen):
            out.append((pairs, leftover))
    return out


def _series_value(weights, ituple, coeff, draws, q, corrections):
    k = len(weights)
    if q > draws.jmax:
        raise IntegralError(f"draws carry degrees up to {draws.jmax}, need {q}")
    zs = [draws.component(i, upto=q) for i in ituple]
    axes = _LETTERS[:k]
    operands = [coeff] + zs
    spec = axes + "," + ",".join("p" + a for a in axes) + "->p"
    total = np.einsum(spec, *operands)
    if not corrections:
        return total
    for pairs, leftover in pair_matchings(k):
        if any(ituple[a - 1] != ituple[b - 1] for a, b in pairs):
            continue
        letters = {}
        for a, b in pairs:
            letters[a] = letters[b] = _LETTERS[a - 1]
        for pos in leftover:
            letters[pos] = _LETTERS[pos - 1]
        sub = "".join(letters[pos] for pos in range(1, k + 1))
        sign = (-1.0) ** len(pairs)
        if leftover:
            ops = [coeff] + [zs[pos - 1] for pos in leftover]
            spec = sub + "," + ",".join("p" + letters[p] for p in leftover) + "->p"
            total = total + sign * np.einsum(spec, *ops)
        else:
            # perfect matching: a pure trace of the tensor, same for all paths
            total = total + sign * np.einsum(sub + "->", coeff)
    return total


def ito_general(key, draws, q, delta, store):
    """Truncated multiple series for an Ito integral, with the indicator
    corrections over all partial pair matchings."""
    weights = key.weights
    k = len(weights)
    if k == 1:
        return ito_single(weights[0], key.indices[0], draws, delta)
    if weights == (0, 0):
        return ito_pair00(key.indices[0], key.indices[1], draws, q, delta)
    coeff = accuracy.coeff_tensor(weights, q, delta, store)
    return _series_value(weights, key.indices, coeff, draws, q, corrections=True)


def strat_general(key, draws, q, delta, store):
    """Truncated multiple series for a Stratonovich integral: the plain
    product sum, no indicator corrections."""
    weights = key.weights
    k = len(weights)
    if k == 1:
        return ito_single(weights[0], key.indices[0], draws, delta)
    if weights == (0, 0):
        return strat_pair00(key.indices[0], key.indices[1], draws, q, delta)
    coeff = accuracy.coeff_tensor(weights, q, delta, store)
    return _series_value(weights, key.indices, coeff, draws, q, corrections=False)


@dataclass
class IntegralSet:
    """Every iterated-integral value one scheme step consumes, vectorized
    over paths, keyed by (weights, noise indices)."""

    values: dict
    qset: accuracy.QSet
    delta: float

    def get(self, weights, indices):
        return self.values[(weights, tuple(indices))]


class _TensorCache:
    """Scaled coefficient tensors per (weights, q, delta), built once."""

    def __init__(self, store):
        self.store = store
        self._cache = {}

    def get(self, weights, q, delta):
        key = (weights, q, delta)
        out = self._cache.get(key)
        if out is None:
            out = accuracy.coeff_tensor(weights, q, delta, self.store)
            self._cache[key] = out
        return out


def build_integral_set(order, calculus, draws, delta, qset, store, _tensors=None):
    """Compute all integrals the scheme of this order references, once per
    index tuple, from one shared draw matrix."""
    if calculus not in ("ito", "stratonovich"):
        raise IntegralError(f"unsupported calculus {calculus!r}")
    m = draws.m
    tensors = _tensors or _TensorCache(store)
    values = {}
    for weights in accuracy.ORDER_WEIGHTS[order]:
        k = len(weights)
        if k == 1:
            for i in range(1, m + 1):
                values[(weights, (i,))] = ito_single(weights[0], i, draws, delta)
            continue
        if weights == (0, 0):
            q = qset.q_for(weights)
            pair = strat_pair00 if calculus == "stratonovich" else ito_pair00
            for i1 in range(1, m + 1):
                for i2 in range(1, m + 1):
                    values[(weights, (i1, i2))] = pair(i1, i2, draws, q, delta)
            continue
        q = qset.q_for(weights)
        coeff = tensors.get(weights, q, delta)
        corrections = calculus == "ito"
        for ituple in itertools.product(range(1, m + 1), repeat=k):
            values[(weights, ituple)] = _series_value(
                weights, ituple, coeff, draws, q, corrections
            )
    return IntegralSet(values, qset, delta)
