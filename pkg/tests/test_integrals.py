import itertools
import math
import random

import numpy as np
import pytest

from sdetaylor import accuracy
from sdetaylor.coeffs import CoeffStore
from sdetaylor.integrals import (
    GaussianDraws,
    IntegralError,
    IntegralKey,
    build_integral_set,
    draw,
    ito_general,
    ito_pair00,
    ito_single,
    pair_matchings,
    strat_general,
    strat_pair00,
)
from sdetaylor.rng import NormalStreams

from oracles import ito_series_bruteforce


@pytest.fixture(scope="module")
def store():
    return CoeffStore()


def _draws_from(array):
    return GaussianDraws(np.asarray(array, dtype=float))


def test_draw_is_reproducible_and_shaped():
    s1 = NormalStreams(5, 3)
    d1 = draw(s1, m=2, jmax=4)
    d2 = draw(NormalStreams(5, 3), m=2, jmax=4)
    np.testing.assert_array_equal(d1.zeta, d2.zeta)
    assert d1.zeta.shape == (3, 2, 5)
    assert d1.m == 2 and d1.jmax == 4 and d1.paths == 3


def test_draw_requires_three_degrees():
    with pytest.raises(IntegralError):
        draw(NormalStreams(1, 1), m=1, jmax=1)


def test_single_formulas():
    z = np.zeros((1, 1, 3))
    z[0, 0, 0] = 1.0
    d = _draws_from(z)
    assert ito_single(0, 1, d, 1.0)[0] == pytest.approx(1.0)
    assert ito_single(2, 1, d, 1.0)[0] == pytest.approx(1.0 / 3.0)
    zer = _draws_from(np.zeros((1, 1, 3)))
    assert ito_single(1, 1, zer, 1.0)[0] == 0.0
    # scaling exponents dt^(1/2), dt^(3/2), dt^(5/2)
    d4 = 4.0
    assert ito_single(0, 1, d, d4)[0] == pytest.approx(2.0)
    assert ito_single(1, 1, d, d4)[0] == pytest.approx(-(4.0**1.5) / 2.0)


def test_pair00_equal_indices_closed_form():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((50, 2, 8))
    d = _draws_from(z)
    for q in (1, 3, 7):
        got = ito_pair00(1, 1, d, q, 0.7)
        want = 0.5 * 0.7 * (z[:, 0, 0] ** 2 - 1.0)
        np.testing.assert_allclose(got, want, rtol=1e-14)


def test_pair00_zero_draws_cross():
    d = _draws_from(np.zeros((2, 2, 4)))
    np.testing.assert_array_equal(ito_pair00(1, 2, d, 2, 1.0), [0.0, 0.0])


def test_pair00_q1_hand_expansion():
    z = np.arange(1, 9, dtype=float).reshape(1, 2, 4)
    d = _draws_from(z)
    z1, z2 = z[0, 0], z[0, 1]
    delta = 0.9
    want = 0.5 * delta * (z1[0] * z2[0] + (z1[0] * z2[1] - z1[1] * z2[0]) / math.sqrt(3.0))
    assert ito_pair00(1, 2, d, 1, delta)[0] == pytest.approx(want, rel=1e-15)


def test_pair00_antisymmetrization_identity():
    rng = np.random.default_rng(7)
    z = rng.standard_normal((30, 3, 9))
    d = _draws_from(z)
    delta = 0.31
    for q in (1, 4, 8):
        for i1, i2 in itertools.product((1, 2, 3), repeat=2):
            lhs = ito_pair00(i1, i2, d, q, delta) + ito_pair00(i2, i1, d, q, delta)
            rhs = delta * z[:, i1 - 1, 0] * z[:, i2 - 1, 0] - (i1 == i2) * delta
            np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_strat_pair_offset_exact():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((20, 2, 6))
    d = _draws_from(z)
    for q in (1, 5):
        diff = strat_pair00(1, 1, d, q, 0.25) - ito_pair00(1, 1, d, q, 0.25)
        np.testing.assert_allclose(diff, 0.125)
        diff = strat_pair00(1, 2, d, q, 0.25) - ito_pair00(1, 2, d, q, 0.25)
        np.testing.assert_allclose(diff, 0.0)


def test_pair_matchings_counts():
    assert pair_matchings(2) == ((((1, 2),), ()),)
    k3 = pair_matchings(3)
    assert len(k3) == 3
    k4 = pair_matchings(4)
    assert sum(1 for p, _ in k4 if len(p) == 1) == 6
    assert sum(1 for p, _ in k4 if len(p) == 2) == 3
    k5 = pair_matchings(5)
    assert sum(1 for p, _ in k5 if len(p) == 1) == 10
    assert sum(1 for p, _ in k5 if len(p) == 2) == 15
    k6 = pair_matchings(6)
    assert sum(1 for p, _ in k6 if len(p) == 1) == 15
    assert sum(1 for p, _ in k6 if len(p) == 2) == 45
    assert sum(1 for p, _ in k6 if len(p) == 3) == 15
    # disjointness and leftover bookkeeping
    for pairs, leftover in k6:
        used = [x for pair in pairs for x in pair]
        assert len(set(used)) == len(used)
        assert sorted(used + list(leftover)) == [1, 2, 3, 4, 5, 6]


def test_ito_general_distinct_indices_has_no_corrections(store):
    rng = np.random.default_rng(11)
    z = rng.standard_normal((8, 3, 4))
    d = _draws_from(z)
    q = 2
    key = IntegralKey((0, 0, 0), (1, 2, 3))
    got = ito_general(key, d, q, 1.0, store)
    c = accuracy.coeff_tensor((0, 0, 0), q, 1.0, store)
    want = np.einsum("abc,pa,pb,pc->p", c, z[:, 0, :3], z[:, 1, :3], z[:, 2, :3])
    np.testing.assert_allclose(got, want, rtol=1e-13)
    strat = strat_general(key, d, q, 1.0, store)
    np.testing.assert_allclose(got, strat, rtol=1e-13)


def test_ito_general_matches_bruteforce_transcriptions(store):
    # multiplicities 2..4, truncations 0..2, 100 random draw sets, all index
    # patterns over two noise components
    rng = np.random.default_rng(42)
    weight_sets = {
        2: [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)],
        3: [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)],
        4: [(0, 0, 0, 0), (1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)],
    }
    z = rng.standard_normal((100, 2, 3))
    d = _draws_from(z)
    delta = 0.37
    for k, weight_list in weight_sets.items():
        for weights in weight_list:
            for q in (0, 1, 2):
                if weights == (0, 0):
                    continue  # closed antisymmetric series, checked separately
                c = accuracy.coeff_tensor(weights, q, delta, store)
                for ituple in itertools.product((1, 2), repeat=k):
                    got = ito_general(IntegralKey(weights, ituple), d, q, delta, store)
                    want = np.array(
                        [
                            ito_series_bruteforce(weights, ituple, c, z[p])
                            for p in range(z.shape[0])
                        ]
                    )
                    np.testing.assert_allclose(
                        got, want, rtol=1e-12, atol=1e-12,
                        err_msg=f"{weights} {ituple} q={q}",
                    )


def test_ito_equals_strat_for_pairwise_distinct_all_k(store):
    rng = np.random.default_rng(17)
    z = rng.standard_normal((5, 6, 3))
    d = _draws_from(z)
    cases = {
        2: (0, 1),
        3: (0, 0, 1),
        4: (0, 0, 0, 0),
        5: (0, 0, 0, 0, 0),
        6: (0, 0, 0, 0, 0, 0),
    }
    for k, weights in cases.items():
        ituple = tuple(range(1, k + 1))
        q = 1
        a = ito_general(IntegralKey(weights, ituple), d, q, 0.5, store)
        b = strat_general(IntegralKey(weights, ituple), d, q, 0.5, store)
        np.testing.assert_allclose(a, b, rtol=1e-13)


def test_pair_weight00_general_series_agrees_with_closed_form(store):
    # the dense-box series over (0,0) coefficients reproduces the
    # antisymmetric closed form for distinct indices
    rng = np.random.default_rng(23)
    z = rng.standard_normal((40, 2, 5))
    d = _draws_from(z)
    delta = 1.3
    for q in (1, 2, 4):
        c = accuracy.coeff_tensor((0, 0), q, delta, store)
        want = ito_pair00(1, 2, d, q, delta)
        got = np.einsum("ab,pa,pb->p", c, z[:, 0, : q + 1], z[:, 1, : q + 1])
        np.testing.assert_allclose(got, want, rtol=1e-12)


def test_equal_pair_q0_box_semantics(store):
    # k=2, i1=i2, q=0: C_00 (zeta^2 - 1)
    z = np.random.default_rng(5).standard_normal((10, 1, 3))
    d = _draws_from(z)
    key = IntegralKey((1, 1), (1, 1))
    got = ito_general(key, d, 0, 2.0, store)
    c00 = accuracy.coeff_tensor((1, 1), 0, 2.0, store)[0, 0]
    np.testing.assert_allclose(got, c00 * (z[:, 0, 0] ** 2 - 1.0), rtol=1e-13)


def test_k6_equal_indices_smoke(store):
    z = np.random.default_rng(8).standard_normal((4, 1, 3))
    d = _draws_from(z)
    key = IntegralKey((0,) * 6, (1,) * 6)
    v_ito = ito_general(key, d, 1, 0.5, store)
    v_str = strat_general(key, d, 1, 0.5, store)
    assert np.all(np.isfinite(v_ito)) and np.all(np.isfinite(v_str))
    assert not np.allclose(v_ito, v_str)


def test_moment_checks(store):
    n = 1_000_000
    streams = NormalStreams(77, n)
    d = draw(streams, m=2, jmax=3)
    delta = 1.0

    i0 = ito_single(0, 1, d, delta)
    assert abs(i0.mean()) < 3.0 / math.sqrt(n)
    assert abs((i0**2).mean() - delta) < 3.0 * math.sqrt(2.0 / n) * delta

    q = 3
    pair = ito_pair00(1, 2, d, q, delta)
    assert abs(pair.mean()) < 3.0 * math.sqrt(0.5) / math.sqrt(n)
    # E[I^2] = Parseval partial sum = dt^2/2 (1/2 + q/(2q+1))
    want = 0.5 * (0.5 + q / (2 * q + 1))
    sigma = (pair**2).std()
    assert abs((pair**2).mean() - want) < 3.0 * sigma / math.sqrt(n)

    # distinct triple has zero mean
    tri = ito_general(IntegralKey((0, 0, 0), (1, 2, 1)), d, 1, delta, store)
    sig = tri.std()
    assert abs(tri.mean()) < 3.0 * sig / math.sqrt(n)


def test_mc_error_matches_exact_error_triple_pattern(store):
    # E[(I - Ihat)^2] for i1=i2 != i3 at q=2 against Theorem-8 arithmetic:
    # compare a rich-truncation proxy of I with the q-truncated value
    n = 200_000
    rng = np.random.default_rng(12345)
    big_q = 12
    z = rng.standard_normal((n, 2, big_q + 1))
    d = _draws_from(z)
    delta = 1.0
    key = IntegralKey((0, 0, 0), (1, 1, 2))
    fine = ito_general(key, d, big_q, delta, store)
    q = 2
    coarse = ito_general(key, d, q, delta, store)
    mc = ((fine - coarse) ** 2).mean()
    exact_q = accuracy.exact_error_pattern((0, 0, 0), q, delta, (1, 1, 2), store)
    exact_fine = accuracy.exact_error_pattern((0, 0, 0), big_q, delta, (1, 1, 2), store)
    want = exact_q - exact_fine  # difference-of-projections variance
    assert mc == pytest.approx(want, rel=0.05)


def test_build_integral_set_key_inventory(store):
    streams = NormalStreams(3, 2)
    qset = accuracy.select_q(1.0, "ito", 0.01, 1.0, store)
    d = draw(streams, m=2, jmax=max(2, qset.max_level()))
    iset = build_integral_set(1.0, "ito", d, 0.01, qset, store)
    weights_seen = {(w, i) for (w, i) in iset.values}
    assert {w for w, _ in weights_seen} == {(0,), (0, 0)}
    assert sum(1 for w, _ in weights_seen if w == (0,)) == 2
    assert sum(1 for w, _ in weights_seen if w == (0, 0)) == 4

    qset = accuracy.select_q(1.5, "ito", 0.01, 50.0, store)
    d = draw(NormalStreams(3, 2), m=2, jmax=max(2, qset.max_level()))
    iset = build_integral_set(1.5, "ito", d, 0.01, qset, store)
    ws = {w for (w, _) in iset.values}
    assert ws == {(0,), (1,), (0, 0), (0, 0, 0)}
    assert sum(1 for w, _ in iset.values if w == (0, 0, 0)) == 8

    qset = accuracy.select_q(3.0, "ito", 0.1, 1000.0, store)
    d = draw(NormalStreams(3, 2), m=2, jmax=max(2, qset.max_level()))
    iset = build_integral_set(3.0, "ito", d, 0.1, qset, store)
    ws = {w for (w, _) in iset.values}
    assert (0, 0, 0, 0, 0, 0) in ws
    assert len([1 for w, _ in iset.values if w == (0, 0, 0, 0, 0, 0)]) == 64
