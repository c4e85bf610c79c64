import itertools
import math
import random

import numpy as np
import pytest
import sympy as sp

from sdetaylor import expr
from sdetaylor.expr import Const, compile_field, parse, simplify
from sdetaylor.operators import (
    OperatorError,
    SdeModel,
    a_bar,
    apply_G0,
    apply_Gp,
    apply_L,
    apply_Lbar,
    build_scheme_fields,
    deterministic_tail,
    scheme_terms,
)

TEST_MODEL = SdeModel.from_strings(
    drift=["-5*x1", "-5*x2"],
    diffusion=[["0.5*sin(x1)", "x2"], ["x2", "0.5*cos(x1)"]],
    x0=[1.0, 1.5],
)


def _scalar_model(a_text, b_text):
    return SdeModel.from_strings(drift=[a_text], diffusion=[[b_text]], x0=[1.0])


def _identity(model):
    return tuple(expr.var(s) for s in model.state_symbols)


def _eval_vec(model, vec, point):
    syms = model.symbols
    env = dict(zip(syms, point))
    out = []
    for e in vec:
        out.append(expr.evaluate(e, env))
    return out


def test_L_on_linear_state_zero_drift():
    model = _scalar_model("0", "1.7")
    lf = apply_L(model, _identity(model))
    assert lf[0] == Const(0.0)


def test_L_quadratic_picks_up_second_order_term():
    model = _scalar_model("0", "1.7")
    f = (parse("x1^2", ["x1", "t"]),)
    lf = apply_L(model, f)
    # 1/2 * B^2 * 2 = B^2
    assert _eval_vec(model, lf, (3.0, 0.0))[0] == pytest.approx(1.7**2)


def test_L_identity_recovers_drift():
    lx = apply_L(TEST_MODEL, _identity(TEST_MODEL))
    for pt in [(1.0, 1.5, 0.0), (0.3, -0.7, 2.0)]:
        got = _eval_vec(TEST_MODEL, lx, pt)
        want = _eval_vec(TEST_MODEL, TEST_MODEL.drift, pt)
        assert got == pytest.approx(want, rel=1e-12)


def test_G0_identity_gives_diffusion_column():
    for i in (1, 2):
        g = apply_G0(TEST_MODEL, i, _identity(TEST_MODEL))
        col = TEST_MODEL.diffusion_column(i)
        for pt in [(1.0, 1.5, 0.0), (-0.2, 0.4, 1.0)]:
            assert _eval_vec(TEST_MODEL, g, pt) == pytest.approx(
                _eval_vec(TEST_MODEL, col, pt), rel=1e-12
            )


def test_G0_constant_vanishes_and_chain_rule():
    model = _scalar_model("0", "x1")
    assert apply_G0(model, 1, (Const(3.0),))[0] == Const(0.0)
    g = apply_G0(model, 1, (parse("x1^2", ["x1", "t"]),))
    assert _eval_vec(model, g, (2.0, 0.0))[0] == pytest.approx(8.0)  # 2 x1^2


def test_G0_index_out_of_range():
    with pytest.raises(OperatorError):
        apply_G0(TEST_MODEL, 3, _identity(TEST_MODEL))


def test_Gp_vanishing_cases():
    const_model = _scalar_model("2.5", "1.5")
    g1 = apply_Gp(const_model, 1, 1, _identity(const_model))
    assert g1[0] == Const(0.0)

    gbm = _scalar_model("0.7*x1", "0.3*x1")
    g1 = apply_Gp(gbm, 1, 1, _identity(gbm))
    for x in (0.5, 2.0):
        assert expr.evaluate(g1[0], {"x1": x, "t": 0.0}) == pytest.approx(0.0, abs=1e-14)

    assert apply_Gp(TEST_MODEL, 1, 1, (Const(4.0), Const(2.0)))[0] == Const(0.0)


def test_a_bar_constant_diffusion_is_drift():
    model = SdeModel.from_strings(
        drift=["x1+t", "x2"], diffusion=[["1", "2"], ["3", "4"]], x0=[0, 0]
    )
    ab = a_bar(model)
    for pt in [(0.5, 1.0, 0.2)]:
        assert _eval_vec(model, ab, pt) == pytest.approx(_eval_vec(model, model.drift, pt))


def test_a_bar_multiplicative_correction():
    model = _scalar_model("0", "2*x1")
    ab = a_bar(model)
    # -1/2 * (2x)*(2) = -2 x
    assert expr.evaluate(ab[0], {"x1": 3.0, "t": 0.0}) == pytest.approx(-6.0)


def test_lbar_identity_gives_abar():
    lb = apply_Lbar(TEST_MODEL, _identity(TEST_MODEL))
    ab = a_bar(TEST_MODEL)
    for pt in [(1.0, 1.5, 0.0), (0.1, 0.9, 3.0)]:
        assert _eval_vec(TEST_MODEL, lb, pt) == pytest.approx(
            _eval_vec(TEST_MODEL, ab, pt), rel=1e-12
        )


def _random_poly_model(rng, n, m):
    syms = [f"x{i+1}" for i in range(n)] + ["t"]

    def poly():
        terms = []
        for _ in range(rng.randint(1, 3)):
            c = rng.choice([-2, -1, 1, 2, 3])
            v1 = rng.choice(syms)
            if rng.random() < 0.5:
                v2 = rng.choice(syms)
                terms.append(f"{c}*{v1}*{v2}")
            else:
                terms.append(f"{c}*{v1}")
        return " + ".join(terms)

    drift = [poly() for _ in range(n)]
    diffusion = [[poly() for _ in range(m)] for _ in range(n)]
    return SdeModel.from_strings(drift=drift, diffusion=diffusion, x0=[0.0] * n)


def test_lbar_two_routes_agree_on_random_polynomial_models():
    rng = random.Random(1234)
    for _ in range(50):
        n = rng.randint(1, 3)
        m = rng.randint(1, 3)
        model = _random_poly_model(rng, n, m)
        f = _identity(model)
        reduced = apply_Lbar(model, f)
        # definition route: L f - 1/2 sum_i G0_i G0_i f
        alt = apply_L(model, f)
        for i in range(1, m + 1):
            gg = apply_G0(model, i, apply_G0(model, i, f))
            alt = [expr.sub(x, expr.mul(expr.const(0.5), g)) for x, g in zip(alt, gg)]
        for _ in range(2):
            pt = [rng.uniform(-1, 1) for _ in range(n + 1)]
            got = _eval_vec(model, reduced, pt)
            want = _eval_vec(model, [simplify(e) for e in alt], pt)
            scale = max(1.0, max(abs(w) for w in want))
            assert got == pytest.approx(want, rel=1e-10, abs=1e-10 * scale)


def test_L_linearity_and_G0_leibniz():
    rng = random.Random(9)
    model = TEST_MODEL
    syms = list(model.symbols)
    f = parse("sin(x1)*x2", syms)
    g = parse("x1^2 + t*x2", syms)
    both = apply_L(model, (expr.add(f, g),))[0]
    sep = expr.add(apply_L(model, (f,))[0], apply_L(model, (g,))[0])
    prod = apply_G0(model, 1, (expr.mul(f, g),))[0]
    leib = expr.add(
        expr.mul(f, apply_G0(model, 1, (g,))[0]),
        expr.mul(g, apply_G0(model, 1, (f,))[0]),
    )
    for _ in range(20):
        pt = [rng.uniform(-2, 2) for _ in range(3)]
        env = dict(zip(syms, pt))
        assert expr.evaluate(both, env) == pytest.approx(
            expr.evaluate(sep, env), rel=1e-12, abs=1e-12
        )
        assert expr.evaluate(prod, env) == pytest.approx(
            expr.evaluate(leib, env), rel=1e-12, abs=1e-12
        )


# -- independent CAS cross-check ----------------------------------------------

def _sympy_model(model):
    syms = sp.symbols(" ".join(model.symbols))
    lookup = dict(zip(model.symbols, syms))
    a = [sp.sympify(sp.parse_expr(_to_sympy_src(e)), locals=lookup) for e in model.drift]
    return syms, lookup


def _to_sympy_src(e):
    return expr.to_source(e).replace("np.", "")


def _sympy_L(model, phi, syms):
    xs = syms[: model.n]
    t = syms[-1]
    B = [[sp.parse_expr(_to_sympy_src(model.diffusion[r][c])) for c in range(model.m)] for r in range(model.n)]
    a = [sp.parse_expr(_to_sympy_src(model.drift[r])) for r in range(model.n)]
    out = sp.diff(phi, t)
    for i in range(model.n):
        out += a[i] * sp.diff(phi, xs[i])
    for j in range(model.m):
        for l in range(model.n):
            for i in range(model.n):
                out += sp.Rational(1, 2) * B[l][j] * B[i][j] * sp.diff(phi, xs[l], xs[i])
    return sp.simplify(out)


def _sympy_G0(model, i, phi, syms):
    xs = syms[: model.n]
    B = [[sp.parse_expr(_to_sympy_src(model.diffusion[r][c])) for c in range(model.m)] for r in range(model.n)]
    return sum(B[j][i - 1] * sp.diff(phi, xs[j]) for j in range(model.n))


@pytest.mark.parametrize("word", ["L", "G1", "G2", "G1 L", "L G2", "G1 G2"])
def test_operator_superpositions_match_sympy(word):
    model = TEST_MODEL
    syms = sp.symbols("x1 x2 t")
    rng = random.Random(7)
    for comp in range(model.n):
        phi_mine = (model.diffusion_column(1)[comp],)
        phi_sp = sp.parse_expr(_to_sympy_src(phi_mine[0]))
        vec = phi_mine
        for op in reversed(word.split()):
            if op == "L":
                vec = apply_L(model, vec)
                phi_sp = _sympy_L(model, phi_sp, syms)
            else:
                i = int(op[1])
                vec = apply_G0(model, i, vec)
                phi_sp = _sympy_G0(model, i, phi_sp, syms)
        f = sp.lambdify(syms, phi_sp, "math")
        for _ in range(10):
            pt = [rng.uniform(-1.5, 1.5) for _ in range(3)]
            want = f(*pt)
            got = expr.evaluate(vec[0], dict(zip(model.symbols, pt)))
            assert got == pytest.approx(want, rel=1e-10, abs=1e-10)


def test_a_bar_matches_sympy_hand_derivation():
    model = TEST_MODEL
    syms = sp.symbols("x1 x2 t")
    x1, x2, t = syms
    B = [[sp.Rational(1, 2) * sp.sin(x1), x2], [x2, sp.Rational(1, 2) * sp.cos(x1)]]
    a = [-5 * x1, -5 * x2]
    ab_sp = list(a)
    for j in range(2):
        col = [B[0][j], B[1][j]]
        for r in range(2):
            corr = sum(B[l][j] * sp.diff(col[r], syms[l]) for l in range(2))
            ab_sp[r] = ab_sp[r] - sp.Rational(1, 2) * corr
    ab = a_bar(model)
    rng = random.Random(3)
    for _ in range(10):
        pt = [rng.uniform(-2, 2) for _ in range(3)]
        for r in range(2):
            want = float(sp.lambdify(syms, ab_sp[r], "math")(*pt))
            got = expr.evaluate(ab[r], dict(zip(model.symbols, pt)))
            assert got == pytest.approx(want, rel=1e-11, abs=1e-12)


# -- scheme field inventories ---------------------------------------------------

def test_scheme_terms_inventory():
    words_05 = {t.word for t in scheme_terms(0.5)}
    assert words_05 == {("B",)}
    words_10 = {t.word for t in scheme_terms(1.0)}
    assert words_10 == {("B",), ("G", "B")}
    words_15 = {t.word for t in scheme_terms(1.5)}
    assert ("G", "a") in words_15 and ("L", "B") in words_15 and ("G", "G", "B") in words_15
    words_30 = {t.word for t in scheme_terms(3.0)}
    assert ("G", "G", "G", "G", "G", "B") in words_30
    assert len(words_30) == 1 + 1 + 3 + 4 + 8 + 12


def test_order_15_term_group_count():
    # m + 1 + m^2 + 2m + m^3 + 1 stochastic/deterministic groups at order 1.5
    m = TEST_MODEL.m
    fields = build_scheme_fields(TEST_MODEL, 1.5, "ito")
    stochastic = [k for k in fields.fields if k[0][-1] in ("B", "a") and k[1]]
    dets = [k for k in fields.fields if not k[1]]
    assert len(stochastic) == m + m**2 + 2 * m + m**3
    assert len(dets) == 2  # dt a and dt^2/2 L a


def test_deterministic_tails_follow_printed_schemes():
    assert deterministic_tail(1.5, "ito")[1][0] == ("L", "a")
    assert deterministic_tail(1.5, "stratonovich")[1][0] == ("plainL", "plaina")
    assert deterministic_tail(2.0, "stratonovich")[1][0] == ("Lb", "ab")
    assert deterministic_tail(2.5, "stratonovich")[2][0] == ("plainL", "plainL", "plaina")
    assert deterministic_tail(3.0, "stratonovich")[2][0] == ("Lb", "Lb", "ab")
    assert deterministic_tail(3.0, "ito")[2][0] == ("L", "L", "a")


def test_build_scheme_fields_euler():
    fields = build_scheme_fields(TEST_MODEL, 0.5, "ito")
    keys = set(fields.fields)
    assert keys == {(("B",), (1,)), (("B",), (2,)), (("a",), ())}


def test_build_scheme_fields_strat_milstein():
    fields = build_scheme_fields(TEST_MODEL, 1.0, "stratonovich")
    keys = set(fields.fields)
    assert (("ab",), ()) in keys
    assert (("G", "B"), (1, 2)) in keys
    assert len([k for k in keys if k[0] == ("G", "B")]) == 4


def test_additive_noise_ito_equals_strat_fields():
    model = SdeModel.from_strings(
        drift=["-x1 + 0.5*x2", "x1*x2"],
        diffusion=[["1.0", "2.0"], ["0.25", "1.5"]],
        x0=[1, 1],
    )
    ito = build_scheme_fields(model, 1.5, "ito")
    strat = build_scheme_fields(model, 1.5, "stratonovich")
    state = (np.array([0.7, -0.3]), np.array([1.2, 0.4]))
    # abar = a for additive noise, and every shared word evaluates equally
    np.testing.assert_allclose(
        strat.eval(("ab",), (), state, 0.5), ito.eval(("a",), (), state, 0.5)
    )
    for key in ito.fields:
        word, ituple = key
        if word == ("a",):
            continue
        other = (("ab",) if word == ("a",) else word, ituple)
        if other not in strat.fields:
            continue
        np.testing.assert_allclose(
            strat.eval(other[0], ituple, state, 0.5),
            ito.eval(word, ituple, state, 0.5),
            atol=1e-12,
        )


def test_fields_eval_vectorized_shapes():
    fields = build_scheme_fields(TEST_MODEL, 1.0, "ito")
    state = (np.linspace(0, 1, 5), np.linspace(1, 2, 5))
    out = fields.eval(("B",), (1,), state, 0.0)
    assert out.shape == (5, 2)
    np.testing.assert_allclose(out[:, 0], 0.5 * np.sin(state[0]))
    np.testing.assert_allclose(out[:, 1], state[1])
