import json
import random
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asympt import EvalContext, FModel, GradingError, Qi, ScalarExpr
from asympt.scalar import (QI_I, QI_ONE, QI_ZERO, power_lower, power_upper,
                           root_lower, root_upper)

FM = FModel.two_plus_sin()


def rand_expr(rng, max_terms=4, allow_growth=False):
    n_terms = rng.randint(1, max_terms)
    expr = ScalarExpr.zero()
    for _ in range(n_terms):
        a_hi = 8 if allow_growth else 0
        a = Fraction(rng.randint(-16, a_hi), 4)
        b = Fraction(rng.randint(-8, 8), 4)
        c = rng.randint(0, 2)
        if a == 0 and b == 0 and c == 0:
            a = Fraction(-1)
        q = Qi.of(Fraction(rng.randint(-9, 9), rng.randint(1, 4)),
                  Fraction(rng.randint(-9, 9), rng.randint(1, 4)))
        if q.is_zero():
            q = QI_ONE
        expr = expr + ScalarExpr.monomial(q, a, b, c)
    return expr


def eval_c(expr, x, digits=30):
    ctx = EvalContext(Fraction(x), FM, digits)
    return expr.evaluate(ctx)


def test_derivative_against_central_difference():
    # independent check: d/dx via symbols vs (g(x+h)-g(x-h))/2h at 30 digits
    rng = random.Random(20240815)
    h = Fraction(1, 10**6)
    mpmath.mp.dps = 30
    for _ in range(100):
        expr = rand_expr(rng, allow_growth=True)
        x = Fraction(rng.randint(10, 100))
        sym = eval_c(expr.differentiate(FM), x)
        plus = eval_c(expr, x + h)
        minus = eval_c(expr, x - h)
        fd = (plus - minus) / (2 * mpmath.mpf(10) ** -6)
        scale = max(abs(sym), abs(fd))
        if scale < mpmath.mpf("1e-25"):
            continue
        assert abs(sym - fd) / scale <= mpmath.mpf("1e-8")


def test_derivative_known_cases():
    # d/dx x^2 = 2x
    e = ScalarExpr.monomial(QI_ONE, Fraction(2))
    d = e.differentiate(FM)
    assert d == ScalarExpr.monomial(Qi.of(2), Fraction(1))
    # d/dx f = fp
    e = ScalarExpr.monomial(QI_ONE, 0, Fraction(1))
    assert e.differentiate(FM) == ScalarExpr.monomial(QI_ONE, 0, 0, 1)
    # d/dx fp = 2 - f  (the closure that keeps the algebra finite)
    e = ScalarExpr.monomial(QI_ONE, 0, 0, 1)
    d = e.differentiate(FM)
    want = ScalarExpr.constant(Qi.of(2)) - ScalarExpr.monomial(QI_ONE, 0, Fraction(1))
    assert d == want


def test_product_rule():
    rng = random.Random(7)
    for _ in range(20):
        e1 = rand_expr(rng, max_terms=2)
        e2 = rand_expr(rng, max_terms=2)
        lhs = (e1 * e2).differentiate(FM)
        rhs = e1.differentiate(FM) * e2 + e1 * e2.differentiate(FM)
        assert (lhs - rhs).is_zero()


def test_tail_bound_dominates_samples():
    rng = random.Random(99)
    X = Fraction(10)
    mpmath.mp.dps = 30
    for _ in range(25):
        expr = rand_expr(rng)
        b = expr.tail_bound(X, FM)
        bound = mpmath.mpf(b.numerator) / b.denominator
        for k in range(8):
            x = X + Fraction(k * 17, 3)
            val = abs(eval_c(expr, x))
            assert val <= bound * (1 + mpmath.mpf("1e-25"))


def test_tail_bound_rejects_growth():
    grow = ScalarExpr.monomial(QI_ONE, Fraction(1))
    with pytest.raises(GradingError):
        grow.tail_bound(Fraction(10), FM)
    neg_c = ScalarExpr.monomial(QI_ONE, Fraction(-1), 0, -1)
    with pytest.raises(GradingError):
        neg_c.tail_bound(Fraction(10), FM)


def test_min_order_and_split():
    e = ScalarExpr.monomial(QI_ONE, Fraction(-2), Fraction(1)) + \
        ScalarExpr.monomial(QI_I, Fraction(-3), 0, 1)
    assert e.min_order() == 2
    parts = e.split_by_order()
    assert sorted(parts) == [Fraction(2), Fraction(3)]
    assert (parts[Fraction(2)] + parts[Fraction(3)] - e).is_zero()
    assert ScalarExpr.zero().min_order() is None


def test_qi_arithmetic_matches_complex():
    rng = random.Random(3)
    for _ in range(50):
        a = Qi.of(Fraction(rng.randint(-20, 20), 7), Fraction(rng.randint(-20, 20), 7))
        b = Qi.of(Fraction(rng.randint(-20, 20), 7), Fraction(rng.randint(-20, 20), 7))
        ca = complex(a.re) + 1j * complex(a.im)
        cb = complex(b.re) + 1j * complex(b.im)
        p = a * b
        assert complex(p.re) + 1j * complex(p.im) == pytest.approx(ca * cb)
        s = a + b
        assert complex(s.re) + 1j * complex(s.im) == pytest.approx(ca + cb)
        if not b.is_zero():
            q = a / b
            assert complex(q.re) + 1j * complex(q.im) == pytest.approx(ca / cb)


def test_qi_abs_upper_is_sound_and_tight():
    rng = random.Random(4)
    for _ in range(50):
        a = Qi.of(Fraction(rng.randint(-30, 30), 11), Fraction(rng.randint(-30, 30), 11))
        up = a.abs_upper()
        mag = abs(complex(a.re) + 1j * complex(a.im))
        assert mag <= float(up) + 1e-12
        s = a.re * a.re + a.im * a.im
        slack = 1.0 / s.denominator if s != 0 else 0.0
        assert float(up) <= mag + slack + 1e-9


def test_roots_and_power_bounds():
    # integer-root rational bounds, checked against mpmath at high precision
    mpmath.mp.dps = 40
    cases = [(Fraction(3), 2), (Fraction(5, 7), 3), (Fraction(1000003, 17), 4)]
    for val, q in cases:
        lo, hi = root_lower(val, q), root_upper(val, q)
        exact = (mpmath.mpf(val.numerator) / val.denominator) ** (mpmath.mpf(1) / q)
        assert mpmath.mpf(lo.numerator) / lo.denominator <= exact
        assert mpmath.mpf(hi.numerator) / hi.denominator >= exact
        assert hi - lo <= Fraction(2, val.denominator)

    for base, e in [(Fraction(3), Fraction(-5, 4)), (Fraction(40), Fraction(-2)),
                    (Fraction(1, 3), Fraction(3, 2))]:
        lo, hi = power_lower(base, e), power_upper(base, e)
        exact = (mpmath.mpf(base.numerator) / base.denominator) ** (
            mpmath.mpf(e.numerator) / e.denominator)
        assert mpmath.mpf(lo.numerator) / lo.denominator <= exact
        assert mpmath.mpf(hi.numerator) / hi.denominator >= exact


def test_render_and_json_round_trip():
    e = ScalarExpr.monomial(Qi.of(Fraction(-3, 8)), Fraction(-2), Fraction(-1, 4), 1)
    assert e.render() == "(-3/8)·x^(-2)·f^(-1/4)·fp^1"
    blob = json.dumps(e.to_json())
    back = ScalarExpr.from_json(json.loads(blob))
    assert back == e
    q = Qi.of(Fraction(1, 2), Fraction(-5))
    assert Qi.from_json(json.loads(json.dumps(q.to_json()))) == q


qi_strategy = st.builds(
    Qi.of,
    st.fractions(min_value=-5, max_value=5, max_denominator=8),
    st.fractions(min_value=-5, max_value=5, max_denominator=8),
)


@settings(max_examples=100, deadline=None)
@given(qi_strategy, qi_strategy, qi_strategy)
def test_qi_field_axioms(a, b, c):
    assert a * b == b * a
    assert a * (b + c) == a * b + a * c
    assert a + (b + c) == (a + b) + c
    if not a.is_zero():
        assert a * (QI_ONE / a) == QI_ONE
    assert a * QI_ZERO == QI_ZERO


@settings(max_examples=60, deadline=None)
@given(st.integers(-12, 0), st.integers(-6, 6), st.integers(0, 2))
def test_differentiate_linear_in_coefficient(a4, b4, c):
    a, b = Fraction(a4, 4), Fraction(b4, 4)
    e = ScalarExpr.monomial(Qi.of(Fraction(3, 2)), a, b, c)
    scaled = e.scale(Qi.of(Fraction(2, 7)))
    assert scaled.differentiate(FM) == e.differentiate(FM).scale(Qi.of(Fraction(2, 7)))
