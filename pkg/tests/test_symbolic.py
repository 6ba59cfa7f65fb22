from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subrie.symbolic import (Multinomial, VectorField, combination, format_poly, lie_bracket,
                             monomials_up_to, parse_poly, seminorm, weighted_order)

DIM = 3

coef = st.fractions(min_value=-5, max_value=5, max_denominator=6)
exponent = st.tuples(*[st.integers(0, 2)] * DIM)


@st.composite
def polys(draw, max_terms=4):
    terms = draw(st.dictionaries(exponent, coef, max_size=max_terms))
    p = Multinomial.zero(DIM)
    for e, c in terms.items():
        mono = Multinomial.const(DIM, c)
        for i, k in enumerate(e):
            for _ in range(k):
                mono = mono * Multinomial.var(DIM, i + 1)
        p = p + mono
    return p


@st.composite
def fields(draw):
    return VectorField([draw(polys(3)) for _ in range(DIM)])


@settings(max_examples=40, deadline=None)
@given(polys(), polys(), polys())
def test_ring_axioms(p, q, r):
    assert p + q == q + p
    assert p * q == q * p
    assert (p * q) * r == p * (q * r)
    assert p * (q + r) == p * q + p * r
    assert (p - p).is_zero()


@settings(max_examples=40, deadline=None)
@given(polys(), polys())
def test_partials_commute_and_leibniz(p, q):
    assert p.partial(1).partial(2) == p.partial(2).partial(1)
    assert (p * q).partial(3) == p.partial(3) * q + p * q.partial(3)


@settings(max_examples=25, deadline=None)
@given(fields(), fields(), fields())
def test_jacobi_identity(X, Y, Z):
    total = (lie_bracket(X, lie_bracket(Y, Z)) + lie_bracket(Y, lie_bracket(Z, X))
             + lie_bracket(Z, lie_bracket(X, Y)))
    assert total.is_zero()


@settings(max_examples=40, deadline=None)
@given(polys(), polys())
def test_weighted_order_is_additive(p, q):
    w = (1, 1, 2)
    if p.is_zero() or q.is_zero():
        return
    assert weighted_order(p * q, w) == weighted_order(p, w) + weighted_order(q, w)


@settings(max_examples=40, deadline=None)
@given(polys())
def test_format_parse_roundtrip(p):
    assert parse_poly(format_poly(p), DIM) == p


def test_parse_rational_coefficients():
    p = parse_poly("1/2*x1^2 - 3*x2*x3 + 2/3", 3)
    assert p.eval_exact([Fraction(1), Fraction(2), Fraction(1, 3)]) == Fraction(1, 2) - 2 + Fraction(2, 3)
    with pytest.raises(ValueError):
        parse_poly("x4", 3)


def test_heisenberg_bracket_is_vertical():
    X1 = VectorField([parse_poly("1", 3), parse_poly("0", 3), parse_poly("-1/2*x2", 3)])
    X2 = VectorField([parse_poly("0", 3), parse_poly("1", 3), parse_poly("1/2*x1", 3)])
    assert lie_bracket(X1, X2) == VectorField.coordinate(3, 3)
    assert lie_bracket(X1, X1).is_zero()


def test_compose_and_eval_agree():
    p = parse_poly("x1*x2 + x3^2", 3)
    subs = [parse_poly("x1 + x2", 2), parse_poly("x2", 2), parse_poly("x1 - 1", 2)]
    q = p.compose(subs)
    pt = np.array([0.3, -0.7])
    direct = p.eval([pt[0] + pt[1], pt[1], pt[0] - 1])
    assert q.eval(pt) == pytest.approx(direct, abs=1e-14)


def test_weighted_part_and_truncation():
    p = parse_poly("x1 + x3 + x1*x2 + x2^3", 3)
    w = (1, 1, 2)
    assert p.weighted_part(w, 2) == parse_poly("x3 + x1*x2", 3)
    assert weighted_order(p, w) == 1
    assert p.truncate_below(w, 3) == parse_poly("x1 + x3 + x1*x2", 3)


def test_combination_matches_sum():
    X = VectorField.coordinate(2, 1)
    Y = VectorField([parse_poly("0", 2), parse_poly("x1", 2)])
    Z = combination([2, -1], [X, Y])
    assert Z == X * Multinomial.const(2, 2) - Y


def test_seminorm_bounds_derivatives():
    v = VectorField([parse_poly("x1^2", 2), parse_poly("0", 2)])
    box = ((-1.0, 1.0), (-1.0, 1.0))
    # sup|v| = 1, sup|dv| = 2, sup|d^2 v| = 2
    assert seminorm(v, 0, box) == pytest.approx(1.0)
    assert seminorm(v, 1, box) == pytest.approx(2.0)
    assert seminorm(v, 2, box) == pytest.approx(2.0)


def test_monomial_count():
    assert len(list(monomials_up_to(3, 2))) == 10
