from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subrie.nilpotent import (ball_box_calibrate, check_convergence, dilate, nilpotent_at,
                              nilpotentize, privileged_chart, pseudo_norm, radial_samples)
from subrie.structure import builtin, flag_at, grushin, heisenberg, step3alpha
from subrie.symbolic import Multinomial, lie_bracket, weighted_order

POINTS = {
    "heisenberg": [(0, 0, 0), (0.3, -0.2, 0.5)],
    "grushin": [(0, 0), (1, 0), (0.5, -0.25)],
    "engel": [(0, 0, 0, 0), (0.25, 0.5, 0, -0.5)],
    "martinet": [(0, 0, 0), (0.5, 0.25, 0.0)],
}


@pytest.mark.parametrize("name", sorted(POINTS))
def test_chart_certificates(name):
    s = builtin(name)
    for p in POINTS[name]:
        chart = privileged_chart(s, p)
        assert np.allclose(chart.to_chart(p), 0.0, atol=1e-14)
        assert chart.check_identity()
        x = np.array(p, dtype=float) + 0.01
        assert np.allclose(chart.from_chart(chart.to_chart(x)), x, atol=1e-12)


@pytest.mark.parametrize("name", sorted(POINTS))
def test_nilpotent_frames_are_homogeneous(name):
    s = builtin(name)
    for p in POINTS[name]:
        nf = nilpotentize(s, privileged_chart(s, p))
        assert nf.is_homogeneous()
        assert nf.dilation_invariant(Fraction(1, 3))
        assert nf.dilation_invariant(5)


def test_coordinates_have_the_right_order():
    # in privileged coordinates each y_j has order w_j along the frame
    s = step3alpha(-1)
    chart = privileged_chart(s, (0,) * 6)
    nf = nilpotentize(s, chart)
    assert flag_at(nf, (0,) * 6).growth_vector == (3, 5, 6)
    for j, w in enumerate(chart.weights):
        assert weighted_order(chart.forward[j].compose(list(chart.inverse)), chart.weights) == w


def test_nilpotent_brackets_match_step3_relations():
    nf = nilpotent_at(step3alpha(-1), (0,) * 6)
    X1, X2, X3 = nf.fields
    assert lie_bracket(X1, X2).is_zero()
    W1, W2 = lie_bracket(X1, X3), lie_bracket(X2, X3)
    assert lie_bracket(X1, W1) == lie_bracket(X2, W2) * Multinomial.const(6, -1)


def test_grushin_convergence_slope():
    s = grushin()
    chart = privileged_chart(s, (1, 0))
    nf = nilpotentize(s, chart)
    table = check_convergence(s, chart, nf, [1, 0.5, 0.25, 0.125, 0.0625])
    assert table.slope >= 0.9
    assert table.verdict == "nonincreasing"


def test_grushin_nilpotent_at_singular_point_is_itself():
    nf = nilpotent_at(grushin(), (0, 0))
    assert nf.weights == (1, 2)
    assert tuple(nf.fields) == tuple(grushin().fields)


weights = st.sampled_from([(1, 1, 2), (1, 1, 2, 3), (1, 2)])


@settings(max_examples=40, deadline=None)
@given(weights, st.floats(0.1, 10), st.floats(0.1, 10), st.integers(0, 2 ** 31))
def test_dilation_group_law(w, a, b, seed):
    y = np.random.default_rng(seed).normal(size=len(w))
    assert np.allclose(dilate(w, a, dilate(w, b, y)), dilate(w, a * b, y), rtol=1e-12, atol=1e-12)
    assert pseudo_norm(w, dilate(w, a, y)) == pytest.approx(a * pseudo_norm(w, y), rel=1e-12)


def test_ball_box_constants_bracket_the_distance():
    s = heisenberg()
    chart = privileged_chart(s, (0, 0, 0))
    samples = radial_samples(chart, [0.05, 0.1, 0.2], directions=3, seed=0)
    est = ball_box_calibrate(s, chart, samples)
    # Heisenberg: pseudo-norm <= 2.6 d, and d / pseudo-norm peaks near 2 sqrt(pi) on the z-axis
    assert min(est.ratios) >= 1 / 2.6
    assert 1.0 <= est.C_est < 4.0
