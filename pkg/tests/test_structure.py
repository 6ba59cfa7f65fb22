from fractions import Fraction

import numpy as np
import pytest

from subrie.structure import (BracketGenerationError, StructureError, apply_gauge, builtin,
                              classify_regularity, flag_at, format_structure, grushin, heisenberg,
                              load_structure, parse_structure, step3alpha)
from subrie.symbolic import Multinomial, VectorField, lie_bracket, parse_poly


def test_heisenberg_flag():
    rep = flag_at(heisenberg(), (0.3, -0.2, 0.1))
    assert rep.growth_vector == (2, 3)
    assert rep.weights == (1, 1, 2)
    assert rep.regular
    assert rep.to_dict()["regularity_label"] == "sampled-regular"


def test_grushin_singular_line():
    s = grushin()
    assert flag_at(s, (0.0, 0.4)).growth_vector == (1, 2)
    assert not flag_at(s, (0.0, 0.4)).regular
    assert flag_at(s, (0.0, 0.4)).to_dict()["regularity_label"] == "sampled-singular"
    assert flag_at(s, (0.5, 0.4)).growth_vector == (2,)
    rmap = classify_regularity(s, grid=5)
    assert rmap.verdict != "equiregular"
    assert all(p[0] == 0.0 for p in rmap.singular_points)


def test_step3_example_growth():
    rep = flag_at(step3alpha(-1), (0,) * 6)
    assert rep.growth_vector == (3, 5, 6)
    assert rep.step == 3


def test_not_bracket_generating():
    s = parse_structure("dim = 2\nX1 = (1) dx1\n")
    with pytest.raises(BracketGenerationError):
        flag_at(s, (0.0, 0.0))


def test_text_roundtrip():
    for s in (heisenberg(), grushin(), step3alpha(-1), builtin("engel"), builtin("martinet")):
        again = parse_structure(format_structure(s))
        assert again == s


def test_builtin_params():
    assert load_structure("step3alpha(alpha=1)") == step3alpha(1)
    assert load_structure("step3alpha", {"alpha": -1}) == step3alpha(-1)
    with pytest.raises(OSError):
        load_structure("no-such-structure-file")


def test_domain_checks():
    with pytest.raises(StructureError):
        flag_at(heisenberg(), (2.0, 0.0, 0.0))
    with pytest.raises(StructureError):
        flag_at(heisenberg(), (0.0, 0.0))


def test_gauge_rotation_keeps_flag():
    c, s_ = Fraction(3, 5), Fraction(4, 5)
    g = apply_gauge(heisenberg(), [[c, -s_], [s_, c]])
    assert flag_at(g, (0.1, 0.2, 0.3)).growth_vector == (2, 3)
    # the bracket only changes by the determinant
    assert lie_bracket(*g.fields) == lie_bracket(*heisenberg().fields)
    with pytest.raises(StructureError):
        apply_gauge(heisenberg(), [[1, 1], [0, 1]])


def test_horizontal_vector():
    s = heisenberg()
    v = s.horizontal([2, 3])
    assert v == VectorField([Multinomial.const(3, 2), Multinomial.const(3, 3),
                             parse_poly("-x2 + 3/2*x1", 3)])
    assert np.allclose(s.field_values((1.0, 0.0, 0.0))[1], [0, 1, 0.5])
