import sys
from pathlib import Path

import numpy as np
import pytest

from subrie.flow import Control, chron_exp
from subrie.lift import (LiftSpec, check_lift, heisenberg_to_grushin, lift_whitney_data,
                         load_lift, parse_liftspec, project_curve, project_distance_check)
from subrie.structure import StructureError, grushin, heisenberg
from subrie.symbolic import Multinomial, parse_poly
from subrie.whitney import WhitneyData

sys.path.insert(0, str(Path(__file__).parent))
from oracles import smooth_grushin_data  # noqa: E402

LIFT_TEXT = """
name = h2g
[upstairs]
builtin = heisenberg
[downstairs]
dim = 2
domain = [-1,1]x[-1,1]
X1 = (1) dx1
X2 = (x1) dx2
psi1 = x1
psi2 = x3 + 1/2*x1*x2
"""


def test_builtin_lift_is_exact():
    rep = check_lift(heisenberg_to_grushin())
    assert rep.ok and rep.exact
    assert all(r.is_zero() for res in rep.residuals for r in res)


def test_identity_lift():
    s = heisenberg()
    ls = LiftSpec(s, s, tuple(Multinomial.var(3, i + 1) for i in range(3)))
    assert check_lift(ls).ok


def test_wrong_psi_has_residual():
    ls = LiftSpec(heisenberg(), grushin(), (parse_poly("x1", 3), parse_poly("x3", 3)))
    rep = check_lift(ls)
    assert not rep.ok
    assert not rep.residuals[1][1].is_zero()
    assert rep.residuals[1][1] == parse_poly("-1/2*x1", 3)


def test_liftspec_file_format(tmp_path):
    ls = parse_liftspec(LIFT_TEXT)
    assert ls.name == "h2g"
    assert check_lift(ls).ok
    path = tmp_path / "h2g.lift"
    path.write_text(LIFT_TEXT)
    assert check_lift(load_lift(str(path))).ok
    with pytest.raises(StructureError):
        parse_liftspec(LIFT_TEXT.replace("psi2 = x3 + 1/2*x1*x2\n", ""))


def test_projection_is_horizontal_with_same_control():
    ls = heisenberg_to_grushin()
    ts = np.linspace(0, 1, 9)
    ctrl = Control.sampled(0.5 * np.stack([np.cos(3 * ts), np.sin(2 * ts)], 1))
    traj = chron_exp(heisenberg(), ctrl, [0.1, 0.0, 0.0], 1e-12, 1e-13)
    down = project_curve(ls, traj)
    # central differences are only second order away from the control knots at k/8
    off_knot = [0.1, 0.2, 0.3, 0.45, 0.55, 0.7, 0.8, 0.9]
    assert down.horizontality_residual(off_knot) < 1e-8
    direct = chron_exp(grushin(), ctrl, ls.apply([0.1, 0.0, 0.0]), 1e-12, 1e-13)
    assert np.allclose(down(0.7), direct(0.7), atol=1e-9)


def test_distance_does_not_increase_under_projection():
    ls = heisenberg_to_grushin()
    chk = project_distance_check(ls, [0, 0, 0], [0, 0, 1])
    assert chk.d_down_upper <= chk.d_up_upper + 1e-6
    assert not chk.violation
    same = project_distance_check(ls, [0.1, 0.2, 0.3], [0.1, 0.2, 0.3])
    assert same.d_up_upper == same.d_down_upper == 0.0


def test_lift_data_projects_back():
    ls = heisenberg_to_grushin()
    d = smooth_grushin_data(3)
    assert d.points[:, 0].min() < 0 < d.points[:, 0].max()
    lifted = lift_whitney_data(ls, d)
    assert lifted.projection_error < 1e-6
    assert np.array_equal(lifted.data.controls, d.controls)
    assert lifted.M > 0


def test_lift_data_without_gaps_is_plain_flow():
    ls = heisenberg_to_grushin()
    ctrl = Control.constant([0.5, 0.2])
    times = np.array([0.0, 0.5, 1.0])
    traj = chron_exp(grushin(), ctrl, [-0.2, 0.1])
    d = WhitneyData(times, traj(times), ctrl(times))
    lifted = lift_whitney_data(ls, d)
    assert lifted.M == 0.0
    up = chron_exp(heisenberg(), ctrl, ls.preimage(d.points[0]))
    assert np.allclose(lifted.data.points, up(times), atol=1e-10)


def test_lift_data_rejects_bad_start():
    ls = heisenberg_to_grushin()
    d = smooth_grushin_data(1)
    with pytest.raises(ValueError):
        lift_whitney_data(ls, d, p0=[0.5, 0.5, 0.5])
