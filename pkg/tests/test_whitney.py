import sys
from pathlib import Path

import numpy as np
import pytest

from subrie.flow import Control
from subrie.structure import grushin, heisenberg
from subrie.whitney import (ExtensionError, NeedsLiftError, WhitneyBudget, WhitneyData,
                            cantor_times, extend, lusin, verify_dilation, verify_direct)

sys.path.insert(0, str(Path(__file__).parent))
from oracles import bump_x3, smooth_grushin_data, smooth_heisenberg_data  # noqa: E402

QUICK = WhitneyBudget(resolution_check=False)


def test_cantor_times():
    t = cantor_times(5)
    assert t.size == 64
    assert t[0] == 0 and t[-1] == 1
    assert np.isclose(np.diff(t).min(), 3.0 ** -5)


def test_data_validation_and_csv():
    d = smooth_heisenberg_data(2)
    again = WhitneyData.from_csv(d.to_csv())
    assert np.array_equal(again.times, d.times)
    assert np.array_equal(again.points, d.points)
    assert np.array_equal(again.controls, d.controls)
    with pytest.raises(ValueError):
        WhitneyData([0, 0], [[0, 0, 0]] * 2, [[0, 0]] * 2)
    with pytest.raises(ValueError):
        WhitneyData([0], [[5, 0, 0]], [[0, 0]]).check(heisenberg())


def test_single_point_is_vacuous():
    rep = verify_direct(heisenberg(), WhitneyData([0.3], [[0, 0, 0]], [[1, 0]]))
    assert rep.verdict == "accept"
    assert rep.n_pairs == 0


def test_bumped_point_is_rejected():
    d = bump_x3(smooth_heisenberg_data(3), 7)
    rep = verify_direct(heisenberg(), d, "forward", QUICK)
    assert rep.verdict == "reject"
    assert rep.buckets[-1]["sup_lower"] > rep.thresholds["Theta"]
    # lower proxies never exceed the realized upper values
    for b in rep.buckets:
        assert b["sup_lower"] <= b["sup_upper"]


def test_smooth_data_bucket_sups_decay():
    rep = verify_direct(heisenberg(), smooth_heisenberg_data(3), "forward", QUICK)
    sups = [b["sup_upper"] for b in rep.buckets]
    assert sups == sorted(sups, reverse=True)
    assert rep.beta > 0.3
    assert rep.verdict in ("accept", "inconclusive")


def test_dilation_constant_curve():
    d = WhitneyData([0, 0.25, 0.5], [[0.1, 0.2, 0.3]] * 3, [[0, 0]] * 3)
    for direction in ("forward", "backward"):
        rep = verify_dilation(heisenberg(), d, direction)
        assert max(r["discrepancy"] for r in rep.rows) < 1e-12


def test_dilation_accepts_smooth_curve_both_ways():
    d = smooth_heisenberg_data(4)
    fw = verify_dilation(heisenberg(), d, "forward")
    bw = verify_dilation(heisenberg(), d, "backward")
    assert fw.verdict == bw.verdict == "accept"
    assert fw.slope > 0


def test_dilation_refuses_singular_points():
    # the curve crosses x1 = 0 at t = 1/2
    d = smooth_grushin_data(2)
    d = WhitneyData([0.0, 0.5], [d.points[0], [0.0, d.points[0][1]]], [d.controls[0]] * 2)
    with pytest.raises(NeedsLiftError):
        verify_dilation(grushin(), d, "forward")


def test_extend_two_points():
    d = WhitneyData([0, 1], [[0, 0, 0], [0, 0, 1]], [[1, 0], [1, 0]])
    res = extend(heisenberg(), d)
    assert res.interpolation_error() < 1e-6
    assert res.junction_jump() < 1e-8
    assert res.reintegrate(heisenberg()) < 1e-5
    assert res.gaps[0]["endpoint_error"] < 1e-6


def test_extend_matches_curve_on_k():
    d = smooth_heisenberg_data(2)
    res = extend(heisenberg(), d)
    back = res.restrict(d)
    assert np.abs(back.points - d.points).max() < 1e-6
    assert np.abs(back.controls - d.controls).max() < 1e-8
    assert [s.kind for s in res.segments] == ["ray"] + ["gap"] * (d.n - 1) + ["ray"]


def test_extend_reports_unsolvable_gap():
    d = WhitneyData([0, 1], [[0, 0, 0], [0, 0, 1]], [[1, 0], [1, 0]])
    with pytest.raises(ExtensionError) as err:
        extend(heisenberg(), d, eta_schedule=[1e-3], N_schedule=(4,), restarts=1)
    assert err.value.gap == (0.0, 1.0)


def test_lusin_jump_control():
    u = Control.sampled([[1, 0], [0, 1]], 0, 1, knots=[0, 0.5], hold="constant")
    res = lusin(heisenberg(), u, [0, 0, 0], 0.1, grid=65)
    assert res.measure_kept >= 0.9
    dropped = res.times[~res.kept]
    assert dropped.size and dropped.max() < 0.5 and dropped.min() > 0.3
    err = max(np.linalg.norm(res.extension.point(t) - res.curve(t)) for t in res.data.times)
    assert err < 1e-6


def test_lusin_needs_positive_eps():
    with pytest.raises(ValueError):
        lusin(heisenberg(), Control.constant([1, 0]), [0, 0, 0], 0.0)
