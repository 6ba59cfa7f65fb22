"""Acceptance criteria 1-11, one PASS/FAIL line each with the measured values and runtime."""

import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from subrie.endpoint import (EndpointProblem, cone_condition, endpoint_differential, endpoint_map,
                             estimate_dsr, goh_spanning_check, strong_pliability_search)
from subrie.flow import Control, ad_series, pushforward_numeric, variation_check
from subrie.lift import check_lift, heisenberg_to_grushin, lift_whitney_data
from subrie.nilpotent import check_convergence, nilpotent_at, nilpotentize, privileged_chart
from subrie.structure import apply_gauge, flag_at, grushin, heisenberg, step3alpha
from subrie.symbolic import VectorField, lie_bracket, parse_poly
from subrie.whitney import WhitneyData, extend, lusin, verify_dilation, verify_direct

sys.path.insert(0, str(Path(__file__).parent))
from oracles import bump_x3, smooth_grushin_data, smooth_heisenberg_data  # noqa: E402


@pytest.fixture
def report(capsys):
    """Returns ``emit(num, ok, limit, start, detail)``: prints one line and asserts."""

    def emit(num, ok, limit, start, detail):
        elapsed = time.perf_counter() - start
        within = elapsed < limit
        status = "PASS" if ok and within else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {num:2d}] {status}  {elapsed:7.2f}s (limit {limit}s)  {detail}")
        assert ok, detail
        assert within, f"runtime {elapsed:.1f}s over {limit}s"

    return emit


def test_criterion_01_step3_algebra(report):
    start = time.perf_counter()
    s = step3alpha(-1)
    X1, X2, X3 = s.fields
    W1, W2 = lie_bracket(X1, X3), lie_bracket(X2, X3)
    Z = lie_bracket(X1, W1)
    checks = {
        "[X1,X2]=0": lie_bracket(X1, X2).is_zero(),
        "[X1,W2]=0": lie_bracket(X1, W2).is_zero(),
        "[X2,W1]=0": lie_bracket(X2, W1).is_zero(),
        "[X2,W2]=-Z": lie_bracket(X2, W2) == Z * Fraction(-1),
        "Z nonzero": not Z.is_zero(),
    }
    for name, F in (("X1", X1), ("X2", X2), ("X3", X3), ("W1", W1), ("W2", W2)):
        checks[f"[{name},Z]=0"] = lie_bracket(F, Z).is_zero()
    checks["[X3,W1]=0"] = lie_bracket(X3, W1).is_zero()
    checks["[X3,W2]=0"] = lie_bracket(X3, W2).is_zero()
    checks["[W1,W2]=0"] = lie_bracket(W1, W2).is_zero()
    growth = flag_at(s, (0,) * 6).growth_vector
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and growth == (3, 5, 6)
    report(1, ok, 1.0, start, f"{len(checks)} identities, failed={failed}, growth={growth}")


def test_criterion_02_lift_exact(report):
    start = time.perf_counter()
    rep = check_lift(heisenberg_to_grushin())
    zero = all(r.is_zero() for res in rep.residuals for r in res)
    report(2, rep.exact and rep.ok and zero, 1.0, start,
           f"exact={rep.exact} submersion ranks={rep.jacobian_ranks}")


def test_criterion_03_homogeneity_and_convergence(report):
    start = time.perf_counter()
    cases = [(heisenberg(), (0, 0, 0)), (heisenberg(), (0.3, -0.2, 0.1)),
             (grushin(), (0, 0)), (grushin(), (1, 0)), (grushin(), (0.5, 0.2))]
    invariant = []
    for s, p in cases:
        nf = nilpotent_at(s, p)
        invariant.append(nf.dilation_invariant(Fraction(1, 3)) and nf.dilation_invariant(7))
    s = grushin()
    chart = privileged_chart(s, (1, 0))
    table = check_convergence(s, chart, nilpotentize(s, chart), [1, 0.5, 0.25, 0.125, 0.0625])
    ok = all(invariant) and table.slope is not None and table.slope >= 0.9
    report(3, ok, 10.0, start, f"invariant={invariant} grushin(1,0) slope={table.slope:.3f}")


def _fd_jacobian(prob, coeffs, h=1e-5):
    cols = []
    for k in range(coeffs.size):
        dc = np.zeros(coeffs.size)
        dc[k] = h
        plus = endpoint_map(prob, prob.control((coeffs.ravel() + dc).reshape(coeffs.shape)))
        minus = endpoint_map(prob, prob.control((coeffs.ravel() - dc).reshape(coeffs.shape)))
        cols.append((np.concatenate(plus) - np.concatenate(minus)) / (2 * h))
    return np.array(cols).T


def test_criterion_04_endpoint_differential(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    trials = 0
    for s in (heisenberg(), step3alpha(-1)):
        for _ in range(20):
            N = int(rng.integers(2, 9))
            base = rng.uniform(-0.3, 0.3, s.dim)
            u = rng.uniform(-0.5, 0.5, s.rank)
            coeffs = rng.uniform(-0.2, 0.2, (N, s.rank))
            prob = EndpointProblem(s, u, base, N=N)
            D = endpoint_differential(prob, prob.control(coeffs))
            F = _fd_jacobian(prob, coeffs)
            worst = max(worst, np.linalg.norm(D - F) / np.linalg.norm(F))
            trials += 1
    report(4, worst < 1e-5, 30.0, start, f"{trials} trials, worst relative error {worst:.2e}")


def test_criterion_05_pliability(report):
    start = time.perf_counter()
    heis = nilpotent_at(heisenberg(), (0, 0, 0))
    c1 = strong_pliability_search(EndpointProblem(heis, [1.0, 0.0]), eta=0.1, seed=0)
    s3 = nilpotent_at(step3alpha(-1), (0,) * 6)
    c2 = strong_pliability_search(EndpointProblem(s3, [0.0, 0.0, 1.0]), eta=0.1, seed=0)
    certs_ok = True
    parts = []
    for name, c in (("heisenberg", c1), ("step3(-1)", c2)):
        good = (getattr(c, "ok", False) and c.ratio > 1e-6 and c.sup_norm < 0.1
                and c.residual < 1e-9)
        certs_ok = certs_ok and good
        if good:
            parts.append(f"{name}: ratio={c.ratio:.2e} sup={c.sup_norm:.3f} res={c.residual:.1e}")
        else:
            parts.append(f"{name}: no certificate")
    s3_plus = nilpotent_at(step3alpha(1), (0,) * 6)
    logic = {
        "goh u=(1,0,0)": goh_spanning_check(s3, [1, 0, 0]).verdict is True,
        "goh u=(0,0,1)": goh_spanning_check(s3, [0, 0, 1]).verdict is False,
        "cone a=-1": cone_condition(s3, [0, 0, 1]).verdict is True,
        "cone a=+1": cone_condition(s3_plus, [0, 0, 1]).verdict is False,
    }
    ok = certs_ok and all(logic.values())
    report(5, ok, 120.0, start, "; ".join(parts) + f"; checks={logic}")


def test_criterion_06_heisenberg_distances(report):
    start = time.perf_counter()
    s = heisenberg()
    d1 = estimate_dsr(s, (0, 0, 0), (1, 0, 0)).upper
    d2 = estimate_dsr(s, (0, 0, 0), (0, 0, 1)).upper
    lo = 2 * np.sqrt(np.pi)
    ok = 1.0 <= d1 <= 1.001 and lo <= d2 <= lo + 0.01
    report(6, ok, 60.0, start, f"d(0,e1)={d1:.9f} d(0,e3)={d2:.9f} (2 sqrt(pi)={lo:.9f})")


def _rotate(data, c):
    return WhitneyData(data.times, data.points, data.controls @ np.asarray(c, dtype=float).T)


def test_criterion_07_whitney_verifier(report):
    start = time.perf_counter()
    s = heisenberg()
    data = smooth_heisenberg_data(5)
    bumped = bump_x3(data, 31)
    smooth = verify_direct(s, data, "both").verdict
    dil = [verify_dilation(s, data, d).verdict for d in ("forward", "backward")]
    bad = verify_direct(s, bumped, "both").verdict
    c = [[Fraction(3, 5), Fraction(4, 5)], [Fraction(-4, 5), Fraction(3, 5)]]
    g = apply_gauge(s, c)
    g_smooth = verify_direct(g, _rotate(data, c), "both").verdict
    g_bad = verify_direct(g, _rotate(bumped, c), "both").verdict
    ok = (data.n == 64 and smooth == "accept" and dil == ["accept", "accept"] and bad == "reject"
          and g_smooth == smooth and g_bad == bad)
    report(7, ok, 180.0, start, f"n={data.n} direct={smooth} dilation={dil} perturbed={bad} "
           f"gauged=({g_smooth}, {g_bad})")


def test_criterion_08_extension_round_trip(report):
    start = time.perf_counter()
    s = heisenberg()
    data = smooth_heisenberg_data(5)
    res = extend(s, data)
    err = res.interpolation_error()
    jump = res.junction_jump()
    verdict = verify_direct(s, res.restrict(data), "both").verdict
    ok = err < 1e-6 and jump < 1e-8 and verdict == "accept"
    report(8, ok, 120.0, start, f"gaps={data.n - 1} hit error={err:.2e} junction jump={jump:.2e} "
           f"restriction verdict={verdict}")


def test_criterion_09_lusin(report):
    start = time.perf_counter()
    u = Control.sampled([[1, 0], [0, 1]], 0, 1, knots=[0, 0.5], hold="constant")
    res = lusin(heisenberg(), u, [0, 0, 0], 0.1, grid=129)
    err = max(np.linalg.norm(res.extension.point(t) - res.curve(t)) for t in res.data.times)
    ok = res.measure_kept >= 0.9 and err < 1e-6
    report(9, ok, 120.0, start, f"kept measure={res.measure_kept:.4f} max error on K={err:.2e}")


def test_criterion_10_variation_and_ad_series(report):
    start = time.perf_counter()
    X1, X2 = heisenberg().fields
    var = variation_check(X1, [X2], Control.sampled([[0.0], [1.0]]), [0.1, -0.2, 0.3], 1.0)
    rng = np.random.default_rng(5)
    exact_err = 0.0
    for s, p in ((heisenberg(), (0, 0, 0)), (step3alpha(-1), (0,) * 6)):
        nf = nilpotent_at(s, p)
        for i in range(nf.rank):
            for j in range(nf.rank):
                ser = ad_series(nf.fields[i], nf.fields[j], 0.7, nf.step)
                q = rng.uniform(-0.3, 0.3, nf.dim)
                num = pushforward_numeric(nf.fields[i], nf.fields[j], 0.7, q)
                exact_err = max(exact_err, np.linalg.norm(ser.truncation.eval(q) - num))
    X = VectorField([parse_poly("x2", 2), parse_poly("-x1", 2)])
    Y = VectorField.coordinate(2, 1)
    q = np.array([0.3, 0.1])
    sig = np.array([0.4, 0.2, 0.1, 0.05])
    slopes = []
    for N in (2, 3, 4):
        rem = [np.linalg.norm(pushforward_numeric(X, Y, t, q) - ad_series(X, Y, t, N).truncation.eval(q))
               for t in sig]
        slopes.append(float(np.polyfit(np.log(sig), np.log(rem), 1)[0]))
    slope_ok = all(abs(sl - N) < 0.2 for sl, N in zip(slopes, (2, 3, 4)))
    ok = var.residual < 1e-7 and exact_err < 1e-6 and slope_ok
    report(10, ok, 30.0, start, f"variation residual={var.residual:.2e} ({var.mode}) "
           f"ad-series error={exact_err:.2e} remainder slopes={np.round(slopes, 3).tolist()}")


def test_criterion_11_singular_route(report):
    start = time.perf_counter()
    ls = heisenberg_to_grushin()
    data = smooth_grushin_data(5)
    crosses = data.points[:, 0].min() < 0 < data.points[:, 0].max()
    lifted = lift_whitney_data(ls, data)
    verdict = verify_direct(ls.upstairs, lifted.data, "both").verdict
    ok = crosses and lifted.projection_error < 1e-6 and verdict == "accept"
    report(11, ok, 180.0, start, f"crosses x1=0: {crosses} projection error="
           f"{lifted.projection_error:.2e} M={lifted.M:.3g} upstairs verdict={verdict}")
