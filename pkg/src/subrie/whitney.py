"""Whitney-type condition checks, horizontal extension across gaps, Lusin selection."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .config import parallel_map, spawn_seeds
from .endpoint import DistanceBudget, DistanceError, estimate_dsr
from .flow import Control, IntegrationError, Trajectory, chron_exp, endpoint_sensitivity, flow_const
from .nilpotent import ChartError, nilpotentize, privileged_chart, pseudo_norm, dilate
from .structure import FrameLike, StructureError, flag_at

DEFAULT_BETA_MIN = 0.3
DEFAULT_THETA = 0.05
DEFAULT_BIG_THETA = 0.1
DEFAULT_LOWER_CONST = 3.0
DEFAULT_PAIR_CAP = 4096


class NeedsLiftError(StructureError):
    """Chart-based operation requested at a singular point."""


class ExtensionError(RuntimeError):
    def __init__(self, message: str, gap: tuple, best_residual: float):
        super().__init__(message)
        self.gap = gap
        self.best_residual = best_residual


@dataclass
class WhitneyData:
    times: np.ndarray
    points: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        n = self.times.shape[0]
        self.points = np.asarray(self.points, dtype=float).reshape(n, -1)
        self.controls = np.asarray(self.controls, dtype=float).reshape(n, -1)
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.controls))):
            raise ValueError("points and controls must be finite")

    @property
    def n(self) -> int:
        return self.times.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def m(self) -> int:
        return self.controls.shape[1]

    @property
    def diameter(self) -> float:
        return float(self.times[-1] - self.times[0]) if self.n else 0.0

    def subset(self, idx) -> "WhitneyData":
        idx = np.asarray(idx)
        return WhitneyData(self.times[idx], self.points[idx], self.controls[idx])

    def half_resolution(self) -> "WhitneyData":
        return self.subset(np.arange(0, self.n, 2))

    def check(self, s: FrameLike) -> None:
        if self.d != s.dim or self.m != s.rank:
            raise ValueError(f"data has d={self.d}, m={self.m}; structure has d={s.dim}, m={s.rank}")
        if hasattr(s, "contains"):
            for p in self.points:
                if not s.contains(p):
                    raise ValueError(f"data point {p.tolist()} outside the structure domain")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{j + 1}" for j in range(self.d)] + [f"u{i + 1}" for i in range(self.m)])
        for t, p, u in zip(self.times, self.points, self.controls):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in p] + [repr(float(x)) for x in u])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "WhitneyData":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        header = [h.strip() for h in rows[0]]
        if header[0] != "t":
            raise ValueError("WhitneyData CSV must start with a 't' column")
        xs = [i for i, h in enumerate(header) if h.startswith("x")]
        us = [i for i, h in enumerate(header) if h.startswith("u")]
        if len(xs) + len(us) + 1 != len(header):
            raise ValueError("WhitneyData CSV header must be t, x1..xd, u1..um")
        data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
        return cls(data[:, 0], data[:, xs], data[:, us])


def load_whitney(path: str) -> WhitneyData:
    with open(path, encoding="utf-8") as fh:
        return WhitneyData.from_csv(fh.read())


def sample_curve(s: FrameLike, ctrl: Control, p0, times, rtol: float = 1e-12,
                 atol: float = 1e-13) -> WhitneyData:
    """Whitney data of the horizontal curve driven by ``ctrl`` from ``p0``."""
    times = np.asarray(times, dtype=float)
    traj = chron_exp(s, ctrl, p0, rtol, atol)
    return WhitneyData(times, traj(times), ctrl(times))


def cantor_times(level: int, a: float = 0.0, b: float = 1.0) -> np.ndarray:
    """Endpoints of the level-``level`` middle-thirds intervals (``2^(level+1)`` points)."""
    intervals = [(a, b)]
    for _ in range(level):
        nxt = []
        for lo, hi in intervals:
            w = (hi - lo) / 3
            nxt.extend([(lo, lo + w), (hi - w, hi)])
        intervals = nxt
    return np.array(sorted({x for iv in intervals for x in iv}))


# ---------------------------------------------------------------------------
# direct verification

@dataclass
class WhitneyBudget:
    h_max: float | None = None
    pair_cap: int = DEFAULT_PAIR_CAP
    n_knots: int = 8
    cheap_starts: int = 1
    refine_starts: int = 2
    max_iter: int = 100
    seed: int = 0
    beta_min: float = DEFAULT_BETA_MIN
    theta: float = DEFAULT_THETA
    Theta: float = DEFAULT_BIG_THETA
    lower_const: float = DEFAULT_LOWER_CONST
    refine_per_bucket: int = 4
    resolution_check: bool = True


@dataclass
class ModulusReport:
    direction: str
    buckets: list
    beta: float | None
    verdict: str
    thresholds: dict
    n_pairs: int
    skipped: int
    worst_pairs: list = field(default_factory=list)
    half_resolution_verdict: str | None = None

    def to_dict(self) -> dict:
        return {
            "direction": self.direction,
            "verdict": self.verdict,
            "beta": self.beta,
            "n_pairs": self.n_pairs,
            "skipped": self.skipped,
            "buckets": self.buckets,
            "thresholds": self.thresholds,
            "worst_pairs": self.worst_pairs,
            "half_resolution_verdict": self.half_resolution_verdict,
        }


def _pairs(data: WhitneyData, direction: str, h_max: float) -> list[tuple[int, int]]:
    """``(i_from, i_to)``: flow from point ``i_from`` for time ``t_to - t_from``."""
    out = []
    for i in range(data.n):
        for j in range(i + 1, data.n):
            if data.times[j] - data.times[i] > h_max + 1e-15:
                break
            if direction in ("both", "forward"):
                out.append((i, j))
            if direction in ("both", "backward"):
                out.append((j, i))
    return out


def _chart_cache(s: FrameLike):
    cache = {}

    def get(p):
        key = tuple(np.round(p, 15))
        if key not in cache:
            try:
                rep = flag_at(s, p)
                cache[key] = privileged_chart(s, p) if rep.regular else None
            except (ChartError, StructureError):
                cache[key] = None
        return cache[key]
    return get


def verify_direct(s: FrameLike, data: WhitneyData, direction: str = "both",
                  budget: WhitneyBudget | None = None) -> ModulusReport:
    """Empirical modulus of the first-order defect ``d(f(t), e^{(t-s)X_u(s)} f(s)) / |t-s|``.

    Upper values come from realized controls; rejection only uses the pseudo-norm
    lower proxy (pseudo-norm divided by ``lower_const``) in the finest bucket.
    """
    budget = budget or WhitneyBudget()
    if direction not in ("both", "forward", "backward"):
        raise ValueError(f"unknown direction {direction!r}")
    data.check(s)
    report = _verify(s, data, direction, budget)
    if budget.resolution_check and data.n >= 4:
        half = _verify(s, data.half_resolution(), direction, budget)
        report.half_resolution_verdict = half.verdict
    return report


def _verify(s, data, direction, budget) -> ModulusReport:
    thresholds = {"beta_min": budget.beta_min, "theta": budget.theta, "Theta": budget.Theta,
                  "lower_const": budget.lower_const}
    h_max = budget.h_max if budget.h_max is not None else data.diameter / 4
    pairs = _pairs(data, direction, h_max) if data.n > 1 and h_max > 0 else []
    if len(pairs) > budget.pair_cap:
        rng = np.random.default_rng(budget.seed)
        keep = np.sort(rng.choice(len(pairs), budget.pair_cap, replace=False))
        pairs = [pairs[k] for k in keep]
    if not pairs:
        return ModulusReport(direction, [], None, "accept", thresholds, 0, 0,
                             half_resolution_verdict=None)
    charts = _chart_cache(s)
    seeds = spawn_seeds(budget.seed, len(pairs))
    cheap_budget = DistanceBudget(n_knots=budget.n_knots, starts=budget.cheap_starts,
                                  max_iter=budget.max_iter)

    def predicted(pair):
        i, j = pair
        h = data.times[j] - data.times[i]
        return flow_const(s, data.controls[i], h, data.points[i], 1e-12, 1e-14)

    def cheap(k):
        i, j = pairs[k]
        h = abs(data.times[j] - data.times[i])
        pred = predicted(pairs[k])
        target = data.points[j]
        chart = charts(target)
        lower = None
        if chart is not None:
            lower = pseudo_norm(chart, chart.to_chart(pred)) / budget.lower_const / h
        cb = DistanceBudget(**{**cheap_budget.__dict__, "seed": seeds[k]})
        try:
            est = estimate_dsr(s, target, pred, cb, mode="feasible")
            return est.upper / h, lower, pred
        except (DistanceError, IntegrationError):
            return None, lower, pred

    cheap_vals = parallel_map(cheap, range(len(pairs)))
    # bucket assignment
    gaps = np.array([abs(data.times[j] - data.times[i]) for i, j in pairs])
    bucket_of = np.floor(np.log2(h_max / gaps) + 1e-12).astype(int)
    bucket_of = np.maximum(bucket_of, 0)
    upper = np.array([np.inf if v[0] is None else v[0] for v in cheap_vals])
    refined = np.zeros(len(pairs), dtype=bool)

    def refine(k):
        i, j = pairs[k]
        h = abs(data.times[j] - data.times[i])
        rb = DistanceBudget(n_knots=budget.n_knots, starts=budget.refine_starts,
                            max_iter=budget.max_iter, seed=seeds[k], ftol=1e-12)
        try:
            est = estimate_dsr(s, data.points[j], cheap_vals[k][2], rb)
            return est.upper / h
        except (DistanceError, IntegrationError):
            return np.inf

    finest_idx = np.flatnonzero(bucket_of == bucket_of.max())
    finest_lowers = [cheap_vals[k][1] for k in finest_idx if cheap_vals[k][1] is not None]
    # a rejection rests on lower bounds only, so refinement cannot change it
    rejecting = bool(finest_lowers) and max(finest_lowers) > budget.Theta
    buckets = []
    worst = []
    for b in sorted(set(bucket_of.tolist())):
        idx = np.flatnonzero(bucket_of == b)
        # lazy supremum: refined values never exceed cheap ones, and an unrefined
        # cheap value is still a valid upper estimate
        order = idx[np.argsort(-upper[idx])]
        best_refined = -np.inf
        for n_done, k in enumerate(order):
            if rejecting or upper[k] <= best_refined or n_done >= budget.refine_per_bucket:
                break
            if not refined[k]:
                upper[k] = min(upper[k], refine(k))
                refined[k] = True
            best_refined = max(best_refined, upper[k])
        lowers = [cheap_vals[k][1] for k in idx if cheap_vals[k][1] is not None]
        skipped = int(np.sum(~np.isfinite(upper[idx])))
        finite = upper[idx][np.isfinite(upper[idx])]
        kmax = idx[np.argmax(np.where(np.isfinite(upper[idx]), upper[idx], -1))]
        buckets.append({
            "h_lo": h_max * 2.0 ** (-(b + 1)),
            "h_hi": h_max * 2.0 ** (-b),
            "count": int(idx.size),
            "sup_upper": float(finite.max()) if finite.size else None,
            "sup_lower": float(max(lowers)) if lowers else None,
            "skipped": skipped,
            "refined": int(np.sum(refined[idx])),
        })
        worst.append({"t_from": float(data.times[pairs[kmax][0]]),
                      "t_to": float(data.times[pairs[kmax][1]]),
                      "defect_upper": float(upper[kmax])})
    beta = _fit_beta(buckets)
    finest = buckets[-1]
    skipped_total = int(sum(b["skipped"] for b in buckets))
    if finest["sup_lower"] is not None and finest["sup_lower"] > budget.Theta:
        verdict = "reject"
    elif (finest["skipped"] == 0 and finest["sup_upper"] is not None
          and finest["sup_upper"] < budget.theta and (beta is None and len(buckets) == 1
                                                      or beta is not None and beta > budget.beta_min)):
        verdict = "accept"
    else:
        verdict = "inconclusive"
    return ModulusReport(direction, buckets, beta, verdict, thresholds, len(pairs), skipped_total,
                         worst)


def _fit_beta(buckets) -> float | None:
    pts = [(b["h_hi"], b["sup_upper"]) for b in buckets
           if b["sup_upper"] is not None and b["sup_upper"] > 0]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# dilation form

@dataclass
class DilationReport:
    direction: str
    rows: list
    slope: float | None
    verdict: str
    thresholds: dict

    def to_dict(self) -> dict:
        return {"direction": self.direction, "rows": self.rows, "slope": self.slope,
                "verdict": self.verdict, "thresholds": self.thresholds}


def verify_dilation(s: FrameLike, data: WhitneyData, direction: str = "forward",
                    beta_min: float = DEFAULT_BETA_MIN, theta: float = DEFAULT_THETA,
                    reject_level: float = 1.0) -> DilationReport:
    """Blow-ups of consecutive pairs compared with nilpotent flow targets.

    Forward: in the chart at ``f(b)``, ``delta_{1/(b-a)} Phi(f(a))`` against
    ``e^{-Xhat_{u(b)}}(0)``. Backward: chart at ``f(a)``, ``f(b)``, target
    ``e^{Xhat_{u(a)}}(0)``.
    """
    if direction not in ("forward", "backward", "both"):
        raise ValueError(f"unknown direction {direction!r}")
    if direction == "both":
        fw = verify_dilation(s, data, "forward", beta_min, theta, reject_level)
        bw = verify_dilation(s, data, "backward", beta_min, theta, reject_level)
        verdicts = {fw.verdict, bw.verdict}
        verdict = verdicts.pop() if len(verdicts) == 1 else "inconclusive"
        return DilationReport("both", fw.rows + bw.rows, None, verdict, fw.thresholds)
    data.check(s)
    for p in data.points:
        if not flag_at(s, p).regular:
            raise NeedsLiftError(
                f"data point {p.tolist()} is singular; verify on a lift instead")
    rows = []
    nf_cache = {}
    for k in range(data.n - 1):
        a, b = data.times[k], data.times[k + 1]
        h = b - a
        if direction == "forward":
            center, other, u, sign = k + 1, k, data.controls[k + 1], -1.0
        else:
            center, other, u, sign = k, k + 1, data.controls[k], 1.0
        if center not in nf_cache:
            chart = privileged_chart(s, data.points[center])
            nf_cache[center] = (chart, nilpotentize(s, chart))
        chart, nf = nf_cache[center]
        y = dilate(chart, 1.0 / h, chart.to_chart(data.points[other]))
        target = flow_const(nf, u, sign, np.zeros(s.dim), 1e-12, 1e-14)
        rows.append({"t_a": float(a), "t_b": float(b), "gap": float(h),
                     "discrepancy": float(np.linalg.norm(y - target))})
    if not rows:
        return DilationReport(direction, rows, None, "accept", {})
    gaps = np.array([r["gap"] for r in rows])
    disc = np.array([r["discrepancy"] for r in rows])
    # per dyadic scale supremum
    scale = np.floor(np.log2(gaps.max() / gaps) + 1e-12).astype(int)
    levels = sorted(set(scale.tolist()))
    sups = [(gaps[scale == l].max(), disc[scale == l].max()) for l in levels]
    slope = None
    pos = [(g, v) for g, v in sups if v > 0]
    if len(pos) >= 2:
        slope = float(np.polyfit(np.log([g for g, _ in pos]), np.log([v for _, v in pos]), 1)[0])
    finest = sups[-1][1]
    thresholds = {"beta_min": beta_min, "theta": theta, "reject_level": reject_level}
    if finest > reject_level:
        verdict = "reject"
    elif finest < theta and (slope is None or slope > beta_min):
        verdict = "accept"
    else:
        verdict = "inconclusive"
    return DilationReport(direction, rows, slope, verdict, thresholds)


# ---------------------------------------------------------------------------
# extension

@dataclass
class Segment:
    kind: str
    t0: float
    t1: float
    control: Control
    trajectory: Trajectory
    diagnostics: dict = field(default_factory=dict)


@dataclass
class ExtensionResult:
    segments: list
    gaps: list
    data: WhitneyData | None

    @property
    def interval(self) -> tuple[float, float]:
        return self.segments[0].t0, self.segments[-1].t1

    def _segment(self, t: float) -> Segment:
        for seg in self.segments:
            if seg.t0 - 1e-12 <= t <= seg.t1 + 1e-12:
                return seg
        raise ValueError(f"time {t} outside the extension interval {self.interval}")

    def point(self, t) -> np.ndarray:
        if np.ndim(t) == 0:
            seg = self._segment(float(t))
            return seg.trajectory(float(np.clip(t, min(seg.trajectory.t_start, seg.trajectory.t_end),
                                                max(seg.trajectory.t_start, seg.trajectory.t_end))))
        return np.array([self.point(float(x)) for x in t])

    def control_value(self, t: float) -> np.ndarray:
        seg = self._segment(float(t))
        return seg.control(float(np.clip(t, seg.control.t0, seg.control.t1)))

    def interpolation_error(self, data: WhitneyData | None = None) -> float:
        data = data or self.data
        if data is None or data.n == 0:
            return 0.0
        return float(max(np.linalg.norm(self.point(t) - p) for t, p in zip(data.times, data.points)))

    def junction_jump(self) -> float:
        """Largest control jump between consecutive segments or against the data."""
        jumps = [0.0]
        for s0, s1 in zip(self.segments[:-1], self.segments[1:]):
            jumps.append(float(np.linalg.norm(s0.control(s0.control.t1) - s1.control(s1.control.t0))))
        if self.data is not None:
            for t, u in zip(self.data.times, self.data.controls):
                for seg in self.segments:
                    if abs(seg.t0 - t) < 1e-12:
                        jumps.append(float(np.linalg.norm(seg.control(seg.control.t0) - u)))
                    if abs(seg.t1 - t) < 1e-12:
                        jumps.append(float(np.linalg.norm(seg.control(seg.control.t1) - u)))
        return max(jumps)

    def reintegrate(self, s: FrameLike, rtol: float = 1e-12, atol: float = 1e-13) -> float:
        """Integrate the stored control from the first point in one sweep.

        Returns the largest deviation from the data points.
        """
        if self.data is None or self.data.n == 0:
            return 0.0
        p = self.segments[0].trajectory.ys[0]
        worst = 0.0
        hits = {float(t): pt for t, pt in zip(self.data.times, self.data.points)}
        for seg in self.segments:
            p = chron_exp(s, seg.control, p, rtol, atol).endpoint
            if seg.t1 in hits:
                worst = max(worst, float(np.linalg.norm(p - hits[seg.t1])))
        return worst

    def restrict(self, data: WhitneyData) -> WhitneyData:
        pts = np.array([self.point(t) for t in data.times])
        ctl = np.array([self.control_value(t) for t in data.times])
        return WhitneyData(data.times, pts, ctl)

    def to_csv(self, samples_per_segment: int = 17) -> str:
        rows = []
        for seg in self.segments:
            for t in np.linspace(seg.t0, seg.t1, samples_per_segment):
                rows.append((t, seg.trajectory(float(t)), seg.control(float(t))))
        d = rows[0][1].shape[0]
        m = rows[0][2].shape[0]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{j + 1}" for j in range(d)] + [f"u{i + 1}" for i in range(m)])
        for t, p, u in rows:
            w.writerow([repr(float(t))] + [repr(float(x)) for x in p] + [repr(float(x)) for x in u])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "interval": list(self.interval),
            "gaps": self.gaps,
            "interpolation_error": self.interpolation_error(),
            "junction_jump": self.junction_jump(),
            "segments": [{"kind": s.kind, "t0": s.t0, "t1": s.t1, "control": s.control.to_json(),
                          **s.diagnostics} for s in self.segments],
        }


def default_eta_schedule(h: float, du: float, eta_max: float = 64.0) -> list[float]:
    """``h |du| + 0.01`` doubled until ``eta_max`` is passed."""
    eta = h * du + 0.01
    out = [eta]
    while out[-1] < eta_max:
        out.append(out[-1] * 2)
    return out


def _gap_solve(s: FrameLike, a, b, fa, fb, ua, ub, c_free0, N, tol, max_iter=50):
    m = s.rank
    du = ub - ua

    def build(cf):
        coeffs = np.vstack([du[None, :], cf.reshape(N - 1, m)])
        return Control.basis(coeffs, offset=ua, t0=a, t1=b)

    def ev(cf):
        pt, S = endpoint_sensitivity(s, build(cf), fa, 1e-12, 1e-14)
        return pt - fb, S[:, m:]

    cf = c_free0.copy()
    r, J = ev(cf)
    nr = np.linalg.norm(r)
    for _ in range(max_iter):
        if nr < tol:
            break
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        alpha = 1.0
        ok = False
        while alpha > 1e-3:
            try:
                r2, J2 = ev(cf + alpha * step)
            except IntegrationError:
                alpha *= 0.5
                continue
            n2 = np.linalg.norm(r2)
            if n2 < nr:
                cf, r, J, nr, ok = cf + alpha * step, r2, J2, n2, True
                break
            alpha *= 0.5
        if not ok:
            break
    ctrl = build(cf)
    return ctrl, float(nr)


def _solve_gap(s, k, data, eta_schedule, N_schedule, restarts, seed, tol):
    a, b = data.times[k], data.times[k + 1]
    fa, fb = data.points[k], data.points[k + 1]
    ua, ub = data.controls[k], data.controls[k + 1]
    etas = eta_schedule(b - a, float(np.linalg.norm(ub - ua))) if callable(eta_schedule) \
        else list(eta_schedule)
    seeds = spawn_seeds([seed, k], max(restarts, 1))
    best = (np.inf, None)
    tried = {}
    for eta in etas:
        for N in N_schedule:
            for r in range(restarts + 1):
                if r == 0:
                    key = (N, 0)
                    if key not in tried:
                        tried[key] = _safe_gap(s, a, b, fa, fb, ua, ub, np.zeros((N - 1) * s.rank), N, tol)
                    ctrl, res = tried[key]
                else:
                    rng = np.random.default_rng(seeds[r - 1].spawn(1)[0].generate_state(1)[0] + N)
                    c = rng.normal(size=(N - 1, s.rank))
                    c *= (eta / 4) / max(np.sum(np.linalg.norm(c, axis=1)), 1e-300)
                    ctrl, res = _safe_gap(s, a, b, fa, fb, ua, ub, c.ravel(), N, tol)
                if ctrl is None:
                    continue
                sup = float(np.max(np.linalg.norm(ctrl(np.linspace(a, b, 513)) - ua, axis=1)))
                if res < best[0]:
                    best = (res, ctrl)
                if res < tol and sup <= eta:
                    return ctrl, {"gap": [float(a), float(b)], "eta": eta, "N": N, "restart": r,
                                  "endpoint_error": res, "sup_norm": sup}
    raise ExtensionError(f"gap [{a:.6g}, {b:.6g}] unsolved within eta <= {etas[-1]:.3g}",
                         (float(a), float(b)), float(best[0]))


def _safe_gap(*args):
    try:
        return _gap_solve(*args)
    except (IntegrationError, np.linalg.LinAlgError):
        return None, np.inf


def extend(s: FrameLike, data: WhitneyData, eta_schedule=default_eta_schedule,
           N_schedule=(6, 10), seed: int = 0, restarts: int = 4, ray: float = 1.0,
           tol: float = 1e-10) -> ExtensionResult:
    """Horizontal curve through the data with continuous control.

    Each gap ``[a, b]`` gets ``u(a) + v(t)`` where ``v`` is a sine-basis control with
    ``v(a) = 0`` and ``v(b) = u(b) - u(a)``; its free coefficients are found by
    min-norm Gauss-Newton shooting to ``f(b)``. Outside the data the curve follows
    constant-control rays of length ``ray``.
    """
    data.check(s)
    if data.n == 0:
        raise ValueError("extension needs at least one data point")
    results = parallel_map(
        lambda k: _solve_gap(s, k, data, eta_schedule, N_schedule, restarts, seed, tol),
        range(data.n - 1))
    segments = []
    t_first, t_last = data.times[0], data.times[-1]
    if ray > 0:
        c = Control.constant(data.controls[0], t_first - ray, t_first)
        tr = chron_exp(s, c, data.points[0], 1e-12, 1e-14, reverse=True)
        # reverse trajectory runs backward; re-integrate forward from its start for dense output
        start = tr.endpoint
        fwd = chron_exp(s, c, start, 1e-12, 1e-14)
        segments.append(Segment("ray", t_first - ray, t_first, c, fwd, {}))
    gaps = []
    for k, (ctrl, diag) in enumerate(results):
        traj = chron_exp(s, ctrl, data.points[k], 1e-12, 1e-14)
        segments.append(Segment("gap", data.times[k], data.times[k + 1], ctrl, traj, diag))
        gaps.append(diag)
    if ray > 0:
        c = Control.constant(data.controls[-1], t_last, t_last + ray)
        segments.append(Segment("ray", t_last, t_last + ray, c,
                                chron_exp(s, c, data.points[-1], 1e-12, 1e-14), {}))
    if not segments:
        c = Control.constant(data.controls[0], t_first, t_first + 1e-12)
        segments.append(Segment("point", t_first, t_first, c,
                                chron_exp(s, c, data.points[0]), {}))
    return ExtensionResult(segments, gaps, data)


# ---------------------------------------------------------------------------
# Lusin selection

@dataclass
class LusinResult:
    times: np.ndarray
    kept: np.ndarray
    measure_kept: float
    measure_discarded: float
    tau: float
    h0: float
    extension: ExtensionResult | None
    curve: Trajectory
    data: WhitneyData | None
    history: list

    def to_dict(self) -> dict:
        return {
            "measure_kept": self.measure_kept,
            "measure_discarded": self.measure_discarded,
            "tau": self.tau,
            "h0": self.h0,
            "kept_times": self.times[self.kept].tolist(),
            "history": self.history,
            "extension": None if self.extension is None else self.extension.to_dict(),
        }


def lusin(s: FrameLike, u_ac: Control, p0, eps: float, grid: int = 129, tau0: float = 0.05,
          h0_frac: float = 0.125, levels: int = 4, max_rounds: int = 12, seed: int = 0,
          extend_kw: dict | None = None) -> LusinResult:
    """Keep grid times whose difference quotients stay below ``tau`` for ``h <= h0``.

    ``f_h(t) = d(g(t+h), e^{h X_u(t)} g(t)) / h`` over ``h = h0, h0/2, ...``; each
    round that discards too much halves ``h0`` and raises ``tau`` by half until the
    discarded grid measure drops below ``eps``. Then the kept samples are extended.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    a, b = u_ac.t0, u_ac.t1
    curve = chron_exp(s, u_ac, p0, 1e-12, 1e-14)
    times = np.linspace(a, b, grid)
    cell = (b - a) / (grid - 1)
    weights = np.full(grid, cell)
    weights[0] = weights[-1] = cell / 2
    pts = curve(times)
    ctl = u_ac(times)
    budget = DistanceBudget(n_knots=8, starts=2, max_iter=100, zero_tol=1e-11, ftol=1e-12)
    cache: dict = {}

    def f_h(i, h):
        key = (i, h)
        if key not in cache:
            t = times[i]
            if t + h > b + 1e-15:
                cache[key] = 0.0
            else:
                pred = flow_const(s, ctl[i], h, pts[i], 1e-12, 1e-14)
                try:
                    est = estimate_dsr(s, curve(t + h), pred, budget, mode="feasible")
                    cache[key] = est.upper / h
                except (DistanceError, IntegrationError):
                    cache[key] = np.inf
        return cache[key]

    tau, h0 = tau0, h0_frac * (b - a)
    history = []
    kept = np.ones(grid, dtype=bool)
    discarded = 0.0
    for _ in range(max_rounds):
        hs = [h0 / 2 ** k for k in range(levels)]
        bad = np.zeros(grid, dtype=bool)
        for i in range(grid):
            for h in hs:
                if f_h(i, h) > tau:
                    bad[i] = True
                    break
        discarded = float(np.sum(weights[bad]))
        history.append({"tau": tau, "h0": h0, "discarded": discarded})
        kept = ~bad
        if discarded < eps:
            break
        tau *= 1.5
        h0 /= 2
    else:
        raise ExtensionError(f"discarded measure {discarded:.4g} stays above eps={eps}",
                             (float(a), float(b)), discarded)
    measure_kept = float(np.sum(weights[kept]))
    if not kept.any():
        data = None
        c = Control.constant(np.zeros(s.rank), a, b)
        ext = ExtensionResult([Segment("point", a, b, c, chron_exp(s, c, p0), {})], [], None)
    else:
        data = WhitneyData(times[kept], pts[kept], ctl[kept])
        ext = extend(s, data, seed=seed, **(extend_kw or {}))
    return LusinResult(times, kept, measure_kept, discarded, tau, h0, ext, curve, data, history)
