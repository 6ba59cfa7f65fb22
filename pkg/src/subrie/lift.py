"""Lifts (submersions intertwining two frames), lifting Whitney data, projection."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .endpoint import DistanceBudget, DistanceError, estimate_dsr
from .flow import Control, chron_exp, flow_const
from .structure import SRStructure, StructureError, flag_at, grushin, heisenberg, load_structure, \
    parse_structure
from .symbolic import Multinomial, VectorField, parse_poly
from .whitney import WhitneyData


@dataclass(eq=False)
class LiftSpec:
    upstairs: SRStructure
    downstairs: SRStructure
    psi: tuple
    name: str = "lift"

    def __post_init__(self):
        self.psi = tuple(self.psi)
        if self.upstairs.rank != self.downstairs.rank:
            raise StructureError("upstairs and downstairs need the same rank")
        if len(self.psi) != self.downstairs.dim:
            raise StructureError("psi needs one component per downstairs coordinate")
        if any(c.dim != self.upstairs.dim for c in self.psi):
            raise StructureError("psi components must be polynomials in the upstairs variables")

    def apply(self, x) -> np.ndarray:
        """``psi`` at one point or at each row of an array."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return np.array([c.eval(x) for c in self.psi])
        return np.array([[c.eval(row) for c in self.psi] for row in x])

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([[c.partial(j + 1).eval(x) for j in range(self.upstairs.dim)]
                         for c in self.psi])

    def preimage(self, y, iters: int = 50) -> np.ndarray:
        """A small-norm solution of ``psi(x) = y`` by Gauss-Newton from the origin."""
        y = np.asarray(y, dtype=float)
        x = np.zeros(self.upstairs.dim)
        for _ in range(iters):
            r = self.apply(x) - y
            if np.linalg.norm(r) < 1e-14:
                break
            x = x + np.linalg.lstsq(self.jacobian(x), -r, rcond=None)[0]
        return x


@dataclass
class LiftCheck:
    ok: bool
    residuals: list
    jacobian_ranks: list
    exact: bool

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "exact": self.exact,
            "residuals": [[str(c) for c in r] for r in self.residuals],
            "min_jacobian_rank": min(self.jacobian_ranks) if self.jacobian_ranks else None,
        }


def pushforward_poly(ls: LiftSpec, X: VectorField) -> list[Multinomial]:
    """Components of ``D psi . X`` as polynomials in the upstairs variables."""
    out = []
    for c in ls.psi:
        acc = Multinomial.zero(ls.upstairs.dim)
        for j in range(ls.upstairs.dim):
            acc = acc + c.partial(j + 1) * X.components[j]
        out.append(acc)
    return out


def check_lift(ls: LiftSpec, tol: float = 1e-9, samples: int = 5, seed: int = 0) -> LiftCheck:
    """Exact check of ``psi_* Xtilde_i == X_i o psi`` plus a sampled submersion check."""
    residuals = []
    exact = True
    for Xu, Xd in zip(ls.upstairs.fields, ls.downstairs.fields):
        pushed = pushforward_poly(ls, Xu)
        composed = [c.compose(ls.psi) for c in Xd.components]
        res = [a - b for a, b in zip(pushed, composed)]
        residuals.append(res)
        exact = exact and all(r.is_zero() for r in res)
    box = ls.upstairs.domain or tuple((-1.0, 1.0) for _ in range(ls.upstairs.dim))
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    rng = np.random.default_rng(seed)
    ranks = []
    for _ in range(samples):
        x = lo + (hi - lo) * rng.random(ls.upstairs.dim)
        sv = np.linalg.svd(ls.jacobian(x), compute_uv=False)
        ranks.append(int(np.sum(sv > tol * max(sv.max(), 1.0))))
    ok = exact and all(r == ls.downstairs.dim for r in ranks)
    return LiftCheck(ok, residuals, ranks, exact)


def heisenberg_to_grushin() -> LiftSpec:
    up = heisenberg()
    psi = (parse_poly("x1", 3), parse_poly("x3 + 1/2*x1*x2", 3))
    return LiftSpec(up, grushin(), psi, "heisenberg->grushin")


BUILTIN_LIFTS = {"heisenberg->grushin": heisenberg_to_grushin}


def parse_liftspec(text: str) -> LiftSpec:
    """Blocks separated by ``[upstairs]`` / ``[downstairs]`` headers plus ``psi<i> =`` lines.

    A block may be a built-in name on a single ``builtin = <name>`` line.
    """
    blocks: dict[str, list[str]] = {"upstairs": [], "downstairs": [], "psi": []}
    current = None
    name = "lift"
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        hm = re.fullmatch(r"\[(\w+)\]", line)
        if hm:
            current = hm.group(1)
            if current not in ("upstairs", "downstairs"):
                raise StructureError(f"unknown block [{current}]")
            continue
        if re.match(r"psi\d+\s*=", line):
            blocks["psi"].append(line)
            continue
        if current is None:
            key, _, value = line.partition("=")
            if key.strip() == "name":
                name = value.strip()
                continue
            raise StructureError(f"line outside a block: {raw!r}")
        blocks[current].append(line)

    def build(lines):
        if len(lines) == 1 and lines[0].startswith("builtin"):
            return load_structure(lines[0].split("=", 1)[1].strip())
        return parse_structure("\n".join(lines))

    up = build(blocks["upstairs"])
    down = build(blocks["downstairs"])
    comps = {}
    for line in blocks["psi"]:
        key, value = line.split("=", 1)
        comps[int(key.strip()[3:])] = parse_poly(value.strip(), up.dim)
    if sorted(comps) != list(range(1, down.dim + 1)):
        raise StructureError(f"expected psi1..psi{down.dim}")
    return LiftSpec(up, down, tuple(comps[k] for k in sorted(comps)), name)


def load_lift(spec: str) -> LiftSpec:
    if spec in BUILTIN_LIFTS:
        return BUILTIN_LIFTS[spec]()
    with open(spec, encoding="utf-8") as fh:
        return parse_liftspec(fh.read())


# ---------------------------------------------------------------------------
# lifting Whitney data

@dataclass
class LiftedData:
    data: WhitneyData
    M: float
    gaps: list
    projection_error: float
    segments: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"M": self.M, "projection_error": self.projection_error, "gaps": self.gaps}


def lift_whitney_data(ls: LiftSpec, data: WhitneyData, p0=None, budget: DistanceBudget | None = None,
                      rtol: float = 1e-12, atol: float = 1e-14, tol: float = 1e-8) -> LiftedData:
    """Upstairs data over ``data``: flow the lifted frame with a control built gap by gap.

    On a gap ``[a, b]`` with defect ``d = d(e^{(b-a)X_u(a)} f(a), f(b))`` the control is
    ``u(a)`` sped up to finish that flow by ``b - d/M``, then a correction of length
    ``d`` traversed in time ``d/M``, where ``M`` is twice the largest ``d / (b - a)``.
    Defects are upper estimates from realized controls.
    """
    check = check_lift(ls)
    if not check.ok:
        raise StructureError("psi is not a lift of the downstairs frame")
    down = ls.downstairs
    data.check(down)
    budget = budget or DistanceBudget(n_knots=12, starts=2, zero_tol=1e-12)
    if p0 is None:
        p0 = ls.preimage(data.points[0])
    p0 = np.asarray(p0, dtype=float)
    if np.linalg.norm(ls.apply(p0) - data.points[0]) > tol:
        raise ValueError("psi(p0) does not match the first data point")
    gaps = []
    for k in range(data.n - 1):
        a, b = data.times[k], data.times[k + 1]
        pred = flow_const(down, data.controls[k], b - a, data.points[k], rtol, atol)
        try:
            est = estimate_dsr(down, pred, data.points[k + 1], budget)
        except DistanceError as exc:
            raise DistanceError(f"gap [{a:.6g}, {b:.6g}]: {exc}", exc.best_gap) from exc
        gaps.append((a, b, est))
    ratios = [g[2].upper / (g[1] - g[0]) for g in gaps]
    M = 2.0 * max(ratios) if ratios else 0.0
    x = p0
    pts = [x]
    diag = []
    segments = []
    for k, (a, b, est) in enumerate(gaps):
        u = data.controls[k]
        dist = est.upper
        tc = (dist / M) if M > 0 and dist > 0 else 0.0
        split = b - tc
        c1 = Control.constant(u * (b - a) / (split - a), a, split)
        x = chron_exp(ls.upstairs, c1, x, rtol, atol).endpoint
        segments.append(("flow", a, split, c1))
        if tc > 0:
            c2 = Control.sampled(est.control.values / tc, split, b)
            x = chron_exp(ls.upstairs, c2, x, rtol, atol).endpoint
            segments.append(("correction", split, b, c2))
            diag.append({"gap": [float(a), float(b)], "defect": dist, "correction_time": tc,
                         "correction_sup": float(np.max(np.linalg.norm(c2.values, axis=1)))})
        else:
            diag.append({"gap": [float(a), float(b)], "defect": dist, "correction_time": 0.0,
                         "correction_sup": 0.0})
        pts.append(x)
    pts = np.array(pts)
    up = WhitneyData(data.times, pts, data.controls)
    err = float(np.max(np.linalg.norm(ls.apply(pts) - data.points, axis=1)))
    return LiftedData(up, M, diag, err, segments)


class ProjectedTrajectory:
    """``psi`` applied to an upstairs trajectory; driven by the same control."""

    def __init__(self, ls: LiftSpec, traj):
        self.ls = ls
        self.upstairs = traj
        self.control = traj.control

    def __call__(self, t) -> np.ndarray:
        return self.ls.apply(self.upstairs(t))

    def horizontality_residual(self, times, eps: float = 1e-6) -> float:
        """Largest ``|gamma' - X_u(gamma)|`` by central differences at interior times."""
        worst = 0.0
        for t in np.atleast_1d(times):
            g = self(t)
            dg = (self(t + eps) - self(t - eps)) / (2 * eps)
            u = self.control(t)
            v = sum(ui * X.eval(g) for ui, X in zip(u, self.ls.downstairs.fields))
            worst = max(worst, float(np.linalg.norm(dg - v)))
        return worst


def project_curve(ls: LiftSpec, traj) -> ProjectedTrajectory:
    return ProjectedTrajectory(ls, traj)


@dataclass
class ProjectionCheck:
    d_down_upper: float
    d_up_upper: float
    d_down_lower: float | None
    violation: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def project_distance_check(ls: LiftSpec, p, q, budget: DistanceBudget | None = None) -> ProjectionCheck:
    """Compare ``d(psi p, psi q)`` with ``d(p, q)``; flag only a certain violation.

    A violation needs the downstairs lower proxy (pseudo-norm over 3, available at
    regular points only) to exceed the upstairs upper estimate.
    """
    from .nilpotent import privileged_chart, pseudo_norm
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    up = estimate_dsr(ls.upstairs, p, q, budget)
    pd, qd = ls.apply(p), ls.apply(q)
    down = estimate_dsr(ls.downstairs, pd, qd, budget)
    lower = None
    if flag_at(ls.downstairs, pd).regular and not np.array_equal(pd, qd):
        chart = privileged_chart(ls.downstairs, pd)
        lower = pseudo_norm(chart, chart.to_chart(qd)) / 3.0
    elif np.array_equal(pd, qd):
        lower = 0.0
    violation = lower is not None and lower > up.upper
    return ProjectionCheck(down.upper, up.upper, lower, bool(violation))
