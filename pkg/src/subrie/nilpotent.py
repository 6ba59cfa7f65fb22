"""Privileged coordinates, dilations, pseudo-norms and nilpotent approximation."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .structure import (DEFAULT_MAX_DEPTH, DEFAULT_RANK_TOL, FlagReport, FrameLike, SRStructure,
                        StructureError, flag_at, format_structure, numeric_rank, grid_points)
from .symbolic import Multinomial, VectorField, as_fraction


class ChartError(StructureError):
    def __init__(self, message: str, coordinate: int | None = None):
        super().__init__(message)
        self.coordinate = coordinate


# ---------------------------------------------------------------------------
# exact linear algebra

def frac_inverse(A: Sequence[Sequence[Fraction]]) -> list[list[Fraction]]:
    n = len(A)
    M = [[Fraction(x) for x in row] + [Fraction(int(i == j)) for j in range(n)]
         for i, row in enumerate(A)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            raise ChartError("adapted frame matrix is singular")
        M[col], M[piv] = M[piv], M[col]
        inv = 1 / M[col][col]
        M[col] = [x * inv for x in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [row[n:] for row in M]


def _linear_polys(dim: int, shift, mat) -> list[Multinomial]:
    """Components ``shift_l + sum_r mat[l][r] y_r``."""
    out = []
    for l in range(len(mat)):
        p = Multinomial.const(dim, shift[l]) if shift is not None else Multinomial.zero(dim)
        for r, c in enumerate(mat[l]):
            if c:
                p = p + Multinomial.var(dim, r + 1) * c
        out.append(p)
    return out


def push_field(X: VectorField, forward: Sequence[Multinomial],
               inverse: Sequence[Multinomial]) -> VectorField:
    """Exact pushforward ``(DPhi X) o Phi^{-1}`` for polynomial ``Phi`` with polynomial inverse."""
    d = X.dim
    comp_inv = [c.compose(inverse) for c in X.components]
    out = []
    for j in range(d):
        acc = Multinomial.zero(d)
        for k in range(d):
            if comp_inv[k]:
                dphi = forward[j].partial(k + 1)
                if dphi:
                    acc = acc + dphi.compose(inverse) * comp_inv[k]
        out.append(acc)
    return VectorField(out)


# ---------------------------------------------------------------------------
# charts

@dataclass
class PrivilegedChart:
    base: tuple
    weights: tuple[int, ...]
    forward: tuple[Multinomial, ...]
    inverse: tuple[Multinomial, ...]
    provenance: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.weights)

    def to_chart(self, x) -> np.ndarray:
        """``Phi_p(x)``."""
        x = np.asarray(x, dtype=float)
        return np.array([f.eval(x) for f in self.forward])

    def from_chart(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return np.array([f.eval(y) for f in self.inverse])

    def check_identity(self) -> bool:
        d = self.dim
        comp = [f.compose(list(self.inverse)) for f in self.forward]
        return all(c == Multinomial.var(d, i + 1) for i, c in enumerate(comp))

    def to_json(self) -> dict:
        return {
            "base": [float(x) for x in self.base],
            "weights": list(self.weights),
            "forward": [str(f) for f in self.forward],
            "inverse": [str(f) for f in self.inverse],
            "provenance": self.provenance,
        }


def _exact_point(p) -> list[Fraction]:
    return [as_fraction(x) for x in p]


def adapted_words(s: FrameLike, p, max_depth: int = DEFAULT_MAX_DEPTH,
                  tol: float = DEFAULT_RANK_TOL) -> list[tuple[int, ...]]:
    """Greedy adapted basis: words by (length, lexicographic), kept when the rank grows."""
    d = s.dim
    chosen: list[tuple[int, ...]] = []
    rows: list[np.ndarray] = []
    for k in range(1, max_depth + 1):
        for w in s.words(k):
            cand = rows + [s.word_field(w).eval(p)]
            if numeric_rank(np.array(cand), tol) > len(rows):
                rows = cand
                chosen.append(w)
                if len(chosen) == d:
                    return chosen
    raise ChartError(f"rank stagnated at {len(chosen)} < {d} within depth {max_depth}")


def _apply_ops(fields: Sequence[VectorField], alpha: Sequence[int], f: Multinomial) -> Multinomial:
    """``Y_1^{a_1} ... Y_k^{a_k} f``; the rightmost operator acts first."""
    g = f
    for idx in range(len(alpha) - 1, -1, -1):
        for _ in range(alpha[idx]):
            g = fields[idx].apply(g)
            if not g:
                return g
    return g


def _multi_indices(n: int, total: int):
    if n == 0:
        if total == 0:
            yield ()
        return
    for combo in itertools.combinations_with_replacement(range(n), total):
        a = [0] * n
        for c in combo:
            a[c] += 1
        yield tuple(a)


def privileged_chart(s: FrameLike, p, max_depth: int = DEFAULT_MAX_DEPTH,
                     tol: float = DEFAULT_RANK_TOL) -> PrivilegedChart:
    """Privileged coordinates at ``p`` by triangular polynomial corrections."""
    d = s.dim
    p_float = tuple(float(x) for x in p)
    words = adapted_words(s, p_float, max_depth, tol)
    weights = tuple(len(w) for w in words)
    pe = _exact_point(p)
    # columns of A are the adapted fields at p
    cols = [s.word_field(w).eval_exact(pe) for w in words]
    A = [[cols[c][r] for c in range(d)] for r in range(d)]
    Ainv = frac_inverse(A)
    x_of_y = _linear_polys(d, pe, A)
    neg_shift = [-sum(Ainv[l][r] * pe[r] for r in range(d)) for l in range(d)]
    y_of_x = _linear_polys(d, neg_shift, Ainv)

    def to_y(X: VectorField) -> VectorField:
        comps = [c.compose(x_of_y) for c in X.components]
        out = []
        for l in range(d):
            acc = Multinomial.zero(d)
            for r in range(d):
                if Ainv[l][r] and comps[r]:
                    acc = acc + comps[r] * Ainv[l][r]
            out.append(acc)
        return VectorField(out)

    Y = [to_y(s.word_field(w)) for w in words]
    corrections: dict[int, Multinomial] = {}
    log = []
    for j in range(d):
        wj = weights[j]
        H = Multinomial.zero(d)
        yj = Multinomial.var(d, j + 1)
        for k in range(2, wj):
            target = yj - H
            hk = Multinomial.zero(d)
            for alpha in _multi_indices(j, k):
                if sum(a * w for a, w in zip(alpha, weights)) >= wj:
                    continue
                val = _apply_ops(Y[:j], alpha, target).constant_term()
                if val:
                    mono = Multinomial(d, {tuple(alpha) + (0,) * (d - j): 1})
                    denom = math.prod(math.factorial(a) for a in alpha)
                    hk = hk + mono * (val / denom)
            H = H + hk
        if H:
            corrections[j] = H
            log.append({"coordinate": j + 1, "correction": str(H)})
    # z_j = y_j - H_j(y) ; inverse y_j = z_j + H_j(y_1(z), ..)
    z_of_y = [Multinomial.var(d, j + 1) - corrections.get(j, Multinomial.zero(d)) for j in range(d)]
    y_of_z: list[Multinomial] = []
    for j in range(d):
        H = corrections.get(j)
        yj = Multinomial.var(d, j + 1)
        if H is not None:
            yj = yj + H.compose(y_of_z + [Multinomial.var(d, i + 1) for i in range(j, d)])
        y_of_z.append(yj)
    forward = tuple(z.compose(y_of_x) for z in z_of_y)
    inverse = tuple(x.compose(y_of_z) for x in x_of_y)
    provenance = {
        "words": [[i + 1 for i in w] for w in words],
        "linear_change": [[str(c) for c in row] for row in A],
        "corrections": log,
        "rank_tolerance": tol,
        "algorithm": "triangular polynomial corrections in linearly adapted coordinates",
    }
    chart = PrivilegedChart(p_float, weights, forward, inverse, provenance)
    if any(f.eval_exact(pe) != 0 for f in forward):
        raise ChartError("forward map does not send the base point to 0")
    if not chart.check_identity():
        raise ChartError("forward and inverse maps are not mutually inverse")
    # order certificate on the pushed frame
    pushed = [push_field(X, forward, inverse) for X in s.fields]
    for j in range(d):
        for Xz in pushed:
            if Xz.components[j].weighted_order(weights) < weights[j] - 1:
                raise ChartError(f"coordinate {j + 1} is not privileged", j + 1)
    chart.provenance["order_certificate"] = "coefficient j has weighted order >= w_j - 1"
    return chart


def dilate(chart_or_weights, lam: float, y) -> np.ndarray:
    """``(delta_lam y)_i = lam^{w_i} y_i``."""
    if lam <= 0:
        raise ValueError("dilation factor must be positive")
    w = np.asarray(_weights(chart_or_weights), dtype=float)
    return np.asarray(y, dtype=float) * lam ** w


def pseudo_norm(chart_or_weights, y) -> float:
    w = np.asarray(_weights(chart_or_weights), dtype=float)
    return float(np.sum(np.abs(np.asarray(y, dtype=float)) ** (1.0 / w)))


def _weights(obj):
    return obj.weights if hasattr(obj, "weights") else obj


# ---------------------------------------------------------------------------
# nilpotent approximation

class NilpotentFrame(FrameLike):
    """Weighted-homogeneous frame in privileged coordinates; integrable like a structure."""

    def __init__(self, chart: PrivilegedChart, fields: Sequence[VectorField],
                 full: Sequence[VectorField], name: str = "nilpotent"):
        self.chart = chart
        self.fields = tuple(fields)
        self.full = tuple(full)
        self.name = name

    @property
    def weights(self) -> tuple[int, ...]:
        return self.chart.weights

    @property
    def step(self) -> int:
        return max(self.chart.weights)

    def as_structure(self) -> SRStructure:
        return SRStructure(self.fields, None, self.name)

    def is_homogeneous(self) -> bool:
        w = self.weights
        for X in self.fields:
            for j, c in enumerate(X.components):
                if c and any(sum(a * b for a, b in zip(e, w)) != w[j] - 1 for e in c.terms):
                    return False
        return True

    def dilation_invariant(self, lam) -> bool:
        """``lam^{1-w_j} Xhat_j(delta_lam y) == Xhat_j(y)`` exactly."""
        lam = as_fraction(lam)
        w = self.weights
        factors = [lam ** wi for wi in w]
        for X in self.fields:
            for j, c in enumerate(X.components):
                if c.scale_variables(factors) * (lam ** (1 - w[j])) != c:
                    return False
        return True

    def serialize(self) -> str:
        return format_structure(self.as_structure()) + "# provenance\n" + "\n".join(
            "# " + line for line in json.dumps(self.chart.to_json(), indent=1).splitlines()) + "\n"


def nilpotentize(s: FrameLike, chart: PrivilegedChart) -> NilpotentFrame:
    w = chart.weights
    full = [push_field(X, chart.forward, chart.inverse) for X in s.fields]
    hat = []
    for X in full:
        comps = []
        for j, c in enumerate(X.components):
            if c.weighted_order(w) < w[j] - 1:
                raise ChartError(f"coefficient {j + 1} has order below {w[j] - 1}", j + 1)
            comps.append(c.weighted_part(w, w[j] - 1))
        hat.append(VectorField(comps))
    name = f"{getattr(s, 'name', 'frame')}-nilpotent"
    return NilpotentFrame(chart, hat, full, name)


def nilpotent_at(s: FrameLike, p, **kw) -> NilpotentFrame:
    return nilpotentize(s, privileged_chart(s, p, **kw))


@dataclass
class ConvergenceTable:
    lambdas: list[float]
    errors: list[float]
    slope: float | None
    verdict: str | None

    def to_dict(self) -> dict:
        return {"lambda": self.lambdas, "error": self.errors, "slope": self.slope,
                "verdict": self.verdict}


def check_convergence(s: FrameLike, chart: PrivilegedChart, nf: NilpotentFrame,
                      lambdas: Sequence[float], box=None, grid: int = 5,
                      slack: float = 0.05) -> ConvergenceTable:
    """Sup error of ``lam^{1-w_j} X_j(delta_lam y)`` against ``Xhat_j(y)`` over a box."""
    lambdas = [float(x) for x in lambdas]
    if any(x <= 0 for x in lambdas) or any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda list must be positive and decreasing")
    d = chart.dim
    box = box or tuple((-1.0, 1.0) for _ in range(d))
    pts = grid_points(box, grid)
    w = np.asarray(chart.weights, dtype=float)
    hat_vals = np.array([[X.eval(y) for X in nf.fields] for y in pts])
    errors = []
    for lam in lambdas:
        scale = lam ** (1.0 - w)
        vals = np.array([[X.eval(y * lam ** w) * scale for X in nf.full] for y in pts])
        errors.append(float(np.max(np.abs(vals - hat_vals))))
    slope = None
    verdict = None
    if len(lambdas) > 1:
        ok = all(b <= a * (1 + slack) + 1e-14 for a, b in zip(errors, errors[1:]))
        positive = [(l, e) for l, e in zip(lambdas, errors) if e > 0]
        if len(positive) >= 2:
            lx = np.log([l for l, _ in positive])
            ly = np.log([e for _, e in positive])
            slope = float(np.polyfit(lx, ly, 1)[0])
        verdict = "nonincreasing" if ok else "not-monotone"
    return ConvergenceTable(lambdas, errors, slope, verdict)


def base_flag(s: FrameLike, chart: PrivilegedChart) -> FlagReport:
    return flag_at(s, chart.base, probe=False)


@dataclass
class BallBoxEstimate:
    C_est: float
    eps_est: float
    ratios: list[float]
    samples: list[list[float]]
    label: str = "empirical constants from upper distance estimates"

    def to_dict(self) -> dict:
        return {"C_est": self.C_est, "eps_est": self.eps_est, "ratios": self.ratios,
                "samples": self.samples, "label": self.label}


def radial_samples(chart: PrivilegedChart, radii: Sequence[float], directions: int = 4,
                   seed: int = 0) -> list[np.ndarray]:
    """Points ``Phi^{-1}(delta_r e)`` for unit pseudo-norm directions ``e``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(directions):
        e = rng.normal(size=chart.dim)
        e = e / pseudo_norm(chart, e) ** 1.0
        # rescale so that the pseudo-norm is one
        lo, hi = 0.0, 10.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if pseudo_norm(chart, dilate(chart, mid, e)) < 1:
                lo = mid
            else:
                hi = mid
        e = dilate(chart, lo, e)
        for r in radii:
            out.append(chart.from_chart(dilate(chart, r, e)))
    return out


def ball_box_calibrate(s: FrameLike, chart: PrivilegedChart, samples, dsr_budget=None) -> BallBoxEstimate:
    from .endpoint import estimate_dsr

    samples = [np.asarray(q, dtype=float) for q in samples]
    if not samples:
        raise ValueError("ball-box calibration needs at least one sample")
    ratios, dists = [], []
    for q in samples:
        est = estimate_dsr(s, chart.base, q, dsr_budget)
        pn = pseudo_norm(chart, chart.to_chart(q))
        if pn == 0 or est.upper == 0:
            continue
        ratios.append(est.upper / pn)
        dists.append(est.upper)
    if not ratios:
        raise ValueError("all samples coincide with the base point")
    C = max(max(ratios), max(1 / r for r in ratios))
    return BallBoxEstimate(float(C), float(max(dists)), [float(r) for r in ratios],
                           [q.tolist() for q in samples])
