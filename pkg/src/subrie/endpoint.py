"""Endpoint maps, strong pliability certificates, bracket conditions and distances."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls

from . import _kernels as K
from .config import parallel_map, spawn_seeds
from .flow import Control, IntegrationError, endpoint, endpoint_sensitivity, flow_const
from .structure import FrameLike, flag_at, numeric_rank
from .symbolic import VectorField, lie_bracket

INCONCLUSIVE_NOTE = ("no certificate found; this does not show that the pair fails to be "
                     "strongly pliable")


@dataclass
class EndpointProblem:
    frame: FrameLike
    u: np.ndarray
    base: np.ndarray | None = None
    N: int = 6
    horizon: float = 1.0
    rtol: float = 1e-12
    atol: float = 1e-13

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.base is None:
            self.base = np.zeros(self.frame.dim)
        self.base = np.asarray(self.base, dtype=float)
        if self.N < 1:
            raise ValueError("basis size must be at least 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.u.shape != (self.frame.rank,):
            raise ValueError("offset u has the wrong length")

    @property
    def d(self) -> int:
        return self.frame.dim

    @property
    def m(self) -> int:
        return self.frame.rank

    def control(self, coeffs) -> Control:
        """Perturbation ``v`` as a basis control (``v(0) = 0``)."""
        return Control.basis(np.asarray(coeffs, dtype=float).reshape(-1, self.m),
                             t0=0.0, t1=self.horizon)


def _full(prob: EndpointProblem, v: Control) -> Control:
    return v.with_offset(prob.u + v.offset)


def endpoint_map(prob: EndpointProblem, v: Control):
    """``(endpoint of X_{u+v} from the base point, v(1))``."""
    pt = endpoint(prob.frame, _full(prob, v), prob.base, prob.rtol, prob.atol)
    return pt, v(v.t1)


def endpoint_differential(prob: EndpointProblem, v: Control) -> np.ndarray:
    """``(d+m) x (N m)`` Jacobian via the variational equation; column ``p*m + i``."""
    _, S = endpoint_sensitivity(prob.frame, _full(prob, v), prob.base, prob.rtol, prob.atol)
    phi1 = v.basis_matrix(v.t1)[0]
    if v.kind == "basis":
        phi1 = np.round(phi1, 12)
    m = prob.m
    bottom = np.zeros((m, v.n_basis * m))
    for p, val in enumerate(phi1):
        for i in range(m):
            bottom[i, p * m + i] = val
    return np.vstack([S, bottom])


# ---------------------------------------------------------------------------
# strong pliability

@dataclass
class SubmersionCertificate:
    coeffs: np.ndarray
    sup_norm: float
    residual: float
    singular_values: np.ndarray
    N: int
    verdict: str
    eta: float
    submersion_tol: float
    residual_tol: float
    u: np.ndarray
    seed: int | None = None
    restart: int | None = None
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.verdict == "submersion"

    @property
    def ratio(self) -> float:
        s = self.singular_values
        return float(s[-1] / s[0]) if s.size and s[0] > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "u": self.u.tolist(),
            "basis_size": self.N,
            "coeffs": self.coeffs.tolist(),
            "sup_norm": self.sup_norm,
            "residual": self.residual,
            "singular_values": self.singular_values.tolist(),
            "sigma_ratio": self.ratio,
            "eta": self.eta,
            "submersion_tol": self.submersion_tol,
            "residual_tol": self.residual_tol,
            "seed": self.seed,
            "restart": self.restart,
            "notes": list(self.notes),
        }


@dataclass
class PliabilityFailure:
    best_sigma_ratio: float
    attempts: list
    eta: float
    note: str = INCONCLUSIVE_NOTE
    verdict: str = "inconclusive"
    ok: bool = False

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "note": self.note, "eta": self.eta,
                "best_sigma_ratio": self.best_sigma_ratio, "attempts": self.attempts}


def certify(prob: EndpointProblem, coeffs, target, eta: float, submersion_tol: float = 1e-8,
            residual_tol: float = 1e-9) -> SubmersionCertificate:
    """Evaluate the certificate fields at a given perturbation."""
    coeffs = np.asarray(coeffs, dtype=float).reshape(-1, prob.m)
    v = prob.control(coeffs)
    pt, v1 = endpoint_map(prob, v)
    res = float(np.linalg.norm(np.concatenate([pt - target, v1])))
    D = endpoint_differential(prob, v)
    sv = np.linalg.svd(D, compute_uv=False)
    k = prob.d + prob.m
    if sv.size < k:
        sv = np.concatenate([sv, np.zeros(k - sv.size)])
    sv = sv[:k]
    sup = v.sup_norm()
    ok = sv[0] > 0 and sv[-1] > submersion_tol * sv[0] and res < residual_tol and sup < eta
    return SubmersionCertificate(coeffs, sup, res, sv, coeffs.shape[0],
                                 "submersion" if ok else "not-certified", eta, submersion_tol,
                                 residual_tol, prob.u.copy())


def _project(prob: EndpointProblem, c_free: np.ndarray, target, max_iter: int = 40,
             tol: float = 1e-13) -> tuple[np.ndarray, float]:
    """Gauss-Newton min-norm projection of the free rows onto the level set."""
    m = prob.m

    def pack(cf):
        return np.vstack([np.zeros((1, m)), cf.reshape(-1, m)])

    def eval_res(cf):
        pt, S = endpoint_sensitivity(prob.frame, _full(prob, prob.control(pack(cf))), prob.base,
                                     prob.rtol, prob.atol)
        return pt - target, S[:, m:]

    cf = c_free.copy()
    r, J = eval_res(cf)
    nr = np.linalg.norm(r)
    scale = max(1.0, np.linalg.norm(target))
    for _ in range(max_iter):
        if nr < tol * scale:
            break
        step = np.linalg.lstsq(J, -r, rcond=None)[0]
        alpha = 1.0
        improved = False
        while alpha > 1e-4:
            trial = cf + alpha * step
            try:
                r2, J2 = eval_res(trial)
            except IntegrationError:
                alpha *= 0.5
                continue
            if np.linalg.norm(r2) < nr:
                cf, r, J, nr = trial, r2, J2, np.linalg.norm(r2)
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return pack(cf), float(nr)


def strong_pliability_search(prob: EndpointProblem, eta: float = 0.1, N_schedule=(4, 6, 8),
                             restarts: int = 8, seed: int = 0, submersion_tol: float = 1e-8,
                             residual_tol: float = 1e-9):
    """Look for ``v`` with ``F(v) = F(0)``, ``|v| < eta`` and a surjective differential.

    Tries ``v = 0`` first, then Gauss-Newton projections of random small starts for
    each basis size. Failure is inconclusive.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    attempts = []
    best = 0.0
    notes = []
    if np.allclose(prob.frame.horizontal(prob.u).eval(prob.base), 0.0):
        notes.append("X_u vanishes at the base point: zero control is regular there")
    for N in N_schedule:
        sub = EndpointProblem(prob.frame, prob.u, prob.base, N, prob.horizon, prob.rtol, prob.atol)
        if N * sub.m < sub.d + sub.m:
            continue
        target, _ = endpoint_map(sub, sub.control(np.zeros((N, sub.m))))
        cert = certify(sub, np.zeros((N, sub.m)), target, eta, submersion_tol, residual_tol)
        attempts.append({"N": N, "restart": "zero", "sigma_ratio": cert.ratio,
                         "residual": cert.residual, "sup_norm": cert.sup_norm})
        best = max(best, cert.ratio)
        if cert.ok:
            cert.seed, cert.notes = seed, notes + ["certificate at v = 0"]
            return cert
        seeds = spawn_seeds([seed, N], restarts)

        def attempt(r):
            rng = np.random.default_rng(seeds[r])
            c = rng.normal(size=(N - 1, sub.m))
            c *= (eta / 4) / max(np.sum(np.linalg.norm(c, axis=1)), 1e-300)
            try:
                coeffs, _ = _project(sub, c.ravel(), target)
                return certify(sub, coeffs, target, eta, submersion_tol, residual_tol)
            except IntegrationError:
                return None

        for r, cert in enumerate(parallel_map(attempt, range(restarts))):
            if cert is None:
                attempts.append({"N": N, "restart": r, "error": "integration failure"})
                continue
            attempts.append({"N": N, "restart": r, "sigma_ratio": cert.ratio,
                             "residual": cert.residual, "sup_norm": cert.sup_norm})
            best = max(best, cert.ratio)
            if cert.ok:
                cert.seed, cert.restart, cert.notes = seed, r, notes
                return cert
    return PliabilityFailure(best, attempts, eta)


# ---------------------------------------------------------------------------
# bracket conditions

@dataclass
class Covector:
    """Covector ``lam`` at the endpoint of ``e^{X_u}(0)``, transported backward."""

    frame: FrameLike
    u: np.ndarray
    lam: np.ndarray
    eps: float = 1e-6

    def point(self, t: float) -> np.ndarray:
        return flow_const(self.frame, self.u, t, np.zeros(self.frame.dim), 1e-13, 1e-14)

    def at(self, t: float) -> np.ndarray:
        """``lam_t = D(e^{(1-t) X_u})(gamma(t))^T lam``; ``lam_1 = lam``."""
        if t == 1.0:
            return self.lam.copy()
        g = self.point(t)
        d = self.frame.dim
        Dm = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = self.eps
            plus = flow_const(self.frame, self.u, 1.0 - t, g + e, 1e-13, 1e-14)
            minus = flow_const(self.frame, self.u, 1.0 - t, g - e, 1e-13, 1e-14)
            Dm[:, k] = (plus - minus) / (2 * self.eps)
        return Dm.T @ self.lam


def goh_form(nf: FrameLike, u, lam: Covector, t: float, v1, v2) -> float:
    B = lie_bracket(nf.horizontal(v1), nf.horizontal(v2))
    return float(lam.at(t) @ B.eval(lam.point(t)))


def legendre_form(nf: FrameLike, u, lam: Covector, t: float, v1, v2) -> float:
    Xu = nf.horizontal(u)
    B = lie_bracket(lie_bracket(Xu, nf.horizontal(v1)), nf.horizontal(v2))
    return float(lam.at(t) @ B.eval(lam.point(t)))


def second_layer(nf: FrameLike) -> list[VectorField]:
    """Generators of the second flag layer: ``X_i`` and ``[X_i, X_j]``."""
    gens = list(nf.fields)
    for i, j in itertools.combinations(range(nf.rank), 2):
        B = lie_bracket(nf.fields[i], nf.fields[j])
        if not B.is_zero():
            gens.append(B)
    return gens


@dataclass
class SpanReport:
    verdict: bool
    dims: list
    k_reached: int | None

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "dims": self.dims, "k_reached": self.k_reached}


def goh_spanning_check(nf: FrameLike, u, kmax: int | None = None, tol: float = 1e-9,
                       at=None) -> SpanReport:
    """Span at 0 of ``(ad X_u)^k`` applied to the second layer, ``k = 0..kmax``."""
    at = np.zeros(nf.dim) if at is None else np.asarray(at, dtype=float)
    if kmax is None:
        kmax = max(getattr(nf, "step", flag_at(nf, at, probe=False).step) - 1, 0)
    Xu = nf.horizontal(u)
    layer = second_layer(nf)
    rows = []
    dims = []
    for k in range(kmax + 1):
        rows.extend(g.eval(at) for g in layer)
        r = numeric_rank(np.array(rows), tol)
        dims.append(r)
        if r == nf.dim:
            return SpanReport(True, dims, k)
        layer = [lie_bracket(Xu, g) for g in layer]
    return SpanReport(False, dims, None)


@dataclass
class ConeReport:
    verdict: bool
    targets: list
    generators: list
    sample_count: int
    seed: int

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "targets": self.targets, "generators": self.generators,
                "sample_count": self.sample_count, "seed": self.seed}


def cone_condition(nf: FrameLike, u, sample_count: int = 32, seed: int = 0, tol: float = 1e-8,
                   at=None) -> ConeReport:
    """Convex cone of ``W + [[X_u, V], V]`` at 0 versus the whole tangent space."""
    d = nf.dim
    at = np.zeros(d) if at is None else np.asarray(at, dtype=float)
    step = getattr(nf, "step", None) or flag_at(nf, at, probe=False).step
    if step != 3:
        raise ValueError(f"cone condition applies to step-3 frames, got step {step}")
    if sample_count < 2 * d:
        raise ValueError("sample_count must be at least 2d")
    Xu = nf.horizontal(u)
    gens = []
    for g in second_layer(nf):
        val = g.eval(at)
        if np.linalg.norm(val) > 0:
            gens.extend([val, -val])
    m = nf.rank
    # quadratic form B(a) = [[X_u, X_a], X_a](0) from its exact matrix
    Q = np.zeros((m, m, d))
    for i in range(m):
        inner = lie_bracket(Xu, nf.fields[i])
        for j in range(m):
            Q[i, j] = lie_bracket(inner, nf.fields[j]).eval(at)
    rng = np.random.default_rng(seed)
    for _ in range(sample_count):
        a = rng.normal(size=m)
        a /= np.linalg.norm(a)
        val = np.einsum("i,j,ijk->k", a, a, Q)
        if np.linalg.norm(val) > 1e-14:
            gens.append(val)
    G = np.array(gens).T
    norms = np.linalg.norm(G, axis=0)
    G = G / norms
    targets = []
    ok = True
    for k in range(d):
        for sign in (1.0, -1.0):
            e = np.zeros(d)
            e[k] = sign
            _, res = nnls(G, e)
            feasible = res < tol
            ok &= feasible
            targets.append({"target": e.tolist(), "residual": float(res), "feasible": feasible})
    return ConeReport(bool(ok), targets, G.T.tolist(), sample_count, seed)


@dataclass
class MediumFatReport:
    verdict: bool
    label: str
    rank: int | None

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "label": self.label, "rank": self.rank}


def medium_fat_check(s: FrameLike, p, u, tol: float = 1e-9) -> MediumFatReport:
    p = np.asarray(p, dtype=float)
    Xu = s.horizontal(u)
    if np.linalg.norm(Xu.eval(p)) == 0.0:
        return MediumFatReport(True, "strongly pliable: X_u vanishes at the base point", None)
    layer = second_layer(s)
    vals = [g.eval(p) for g in layer] + [lie_bracket(Xu, g).eval(p) for g in layer]
    r = numeric_rank(np.array(vals), tol)
    return MediumFatReport(r == s.dim, "medium-fat" if r == s.dim else "not medium-fat", r)


def goh_legendre_screen(nf: FrameLike, u, N: int = 6, t_samples=(0.0, 0.25, 0.5, 0.75),
                        tol: float = 1e-9) -> list[dict]:
    """Per-covector witnesses where the Goh or Legendre form is nonzero.

    Covectors come from an orthonormal basis of the cokernel of the endpoint
    differential at ``v = 0``.
    """
    prob = EndpointProblem(nf, u, N=N)
    D = endpoint_differential(prob, prob.control(np.zeros((N, prob.m))))[:prob.d]
    U, sv, _ = np.linalg.svd(D)
    rank = int(np.sum(sv > tol * max(sv[0], 1e-300)))
    out = []
    basis = np.eye(nf.rank)
    for col in range(rank, prob.d):
        lam = Covector(nf, np.asarray(u, dtype=float), U[:, col])
        witness = None
        for t in t_samples:
            for i, j in itertools.product(range(nf.rank), repeat=2):
                g = goh_form(nf, u, lam, t, basis[i], basis[j]) if i < j else 0.0
                l = legendre_form(nf, u, lam, t, basis[i], basis[j])
                if abs(g) > 1e-8 or (i == j and abs(l) > 1e-8):
                    witness = {"t": t, "v1": i + 1, "v2": j + 1, "goh": g, "legendre": l}
                    break
            if witness:
                break
        out.append({"covector": U[:, col].tolist(), "witness": witness})
    return out


# ---------------------------------------------------------------------------
# distance estimation

@dataclass
class DistanceBudget:
    n_knots: int = 24
    starts: int = 4
    max_iter: int = 300
    seed: int = 0
    rtol: float = 1e-12
    atol: float = 1e-14
    gap_tol: float = 1e-12
    ftol: float = 1e-15
    zero_tol: float = 0.0


@dataclass
class DistanceEstimate:
    upper: float
    control: Control | None
    endpoint_gap: float
    lower_proxy: float | None
    certified: bool
    starts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"upper": self.upper, "endpoint_gap": self.endpoint_gap,
                "lower_proxy": self.lower_proxy, "certified": self.certified,
                "starts": self.starts}


class DistanceError(RuntimeError):
    def __init__(self, message: str, best_gap: float):
        super().__init__(message)
        self.best_gap = best_gap


def _energy_matrix(n: int) -> np.ndarray:
    """Mass matrix for ``int_0^1 |v|^2`` of a piecewise-linear scalar on ``n`` knots."""
    h = 1.0 / (n - 1)
    M = np.zeros((n, n))
    for i in range(n - 1):
        M[i, i] += h / 3
        M[i + 1, i + 1] += h / 3
        M[i, i + 1] += h / 6
        M[i + 1, i] += h / 6
    return M


def _scale_guess(s: FrameLike, p, q) -> tuple[float, np.ndarray]:
    """Rough distance scale and per-coordinate weights from the flag at ``p``."""
    try:
        w = np.asarray(flag_at(s, p, probe=False).weights, dtype=float)
    except Exception:
        w = np.ones(s.dim)
    dq = np.abs(np.asarray(q, dtype=float) - np.asarray(p, dtype=float))
    return float(np.sum(dq ** (1.0 / w))), w


def _solve_dsr(s: FrameLike, p, q, n: int, V0: np.ndarray, L0: float, budget: DistanceBudget):
    m = s.rank
    M = _energy_matrix(n)
    cache = {}

    def run(x):
        key = x.tobytes()
        if key not in cache:
            V = x.reshape(n, m) * L0
            ctrl = Control.sampled(V)
            pt, S = endpoint_sensitivity(s, ctrl, p, budget.rtol, budget.atol)
            cache.clear()
            cache[key] = (pt, S)
        return cache[key]

    def f(x):
        X = x.reshape(n, m)
        return float(np.sum(X * (M @ X)))

    def fgrad(x):
        X = x.reshape(n, m)
        return (2 * (M @ X)).ravel()

    def con(x):
        return (run(x)[0] - q) / L0

    def conj(x):
        return run(x)[1]  # d(pt)/d(V) * L0 / L0

    res = minimize(f, V0.ravel() / L0, jac=fgrad, method="SLSQP",
                   constraints=[{"type": "eq", "fun": con, "jac": conj}],
                   options={"maxiter": budget.max_iter, "ftol": budget.ftol})
    x = res.x
    # feasibility polish by min-norm Gauss-Newton steps
    for _ in range(8):
        r = con(x)
        if np.linalg.norm(r) * L0 < budget.gap_tol * 1e-3:
            break
        x = x + np.linalg.lstsq(conj(x), -r, rcond=None)[0]
    V = x.reshape(n, m) * L0
    gap = float(np.linalg.norm(run(x)[0] - q))
    return V, gap


def _feasible_dsr(s: FrameLike, p, q, n: int, V0: np.ndarray, L0: float,
                  budget: DistanceBudget, max_iter: int = 30, descent: int = 6):
    """A control reaching ``q``: min-norm Gauss-Newton steps from ``V0``, then a few
    energy-decreasing steps along the linearized constraint set, each re-projected."""
    m = s.rank
    M = _energy_matrix(n)
    Lc = np.linalg.cholesky(np.kron(M, np.eye(m)))
    tol = budget.gap_tol * 1e-3

    def ev(x):
        pt, S = endpoint_sensitivity(s, Control.sampled(x.reshape(n, m) * L0), p, budget.rtol,
                                     budget.atol)
        return (pt - q) / L0, S

    def project(x, r, J, iters):
        for _ in range(iters):
            if np.linalg.norm(r) * L0 < tol:
                break
            x = x + np.linalg.lstsq(J, -r, rcond=None)[0]
            r, J = ev(x)
        return x, r, J

    def energy(x):
        z = Lc.T @ x
        return float(z @ z)

    x = V0.ravel() / L0
    r, J = ev(x)
    x, r, J = project(x, r, J, max_iter)
    for _ in range(descent):
        if np.linalg.norm(r) * L0 >= tol:
            break
        z = Lc.T @ x
        A = np.linalg.solve(Lc, J.T).T  # J L^{-T}
        dz = -z + np.linalg.lstsq(A, A @ z - r, rcond=None)[0]
        dx = np.linalg.solve(Lc.T, dz)
        e0 = energy(x)
        alpha, moved = 1.0, False
        while alpha > 0.05:
            try:
                xn = x + alpha * dx
                rn, Jn = ev(xn)
                xn, rn, Jn = project(xn, rn, Jn, 4)
            except IntegrationError:
                alpha *= 0.5
                continue
            if np.linalg.norm(rn) * L0 < tol and energy(xn) < e0 * (1 - 1e-4):
                x, r, J, moved = xn, rn, Jn, True
                break
            alpha *= 0.5
        if not moved:
            break
    return x.reshape(n, m) * L0, float(np.linalg.norm(r) * L0)


def estimate_dsr(s: FrameLike, p, q, budget: DistanceBudget | None = None, chart=None,
                 init=None, mode: str = "optimize") -> DistanceEstimate:
    """Upper bound on the distance from controls that provably reach ``q``.

    ``mode="optimize"`` minimizes energy over piecewise-linear controls (SLSQP with
    the endpoint as a hard constraint, then a feasibility polish); ``"feasible"``
    only projects random starts onto the constraint, which is much cheaper and
    looser. Either way the reported value is the length of a realized control.
    """
    budget = budget or DistanceBudget()
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    lower = None
    if chart is not None:
        from .nilpotent import pseudo_norm
        lower = pseudo_norm(chart, chart.to_chart(q))
    if np.array_equal(p, q) or np.linalg.norm(p - q) <= budget.zero_tol:
        return DistanceEstimate(0.0, None, float(np.linalg.norm(p - q)),
                                0.0 if chart is not None else None, True)
    n = budget.n_knots
    m = s.rank
    L0, _ = _scale_guess(s, p, q)
    L0 = max(L0, 1e-300)
    seeds = spawn_seeds(budget.seed, budget.starts)
    solver = _solve_dsr if mode == "optimize" else _feasible_dsr
    if mode not in ("optimize", "feasible"):
        raise ValueError(f"unknown mode {mode!r}")

    def one(k):
        rng = np.random.default_rng(seeds[k])
        if k == 0 and init is not None:
            V0 = np.asarray(init, dtype=float).reshape(n, m)
        else:
            V0 = rng.normal(size=(n, m)) * L0
        try:
            V, gap = solver(s, p, q, n, V0, L0, budget)
        except (IntegrationError, ValueError, np.linalg.LinAlgError):
            return None
        if not np.all(np.isfinite(V)):
            return None
        return V, gap, float(K.pl_length(np.linspace(0.0, 1.0, n), V))

    results = [one(k) for k in range(budget.starts)]
    log = []
    best = None
    best_gap = np.inf
    for k, r in enumerate(results):
        if r is None:
            log.append({"start": k, "error": "solver failure"})
            continue
        V, gap, length = r
        log.append({"start": k, "length": length, "gap": gap})
        best_gap = min(best_gap, gap)
        if gap <= budget.gap_tol and (best is None or length < best[2]):
            best = r
    if best is None:
        raise DistanceError(f"no feasible control reached the target (best gap {best_gap:.3g})",
                            float(best_gap))
    V, gap, length = best
    return DistanceEstimate(length, Control.sampled(V), gap, lower, True, log)
