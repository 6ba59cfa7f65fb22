"""Controls, the chronological exponential and flow validators."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from . import _kernels as K
from .structure import FrameLike
from .symbolic import VectorField, as_fraction, lie_bracket, seminorm

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-10
MAX_STEPS = 2_000_000


class IntegrationError(RuntimeError):
    def __init__(self, message: str, status: int, time: float, point=None):
        super().__init__(message)
        self.status = status
        self.time = time
        self.point = None if point is None else np.asarray(point, dtype=float)


class Control:
    """Control signal ``u(t)`` on ``[t0, t1]``.

    ``sampled`` controls interpolate values at knots (linearly, or held constant
    with ``hold="constant"``). ``basis`` controls are ``offset + sum_k c_k phi_k(t)``
    with ``phi_0 = s`` and ``phi_k = sin(k pi s)``, ``s = (t - t0)/(t1 - t0)``, so
    they equal ``offset`` at ``t0``.
    """

    def __init__(self, t0: float, t1: float, kind: str, values, offset=None, knots=None,
                 hold: str = "linear"):
        self.t0 = float(t0)
        self.t1 = float(t1)
        if not self.t1 > self.t0:
            raise ValueError("control interval must be nonempty")
        if kind not in ("sampled", "basis"):
            raise ValueError(f"unknown control kind {kind!r}")
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if not np.all(np.isfinite(values)):
            raise ValueError("control values must be finite")
        self.kind = kind
        self.values = values
        self.m = values.shape[1]
        self.offset = np.zeros(self.m) if offset is None else np.asarray(offset, dtype=float).copy()
        if self.offset.shape != (self.m,):
            raise ValueError("offset has the wrong length")
        self.hold = hold
        if kind == "sampled":
            if hold not in ("linear", "constant"):
                raise ValueError(f"unknown hold {hold!r}")
            if knots is None:
                knots = np.linspace(self.t0, self.t1, values.shape[0])
            self.knots = np.asarray(knots, dtype=float)
            if self.knots.shape[0] != values.shape[0]:
                raise ValueError("need one knot per sample")
            if self.knots.shape[0] > 1 and np.any(np.diff(self.knots) <= 0):
                raise ValueError("knots must be strictly increasing")
        else:
            self.knots = np.array([self.t0])

    # constructors
    @classmethod
    def constant(cls, u, t0: float = 0.0, t1: float = 1.0) -> "Control":
        u = np.asarray(u, dtype=float)
        return cls(t0, t1, "basis", np.zeros((1, u.shape[0])), offset=u)

    @classmethod
    def sampled(cls, values, t0: float = 0.0, t1: float = 1.0, knots=None,
                hold: str = "linear") -> "Control":
        return cls(t0, t1, "sampled", values, knots=knots, hold=hold)

    @classmethod
    def basis(cls, coeffs, offset=None, t0: float = 0.0, t1: float = 1.0) -> "Control":
        return cls(t0, t1, "basis", coeffs, offset=offset)

    @property
    def n_basis(self) -> int:
        return self.values.shape[0]

    @property
    def kind_code(self) -> int:
        if self.kind == "basis":
            return K.SINE_BASIS
        return K.PIECEWISE_CONSTANT if self.hold == "constant" else K.PIECEWISE_LINEAR

    def kernel_args(self):
        return (self.kind_code, self.knots, self.t0, self.t1, self.values, self.offset)

    def basis_matrix(self, t) -> np.ndarray:
        """Rows ``phi(t)`` for each query time."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.shape[0], self.n_basis))
        for r, tt in enumerate(t):
            out[r] = K.basis_values(self.kind_code, tt, tt, self.knots, self.t0, self.t1,
                                    self.n_basis)
        return out

    def __call__(self, t) -> np.ndarray:
        scalar = np.ndim(t) == 0
        vals = self.offset + self.basis_matrix(t) @ self.values
        return vals[0] if scalar else vals

    def breaks(self, ta: float, tb: float) -> np.ndarray:
        """Integration restart points from ``ta`` to ``tb`` (knots in between)."""
        lo, hi = min(ta, tb), max(ta, tb)
        inner = self.knots[(self.knots > lo) & (self.knots < hi)] if self.kind == "sampled" else []
        pts = np.concatenate([[lo], inner, [hi]])
        return pts if tb >= ta else pts[::-1].copy()

    def sup_norm(self, grid: int = 1001) -> float:
        ts = np.linspace(self.t0, self.t1, grid)
        if self.kind == "sampled":
            ts = np.union1d(ts, self.knots)
        return float(np.max(np.linalg.norm(self(ts), axis=1)))

    def with_offset(self, offset) -> "Control":
        return Control(self.t0, self.t1, self.kind, self.values, offset, self.knots, self.hold)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Control) and self.kind == other.kind and self.hold == other.hold
                and self.t0 == other.t0 and self.t1 == other.t1
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.offset, other.offset)
                and np.array_equal(self.knots, other.knots))

    # serialization
    def to_json(self) -> dict:
        out = {"kind": self.kind, "t0": self.t0, "t1": self.t1,
               "offset": self.offset.tolist(), "values": self.values.tolist()}
        if self.kind == "sampled":
            out["knots"] = self.knots.tolist()
            out["hold"] = self.hold
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Control":
        return cls(obj["t0"], obj["t1"], obj["kind"], obj["values"], obj.get("offset"),
                   obj.get("knots"), obj.get("hold", "linear"))

    def to_csv(self) -> str:
        if self.kind != "sampled":
            raise ValueError("only sampled controls export as CSV; use JSON for basis controls")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"u{i + 1}" for i in range(self.m)])
        for t, row in zip(self.knots, self.values + self.offset):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, hold: str = "linear") -> "Control":
        rows = list(csv.reader(io.StringIO(text)))
        header = [h.strip() for h in rows[0]]
        if not header or header[0] != "t" or any(not h.startswith("u") for h in header[1:]):
            raise ValueError("control CSV header must be t,u1..um")
        data = np.array([[float(x) for x in r] for r in rows[1:] if r], dtype=float)
        if data.shape[0] < 2:
            raise ValueError("control CSV needs at least two rows")
        return cls(data[0, 0], data[-1, 0], "sampled", data[:, 1:], knots=data[:, 0], hold=hold)


def load_control(path: str, hold: str = "linear") -> Control:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        return Control.from_json(json.loads(text))
    return Control.from_csv(text, hold)


@dataclass
class Trajectory:
    """Dense-output solution of a controlled flow."""

    ts: np.ndarray
    ys: np.ndarray
    rc: np.ndarray
    control: Control | None
    rtol: float
    atol: float
    n_steps: int
    stats: dict = field(default_factory=dict)

    @property
    def t_start(self) -> float:
        return float(self.ts[0])

    @property
    def t_end(self) -> float:
        return float(self.ts[-1])

    @property
    def endpoint(self) -> np.ndarray:
        return self.ys[-1].copy()

    def __call__(self, t) -> np.ndarray:
        scalar = np.ndim(t) == 0
        tq = np.atleast_1d(np.asarray(t, dtype=float))
        lo, hi = sorted((self.t_start, self.t_end))
        span = hi - lo
        if np.any(tq < lo - 1e-12 * max(1, span)) or np.any(tq > hi + 1e-12 * max(1, span)):
            raise ValueError("query time outside the trajectory interval")
        if self.rc.shape[0] == 0:
            out = np.repeat(self.ys[:1], tq.shape[0], axis=0)
        else:
            out = K.dense_eval(np.clip(tq, lo, hi), self.ts, self.rc)
        return out[0] if scalar else out

    def to_csv(self, times=None) -> str:
        times = self.ts if times is None else np.asarray(times, dtype=float)
        pts = self(times)
        if pts.ndim == 1:
            pts = pts[None, :]
        d = pts.shape[1]
        m = self.control.m if self.control is not None else 0
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{j + 1}" for j in range(d)] + [f"u{i + 1}" for i in range(m)])
        for t, p in zip(np.atleast_1d(times), pts):
            u = self.control(float(np.clip(t, self.control.t0, self.control.t1))) if m else []
            w.writerow([repr(float(t))] + [repr(float(x)) for x in p] + [repr(float(x)) for x in u])
        return buf.getvalue()


def _box_arrays(box, d):
    if box is None:
        return np.zeros(d), np.zeros(d), False
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    return lo, hi, True


def _run(frame: FrameLike, ctrl: Control, p0, ta, tb, rtol, atol, box, store, sens):
    c = frame.compiled
    if ctrl.m != c.m:
        raise ValueError(f"control has {ctrl.m} components, frame has {c.m} fields")
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (c.d,) or not np.all(np.isfinite(p0)):
        raise ValueError("initial point must be a finite vector of the frame's dimension")
    y0 = p0
    if sens:
        y0 = np.concatenate([p0, np.zeros(c.d * ctrl.n_basis * c.m)])
    lo, hi, use_box = _box_arrays(box, c.d)
    kind, knots, t0, t1, coeffs, offset = ctrl.kernel_args()
    status, t_exit, y, ts, ys, rc, n = K.dopri5(
        y0, ctrl.breaks(ta, tb), c.d, c.m, *c.arrays(), kind, knots, t0, t1, coeffs, offset,
        sens, rtol, atol, store, lo, hi, use_box, MAX_STEPS)
    if status == K.LEFT_DOMAIN:
        raise IntegrationError(f"trajectory left the domain box at t={t_exit:.6g}", status,
                               t_exit, y[:c.d])
    if status == K.STEP_UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={t_exit:.6g}", status, t_exit, y[:c.d])
    if status == K.TOO_MANY_STEPS:
        raise IntegrationError(f"step budget exhausted at t={t_exit:.6g}", status, t_exit, y[:c.d])
    return y, ts, ys, rc, n


def chron_exp(frame: FrameLike, ctrl: Control, p0, rtol: float = DEFAULT_RTOL,
              atol: float = DEFAULT_ATOL, box=None, t_span=None, reverse: bool = False) -> Trajectory:
    """Solve ``g' = sum_i u_i(t) X_i(g)`` from ``p0`` with dense output.

    ``reverse=True`` starts at ``ctrl.t1`` and integrates back to ``ctrl.t0``.
    """
    if t_span is None:
        t_span = (ctrl.t1, ctrl.t0) if reverse else (ctrl.t0, ctrl.t1)
    ta, tb = float(t_span[0]), float(t_span[1])
    y, ts, ys, rc, n = _run(frame, ctrl, p0, ta, tb, rtol, atol, box, True, False)
    return Trajectory(np.array(ts), np.array(ys), np.array(rc), ctrl, rtol, atol, int(n),
                      {"steps": int(n), "rtol": rtol, "atol": atol})


def endpoint(frame: FrameLike, ctrl: Control, p0, rtol: float = DEFAULT_RTOL,
             atol: float = DEFAULT_ATOL, box=None, t_span=None) -> np.ndarray:
    ta, tb = t_span if t_span is not None else (ctrl.t0, ctrl.t1)
    y, *_ = _run(frame, ctrl, p0, float(ta), float(tb), rtol, atol, box, False, False)
    return np.array(y)


def endpoint_sensitivity(frame: FrameLike, ctrl: Control, p0, rtol: float = DEFAULT_RTOL,
                         atol: float = DEFAULT_ATOL, box=None):
    """Endpoint and its Jacobian with respect to ``ctrl.values`` (column ``p*m + i``)."""
    y, *_ = _run(frame, ctrl, p0, ctrl.t0, ctrl.t1, rtol, atol, box, False, True)
    d = frame.dim
    return np.array(y[:d]), np.array(y[d:]).reshape(d, ctrl.n_basis * ctrl.m)


def flow_const(frame: FrameLike, u, t: float, p0, rtol: float = DEFAULT_RTOL,
               atol: float = DEFAULT_ATOL, box=None) -> np.ndarray:
    """``e^{t X_u}(p0)``; negative ``t`` flows backward."""
    p0 = np.asarray(p0, dtype=float)
    if t == 0:
        return p0.copy()
    return endpoint(frame, Control.constant(u), p0, rtol, atol, box, (0.0, float(t)))


class _FieldFrame(FrameLike):
    def __init__(self, fields):
        self.fields = tuple(fields)


def frame_of(fields: Sequence[VectorField]) -> FrameLike:
    """Wrap bare vector fields so they can be integrated."""
    return _FieldFrame(fields)


def field_flow(X: VectorField, t: float, p0, rtol: float = 1e-12, atol: float = 1e-13) -> np.ndarray:
    """``e^{tX}(p0)`` for a single autonomous field."""
    if X.is_zero() or t == 0:
        return np.asarray(p0, dtype=float).copy()
    return flow_const(frame_of([X]), [1.0], t, p0, rtol, atol)


def pushforward_numeric(X: VectorField, Y: VectorField, sigma: float, q, eps: float = 1e-4,
                        rtol: float = 1e-12, atol: float = 1e-13) -> np.ndarray:
    """``(e^{sigma ad X} Y)(q) = D e^{-sigma X}(r) Y(r)`` with ``r = e^{sigma X}(q)``.

    The Jacobian is taken by central differences of the flow.
    """
    r = field_flow(X, sigma, q, rtol, atol)
    y = Y.eval(r)
    norm = np.linalg.norm(y)
    if norm == 0.0:
        return np.zeros_like(y)
    v = y / norm
    plus = field_flow(X, -sigma, r + eps * v, rtol, atol)
    minus = field_flow(X, -sigma, r - eps * v, rtol, atol)
    return norm * (plus - minus) / (2 * eps)


@dataclass
class AdSeries:
    truncation: VectorField
    terms: list
    remainder_bound: float | None
    terminates: bool
    order: int
    sigma: Fraction
    label: str = "heuristic bound, constant C = 1"


def ad_power(X: VectorField, Y: VectorField, k: int) -> VectorField:
    Z = Y
    for _ in range(k):
        Z = lie_bracket(X, Z)
    return Z


def ad_series(X: VectorField, Y: VectorField, sigma, N: int, box=None, j: int = 0,
              grid: int = 9) -> AdSeries:
    """Exact partial sum ``sum_{k<N} sigma^k/k! ad_X^k Y`` and a remainder bound.

    The bound ``(1/N!) e^{s|X|_{j+1}} s^N |X|_{j+N}^N |Y|_{j+N}`` uses grid seminorms
    on ``box`` with the unknown constant set to 1.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    s = as_fraction(sigma)
    terms = [Y]
    total = Y
    Z = Y
    for k in range(1, N):
        Z = lie_bracket(X, Z)
        terms.append(Z)
        if not Z.is_zero():
            total = total + Z * (s ** k / math.factorial(k))
    terminates = ad_power(X, terms[-1], 1).is_zero() if N >= 1 else False
    bound = None
    if box is not None:
        sx = float(abs(s))
        x_hi = seminorm(X, j + N, box, grid)
        bound = (math.exp(sx * seminorm(X, j + 1, box, grid)) * sx ** N * x_hi ** N
                 * seminorm(Y, j + N, box, grid) / math.factorial(N))
    return AdSeries(total, terms, bound, terminates, N, s)


@dataclass
class VariationResult:
    residual: float
    left: np.ndarray
    right: np.ndarray
    mode: str


def variation_check(X: VectorField, fields: Sequence[VectorField], v: Control, p0, t: float,
                    rtol: float = 1e-11, atol: float = 1e-12, max_order: int = 8,
                    box=None) -> VariationResult:
    """Compare both sides of the variation-of-constants formula on ``[0, t]``.

    Left: flow of ``X + Y_tau`` with ``Y_tau = sum_i v_i(tau) Y_i``. Right: flow of
    ``e^{(tau-t) ad X} Y_tau`` started at ``e^{tX}(p0)``. The pushforward uses the
    exact ad-series when it terminates within ``max_order`` brackets, else numeric
    differentiation of the flow of ``X``.
    """
    p0 = np.asarray(p0, dtype=float)
    d = p0.shape[0]
    k = len(fields)
    if v.m != k:
        raise ValueError("control size must match the number of fields")
    # left side through the kernel: frame (X, Y_1..Y_k) with control (1, v)
    if v.kind == "basis":
        combo = Control(v.t0, v.t1, "basis", np.hstack([np.zeros((v.n_basis, 1)), v.values]),
                        offset=np.concatenate([[1.0], v.offset]))
    else:
        combo = Control(v.t0, v.t1, "sampled", np.hstack([np.ones((v.n_basis, 1)), v.values]),
                        knots=v.knots, hold=v.hold)
    left_frame = frame_of([X] + list(fields))
    left = endpoint(left_frame, combo, p0, rtol, atol, box, (0.0, t))
    q1 = field_flow(X, t, p0, rtol, atol)
    # pushforward of each Y_i
    series = []
    for Y in fields:
        powers = [Y]
        while len(powers) <= max_order and not powers[-1].is_zero():
            powers.append(lie_bracket(X, powers[-1]))
        series.append(powers if powers[-1].is_zero() else None)
    mode = "series" if all(sr is not None for sr in series) else "numeric"

    def pushed(tau, q):
        sig = tau - t
        out = np.zeros(d)
        vt = v(float(np.clip(tau, v.t0, v.t1)))
        for i, Y in enumerate(fields):
            if vt[i] == 0.0:
                continue
            if mode == "series":
                acc = np.zeros(d)
                for kk, Z in enumerate(series[i]):
                    if not Z.is_zero():
                        acc += sig ** kk / math.factorial(kk) * Z.eval(q)
            else:
                acc = pushforward_numeric(X, Y, sig, q)
            out += vt[i] * acc
        return out

    knots = v.breaks(0.0, t) if v.kind == "sampled" else np.array([0.0, t])
    q = q1
    for a, b in zip(knots[:-1], knots[1:]):
        sol = solve_ivp(pushed, (a, b), q, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise IntegrationError(sol.message, K.STEP_UNDERFLOW, float(sol.t[-1]))
        q = sol.y[:, -1]
    return VariationResult(float(np.linalg.norm(left - q)), left, q, mode)
