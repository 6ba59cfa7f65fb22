"""Hot numeric kernels: polynomial frame evaluation and Dormand-Prince 5(4).

Every kernel is written so that it runs both under ``numba.njit`` and as plain
Python/numpy. Numba is used when importable unless ``SUBRIE_DISABLE_NUMBA=1``.
The uncompiled originals stay reachable through :data:`PY` for parity tests.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("SUBRIE_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

PY: dict = {}


def _speed_up(func):
    """Register the plain function and return the jitted one when numba is on."""
    PY[func.__name__] = func
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(func)
    return func


# control kinds
PIECEWISE_LINEAR = 0
PIECEWISE_CONSTANT = 1
SINE_BASIS = 2

# status codes
OK = 0
STEP_UNDERFLOW = 1
LEFT_DOMAIN = 2
TOO_MANY_STEPS = 3


@_speed_up
def eval_frame(x, t_exp, t_coef, t_fld, t_comp, m):
    """Values of all frame fields at ``x`` as an (m, d) array."""
    d = x.shape[0]
    out = np.zeros((m, d))
    for t in range(t_coef.shape[0]):
        v = t_coef[t]
        for k in range(d):
            e = t_exp[t, k]
            if e > 0:
                v *= x[k] ** e
        out[t_fld[t], t_comp[t]] += v
    return out


@_speed_up
def eval_frame_jac(x, t_exp, t_coef, t_fld, t_comp, m):
    """Values (m, d) and spatial Jacobians (m, d, d) of the frame at ``x``."""
    d = x.shape[0]
    val = np.zeros((m, d))
    jac = np.zeros((m, d, d))
    for t in range(t_coef.shape[0]):
        c = t_coef[t]
        i = t_fld[t]
        j = t_comp[t]
        v = c
        for k in range(d):
            e = t_exp[t, k]
            if e > 0:
                v *= x[k] ** e
        val[i, j] += v
        for k in range(d):
            e = t_exp[t, k]
            if e == 0:
                continue
            g = c * e
            for l in range(d):
                el = t_exp[t, l]
                if l == k:
                    if el > 1:
                        g *= x[l] ** (el - 1)
                elif el > 0:
                    g *= x[l] ** el
            jac[i, j, k] += g
    return val, jac


@_speed_up
def basis_values(kind, t, tloc, knots, t0, t1, n_basis):
    """Scalar basis functions at time ``t``; the control is ``offset + phi @ C``.

    ``tloc`` picks the knot interval (integration segments never straddle knots,
    so passing the segment midpoint keeps one-sided limits at the knots).
    """
    phi = np.zeros(n_basis)
    if kind == SINE_BASIS:
        s = (t - t0) / (t1 - t0)
        phi[0] = s
        for k in range(1, n_basis):
            phi[k] = np.sin(k * np.pi * s)
        return phi
    nk = knots.shape[0]
    if nk == 1:
        phi[0] = 1.0
        return phi
    # locate interval [knots[i], knots[i+1]]
    if tloc <= knots[0]:
        i = 0
    elif tloc >= knots[nk - 1]:
        i = nk - 2
    else:
        lo = 0
        hi = nk - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if knots[mid] <= tloc:
                lo = mid
            else:
                hi = mid
        i = lo
    if kind == PIECEWISE_CONSTANT:
        if tloc >= knots[nk - 1]:
            phi[nk - 1] = 1.0
        else:
            phi[i] = 1.0
        return phi
    width = knots[i + 1] - knots[i]
    a = (t - knots[i]) / width
    if a < 0.0:
        a = 0.0
    elif a > 1.0:
        a = 1.0
    phi[i] = 1.0 - a
    phi[i + 1] = a
    return phi


@_speed_up
def rhs(t, tloc, y, d, m, t_exp, t_coef, t_fld, t_comp, kind, knots, t0, t1, coeffs, offset, sens):
    """Controlled dynamics, optionally with the control-sensitivity block.

    With ``sens`` the state is ``[x, S.ravel()]`` where ``S[:, p*m + i]`` is the
    derivative of ``x`` with respect to ``coeffs[p, i]``.
    """
    n_basis = coeffs.shape[0]
    phi = basis_values(kind, t, tloc, knots, t0, t1, n_basis)
    u = offset.copy()
    for p in range(n_basis):
        if phi[p] != 0.0:
            for i in range(m):
                u[i] += phi[p] * coeffs[p, i]
    x = y[:d]
    out = np.zeros(y.shape[0])
    if not sens:
        F = eval_frame(x, t_exp, t_coef, t_fld, t_comp, m)
        for i in range(m):
            if u[i] != 0.0:
                for j in range(d):
                    out[j] += u[i] * F[i, j]
        return out
    F, J = eval_frame_jac(x, t_exp, t_coef, t_fld, t_comp, m)
    A = np.zeros((d, d))
    for i in range(m):
        if u[i] != 0.0:
            for j in range(d):
                out[j] += u[i] * F[i, j]
                for k in range(d):
                    A[j, k] += u[i] * J[i, j, k]
    ncol = n_basis * m
    S = y[d:].reshape((d, ncol))
    dS = A @ S
    for p in range(n_basis):
        if phi[p] != 0.0:
            for i in range(m):
                col = p * m + i
                for j in range(d):
                    dS[j, col] += phi[p] * F[i, j]
    out[d:] = dS.ravel()
    return out


# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = (
    9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0)
_A71, _A73, _A74, _A75, _A76 = (
    35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0)
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)
_D1, _D3, _D4, _D5, _D6, _D7 = (
    -12715105075.0 / 11282082432.0, 87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0)


@_speed_up
def dopri5(y0, breaks, d, m, t_exp, t_coef, t_fld, t_comp, kind, knots, t0, t1, coeffs,
           offset, sens, rtol, atol, store, box_lo, box_hi, use_box, max_steps):
    """Integrate across ``breaks`` (monotone, either direction) restarting at each break.

    Returns ``(status, exit_time, y_final, ts, ys, rc, n_steps)``. When ``store``
    is set, ``ys`` and ``rc`` hold states and dense-output coefficients of the
    first ``d`` components for every accepted step.
    """
    cap = 64 if store else 1
    ts = np.empty(cap)
    ys = np.empty((cap, d))
    rc = np.empty((cap, 5, d))
    y = y0.copy()
    t = breaks[0]
    ts[0] = t
    ys[0, :] = y[:d]
    count = 0
    total = 0
    direction = 1.0 if breaks[breaks.shape[0] - 1] >= breaks[0] else -1.0
    h_prev = 0.0
    for seg in range(breaks.shape[0] - 1):
        ta = breaks[seg]
        tb = breaks[seg + 1]
        span = abs(tb - ta)
        if span == 0.0:
            continue
        t = ta
        tm = 0.5 * (ta + tb)
        k1 = rhs(t, tm, y, d, m, t_exp, t_coef, t_fld, t_comp, kind,
                 knots, t0, t1, coeffs, offset, sens)
        if h_prev > 0.0:
            h = min(h_prev, span)
        else:
            sc = atol + rtol * np.abs(y)
            d0 = np.sqrt(np.mean((y / sc) ** 2))
            d1 = np.sqrt(np.mean((k1 / sc) ** 2))
            if d0 < 1e-5 or d1 < 1e-5:
                h = 1e-6 * max(span, 1.0)
            else:
                h = max(0.01 * d0 / d1, 1e-6 * span)
            h = min(h, span, 0.1 * max(span, 1.0))
        while True:
            remaining = abs(tb - t)
            if remaining <= 1e-14 * max(1.0, abs(tb)):
                break
            last = False
            if h >= remaining:
                h = remaining
                last = True
            if h < 1e-14 * max(1.0, abs(t)):
                return STEP_UNDERFLOW, t, y, ts[:count + 1], ys[:count + 1], rc[:count], count
            hs = direction * h
            k2 = rhs(t + _C2 * hs, tm, y + hs * (_A21 * k1), d, m, t_exp, t_coef, t_fld, t_comp,
                     kind, knots, t0, t1, coeffs, offset, sens)
            k3 = rhs(t + _C3 * hs, tm, y + hs * (_A31 * k1 + _A32 * k2), d, m, t_exp, t_coef, t_fld,
                     t_comp, kind, knots, t0, t1, coeffs, offset, sens)
            k4 = rhs(t + _C4 * hs, tm, y + hs * (_A41 * k1 + _A42 * k2 + _A43 * k3), d, m, t_exp,
                     t_coef, t_fld, t_comp, kind, knots, t0, t1, coeffs, offset, sens)
            k5 = rhs(t + _C5 * hs, tm, y + hs * (_A51 * k1 + _A52 * k2 + _A53 * k3 + _A54 * k4), d, m,
                     t_exp, t_coef, t_fld, t_comp, kind, knots, t0, t1, coeffs, offset, sens)
            t_end = tb if last else t + hs
            k6 = rhs(t_end, tm,
                     y + hs * (_A61 * k1 + _A62 * k2 + _A63 * k3 + _A64 * k4 + _A65 * k5),
                     d, m, t_exp, t_coef, t_fld, t_comp, kind, knots, t0, t1, coeffs, offset, sens)
            y_new = y + hs * (_A71 * k1 + _A73 * k3 + _A74 * k4 + _A75 * k5 + _A76 * k6)
            k7 = rhs(t_end, tm, y_new, d, m, t_exp, t_coef, t_fld,
                     t_comp, kind, knots, t0, t1, coeffs, offset, sens)
            err_vec = hs * (_E1 * k1 + _E3 * k3 + _E4 * k4 + _E5 * k5 + _E6 * k6 + _E7 * k7)
            sc = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = np.sqrt(np.mean((err_vec / sc) ** 2))
            if not np.isfinite(err):
                h *= 0.1
                continue
            if err <= 1.0:
                total += 1
                if store:
                    if count + 1 >= ts.shape[0]:
                        new_cap = 2 * ts.shape[0]
                        ts2 = np.empty(new_cap)
                        ys2 = np.empty((new_cap, d))
                        rc2 = np.empty((new_cap, 5, d))
                        ts2[:count + 1] = ts[:count + 1]
                        ys2[:count + 1] = ys[:count + 1]
                        rc2[:count] = rc[:count]
                        ts, ys, rc = ts2, ys2, rc2
                    ydiff = y_new[:d] - y[:d]
                    bspl = hs * k1[:d] - ydiff
                    rc[count, 0, :] = y[:d]
                    rc[count, 1, :] = ydiff
                    rc[count, 2, :] = bspl
                    rc[count, 3, :] = ydiff - hs * k7[:d] - bspl
                    rc[count, 4, :] = hs * (_D1 * k1[:d] + _D3 * k3[:d] + _D4 * k4[:d]
                                            + _D5 * k5[:d] + _D6 * k6[:d] + _D7 * k7[:d])
                    count += 1
                    ts[count] = t_end
                    ys[count, :] = y_new[:d]
                y = y_new
                t = t_end
                k1 = k7
                if use_box:
                    for j in range(d):
                        if y[j] < box_lo[j] or y[j] > box_hi[j]:
                            return LEFT_DOMAIN, t, y, ts[:count + 1], ys[:count + 1], rc[:count], count
                if total >= max_steps:
                    return TOO_MANY_STEPS, t, y, ts[:count + 1], ys[:count + 1], rc[:count], count
                fac = 0.9 * err ** (-0.2) if err > 0.0 else 10.0
                fac = min(10.0, max(0.2, fac))
                if not last:
                    h_prev = h * fac
                h = h * fac
                if last:
                    break
            else:
                fac = max(0.2, 0.9 * err ** (-0.2))
                h = h * fac
        if h_prev == 0.0:
            h_prev = h
    return OK, t, y, ts[:count + 1], ys[:count + 1], rc[:count], count


@_speed_up
def dense_eval(tq, ts, rc):
    """Evaluate Dormand-Prince dense output at query times ``tq``."""
    nq = tq.shape[0]
    d = rc.shape[2]
    out = np.empty((nq, d))
    nsteps = rc.shape[0]
    increasing = ts[nsteps] >= ts[0]
    for q in range(nq):
        tt = tq[q]
        # binary search over step intervals
        lo = 0
        hi = nsteps - 1
        while lo < hi:
            mid = (lo + hi) // 2
            right = ts[mid + 1]
            if (increasing and right < tt) or ((not increasing) and right > tt):
                lo = mid + 1
            else:
                hi = mid
        i = lo
        h = ts[i + 1] - ts[i]
        theta = (tt - ts[i]) / h if h != 0.0 else 0.0
        th1 = 1.0 - theta
        for j in range(d):
            out[q, j] = rc[i, 0, j] + theta * (rc[i, 1, j] + th1 * (
                rc[i, 2, j] + theta * (rc[i, 3, j] + th1 * rc[i, 4, j])))
    return out


@_speed_up
def pl_length(knots, values):
    """Length ``int |v(t)| dt`` of a piecewise-linear control (8-point Gauss per piece)."""
    gx = np.array([-0.9602898564975363, -0.7966664774136267, -0.5255324099163290,
                   -0.1834346424956498, 0.1834346424956498, 0.5255324099163290,
                   0.7966664774136267, 0.9602898564975363])
    gw = np.array([0.1012285362903763, 0.2223810344533745, 0.3137066458778873,
                   0.3626837833783620, 0.3626837833783620, 0.3137066458778873,
                   0.2223810344533745, 0.1012285362903763])
    total = 0.0
    for i in range(knots.shape[0] - 1):
        a = knots[i]
        b = knots[i + 1]
        half = 0.5 * (b - a)
        for q in range(8):
            s = 0.5 * (gx[q] + 1.0)
            acc = 0.0
            for j in range(values.shape[1]):
                v = (1.0 - s) * values[i, j] + s * values[i + 1, j]
                acc += v * v
            total += half * gw[q] * np.sqrt(acc)
    return total
