"""Independent closed-form oracles used by the tests."""

import numpy as np
from scipy.optimize import brentq


def heis_mul(p, q):
    """Group law matching the frame X1 = d1 - x2/2 d3, X2 = d2 + x1/2 d3."""
    return np.array([p[0] + q[0], p[1] + q[1], p[2] + q[2] + 0.5 * (p[0] * q[1] - p[1] * q[0])])


def heis_inv(p):
    return -np.asarray(p, dtype=float)


def heis_distance(p, q):
    """Exact distance: geodesics project to circular arcs enclosing the height as area."""
    g = heis_mul(heis_inv(p), np.asarray(q, dtype=float))
    c = np.hypot(g[0], g[1])
    z = abs(g[2])
    if z == 0:
        return c
    if c == 0:
        return 2 * np.sqrt(np.pi * z)
    # area between arc and chord: R^2 (th - sin th)/2 with c = 2 R sin(th/2)
    def area(th):
        R = c / (2 * np.sin(th / 2))
        return R * R * (th - np.sin(th)) / 2 - z
    th = brentq(area, 1e-12, 2 * np.pi - 1e-12, xtol=1e-15)
    return c * th / (2 * np.sin(th / 2))


def smooth_heisenberg_data(level):
    """Samples of a smooth-control Heisenberg curve on a middle-thirds set."""
    from subrie.flow import Control
    from subrie.structure import heisenberg
    from subrie.whitney import cantor_times, sample_curve

    ts = np.linspace(0, 1, 33)
    vals = np.stack([0.2 * np.cos(np.pi / 2 * ts), 0.2 * np.sin(np.pi / 2 * ts)], 1)
    return sample_curve(heisenberg(), Control.sampled(vals), [0, 0, 0], cantor_times(level))


def smooth_grushin_data(level):
    """Samples of a smooth-control Grushin curve crossing the singular line."""
    from subrie.flow import Control
    from subrie.structure import grushin
    from subrie.whitney import cantor_times, sample_curve

    ts = np.linspace(0, 1, 33)
    vals = np.stack([0.5 + 0 * ts, 0.3 * np.cos(np.pi * ts)], 1)
    return sample_curve(grushin(), Control.sampled(vals), [-0.25, 0.1], cantor_times(level))


def bump_x3(data, index, amount=0.05):
    from subrie.whitney import WhitneyData

    pts = data.points.copy()
    pts[index, 2] += amount
    return WhitneyData(data.times, pts, data.controls)
