"""Invariant manifolds of the planar standard-map factor.

The normal factor of the product maps is the standard map

    x' = x + y',   y' = y + k sin x

with a saddle at the origin.  Its one-dimensional stable and unstable
manifolds are parametrized through the fundamental-domain trick: a point
at manifold parameter s is M^j(tau * e) with tau = s * mult^{-j} pushed
into a tiny seed interval where the manifold is linear to roundoff.
Coordinates are kept on the covering plane (x unreduced); callers wrap as
needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotFound
from .nhim import saddle_frame


def sm_apply(k, pts, inverse=False):
    """Standard-map factor on (..., 2) arrays of plane coordinates."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[..., 0], pts[..., 1]
    if inverse:
        x0 = x - y
        y0 = y - k * np.sin(x0)
        out = np.stack([x0, y0], axis=-1)
    else:
        y1 = y + k * np.sin(x)
        out = np.stack([x + y1, y1], axis=-1)
    return out


def sm_orbit(k, p, n, inverse=False):
    """n-step orbit [p, M p, ..., M^n p] as an (n+1, 2) array."""
    out = np.empty((n + 1, 2))
    out[0] = p
    for i in range(n):
        out[i + 1] = sm_apply(k, out[i], inverse=inverse)
    return out


@dataclass(frozen=True)
class ManifoldParam:
    """Parametrization s -> point of one separatrix branch."""

    k: float
    stable: bool
    branch: int = +1      # sign of the seed direction along the eigenvector
    seed: float = 1e-9    # fundamental seed scale; parametrization error O(seed)

    def __post_init__(self):
        if self.branch not in (+1, -1):
            raise ValueError("branch must be +1 or -1")

    @property
    def mult(self):
        lam_s, lam_u, *_ = saddle_frame(self.k)
        return 1.0 / lam_s if self.stable else lam_u

    @property
    def evec(self):
        lam_s, lam_u, e_s, e_u, _, _ = saddle_frame(self.k)
        return e_s if self.stable else e_u

    def point(self, s):
        """Manifold point at parameter s > 0 (seed-scale units of arclength)."""
        if s <= 0:
            raise ValueError("parameter must be positive")
        mult = self.mult
        j = max(0, int(math.ceil(math.log(s / self.seed) / math.log(mult))))
        tau = s * mult ** (-j)
        p = self.branch * tau * self.evec
        for _ in range(j):
            p = sm_apply(self.k, p, inverse=self.stable)
        return p

    def tangent(self, s, rel=1e-7):
        h = rel * s
        d = self.point(s + h) - self.point(s - h)
        return d / np.linalg.norm(d)


def grow_polyline(param, s_max, s_min=None, max_turn=0.05, max_seg=0.1,
                  max_points=40000):
    """Adaptive polyline of one branch for s in [s_min, s_max].

    Refines by parameter bisection until consecutive segments turn by at
    most ``max_turn`` radians and are shorter than ``max_seg``.  Returns
    (s values, points) with s increasing.
    """
    if s_min is None:
        s_min = param.seed
    n0 = max(64, int(40 * math.log10(s_max / s_min)))
    ss = list(np.geomspace(s_min, s_max, n0))
    pts = [param.point(s) for s in ss]
    i = 0
    while i < len(ss) - 1 and len(ss) < max_points:
        a, b = pts[i], pts[i + 1]
        seg = b - a
        ln = np.linalg.norm(seg)
        bad = ln > max_seg
        if not bad and 0 < i:
            pr = pts[i - 1]
            v0 = a - pr
            cosang = np.dot(v0, seg) / (np.linalg.norm(v0) * ln + 1e-300)
            bad = cosang < math.cos(max_turn) and ln > 1e-9
        if bad:
            sm = math.sqrt(ss[i] * ss[i + 1])
            ss.insert(i + 1, sm)
            pts.insert(i + 1, param.point(sm))
        else:
            i += 1
    return np.array(ss), np.array(pts)


def polyline_distance(pts, poly):
    """Distance of each point in (N, 2) ``pts`` to the polyline (M, 2)."""
    pts = np.atleast_2d(pts)
    a = poly[:-1]
    d = poly[1:] - a
    dd = np.einsum("ij,ij->i", d, d) + 1e-300
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        t = np.clip(((p - a) * d).sum(axis=1) / dd, 0.0, 1.0)
        proj = a + t[:, None] * d
        out[i] = np.min(np.hypot(*(p - proj).T))
    return out


def refined_distance(pts, params, polylines):
    """Distance of points to the union of parametrized branches.

    ``params`` and ``polylines`` are parallel lists; each polyline is the
    (s, points) pair returned by grow_polyline and only seeds the search.
    The distance is then minimized over the exact parametrization (Brent),
    so it is not limited by chord error.
    """
    from scipy.optimize import minimize_scalar

    pts = np.atleast_2d(pts)
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        best = np.inf
        for param, (ss, poly) in zip(params, polylines):
            j = int(np.argmin(np.hypot(*(poly - p).T)))
            lo = ss[max(0, j - 1)]
            hi = ss[min(len(ss) - 1, j + 1)]
            f = lambda ls: float(np.hypot(*(param.point(math.exp(ls)) - p)))
            r = minimize_scalar(f, bounds=(math.log(lo), math.log(hi)),
                                method="bounded",
                                options={"xatol": 1e-9})
            best = min(best, r.fun, np.hypot(*(p - np.array([0.0, 0.0]))))
        out[i] = best
    return out


def find_crossings(poly, x_value):
    """Indices and interpolated points where the polyline crosses x = x_value."""
    x = poly[:, 0] - x_value
    hits = []
    for i in range(len(poly) - 1):
        if x[i] == 0.0:
            hits.append((i, 0.0, poly[i]))
        elif x[i] * x[i + 1] < 0:
            t = x[i] / (x[i] - x[i + 1])
            hits.append((i, t, poly[i] + t * (poly[i + 1] - poly[i])))
    if not hits:
        raise NotFound(f"polyline does not cross x = {x_value}")
    return hits
