"""Homoclinic structures of the hyperbolic factor.

Finds transverse intersections of the planar standard-map separatrices,
lifts them to two-dimensional homoclinic cylinders over the action band,
verifies the simplicity conditions that make the induced scattering map a
well-behaved diffeomorphism, and samples that map on a grid.

Plane conventions: the saddle sits at the origin; the unstable separatrix
is grown to the right, the stable one is the left-going branch of the
lifted saddle at x = 2*pi, so the primary intersection lies on the
symmetry line x = pi.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import maps as mp
from . import nhim
from .errors import (ContinuationFailed, FewerFound, NoConvergence, NotFound)
from .maps import OMEGA_MATRIX, TWO_PI
from .separatrix import (ManifoldParam, find_crossings, grow_polyline,
                         sm_apply)


# --- saddle of the planar factor ----------------------------------------

@dataclass(frozen=True)
class SaddleData:
    fixed_point: tuple
    multipliers: tuple        # (lam_u, lam_s)
    eigvecs: tuple            # (e_u, e_s) unit vectors
    k: float


def find_saddle(k):
    if k <= 0:
        raise ValueError("saddle data requires k > 0")
    lam_s, lam_u, e_s, e_u, _, _ = nhim.saddle_frame(k)
    return SaddleData((0.0, 0.0), (lam_u, lam_s), (e_u, e_s), float(k))


# --- primary homoclinic point -------------------------------------------

@dataclass
class HomoclinicPoint:
    xy: np.ndarray
    residual: float
    angle: float
    t: float         # unstable-manifold parameter
    sigma: float     # stable-manifold parameter (branch at the 2*pi lift)


def _separatrix_pair(k):
    """Unstable branch from the origin and stable branch into the lift."""
    pu = ManifoldParam(k, stable=False, branch=+1)
    ps = ManifoldParam(k, stable=True, branch=-1)
    shift = np.array([TWO_PI, 0.0])
    return pu, ps, shift


def _refine_intersection(pu, ps, shift, t0, s0, tol=1e-12, max_iter=50):
    """Newton in log parameters on p_u(t) - (shift + p_s(sigma)) = 0."""
    u = np.array([math.log(t0), math.log(s0)])
    for _ in range(max_iter):
        t, s = math.exp(u[0]), math.exp(u[1])
        r = pu.point(t) - shift - ps.point(s)
        if np.linalg.norm(r) < tol:
            break
        h = 1e-7
        jt = (pu.point(t * math.exp(h)) - pu.point(t * math.exp(-h))) / (2 * h)
        js = -(ps.point(s * math.exp(h)) - ps.point(s * math.exp(-h))) / (2 * h)
        J = np.column_stack([jt, js])
        try:
            du = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            raise NoConvergence("intersection Newton hit a singular tangent "
                                "frame", residual=float(np.linalg.norm(r)))
        step = np.clip(du, -0.5, 0.5)
        u = u - step
    t, s = math.exp(u[0]), math.exp(u[1])
    r = pu.point(t) - shift - ps.point(s)
    res = float(np.linalg.norm(r))
    tu = pu.tangent(t)
    ts = ps.tangent(s)
    ang = float(math.asin(min(1.0, abs(tu[0] * ts[1] - tu[1] * ts[0]))))
    return HomoclinicPoint(pu.point(t), res, ang, t, s)


def _param_at(ss, i, frac):
    """Geometric interpolation of the parameter at a fractional index."""
    a = ss[i]
    b = ss[min(i + 1, len(ss) - 1)]
    return a * (b / a) ** frac


def find_primary_homoclinic(saddle, tol=1e-8, s_max=30.0):
    """Transverse intersection of the separatrices on the line x = pi."""
    pu, ps, shift = _separatrix_pair(saddle.k)
    ss_u, poly_u = grow_polyline(pu, s_max)
    ss_s, poly_s = grow_polyline(ps, s_max)
    hits_u = find_crossings(poly_u, math.pi)
    hits_s = find_crossings(poly_s + shift, math.pi)
    best = None
    for iu, fu, qu in hits_u:
        for isv, fs, qs in hits_s:
            gap = abs(qu[1] - qs[1])
            if best is None or gap < best[0]:
                best = (gap, iu, fu, isv, fs)
    _, iu, fu, isv, fs = best
    p = _refine_intersection(pu, ps, shift,
                             _param_at(ss_u, iu, fu),
                             _param_at(ss_s, isv, fs))
    if p.residual >= tol:
        raise NoConvergence("homoclinic refinement residual above tolerance",
                            residual=p.residual)
    return p


# --- homoclinic cylinders ------------------------------------------------

@dataclass
class HomoclinicCylinder:
    id: int
    phis: np.ndarray
    Is: np.ndarray
    points: np.ndarray        # (n_phi, n_I, 4)
    m_minus: int
    m_plus: int
    p_h: HomoclinicPoint
    band: tuple
    station_depth: int = 0    # extra iterates used when pinning samples

    def family(self):
        """The normal components as an interpolable graph over the base."""
        return nhim.CylinderGraph(band=self.band, phis=self.phis, Is=self.Is,
                                  values=self.points[:, :, 2:4].copy())

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["phi", "I", "x", "y"])
            for i in range(len(self.phis)):
                for j in range(len(self.Is)):
                    w.writerow([repr(v) for v in self.points[i, j]])


def _excursion_counts(md, cyl, p_h_xy, delta, m_cap):
    """Iterate counts bringing the seed closest to the channel.

    The seed is only approximately homoclinic once the map is perturbed,
    so its iterates approach the cylinder and then peel off again; the
    count at the closest approach anchors the continuation, which then
    certifies channel entry on the corrected samples.
    """
    out = []
    for inverse in (False, True):
        q = np.array([[0.0, (cyl.band[0] + cyl.band[1]) / 2, *p_h_xy]])
        offs = []
        for m in range(m_cap + 1):
            off = nhim.centered_xy(q) - cyl.g(q[:, 0], q[:, 1])
            offs.append(float(np.linalg.norm(off)))
            q = mp.apply_array(md, q, inverse=inverse)
        inside = [m for m, o in enumerate(offs) if o < delta]
        best = inside[0] if inside else int(np.argmin(offs))
        if offs[best] > 1.0:
            raise ContinuationFailed(
                f"seed never came near the channel within {m_cap} iterates "
                f"(closest {offs[best]:.3e})")
        out.append(max(1, best))
    return out[0], out[1]   # (m_plus, m_minus)


def _station_offsets(md, cyl, pts, m, inverse):
    cur = pts.copy()
    for _ in range(m):
        cur = mp.apply_array(md, cur, inverse=inverse)
    off = nhim.centered_xy(cur) - cyl.g(cur[:, 0], cur[:, 1])
    return float(np.max(np.linalg.norm(off, axis=1)))


def _split_residual(md, cyl, pts, m_plus, m_minus, l_s, l_u):
    """(unstable content after m_plus steps, stable after -m_minus steps)."""
    fwd = pts.copy()
    for _ in range(m_plus):
        fwd = mp.apply_array(md, fwd)
    back = pts.copy()
    for _ in range(m_minus):
        back = mp.apply_array(md, back, inverse=True)
    ru = (nhim.centered_xy(fwd) - cyl.g(fwd[:, 0], fwd[:, 1])) @ l_u
    rs = (nhim.centered_xy(back) - cyl.g(back[:, 0], back[:, 1])) @ l_s
    return np.stack([ru, rs], axis=-1)


def _pin_newton(md, cyl, pts, m_plus, m_minus, l_s, l_u, tol=1e-10,
                max_iter=25, clip=0.2, h=1e-7):
    """Two-sided Newton placing each point on W^s(A) and W^u(A).

    Unknowns are the normal coordinates of each point; the residuals are
    the unstable content of the forward station and the stable content of
    the backward one.
    """
    pts = pts.copy()
    for it in range(max_iter):
        r = _split_residual(md, cyl, pts, m_plus, m_minus, l_s, l_u)
        if np.max(np.abs(r)) < tol:
            return pts
        cols = []
        for dv in (np.array([0, 0, 1.0, 0]), np.array([0, 0, 0, 1.0])):
            rP = _split_residual(md, cyl, pts + h * dv, m_plus, m_minus,
                                 l_s, l_u)
            cols.append((rP - r) / h)
        J = np.stack(cols, axis=-1)            # (N, 2, 2)
        try:
            step = np.linalg.solve(J, r[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise ContinuationFailed("singular node Jacobian during "
                                     "homoclinic continuation")
        nrm = np.linalg.norm(step, axis=1, keepdims=True)
        step = step * np.minimum(1.0, clip / np.maximum(nrm, 1e-300))
        pts[:, 2] -= step[:, 0]
        pts[:, 3] -= step[:, 1]
    r = _split_residual(md, cyl, pts, m_plus, m_minus, l_s, l_u)
    worst = int(np.argmax(np.max(np.abs(r), axis=1)))
    raise ContinuationFailed(
        f"homoclinic continuation stalled at node {worst} "
        f"(residual {np.max(np.abs(r)):.3e})")


def build_homoclinic_cylinder(md, cyl, p_h, band, grid_sizes=(32, 12),
                              delta=0.05, tol=1e-10, m_cap=30, max_iter=25,
                              station_depth=3, cyl_id=0):
    """Continue the product cylinder band x {p_h} to an invariant family.

    Each grid node solves a two-unknown Newton problem in the normal
    coordinates: the unstable content of the forward excursion endpoint and
    the stable content of the backward one must both vanish, which places
    the sample on W^s(A) and W^u(A) simultaneously.  The conditions are
    imposed ``station_depth`` iterates past the channel entry: at the entry
    point itself the manifold's curvature leaves quadratic residual content
    that the extra contraction suppresses.
    """
    lam_s, lam_u, e_s, e_u, l_s, l_u = nhim.saddle_frame(md.normal_k)
    phis = np.linspace(0.0, TWO_PI, grid_sizes[0], endpoint=False)
    Is = np.linspace(band[0], band[1], grid_sizes[1])
    xy = np.array([mp.reduce_angle(p_h.xy[0]), p_h.xy[1]])
    m_plus, m_minus = _excursion_counts(md, cyl, xy, delta, m_cap)

    P, A = np.meshgrid(phis, Is, indexing="ij")
    pts = np.column_stack([P.ravel(), A.ravel(),
                           np.full(P.size, xy[0]), np.full(P.size, xy[1])])

    def newton(pts, mpl, mmi):
        return _pin_newton(md, cyl, pts, mpl, mmi, l_s, l_u, tol=tol,
                           max_iter=max_iter)

    # corrected samples must actually enter the channel at the entry
    # stations; if not, push the stations deeper and re-solve
    for _ in range(6):
        pts = newton(pts, m_plus, m_minus)
        grow = False
        if _station_offsets(md, cyl, pts, m_plus, False) >= delta:
            m_plus += 1
            grow = True
        if _station_offsets(md, cyl, pts, m_minus, True) >= delta:
            m_minus += 1
            grow = True
        if not grow:
            break
        if m_plus > m_cap or m_minus > m_cap:
            raise ContinuationFailed(
                f"channel entry needs more than {m_cap} iterates")
    # deepen gradually: each step refines within the same solution branch
    # (a deep first solve would face the tangle's many spurious roots)
    for d in range(1, station_depth + 1):
        pts = newton(pts, m_plus + d, m_minus + d)
    points = pts.reshape(len(phis), len(Is), 4)
    return HomoclinicCylinder(cyl_id, phis, Is, points, m_minus, m_plus,
                              p_h, tuple(band), station_depth)


# --- excursion-aware holonomy projections -------------------------------

def project_excursion(md, cyl, pts, m, proj, direction="stable"):
    """Holonomy projection of points far from the channel.

    Iterates ``m`` steps toward the cylinder first (forward for the stable
    side, backward for the unstable), projects there, and pulls the base
    point back with the restricted dynamics.
    """
    cur = np.atleast_2d(np.asarray(pts, dtype=float)).copy()
    inverse = direction != "stable"
    for _ in range(m):
        cur = mp.apply_array(md, cur, inverse=inverse)
    v, ok, logs = nhim.project_batch(cur, proj, direction=direction,
                                     strict=False)
    for _ in range(m):
        v = nhim.restricted_apply(md, cyl, v, inverse=not inverse,
                                  enforce_band=False)
    v[:, 0] = mp.reduce_angle(v[:, 0])
    return v, ok


# --- scattering map ------------------------------------------------------

@dataclass
class ScatteringMapSample:
    phis: np.ndarray
    Is: np.ndarray
    Psi: np.ndarray            # (n_phi, n_I)
    Y: np.ndarray
    exactness_residual: float
    band: tuple
    details: dict = field(default_factory=dict)

    def deviation(self):
        """sup distance from the identity over the grid."""
        dphi = mp.wrap_diff(self.Psi, self.phis[:, None])
        dI = self.Y - self.Is[None, :]
        return float(np.max(np.hypot(dphi, dI)))

    def interp(self):
        """Callable (phi, I) -> (Psi, Y) from the sampled grid."""
        shift = nhim.CylinderGraph(
            band=self.band, phis=self.phis, Is=self.Is,
            values=np.stack([mp.wrap_diff(self.Psi, self.phis[:, None]),
                             self.Y - self.Is[None, :]], axis=-1))

        def F(phi, I):
            d = shift.g(phi, I)
            return mp.reduce_angle(phi + d[..., 0]), I + d[..., 1]
        return F

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["phi", "I", "Psi", "Y"])
            for i, p in enumerate(self.phis):
                for j, a in enumerate(self.Is):
                    w.writerow([repr(p), repr(a),
                                repr(self.Psi[i, j]), repr(self.Y[i, j])])

    def sidecar(self):
        return {"band": list(self.band),
                "grid": [len(self.phis), len(self.Is)],
                "exactness_residual": self.exactness_residual,
                "deviation": self.deviation()}


def _row_action(psi_row, y_row):
    """Loop action integral of the image circle, with a continuous lift."""
    lift = np.concatenate([[psi_row[0]],
                           psi_row[0] + np.cumsum(mp.wrap_diff(
                               psi_row[1:], psi_row[:-1]))])
    lift = np.append(lift, lift[0] + TWO_PI)
    y = np.append(y_row, y_row[0])
    return float(np.trapezoid(y, lift))


def scattering_map(md, cyl, B, grid_sizes=(32, 16), margin=0.05,
                   delta=0.05, tol=1e-8, max_iter=12):
    """Sample pi^s o (pi^u)^-1 across the homoclinic cylinder on a grid.

    For each base node v the cylinder family is searched (Newton over its
    base parameters) for the sample whose unstable projection is v; the
    stable projection of that sample is the image.  The margin keeps the
    grid strictly inside the sampled action range so the family
    interpolation stays reliable.
    """
    lo, hi = B.band
    pad = margin * (hi - lo)
    phis = np.linspace(0.0, TWO_PI, grid_sizes[0], endpoint=False)
    Is = np.linspace(lo + pad, hi - pad, grid_sizes[1])
    P, A = np.meshgrid(phis, Is, indexing="ij")
    target = np.stack([P.ravel(), A.ravel()], axis=-1)
    img = scatter_at(md, cyl, B, target, delta=delta, tol=tol,
                     max_iter=max_iter)
    Psi = img[:, 0].reshape(P.shape)
    Y = img[:, 1].reshape(P.shape)

    rows = np.linspace(0, len(Is) - 1, min(5, len(Is))).astype(int)
    exact = max(abs(_row_action(Psi[:, j], Y[:, j]) - TWO_PI * Is[j])
                for j in rows)
    return ScatteringMapSample(phis, Is, Psi, Y, float(exact),
                               (Is[0], Is[-1]))


def scatter_at(md, cyl, B, target, delta=0.05, tol=1e-8, max_iter=12):
    """Scattering-map images at arbitrary base points (no interpolation)."""
    fam = B.family()
    proj = nhim.HolonomyProjector(md, cyl, delta=delta, tol=tol)
    _, _, _, _, l_s, l_u = nhim.saddle_frame(md.normal_k)
    target = np.atleast_2d(np.asarray(target, dtype=float))

    w = target.copy()

    def onto(wv):
        # interpolation error in the sampled family carries unstable
        # content that the excursion would amplify; re-pin each point
        x = fam.point4(wv)
        return _pin_newton(md, cyl, x,
                           B.m_plus + B.station_depth,
                           B.m_minus + B.station_depth,
                           l_s, l_u, max_iter=8)

    def uproj(wv):
        v, _ = project_excursion(md, cyl, onto(wv), B.m_minus, proj,
                                 direction="unstable")
        return v

    h = 1e-6
    for it in range(max_iter):
        v = uproj(w)
        r = np.stack([mp.wrap_diff(v[:, 0], target[:, 0]),
                      v[:, 1] - target[:, 1]], axis=-1)
        if np.max(np.abs(r)) < tol:
            break
        cols = []
        for dv in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
            vP = uproj(w + h * dv)
            cols.append(np.stack([mp.wrap_diff(vP[:, 0], v[:, 0]),
                                  vP[:, 1] - v[:, 1]], axis=-1) / h)
        J = np.stack(cols, axis=-1)
        step = np.linalg.solve(J, r[..., None])[..., 0]
        w = w - step
        w[:, 0] = mp.reduce_angle(w[:, 0])
    else:
        raise NoConvergence("scattering preimage Newton did not converge",
                            residual=float(np.max(np.abs(r))))

    img, ok = project_excursion(md, cyl, onto(w), B.m_plus, proj,
                                direction="stable")
    if not np.all(ok):
        raise NoConvergence("stable projection failed on scattering grid")
    return img


# --- simplicity ----------------------------------------------------------

@dataclass
class SimplicityReport:
    s1_condition: float
    s1_ok: bool
    s2_ok: bool
    s3_winding: int
    s3_ok: bool
    passed: bool
    details: dict = field(default_factory=dict)


def _orbit_jacobian(md, p, n, inverse=False):
    """D(Phi^n) at p (or of the inverse map chain)."""
    J = np.eye(4)
    cur = np.asarray(p, dtype=float).copy()
    for _ in range(n):
        if inverse:
            nxt = mp.apply_array(md, cur[None, :], inverse=True)[0]
            J = np.linalg.inv(mp.jacobian(md, nxt)) @ J
            cur = nxt
        else:
            J = mp.jacobian(md, cur) @ J
            cur = mp.apply_array(md, cur[None, :])[0]
    return J


def fiber_tangents(md, B, node):
    """Transported unstable/stable fiber directions at a cylinder sample.

    The fibers are normal near the cylinder; carrying those directions
    along the excursion with the orbit differential yields the tangents of
    E^{uu} and E^{ss} at the homoclinic sample itself.
    """
    _, _, e_s, e_u, _, _ = nhim.saddle_frame(md.normal_k)
    i, j = node
    p = B.points[i, j]
    back = p.copy()
    for _ in range(B.m_minus):
        back = mp.apply_array(md, back[None, :], inverse=True)[0]
    Ju = _orbit_jacobian(md, back, B.m_minus)
    fu = Ju @ np.array([0.0, 0.0, *e_u])
    # stable fiber: pull (0,0,e_s) back from the forward endpoint
    fwd_J = _orbit_jacobian(md, p, B.m_plus)
    fs = np.linalg.solve(fwd_J, np.array([0.0, 0.0, *e_s]))
    return fu / np.linalg.norm(fu), fs / np.linalg.norm(fs)


def _cylinder_tangents(B, node):
    i, j = node
    n_phi = len(B.phis)
    dphi = B.phis[1] - B.phis[0]
    dI = B.Is[1] - B.Is[0]
    tp = (B.points[(i + 1) % n_phi, j] - B.points[(i - 1) % n_phi, j])
    tp[0] = mp.wrap_diff(B.points[(i + 1) % n_phi, j, 0],
                         B.points[(i - 1) % n_phi, j, 0])
    tp = tp / (2 * dphi)
    jm = max(0, j - 1)
    jp = min(len(B.Is) - 1, j + 1)
    ti = (B.points[i, jp] - B.points[i, jm]) / ((jp - jm) * dI)
    return tp / np.linalg.norm(tp), ti / np.linalg.norm(ti)


def check_simplicity(md, cyl, B, sample=None, cond_tol=1e6,
                     fiber_override=None):
    """Strong transversality, injectivity, and essential-image checks.

    S1: the fiber tangents and the cylinder-family tangents must span all
    of phase space; measured by the condition number of the 4x4 span
    matrix at a node subsample.  S2: the sampled scattering map must have
    a nondegenerate, orientation-consistent base Jacobian everywhere.
    S3: image circles must wind zero net times relative to their source.
    """
    if sample is None:
        sample = scattering_map(md, cyl, B, grid_sizes=(16, 8))
    get_fibers = fiber_override or (lambda node: fiber_tangents(md, B, node))
    cond = 0.0
    nodes = [(i, j)
             for i in range(0, len(B.phis), max(1, len(B.phis) // 8))
             for j in range(0, len(B.Is), max(1, len(B.Is) // 4))]
    for node in nodes:
        fu, fs = get_fibers(node)
        tp, ti = _cylinder_tangents(B, node)
        M = np.column_stack([fu, fs, tp, ti])
        cond = max(cond, float(np.linalg.cond(M)))
    s1_ok = cond < cond_tol

    # base Jacobian of the sampled map via periodic finite differences
    Psi, Y = sample.Psi, sample.Y
    dphi = sample.phis[1] - sample.phis[0]
    dI = sample.Is[1] - sample.Is[0]
    dPsi_p = mp.wrap_diff(np.roll(Psi, -1, 0), np.roll(Psi, 1, 0)) / (2 * dphi)
    dY_p = (np.roll(Y, -1, 0) - np.roll(Y, 1, 0)) / (2 * dphi)
    dPsi_I = np.gradient(np.unwrap(Psi, axis=0), dI, axis=1)
    dY_I = np.gradient(Y, dI, axis=1)
    det = dPsi_p * dY_I - dPsi_I * dY_p
    s2_ok = bool(np.all(det > 0) or np.all(det < 0))

    winding = 0
    for j in range(Psi.shape[1]):
        rel = mp.wrap_diff(Psi[:, j], sample.phis)
        total = np.sum(mp.wrap_diff(np.roll(rel, -1), rel))
        winding = max(winding, abs(int(round(total / TWO_PI))))
    s3_ok = winding == 0

    return SimplicityReport(cond, s1_ok, s2_ok, winding, s3_ok,
                            s1_ok and s2_ok and s3_ok,
                            {"jac_det_range": (float(det.min()),
                                               float(det.max()))})


# --- secondary homoclinic cylinders -------------------------------------

def _segment_intersections(P, Q, chunk=256):
    """Proper crossings between two polylines, as (iP, tP, iQ, tQ) tuples."""
    A, Bseg = P[:-1], P[1:] - P[:-1]
    C, Dseg = Q[:-1], Q[1:] - Q[:-1]
    hits = []
    for s0 in range(0, len(A), chunk):
        a = A[s0:s0 + chunk, None, :]
        b = Bseg[s0:s0 + chunk, None, :]
        c = C[None, :, :]
        d = Dseg[None, :, :]
        denom = b[..., 0] * d[..., 1] - b[..., 1] * d[..., 0]
        rel = c - a
        t = (rel[..., 0] * d[..., 1] - rel[..., 1] * d[..., 0])
        u = (rel[..., 0] * b[..., 1] - rel[..., 1] * b[..., 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            t = t / denom
            u = u / denom
        ok = (np.abs(denom) > 1e-300) & (t >= 0) & (t < 1) & (u >= 0) & (u < 1)
        for i, j in zip(*np.nonzero(ok)):
            hits.append((s0 + int(i), float(t[i, j]), int(j), float(u[i, j])))
    return hits


def _orbit_key(hp, lam_u):
    """Orbit invariant: map steps scale (t, sigma) by (lam_u, 1/lam_u),
    so normalizing t into [1, lam_u) gives one representative per orbit."""
    j = math.floor(math.log(hp.t) / math.log(lam_u))
    return (hp.t * lam_u ** (-j), hp.sigma * lam_u ** j)


def find_homoclinic_points(k, s_max=1200.0, x_window=(0.3, TWO_PI - 0.3),
                           tol=1e-8):
    """All distinct homoclinic orbits visible in the separatrix window.

    Intersections are refined from polyline crossings and deduplicated by
    the orbit invariant: advancing one map step multiplies the unstable
    parameter by lambda_u and the stable one by lambda_s, so pairs are
    normalized into a fundamental parameter domain before comparison.
    """
    pu, ps, shift = _separatrix_pair(k)
    ss_u, poly_u = grow_polyline(pu, s_max)
    ss_s, poly_s = grow_polyline(ps, s_max)
    poly_sh = poly_s + shift
    lam_u = pu.mult
    found = {}
    for iu, tu, isv, tsv in _segment_intersections(poly_u, poly_sh):
        q = poly_u[iu] + tu * (poly_u[iu + 1] - poly_u[iu])
        if not (x_window[0] < q[0] < x_window[1]):
            continue
        try:
            hp = _refine_intersection(pu, ps, shift,
                                      _param_at(ss_u, iu, tu),
                                      _param_at(ss_s, isv, tsv))
        except NoConvergence:
            continue
        if hp.residual >= tol or hp.angle < 1e-6:
            continue
        key = _orbit_key(hp, lam_u)
        for k0, k1 in found:
            if abs(key[0] - k0) < 1e-3 * k0 and abs(key[1] - k1) < 1e-3 * k1:
                break
        else:
            found[key] = hp
    if not found:
        raise NotFound("no transverse separatrix intersections in window")
    return sorted(found.values(), key=lambda h: (h.t, h.sigma))


def generate_secondary(md, cyl, B, count, grid_sizes=(16, 8), delta=0.05,
                       s_max=1200.0, verify=True):
    """Lift further separatrix intersections to homoclinic cylinders.

    With ``verify`` every candidate must pass the simplicity checks;
    failures are skipped rather than fatal.
    """
    lam_u = ManifoldParam(md.normal_k, stable=False).mult
    prim_key = _orbit_key(B.p_h, lam_u)
    pts = find_homoclinic_points(md.normal_k, s_max=s_max)
    out = []
    for hp in pts:
        key = _orbit_key(hp, lam_u)
        if abs(key[0] - prim_key[0]) < 1e-3 * prim_key[0] and \
           abs(key[1] - prim_key[1]) < 1e-3 * prim_key[1]:
            continue
        if len(out) == count:
            break
        try:
            cand = build_homoclinic_cylinder(
                md, cyl, hp, B.band, grid_sizes=grid_sizes, delta=delta,
                cyl_id=B.id + 1 + len(out))
            if verify and not check_simplicity(md, cyl, cand).passed:
                continue
            out.append(cand)
        except (ContinuationFailed, NoConvergence):
            continue
    if len(out) < count:
        raise FewerFound(
            f"requested {count} secondary cylinders, continued {len(out)}",
            found=out)
    return out


def advance_homoclinic(k, hp):
    """The homoclinic data one map step downstream along its orbit."""
    lam_u = ManifoldParam(k, stable=False).mult
    return HomoclinicPoint(sm_apply(k, hp.xy), hp.residual, hp.angle,
                           hp.t * lam_u, hp.sigma / lam_u)


def conjugacy_residual(md, cyl, B, grid_sizes=(16, 8)):
    """Deviation of the mapped cylinder's scattering map from the
    conjugate F0 o F_B o F0^{-1}; both must agree for a true homoclinic
    family because the construction commutes with the dynamics."""
    B2 = build_homoclinic_cylinder(
        md, cyl, advance_homoclinic(md.normal_k, B.p_h), B.band,
        grid_sizes=(len(B.phis), len(B.Is)), cyl_id=B.id + 1000)
    s1 = scattering_map(md, cyl, B, grid_sizes=grid_sizes)
    P, A = np.meshgrid(s1.phis, s1.Is, indexing="ij")
    v = np.stack([P.ravel(), A.ravel()], axis=-1)
    lhs = nhim.restricted_apply(
        md, cyl, np.column_stack([s1.Psi.ravel(), s1.Y.ravel()]),
        enforce_band=False)
    rhs = scatter_at(md, cyl, B2,
                     nhim.restricted_apply(md, cyl, v, enforce_band=False))
    res = np.hypot(mp.wrap_diff(lhs[:, 0], rhs[:, 0]), lhs[:, 1] - rhs[:, 1])
    return float(np.max(res))


# --- symplectic geometry checks -----------------------------------------

def symplectic_orthogonality_check(md, cyl, samples, n_refine=8, tol=1e-6):
    """Fiber directions are Omega-orthogonal to the stable manifold.

    Both the stable-fiber tangent and the manifold tangent at each sample
    are only available as channel approximations; transporting the
    approximations from n iterates downstream sharpens both, and the
    Omega-pairing must decay to below tolerance.
    """
    _, _, e_s, _, _, _ = nhim.saddle_frame(md.normal_k)
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    history = []
    for n in range(1, n_refine + 1):
        worst = 0.0
        for p in samples:
            J = _orbit_jacobian(md, p, n)
            q = p.copy()
            for _ in range(n):
                q = mp.apply_array(md, q[None, :])[0]
            gp = cyl.g(q[0], q[1], dphi=1)
            t1 = np.array([1.0, 0.0, gp[0], gp[1]])
            f = np.linalg.solve(J, np.array([0.0, 0.0, *e_s]))
            v = np.linalg.solve(J, t1)
            f = f / np.linalg.norm(f)
            v = v / np.linalg.norm(v)
            worst = max(worst, abs(float(f @ OMEGA_MATRIX @ v)))
        history.append(worst)
    return mp.CheckReport(history[-1] < tol, history[-1], None,
                          {"pairings": history})


def cylinder_form_check(md, cyl, tol=0.9):
    """Nondegeneracy of the symplectic form restricted to the cylinder."""
    vals = []
    for i, p in enumerate(cyl.phis):
        for j, a in enumerate(cyl.Is):
            gp = cyl.g(p, a, dphi=1)
            gI = cyl.g(p, a, dI=1)
            t1 = np.array([1.0, 0.0, gp[0], gp[1]])
            t2 = np.array([0.0, 1.0, gI[0], gI[1]])
            vals.append(abs(float(t1 @ OMEGA_MATRIX @ t2)))
    worst = min(vals)
    return mp.CheckReport(worst > tol, worst, None, {"min_abs_det": worst})
