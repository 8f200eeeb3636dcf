"""Iterated function system on the cylinder and the Birkhoff curve-evolution
transport dichotomy.

The system consists of the restricted base map F0 together with a list of
scattering maps F1..FN acting on an annulus A' = S^1 x [y_lo, y_hi].  Essential
curves (periodic Lipschitz graphs y = gamma(phi)) are evolved by repeatedly
replacing gamma with the upper envelope of its images under all maps; the
iteration either climbs from a lower boundary curve gamma^- to an upper one
gamma^+ (a Connecting certificate, with an explicit orbit extracted by
provenance backtracking) or stalls on a common invariant curve (an Obstruction
certificate, with per-map invariance residuals).
"""

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import maps as mp
from . import nhim
from .errors import BandOverflow, DomainExceeded, GenerationLimit

SEED = -1  # provenance map index marking seed samples of the starting curve


# ---------------------------------------------------------------------------
# essential curves

@dataclass
class EssentialCurve:
    """Periodic Lipschitz graph y = gamma(phi) with per-sample provenance.

    ``gen[i]``, ``map_idx[i]``, ``pre_phi[i]`` record that sample i was created
    at generation ``gen[i]`` as the image of the generation ``gen[i]-1`` curve
    at angle ``pre_phi[i]`` under map ``map_idx[i]``; seed samples carry
    ``map_idx = SEED`` and ``pre_phi = nan``.
    """

    phis: np.ndarray
    ys: np.ndarray
    L: float
    gen: np.ndarray = None
    map_idx: np.ndarray = None
    pre_phi: np.ndarray = None

    def __post_init__(self):
        self.phis = np.asarray(self.phis, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        n = self.phis.size
        if n < 256 or np.any(np.diff(self.phis) <= 0) or self.phis[-1] >= 2 * np.pi:
            raise ValueError(
                "phis must be a strictly increasing grid in [0, 2*pi) "
                "with at least 256 samples")
        if self.gen is None:
            self.gen = np.zeros(n, dtype=int)
        if self.map_idx is None:
            self.map_idx = np.full(n, SEED, dtype=int)
        if self.pre_phi is None:
            self.pre_phi = np.full(n, np.nan)

    def y(self, phi):
        """Periodic piecewise-linear interpolation."""
        phi = mp.reduce_angle(np.asarray(phi, dtype=float))
        xs = np.concatenate([self.phis, [self.phis[0] + 2 * np.pi]])
        vals = np.concatenate([self.ys, [self.ys[0]]])
        return np.interp(phi, xs, vals)

    def slope(self):
        """Largest slope between adjacent samples, including the wrap."""
        dphi = np.diff(np.concatenate([self.phis, [self.phis[0] + 2 * np.pi]]))
        dy = np.diff(np.concatenate([self.ys, [self.ys[0]]]))
        return float(np.max(np.abs(dy / dphi)))

    def is_lipschitz(self, slack=0.0):
        return self.slope() <= self.L + slack

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["phi", "y", "gen", "map_index", "preimage_phi"])
            for i in range(self.phis.size):
                w.writerow([repr(self.phis[i]), repr(self.ys[i]),
                            int(self.gen[i]), int(self.map_idx[i]),
                            repr(self.pre_phi[i])])


def flat_curve(y0, n_phi=256, L=1.0):
    """Horizontal seed circle y = y0."""
    phis = np.arange(n_phi) * 2 * np.pi / n_phi
    return EssentialCurve(phis=phis, ys=np.full(n_phi, float(y0)), L=float(L))


def curve_from_function(fun, n_phi=256, L=None):
    phis = np.arange(n_phi) * 2 * np.pi / n_phi
    ys = np.asarray(fun(phis), dtype=float)
    c = EssentialCurve(phis=phis, ys=ys, L=1.0)
    c.L = float(L) if L is not None else max(1e-12, c.slope())
    return c


# ---------------------------------------------------------------------------
# the iterated function system

@dataclass
class IFS:
    """F0 plus scattering maps on the annulus S^1 x [band[0], band[1]].

    Each evaluator is a vectorized callable (phi, y) -> (phi_new, y_new).
    """

    F0: object
    Fn: list
    band: tuple

    @property
    def all_maps(self):
        return [self.F0] + list(self.Fn)


def rotation_evaluator(angle, bump=None):
    """(phi, y) -> (phi + angle, y + bump(phi)); bump optional."""
    def F(phi, y):
        ynew = y if bump is None else y + bump(phi)
        return mp.reduce_angle(phi + angle), ynew
    return F


def twist_evaluator():
    """The integrable twist (phi, y) -> (phi + y, y)."""
    def F(phi, y):
        return mp.reduce_angle(phi + y), np.asarray(y, dtype=float) + 0.0
    return F


def restricted_evaluator(md, cyl):
    """Base dynamics of a map family restricted to an invariant cylinder."""
    def F(phi, y):
        V = np.stack([np.atleast_1d(np.asarray(phi, float)),
                      np.atleast_1d(np.asarray(y, float))], axis=-1)
        out = nhim.restricted_apply(md, cyl, V)
        return (mp.reduce_angle(out[:, 0].reshape(np.shape(phi))),
                out[:, 1].reshape(np.shape(y)))
    return F


def scattering_evaluator(sample):
    """Evaluator backed by an interpolated scattering-map sample."""
    return sample.interp()


def check_ifs(ifs, n_phi=64, n_y=8, twist_floor=0.5):
    """Winding-1 check for every map and a twist lower bound for F0."""
    details = {}
    ys = np.linspace(ifs.band[0], ifs.band[1], n_y)
    phis = np.arange(n_phi) * 2 * np.pi / n_phi
    windings = []
    for k, F in enumerate(ifs.all_maps):
        worst = 1
        for y0 in ys:
            p, _ = F(phis, np.full(n_phi, y0))
            lp = np.unwrap(np.concatenate([p, [p[0]]]))
            w = round((lp[-1] - lp[0]) / (2 * np.pi))
            if w != 1:
                worst = w
        windings.append(worst)
    details["windings"] = windings
    h = 1e-6
    pg, yg = np.meshgrid(phis, ys, indexing="ij")
    pp, _ = ifs.F0(pg.ravel(), yg.ravel() + h)
    pm, _ = ifs.F0(pg.ravel(), yg.ravel() - h)
    twist = np.abs(mp.wrap_diff(pp, pm)) / (2 * h)
    details["min_twist"] = float(twist.min())
    passed = all(w == 1 for w in windings) and details["min_twist"] > twist_floor
    return mp.CheckReport(passed=passed, max_residual=0.0,
                          worst_point=None, details=details)


def lipschitz_bound(F0, band, n_phi=64, n_y=16, h=1e-6):
    """Lipschitz constant for essential invariant curves of the twist map F0.

    sup over the band of max(|dphi'/dphi| / |dphi'/dy|, |dy'/dy| / |dphi'/dy|),
    estimated by central differences.
    """
    phis = np.arange(n_phi) * 2 * np.pi / n_phi
    ys = np.linspace(band[0], band[1], n_y)
    pg, yg = np.meshgrid(phis, ys, indexing="ij")
    p, y = pg.ravel(), yg.ravel()
    pp, _ = F0(p + h, y)
    pm, _ = F0(p - h, y)
    dp_dphi = np.abs(mp.wrap_diff(pp, pm)) / (2 * h)
    pp, yp = F0(p, y + h)
    pm, ym = F0(p, y - h)
    dp_dy = np.abs(mp.wrap_diff(pp, pm)) / (2 * h)
    dy_dy = np.abs(yp - ym) / (2 * h)
    return float(np.max(np.maximum(dp_dphi, dy_dy) / dp_dy))


# ---------------------------------------------------------------------------
# curve images and the envelope operator

def curve_image(F, gamma, band=None):
    """Closed image polyline (lifted phi, y, source phi) of an essential curve.

    The returned angles are lifted continuously; the closing vertex repeats the
    first one shifted by one period (the maps are homotopic to the identity).
    """
    src = np.concatenate([gamma.phis, [gamma.phis[0] + 2 * np.pi]])
    ysrc = np.concatenate([gamma.ys, [gamma.ys[0]]])
    p, y = F(mp.reduce_angle(src), ysrc)
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if band is not None and (np.any(y < band[0]) or np.any(y > band[1])):
        raise DomainExceeded(
            f"curve image leaves the band {band}: y range [{y.min()}, {y.max()}]")
    lp = np.unwrap(p)
    winding = round((lp[-1] - lp[0]) / (2 * np.pi))
    if winding != 1:
        raise DomainExceeded(f"image polyline has winding {winding}, expected 1")
    return lp, y, src


def _ray_crossings(lphi, y, src, phi0):
    """All crossings of the lifted polyline with the vertical line phi = phi0.

    Returns (y values, interpolated source phis) over every period shift that
    meets the polyline.
    """
    lo, hi = lphi.min(), lphi.max()
    ks = np.arange(np.ceil((lo - phi0) / (2 * np.pi)),
                   np.floor((hi - phi0) / (2 * np.pi)) + 1)
    ys_out, src_out = [], []
    a, b = lphi[:-1], lphi[1:]
    for k in ks:
        q = phi0 + 2 * np.pi * k
        hit = ((a - q) * (b - q) <= 0) & (a != b)
        if not np.any(hit):
            continue
        t = (q - a[hit]) / (b[hit] - a[hit])
        ys_out.append(y[:-1][hit] + t * (y[1:][hit] - y[:-1][hit]))
        src_out.append(src[:-1][hit] + t * (src[1:][hit] - src[:-1][hit]))
    if not ys_out:
        return np.empty(0), np.empty(0)
    return np.concatenate(ys_out), np.concatenate(src_out)


def _raster_boundary(gamma, lp, yim, band, n_cells=512):
    """Lower boundary of the top-adjacent component by component labeling.

    Rasterizes gamma and the image polyline as walls on an n_cells^2 grid over
    the annulus, labels the free cells (periodic in phi), and returns per
    curve-grid angle the bottom of the lowest cell of the component touching
    the band top.  Used when the image polyline is not a graph over phi.
    """
    from scipy import ndimage

    lo, hi = band
    dphi = 2 * np.pi / n_cells
    dy = (hi - lo) / n_cells

    def rasterize(P, Y):
        walls = np.zeros((n_cells, n_cells), dtype=bool)
        seg = np.maximum(np.abs(np.diff(P)) / dphi, np.abs(np.diff(Y)) / dy)
        for a, b, ya, yb, m in zip(P[:-1], P[1:], Y[:-1], Y[1:], seg):
            t = np.linspace(0.0, 1.0, int(np.ceil(2 * m)) + 2)
            i = ((mp.reduce_angle(a + t * (b - a)) / dphi).astype(int)) % n_cells
            j = np.clip(((ya + t * (yb - ya) - lo) / dy).astype(int), 0, n_cells - 1)
            walls[i, j] = True
        return walls

    walls = rasterize(np.concatenate([gamma.phis, [gamma.phis[0] + 2 * np.pi]]),
                      np.concatenate([gamma.ys, [gamma.ys[0]]]))
    walls |= rasterize(lp, yim)
    # dilate so truncation artifacts cannot open corner leaks for the flood
    walls = ndimage.binary_dilation(walls)
    walls[0] |= walls[-1]
    walls[-1] |= walls[0]
    free = ~walls
    labels, _ = ndimage.label(free)
    # merge labels across the periodic phi seam
    alias = {}
    def root(a):
        while a in alias:
            a = alias[a]
        return a
    for a, b in zip(labels[0], labels[-1]):
        if a and b:
            ra, rb = root(a), root(b)
            if ra != rb:
                alias[max(ra, rb)] = min(ra, rb)
    top = {root(a) for a in labels[:, -1] if a}
    est = np.full(gamma.phis.size, lo)
    flat = np.vectorize(lambda a: root(a) if a else 0)(labels)
    in_top = np.isin(flat, list(top)) if top else np.zeros_like(free)
    for idx, phi in enumerate(gamma.phis):
        col = in_top[int(phi / dphi) % n_cells]
        js = np.where(col)[0]
        est[idx] = lo + (js.min() if js.size else n_cells) * dy
    return est


def upper_boundary_op(gamma, F, band, map_index=1, generation=1,
                      overflow_margin=0.0):
    """Lower boundary of the component of A minus (gamma union F(gamma))
    adjacent to the upper band edge, as an essential curve.

    When the image is a graph over phi this is computed per grid angle by
    vertical ray shooting: the envelope value is the largest y among
    gamma(phi) and all crossings of the image polyline with the vertical
    line.  When the image polyline folds over (non-graphical), the top
    component can reach below the largest crossing around the fold, so a
    rasterized component labeling bounds the boundary and the admissible
    crossing closest to it is selected.  Samples where an image crossing wins
    record (generation, map_index, interpolated source phi); others keep
    gamma's provenance.
    """
    lp, yim, src = curve_image(F, gamma, band=band)
    graphical = bool(np.all(np.diff(lp) > 0))
    est = None
    if not graphical:
        est = _raster_boundary(gamma, lp, yim, band)
        cell = 2 * (band[1] - band[0]) / 512
    n = gamma.phis.size
    ys = gamma.ys.copy()
    gen = gamma.gen.copy()
    midx = gamma.map_idx.copy()
    pre = gamma.pre_phi.copy()
    for i in range(n):
        cy, cs = _ray_crossings(lp, yim, src, gamma.phis[i])
        if est is not None and cy.size:
            keep = cy <= est[i] + cell
            cy, cs = cy[keep], cs[keep]
        if cy.size and cy.max() > ys[i]:
            j = int(np.argmax(cy))
            ys[i] = cy[j]
            gen[i] = generation
            midx[i] = map_index
            pre[i] = mp.reduce_angle(cs[j])
    if np.any(ys >= band[1] - overflow_margin):
        raise BandOverflow(
            f"envelope reaches the band top {band[1]} (annulus too small)")
    out = EssentialCurve(phis=gamma.phis, ys=ys, L=gamma.L,
                         gen=gen, map_idx=midx, pre_phi=pre)
    out.L = max(gamma.L, out.slope())
    return out


# ---------------------------------------------------------------------------
# certificates

@dataclass
class TransportCertificate:
    outcome: str                     # "Connecting" | "Obstruction"
    generations: int
    steps: list = None               # [(phi, y, map_index_of_next_step)]
    obstruction: EssentialCurve = None
    residuals: np.ndarray = None     # per-map invariance residuals
    gamma_minus: EssentialCurve = None
    gamma_plus: EssentialCurve = None
    history: list = None             # curve per generation (not serialized)

    def to_json(self, path=None):
        doc = {"outcome": self.outcome, "generations": self.generations,
               "steps": None, "obstruction": None}
        if self.steps is not None:
            doc["steps"] = [{"phi": p, "I": y, "map_index": n}
                            for p, y, n in self.steps]
        if self.obstruction is not None:
            doc["obstruction"] = {
                "phis": self.obstruction.phis.tolist(),
                "ys": self.obstruction.ys.tolist(),
                "residuals": np.asarray(self.residuals).tolist()}
        if path is not None:
            with open(path, "w") as f:
                json.dump(doc, f, indent=1)
        return doc


def _polyline_hausdorff(curve, lphi, y):
    """Symmetric Hausdorff distance between an essential curve and a closed
    polyline, both on the cylinder (wrapped phi, y)."""

    def points_to_segments(P, A, B):
        d = np.full(P.shape[0], np.inf)
        ab = B - A
        denom = np.einsum("ij,ij->i", ab, ab)
        denom[denom == 0] = 1.0
        for shift in (-2 * np.pi, 0.0, 2 * np.pi):
            Q = P + np.array([shift, 0.0])
            ap = Q[:, None, :] - A[None, :, :]
            t = np.clip(np.einsum("ijk,jk->ij", ap, ab) / denom[None, :], 0, 1)
            diff = ap - t[:, :, None] * ab[None, :, :]
            d = np.minimum(d, np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).min(axis=1))
        return d

    cp = np.stack([curve.phis, curve.ys], axis=-1)
    cp = np.concatenate([cp, [[curve.phis[0] + 2 * np.pi, curve.ys[0]]]])
    ip = np.stack([mp.reduce_angle(lphi), y], axis=-1)
    d1 = points_to_segments(ip, cp[:-1], cp[1:])
    lift = np.stack([lphi, y], axis=-1)
    d2 = points_to_segments(cp[:-1], lift[:-1], lift[1:])
    return float(max(d1.max(), d2.max()))


def _invariance_residuals(ifs, gamma):
    out = []
    for F in ifs.all_maps:
        lp, y, _ = curve_image(F, gamma, band=None)
        out.append(_polyline_hausdorff(gamma, lp, y))
    return np.array(out)


def _backtrack(history, gen, map_index, src_phi):
    """Chain of (map_index, source phi) from a hit back to the seed curve.

    ``src_phi`` is the angle on the generation-``gen`` curve whose image under
    ``map_index`` produced the hit.  Provenance records are read from the
    nearest grid sample at each stage.
    """
    chain = [(map_index, float(mp.reduce_angle(src_phi)))]
    g, phi = gen, float(mp.reduce_angle(src_phi))
    while True:
        curve = history[g]
        n = curve.phis.size
        i = int(np.searchsorted(curve.phis, phi)) - 1
        i %= n
        j = (i + 1) % n
        dcell = mp.wrap_diff(curve.phis[j], curve.phis[i])
        t = float(mp.wrap_diff(phi, curve.phis[i]) / dcell)
        if not (curve.gen[i] == curve.gen[j]
                and curve.map_idx[i] == curve.map_idx[j]):
            # records disagree across this cell: fall back to the nearer sample
            i = i if t < 0.5 else j
            j, t = i, 0.0
        if curve.map_idx[i] == SEED:
            return phi, chain[::-1]
        g = int(curve.gen[i]) - 1
        phi = float(mp.reduce_angle(
            curve.pre_phi[i]
            + t * mp.wrap_diff(curve.pre_phi[j], curve.pre_phi[i])))
        chain.append((int(curve.map_idx[i]), phi))


def birkhoff_transport(ifs, gamma_minus, gamma_plus, tol=1e-7, max_gen=None,
                       stall_window=5):
    """Evolve gamma_minus by upper envelopes over all maps until it either
    meets gamma_plus (Connecting, with the orbit extracted by provenance
    backtracking and re-evaluated exactly) or stalls for ``stall_window``
    consecutive generations (Obstruction, with invariance residuals)."""
    gamma = replace(gamma_minus,
                    gen=np.zeros(gamma_minus.phis.size, dtype=int),
                    map_idx=np.full(gamma_minus.phis.size, SEED, dtype=int),
                    pre_phi=np.full(gamma_minus.phis.size, np.nan))
    if np.any(gamma.ys >= gamma_plus.y(gamma.phis)):
        raise ValueError("gamma_minus must lie strictly below gamma_plus")
    history = [gamma]
    stall = 0
    min_step = np.inf
    m = 0
    while True:
        m += 1
        hit = None
        envelopes = []
        for n, F in enumerate(ifs.all_maps):
            lp, yim, src = curve_image(F, gamma, band=ifs.band)
            above = yim >= gamma_plus.y(mp.reduce_angle(lp))
            if np.any(above) and hit is None:
                j = int(np.argmax(above))
                hit = (n, src[j])
            envelopes.append(upper_boundary_op(gamma, F, ifs.band,
                                               map_index=n, generation=m))
        nxt = gamma
        for env in envelopes:
            win = env.ys > nxt.ys
            nxt = EssentialCurve(
                phis=gamma.phis, ys=np.where(win, env.ys, nxt.ys),
                L=max(nxt.L, env.L),
                gen=np.where(win, env.gen, nxt.gen),
                map_idx=np.where(win, env.map_idx, nxt.map_idx),
                pre_phi=np.where(win, env.pre_phi, nxt.pre_phi))
        if hit is not None:
            phi0, chain = _backtrack(history, m - 1, hit[0], hit[1])
            v = (phi0, float(gamma_minus.y(phi0)))
            steps = []
            for n, _ in chain:
                steps.append((v[0], v[1], n))
                p, y = ifs.all_maps[n](np.array([v[0]]), np.array([v[1]]))
                v = (float(p[0]), float(y[0]))
            steps.append((v[0], v[1], SEED))
            return TransportCertificate(
                outcome="Connecting", generations=m, steps=steps,
                gamma_minus=gamma_minus, gamma_plus=gamma_plus,
                history=history)
        step = float(np.max(nxt.ys - gamma.ys))
        stall = stall + 1 if step < tol else 0
        if step >= tol:
            min_step = min(min_step, step)
        history.append(nxt)
        gamma = nxt
        if stall >= stall_window:
            return TransportCertificate(
                outcome="Obstruction", generations=m, obstruction=gamma,
                residuals=_invariance_residuals(ifs, gamma),
                gamma_minus=gamma_minus, gamma_plus=gamma_plus,
                history=history)
        if max_gen is None:
            height = ifs.band[1] - ifs.band[0]
            cap = 10 * height / min_step if np.isfinite(min_step) else 1000
        else:
            cap = max_gen
        if m >= cap:
            raise GenerationLimit(
                f"no outcome after {m} generations (cap {cap:g})",
                generations=m, last_curve=gamma)


@dataclass
class ValidationResult:
    ok: bool
    diagnosis: dict

    def __bool__(self):
        return self.ok


def validate_certificate(cert, ifs, tol=1e-9):
    """Re-check a certificate independently of how it was produced.

    Connecting: re-apply each recorded map and compare with the stored next
    point; require the first point on gamma_minus and the last at or above
    gamma_plus, both within one grid cell.  Obstruction: evaluate all maps on
    1024 curve samples, require Hausdorff distance below max(tol, reported
    residual) and the Lipschitz property.
    """
    diag = {}
    if cert.outcome == "Connecting":
        gm, gp = cert.gamma_minus, cert.gamma_plus
        cell = 2 * np.pi / gm.phis.size
        snap = cell * (1.0 + max(gm.L, gp.L))
        worst = 0.0
        for (p, y, n), (p2, y2, _) in zip(cert.steps[:-1], cert.steps[1:]):
            pn, yn = ifs.all_maps[n](np.array([p]), np.array([y]))
            worst = max(worst, float(abs(mp.wrap_diff(pn[0], p2))),
                        float(abs(yn[0] - y2)))
        diag["step_error"] = worst
        p0, y0, _ = cert.steps[0]
        pe, ye, _ = cert.steps[-1]
        diag["start_gap"] = float(abs(y0 - gm.y(p0)))
        diag["end_gap"] = float(ye - gp.y(pe))
        ok = (worst < tol and diag["start_gap"] <= snap
              and diag["end_gap"] >= -snap)
        return ValidationResult(ok, diag)
    if cert.outcome == "Obstruction":
        curve = cert.obstruction
        dense = curve_from_function(curve.y, n_phi=1024, L=curve.L)
        worst = 0.0
        for F in ifs.all_maps:
            lp, y, _ = curve_image(F, dense, band=None)
            worst = max(worst, _polyline_hausdorff(dense, lp, y))
        diag["hausdorff"] = worst
        bound = max(tol, float(np.max(cert.residuals)))
        diag["bound"] = bound
        diag["lipschitz_ok"] = curve.is_lipschitz(slack=1e-9)
        ok = worst <= bound * (1 + 1e-6) and diag["lipschitz_ok"]
        return ValidationResult(ok, diag)
    return ValidationResult(False, {"error": f"unknown outcome {cert.outcome}"})


# ---------------------------------------------------------------------------
# brute-force oracle

def brute_force_reachability(ifs, grid, start_set):
    """Breadth-first closure of start cells under all maps, on a cell grid
    over the annulus.  Each cell is sampled at its corners and center; a cell
    is reachable if any map sends any sample of a reachable cell into it.
    Conservative over-approximation at grid resolution."""
    n_phi, n_y = grid
    if n_phi > 512 or n_y > 512:
        raise ValueError("grid is limited to 512 x 512")
    lo, hi = ifs.band
    dphi = 2 * np.pi / n_phi
    dy = (hi - lo) / n_y
    reach = np.zeros((n_phi, n_y), dtype=bool)
    for i, j in start_set:
        reach[i, j] = True
    # image cells of every sample of every cell, computed once per map
    ii, jj = np.meshgrid(np.arange(n_phi), np.arange(n_y), indexing="ij")
    # corners inset slightly so samples on shared cell edges stay in the cell
    e = 1e-9
    offsets = [(e, e), (1 - e, e), (e, 1 - e), (1 - e, 1 - e), (0.5, 0.5)]
    targets = []
    for F in ifs.all_maps:
        cell_targets = []
        for a, b in offsets:
            p = (ii.ravel() + a) * dphi
            y = lo + (jj.ravel() + b) * dy
            pn, yn = F(p, y)
            ti = np.floor(mp.reduce_angle(pn) / dphi).astype(int) % n_phi
            tj = np.floor((yn - lo) / dy).astype(int)
            valid = (tj >= 0) & (tj < n_y)
            cell_targets.append((ti, tj, valid))
        targets.append(cell_targets)
    while True:
        frontier = reach.ravel()
        new = reach.copy()
        for cell_targets in targets:
            for ti, tj, valid in cell_targets:
                sel = frontier & valid
                new[ti[sel], tj[sel]] = True
        if np.array_equal(new, reach):
            return reach
        reach = new
