"""True orbits shadowing cylinder iterated-function-system chains.

A connecting chain on the cylinder alternates long blocks of the restricted
base map F0 with scattering jumps.  This module (i) turns such a chain into a
proper code — block lengths padded by recurrence returns so they decay
geometrically from a large floor, (ii) shoots a genuine orbit of the full
four-dimensional map through the corresponding homoclinic channel with
high-precision arithmetic (the orbit is produced by pure iteration from a
single initial point, so the orbit property is exact by construction), and
(iii) verifies the station deviation and per-block contraction bounds.
"""

import json
from dataclasses import dataclass, field

import mpmath
import numpy as np

from . import homoclinic as hc
from . import maps as mp
from . import nhim
from .errors import (BoundViolated, NotFound, PaddingFailed, ShootingFailed)


# ---------------------------------------------------------------------------
# codes and shadow orbits

@dataclass
class Code:
    """Symbolic itinerary (k0, {(n_j, k_j)}) with properness constants.

    ``steps`` lists (scattering index n_j, following block length k_j).
    The properness triple is (k_bar, gamma_rate, D): the code is proper when
    every block length is at least k_bar and k_s >= gamma_rate*k_{s+1} + D.
    """

    k0: int
    steps: list
    properness: tuple = (10, 2.0, 5)

    @property
    def J(self):
        return len(self.steps)

    def block_lengths(self):
        return [self.k0] + [k for _, k in self.steps]

    def is_proper(self):
        k_bar, gamma, D = self.properness
        ks = self.block_lengths()
        if any(k < k_bar for k in ks):
            return False
        return all(ks[s] >= gamma * ks[s + 1] + D for s in range(len(ks) - 1))

    def floors(self):
        """Minimal admissible block lengths, unrolled backward."""
        k_bar, gamma, D = self.properness
        out = [k_bar]
        for _ in range(self.J):
            out.append(int(np.ceil(gamma * out[-1] + D)))
        return out[::-1]

    def to_json(self, path=None):
        doc = {"k0": self.k0, "steps": [[n, k] for n, k in self.steps],
               "properness": {"k_bar": self.properness[0],
                              "gamma_rate": self.properness[1],
                              "D": self.properness[2]}}
        if path is not None:
            with open(path, "w") as f:
                json.dump(doc, f, indent=1)
        return doc


def gamma_rate_threshold(alpha, lam):
    """Smallest admissible geometric decay rate of a proper code."""
    return np.log(1.0 / (alpha * lam)) / np.log(alpha / lam)


@dataclass
class ShadowOrbit:
    """Cylinder stations v*_0 ... v*_{2J+1} realizing a code.

    Odd stations follow even ones by k_j steps of F0; even stations follow
    odd ones by a modified scattering map F0^{m+} o F_n o F0^{m-}.
    """

    points: np.ndarray
    code: Code


# ---------------------------------------------------------------------------
# recurrence returns and code construction

def find_return_time(F0, v, radius, k_min=1, k_max=10000):
    """Smallest k in [k_min, k_max] with dist(F0^k(v), v) < radius.

    ``F0`` is a single-step cylinder evaluator; pass the inverse-step
    evaluator for backward return times (for the integrable twist the two
    return-time sets coincide, since the distance after k steps is
    ||k*I mod 2pi|| either way).
    """
    phi0, I0 = float(v[0]), float(v[1])
    p, y = np.array([phi0]), np.array([I0])
    for k in range(1, k_max + 1):
        p, y = F0(p, y)
        if k < k_min:
            continue
        if np.hypot(mp.wrap_diff(p[0], phi0), y[0] - I0) < radius:
            return k
    raise NotFound(f"no return within radius {radius} in k <= {k_max}")


def collapse_certificate_steps(steps, m_minus, m_plus):
    """Raw code from a validated connecting chain.

    ``steps`` is the certificate list [(phi, I, map_index)], map index 0 for
    the base map; ``m_minus``/``m_plus`` map scattering index -> entry counts.
    Consecutive base steps collapse into blocks, and each scattering step
    absorbs m_minus base steps before it and m_plus after it (the shadow
    orbit uses the modified maps F0^{m+} o F_n o F0^{m-}).  Returns
    (v0, k0, [(n_j, k_j)]).
    """
    v0 = (steps[0][0], steps[0][1])
    blocks = [0]
    ns = []
    for _, _, n in steps[:-1]:
        if n == 0:
            blocks[-1] += 1
        else:
            ns.append(n)
            blocks.append(0)
    for j, n in enumerate(ns):
        blocks[j] -= m_minus[n]
        blocks[j + 1] -= m_plus[n]
    # blocks may go negative when excursions follow each other closely;
    # the properness padding restores them above their floors
    return v0, blocks[0], list(zip(ns, blocks[1:]))


def make_proper_code(raw, F0, Fbars, v0, k_bar=10, gamma_rate=2.0, D=5,
                     U0=0.05, U_end=0.05, k_max=200000):
    """Stretch a raw code into a proper one and rebuild its shadow orbit.

    ``raw`` is (k0, [(n_j, k_j)]); ``Fbars`` maps scattering index -> the
    modified scattering evaluator.  Blocks are processed backward; a block
    below its properness floor is padded with a recurrence return time of its
    start point, so every shadow station moves by less than the return radius
    and the endpoints stay within U0/U_end of the raw ones.
    """
    k0_raw, steps_raw = raw
    J = len(steps_raw)
    code = Code(k0=k0_raw, steps=list(steps_raw),
                properness=(k_bar, gamma_rate, D))
    floors = code.floors()
    radius = min(U0, U_end) / (2 * J + 2)

    # station start points of each block under the raw code
    starts = [np.asarray(v0, dtype=float)]
    v = np.array([v0[0]]), np.array([v0[1]])
    ks = code.block_lengths()
    for j in range(J):
        p, y = v
        for _ in range(ks[j]):
            p, y = F0(p, y)
        p, y = Fbars[steps_raw[j][0]](p, y)
        v = p, y
        starts.append(np.array([p[0], y[0]]))

    ks = list(ks)
    for j in range(J, -1, -1):
        need = floors[j] if j == J else int(np.ceil(
            max(k_bar, gamma_rate * ks[j + 1] + D)))
        if ks[j] < need:
            try:
                t = find_return_time(F0, starts[j], radius,
                                     k_min=need - ks[j], k_max=k_max)
            except NotFound as exc:
                raise PaddingFailed(
                    f"block {j}: no recurrence return >= {need - ks[j]} "
                    f"steps within radius {radius}") from exc
            ks[j] += t
    code = Code(k0=ks[0],
                steps=[(n, k) for (n, _), k in zip(steps_raw, ks[1:])],
                properness=(k_bar, gamma_rate, D))
    if not code.is_proper():
        raise PaddingFailed("padded code fails the properness check")

    pts = [np.asarray(v0, dtype=float)]
    v = np.array([v0[0]]), np.array([v0[1]])
    for j in range(J + 1):
        p, y = v
        for _ in range(ks[j]):
            p, y = F0(p, y)
        pts.append(np.array([p[0], y[0]]))
        if j < J:
            p, y = Fbars[code.steps[j][0]](p, y)
            pts.append(np.array([p[0], y[0]]))
        v = p, y
    return code, ShadowOrbit(points=np.array(pts), code=code)


def modified_scattering_evaluator(F0, Fn, m_minus, m_plus):
    """F0^{m+} o F_n o F0^{m-} on the cylinder."""
    def F(phi, y):
        for _ in range(m_minus):
            phi, y = F0(phi, y)
        phi, y = Fn(phi, y)
        for _ in range(m_plus):
            phi, y = F0(phi, y)
        return phi, y
    return F


# ---------------------------------------------------------------------------
# channel-orbit shooting

@dataclass
class ChannelOrbit:
    """A true orbit of the full map through the homoclinic channel."""

    stations: np.ndarray       # (2J+2, 4) float snapshots
    trajectory: np.ndarray     # (N+1, 4) float snapshots of the whole orbit
    station_index: np.ndarray  # trajectory index of each station
    deviations: np.ndarray     # cylinder distance to the shadow stations
    bound: float               # delta*(alpha*lam)^(k_J/2)
    code: Code
    details: dict = field(default_factory=dict)

    def write_csv(self, path):
        import csv
        flags = np.zeros(len(self.trajectory), dtype=int)
        devs = np.full(len(self.trajectory), np.nan)
        for s, i in enumerate(self.station_index):
            flags[i] = 1
            devs[i] = self.deviations[s]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "phi", "I", "x", "y",
                        "station_flag", "deviation"])
            for i, q in enumerate(self.trajectory):
                w.writerow([i, repr(q[0]), repr(q[1]), repr(q[2]), repr(q[3]),
                            flags[i], "" if np.isnan(devs[i]) else repr(devs[i])])


def entry_signature(md, cyl, B):
    """(sigma, delta_B): sign and magnitude of the unstable normal offset at
    the channel-entry station of a homoclinic cylinder."""
    _, _, _, _, _, l_u = nhim.saddle_frame(md.normal_k)
    p = B.points[B.points.shape[0] // 2, B.points.shape[1] // 2][None, :]
    for _ in range(B.m_minus):
        p = mp.apply_array(md, p, inverse=True)
    off = nhim.centered_xy(p) - cyl.g(p[:, 0], p[:, 1])
    z = float(off[0] @ l_u)
    return (1.0 if z >= 0 else -1.0), abs(z)


def _schedule(code, cylinders):
    """Step counts [k_0, E_1, k_1, ..., E_J, k_J] with excursion lengths
    E_j = m_minus + m_plus of the cylinder used by excursion j."""
    out = [code.k0]
    for n, k in code.steps:
        B = cylinders[n]
        out.append(B.m_minus + B.m_plus)
        out.append(k)
    return out


def shoot_channel_orbit(md, cyl, cylinders, shadow, delta=0.05, gap=None,
                        dps=None, tol_factor=1e-9, tol_abs=0.0, max_iter=100):
    """Shoot a true orbit through the channel along a shadow orbit.

    The initial point sits on the unstable normal of the first shadow station
    with a scalar offset t; t alone selects the whole orbit.  Stage j drives
    the unstable coordinate at the exit of excursion j to the size delta_B *
    lambda_u^{-k_j} that grows back to the channel-entry offset over the
    following block.  Later stages perturb earlier exits only by a factor
    lambda_u^{-(k+E)} of their targets, so the stages can be solved once
    each, in order.  Each stage is a damped Newton iteration in t whose
    slope is estimated at an adaptively chosen offset: the a-priori
    sensitivity of an exit coordinate to t is uncertain by many orders of
    magnitude, and a fixed secant step either stalls or extrapolates onto a
    different branch of the return map.
    """
    code = shadow.code
    J = code.J
    _, lam_u, _, e_u, _, l_u = nhim.saddle_frame(md.normal_k)
    sched = _schedule(code, cylinders)
    n_steps = int(np.sum(sched))
    if dps is None:
        # roundoff grows by the full Lyapunov factor along the orbit
        dps = int(np.ceil(1.05 * n_steps * np.log10(lam_u))) + 30
    if gap is None:
        gap = nhim.spectral_gap(md, cyl)
    sigs = {n: entry_signature(md, cyl, cylinders[n]) for n in cylinders}
    # entry j uses the cylinder of excursion j; "entry" J+1 is the final
    # station, held at the last cylinder's entry size so the orbit stays
    # delta-near through the whole closing block
    entry_sig = [sigs[code.steps[min(j, J - 1)][0]] for j in range(J + 1)] \
        if J else []

    wp = mpmath.mp.clone()
    wp.dps = dps
    v0 = shadow.points[0]
    g0 = cyl.g(v0[0], v0[1])
    base0 = (wp.mpf(float(v0[0])), wp.mpf(float(v0[1])),
             wp.mpf(float(g0[0])), wp.mpf(float(g0[1])))

    def start_point(t):
        return (base0[0], base0[1],
                base0[2] + t * e_u[0], base0[3] + t * e_u[1])

    two_pi = 2 * wp.pi

    def u_coord(P):
        # the map core never wraps the normal angle, and an excursion winds
        # it by a full turn; center it before reading the offset
        xc = P[2] - two_pi * wp.nint(P[2] / two_pi)
        g = cyl.g(float(P[0]), float(P[1]))
        return l_u[0] * (xc - float(g[0])) + l_u[1] * (P[3] - float(g[1]))

    def station_u(t, n_sta, extra=0):
        """Unstable coordinate extra steps past station n_sta."""
        P = start_point(t)
        for block in sched[:n_sta]:
            for _ in range(block):
                P = mp.apply_mp(md, P, wp)
        for _ in range(extra):
            P = mp.apply_mp(md, P, wp)
        return u_coord(P)

    def newton(t, j, n_sta, extra, target):
        """Damped Newton in t on station_u(t, n_sta, extra) = target with an
        adaptively estimated slope."""
        scale = abs(target)
        # tol_abs floors the residual at the noise of the cylinder graph:
        # with a non-flat graph the transversal coordinate is only defined
        # down to the graph-transform tolerance
        goal = max(tol_factor * scale, tol_abs)
        prefix = int(np.sum(sched[:n_sta])) + extra
        h = scale * wp.mpf(10) ** (-3) * wp.mpf(lam_u) ** (-prefix)
        r = station_u(t, n_sta, extra) - target
        for _ in range(max_iter):
            if abs(r) < goal:
                return t
            # estimate the local slope at an offset small enough to stay in
            # the linear regime but large enough to move the residual
            for _ in range(200):
                dr = station_u(t + h, n_sta, extra) - target - r
                if abs(dr) < 1e-6 * max(abs(r), scale):
                    h *= 1000
                elif abs(dr) > max(abs(r), scale):
                    h /= 1000
                else:
                    break
            else:
                raise ShootingFailed(
                    f"stage {j}: exit coordinate insensitive to the seed "
                    f"offset at residual {float(r):.3e}")
            dt = -r * h / dr
            for _ in range(60):
                rn = station_u(t + dt, n_sta, extra) - target
                if abs(rn) < max(abs(r) * 0.9, goal):
                    break
                dt /= 2
            else:
                raise ShootingFailed(
                    f"stage {j}: Newton step stalled at residual "
                    f"{float(r):.3e}")
            t, r = t + dt, rn
        raise ShootingFailed(
            f"stage {j}: no convergence in {max_iter} Newton steps, "
            f"residual {float(r):.3e} vs target {float(target):.3e}")

    sig1, dB1 = entry_sig[0] if J else (1.0, 0.0)
    t = wp.mpf(sig1 * dB1) * wp.mpf(lam_u) ** (-code.k0) if J else wp.mpf(0)
    lam_mp = wp.mpf(lam_u)

    for j in range(1, J + 1):
        sig_n, dB_n = entry_sig[j]
        k_j = code.steps[j - 1][1]
        z = wp.mpf(sig_n * dB_n) * lam_mp ** (-k_j)
        # the exit condition "transversal coordinate = z" cannot be imposed
        # at the exit station directly: the stable manifold of the cylinder
        # is curved, and the linear unstable coordinate of a point on it is
        # O(offset^2), many orders above z for long blocks.  Re-solving the
        # scaled condition at checkpoints deeper into the block cancels the
        # curvature term geometrically (it decays three lambda-powers per
        # step relative to the target) while never letting the unresolved
        # remainder grow large enough to escape before the next checkpoint.
        n_stop = min(k_j, k_j // 3 + 3)
        n, ns = 2, []
        while n < n_stop:
            ns.append(n)
            n = 2 * n + 2
        ns.append(n_stop)
        if n_stop < k_j:
            # finish at the entry station itself, where the target is the
            # full channel-entry offset and curvature is long gone; this
            # pins the next entry tightly enough that the following stage
            # starts inside the smooth regime of its exit coordinate
            ns.append(k_j)
        for extra in ns:
            t = newton(t, j, 2 * j, extra, z * lam_mp ** extra)

    # final full pass, recording the trajectory
    P = start_point(t)
    traj = [np.array([float(q) for q in P])]
    stations = [P]
    for block in sched:
        for _ in range(block):
            P = mp.apply_mp(md, P, wp)
            traj.append(np.array([float(q) for q in P]))
        stations.append(P)
    traj = np.array(traj)
    station_index = np.concatenate([[0], np.cumsum(sched)]).astype(int)

    for b in range(J + 1):
        i0, i1 = station_index[2 * b], station_index[2 * b + 1]
        seg = traj[i0:i1 + 1]
        off = nhim.centered_xy(seg) - cyl.g(seg[:, 0], seg[:, 1])
        worst = float(np.max(np.hypot(off[:, 0], off[:, 1])))
        if worst > 2 * delta:
            raise ShootingFailed(
                f"block {b}: orbit leaves the channel, offset {worst:.3e}")

    k_bar = code.properness[0]
    k_J = code.steps[-1][1] if J else code.k0
    bound = delta * (gap.alpha * gap.lam) ** (k_J / 2.0)
    devs = station_deviations(md, cyl, traj[station_index], shadow)
    orbit = ChannelOrbit(
        stations=traj[station_index], trajectory=traj,
        station_index=station_index, deviations=devs, bound=bound, code=code,
        details={"t": float(t), "dps": dps, "delta": delta,
                 "alpha": gap.alpha, "lam": gap.lam,
                 "u_in": float(t), "u_in_cap": delta,
                 "final_bound": 2 * delta * (gap.alpha * gap.lam) ** (k_bar / 2.0)})
    if J and np.max(devs) > 2 * bound:
        raise BoundViolated(
            f"station deviations up to {np.max(devs):.3e} exceed twice the "
            f"bound {bound:.3e}", deviations=devs, bound=bound)
    return orbit


def station_deviations(md, cyl, stations, shadow):
    """Cylinder distance between projected channel stations and the shadow.

    Station points sit within the channel, so their asymptotic phase is
    computed by the holonomy projector with a limited iteration budget (the
    orbit leaves the neighbourhood at the next excursion either way).
    """
    code = shadow.code
    ks = code.block_lengths()
    proj = nhim.HolonomyProjector(md, cyl, delta=np.inf, tol=1e-12,
                                  n_max=max(1, min(ks) // 2))
    devs = []
    for s, P in enumerate(stations):
        # even stations look forward (stable side), odd ones backward
        direction = "stable" if s % 2 == 0 else "unstable"
        v, ok, _ = nhim.project_batch(P[None, :], proj, direction=direction,
                                      strict=False)
        target = shadow.points[s]
        devs.append(float(np.hypot(mp.wrap_diff(v[0, 0], target[0]),
                                   v[0, 1] - target[1])))
    return np.array(devs)


# ---------------------------------------------------------------------------
# verification

def verify_shadowing(md, cyl, orbit, shadow, gap, delta=0.05,
                     step_tol=1e-8, ratio_slack=0.05):
    """Independent checks of a channel orbit against the shadowing bounds.

    Recomputes station deviations with fresh projector runs and compares to
    delta*(alpha*lam)^(k_J/2) and 2*delta*(alpha*lam)^(k_bar/2); checks the
    stable normal component contracts at ratio <= lam + slack along every
    base-map block; re-iterates the map in floating point to confirm each
    stored trajectory step is reproduced.
    """
    code = orbit.code
    k_bar = code.properness[0]
    k_J = code.steps[-1][1] if code.J else code.k0
    details = {}

    step = mp.apply_array(md, orbit.trajectory[:-1], reduce=False)
    step_err = np.max(np.abs(step - orbit.trajectory[1:]))
    details["step_error"] = float(step_err)

    devs = station_deviations(md, cyl, orbit.stations, shadow)
    bound1 = delta * (gap.alpha * gap.lam) ** (k_J / 2.0)
    bound2 = 2 * delta * (gap.alpha * gap.lam) ** (k_bar / 2.0)
    details["deviations"] = devs
    details["bounds"] = (bound1, bound2)
    dev_ok = bool(np.max(devs) <= 2 * bound1 and np.max(devs) <= 2 * bound2) \
        if code.J else bool(np.max(devs) <= 2 * bound1)

    _, _, _, _, l_s, l_u = nhim.saddle_frame(md.normal_k)
    worst_ratio = 0.0
    worst_block_off = 0.0
    for b in range(code.J + 1):
        i0 = orbit.station_index[2 * b]
        i1 = orbit.station_index[2 * b + 1]
        seg = orbit.trajectory[i0:i1 + 1]
        off = nhim.centered_xy(seg) - cyl.g(seg[:, 0], seg[:, 1])
        s_comp = np.abs(off @ l_s)
        nrm = np.hypot(off[:, 0], off[:, 1])
        worst_block_off = max(worst_block_off, float(np.max(nrm)))
        # the stable coordinate is readable only while it clears the
        # quadratic coupling from the unstable component and the float
        # roundoff of the stored trajectory
        valid = (s_comp > 1e-12) & (s_comp > 10 * nrm ** 2) \
            & (s_comp > 1e-10 * nrm)
        for a, c, va, vc in zip(s_comp[:-1], s_comp[1:],
                                valid[:-1], valid[1:]):
            if va and vc:
                worst_ratio = max(worst_ratio, c / a)
    details["stable_ratio"] = float(worst_ratio)
    ratio_ok = worst_ratio <= gap.lam + ratio_slack
    # between excursions the orbit must stay inside the channel collar
    details["block_offset"] = worst_block_off
    contained = worst_block_off <= 2 * delta

    first_u = np.abs((nhim.centered_xy(orbit.trajectory[:1])
                      - cyl.g(orbit.trajectory[:1, 0],
                              orbit.trajectory[:1, 1]))[0] @ l_u)
    details["u_in"] = float(first_u)
    u_ok = first_u <= delta

    passed = bool(step_err < step_tol and dev_ok and ratio_ok and u_ok
                  and contained)
    return mp.CheckReport(passed=passed,
                          max_residual=float(np.max(devs)),
                          worst_point=None, details=details)
