"""Exact symplectic maps on T^2 x R^2 and their perturbation families.

Coordinates are ordered (phi, I, x, y) with phi, x angles on [0, 2*pi) and
I, y real actions.  The symplectic form is dI ^ dphi + dy ^ dx, with
primitive one-form I dphi + y dx.

Two base map kinds are provided:

* ``ProductTwistStandard``: a twist rotation in (phi, I) times a standard
  map in (x, y),

      phi' = phi + omega(I),   I' = I,
      x'   = x + y',           y' = y + k sin x.

* ``DoubleStandard``: two coupled-by-nothing standard-map factors,

      phi' = phi + I',   I' = I + k1 sin phi,
      x'   = x + y',     y' = y + k2 sin x.

Perturbations are composed after the base map as exact-flow steps: the
time-eps flow of a Hamiltonian f(phi, x) that depends on the angles only,
which freezes (phi, x) and shifts the actions by -eps * grad f.  Every map
here has a closed-form inverse and an analytic Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi

PRODUCT_TWIST_STANDARD = "ProductTwistStandard"
DOUBLE_STANDARD = "DoubleStandard"
PERTURBED_COMPOSITE = "PerturbedComposite"

# Matrix of the symplectic form on (phi, I, x, y): Omega(u, v) = u^T W v.
OMEGA_MATRIX = np.array(
    [
        [0.0, -1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, -1.0],
        [0.0, 0.0, 1.0, 0.0],
    ]
)


def reduce_angle(a):
    """Reduce an angle-like quantity into [0, 2*pi).  Idempotent."""
    return a % TWO_PI


def wrap_diff(a, b):
    """Signed angular difference a - b reduced into (-pi, pi]."""
    return (np.asarray(a) - b + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class PhasePoint:
    phi: float
    I: float
    x: float
    y: float

    def as_array(self):
        return np.array([self.phi, self.I, self.x, self.y])

    @staticmethod
    def from_array(a):
        return PhasePoint(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class TrigTerm:
    """One term coeff * basis(m*phi + n*x) of a trig-polynomial Hamiltonian."""

    m: int
    n: int
    coeff: float
    basis: str = "cos"  # "cos" or "sin"

    def __post_init__(self):
        if self.basis not in ("cos", "sin"):
            raise ValueError(f"basis must be 'cos' or 'sin', got {self.basis!r}")


@dataclass(frozen=True)
class PerturbationStep:
    """Exact time-epsilon flow of a Hamiltonian f(phi, x).

    The flow freezes the angles and shifts the actions:
        I -> I - eps * df/dphi,   y -> y - eps * df/dx.
    """

    epsilon: float
    terms: tuple = ()

    def grad(self, phi, x, sin=np.sin, cos=np.cos):
        """(df/dphi, df/dx) at (phi, x); works on arrays or mpmath scalars."""
        fphi = 0.0
        fx = 0.0
        for t in self.terms:
            arg = t.m * phi + t.n * x
            if t.basis == "cos":
                d = -t.coeff * sin(arg)
            else:
                d = t.coeff * cos(arg)
            fphi = fphi + t.m * d
            fx = fx + t.n * d
        return fphi, fx

    def hessian(self, phi, x):
        """Second partials (f_pp, f_px, f_xx) of f at (phi, x)."""
        fpp = 0.0
        fpx = 0.0
        fxx = 0.0
        for t in self.terms:
            arg = t.m * phi + t.n * x
            if t.basis == "cos":
                d2 = -t.coeff * np.cos(arg)
            else:
                d2 = -t.coeff * np.sin(arg)
            fpp = fpp + t.m * t.m * d2
            fpx = fpx + t.m * t.n * d2
            fxx = fxx + t.n * t.n * d2
        return fpp, fpx, fxx


@dataclass(frozen=True)
class MapDef:
    """Definition of one exact symplectic map.

    ``kind`` selects the base formulas; a non-empty ``perturbations`` tuple
    makes the map a composite: the steps are applied after the base, in
    tuple order (first element first).  ``defect_shear`` injects a
    non-symplectic shear d*x into the y update; it exists purely as a
    negative-control fixture for the invariant checkers.
    """

    kind: str = PRODUCT_TWIST_STANDARD
    k: float = 4.0
    k1: float = 1.0
    k2: float = 1.0
    omega_coeffs: tuple = (0.0, 1.0)  # omega(I) = sum_i c_i I^i
    perturbations: tuple = ()
    defect_shear: float = 0.0

    def __post_init__(self):
        if self.kind not in (PRODUCT_TWIST_STANDARD, DOUBLE_STANDARD):
            raise ValueError(f"unknown map kind {self.kind!r}")

    @property
    def effective_kind(self):
        return PERTURBED_COMPOSITE if self.perturbations else self.kind

    @property
    def normal_k(self):
        """Coupling strength of the (x, y) standard-map factor."""
        return self.k if self.kind == PRODUCT_TWIST_STANDARD else self.k2

    def omega(self, I):
        """Twist frequency omega(I), Horner on ascending coefficients."""
        acc = 0.0
        for c in reversed(self.omega_coeffs):
            acc = acc * I + c
        return acc

    def omega_prime(self, I):
        acc = 0.0
        n = len(self.omega_coeffs)
        for i in range(n - 1, 0, -1):
            acc = acc * I + i * self.omega_coeffs[i]
        return acc


def _base_forward(md, phi, I, x, y, sin):
    # defect_shear adds c*x to y' without feeding it into x'; this breaks
    # the symplectic block determinant by exactly c (negative-control only).
    if md.kind == PRODUCT_TWIST_STANDARD:
        phi1 = phi + md.omega(I)
        I1 = I
        kick = y + md.k * sin(x)
        x1 = x + kick
        y1 = kick + md.defect_shear * x
    else:
        I1 = I + md.k1 * sin(phi)
        phi1 = phi + I1
        kick = y + md.k2 * sin(x)
        x1 = x + kick
        y1 = kick + md.defect_shear * x
    return phi1, I1, x1, y1


def _base_backward(md, phi, I, x, y, sin):
    c = md.defect_shear
    if md.kind == PRODUCT_TWIST_STANDARD:
        I0 = I
        phi0 = phi - md.omega(I0)
        x0 = (x - y) / (1.0 - c) if c else x - y
        y0 = y - c * x0 - md.k * sin(x0)
    else:
        phi0 = phi - I
        I0 = I - md.k1 * sin(phi0)
        x0 = (x - y) / (1.0 - c) if c else x - y
        y0 = y - c * x0 - md.k2 * sin(x0)
    return phi0, I0, x0, y0


def _apply_core(md, phi, I, x, y, sin=np.sin, cos=np.cos):
    phi, I, x, y = _base_forward(md, phi, I, x, y, sin)
    for step in md.perturbations:
        fphi, fx = step.grad(phi, x, sin=sin, cos=cos)
        I = I - step.epsilon * fphi
        y = y - step.epsilon * fx
    return phi, I, x, y


def _apply_inverse_core(md, phi, I, x, y, sin=np.sin, cos=np.cos):
    for step in reversed(md.perturbations):
        fphi, fx = step.grad(phi, x, sin=sin, cos=cos)
        I = I + step.epsilon * fphi
        y = y + step.epsilon * fx
    return _base_backward(md, phi, I, x, y, sin)


def apply_array(md, pts, reduce=True, inverse=False):
    """Apply the map to an (..., 4) array of points."""
    pts = np.asarray(pts, dtype=float)
    phi, I, x, y = pts[..., 0], pts[..., 1], pts[..., 2], pts[..., 3]
    core = _apply_inverse_core if inverse else _apply_core
    phi, I, x, y = core(md, phi, I, x, y)
    out = np.stack(np.broadcast_arrays(phi, I, x, y), axis=-1)
    if reduce:
        out[..., 0] = reduce_angle(out[..., 0])
        out[..., 2] = reduce_angle(out[..., 2])
    return out


def apply(md, p, reduce=True):
    """Apply the map to a PhasePoint (or length-4 sequence)."""
    if isinstance(p, PhasePoint):
        p = p.as_array()
    return PhasePoint.from_array(apply_array(md, p, reduce=reduce))


def apply_inverse(md, p, reduce=True):
    if isinstance(p, PhasePoint):
        p = p.as_array()
    return PhasePoint.from_array(apply_array(md, p, reduce=reduce, inverse=True))


def apply_mp(md, p, mp, inverse=False):
    """Apply the map in mpmath arithmetic; p is a 4-tuple of mpf."""
    core = _apply_inverse_core if inverse else _apply_core
    return core(md, p[0], p[1], p[2], p[3], sin=mp.sin, cos=mp.cos)


def _base_jacobian(md, phi, I, x):
    J = np.zeros((4, 4))
    c = md.defect_shear
    if md.kind == PRODUCT_TWIST_STANDARD:
        kc = md.k * math.cos(x)
        J[0, 0] = 1.0
        J[0, 1] = md.omega_prime(I)
        J[1, 1] = 1.0
        J[3, 2] = kc + c
        J[3, 3] = 1.0
        J[2, 2] = 1.0 + kc
        J[2, 3] = 1.0
    else:
        k1c = md.k1 * math.cos(phi)
        J[1, 0] = k1c
        J[1, 1] = 1.0
        J[0, 0] = 1.0 + k1c
        J[0, 1] = 1.0
        kc = md.k2 * math.cos(x)
        J[3, 2] = kc + c
        J[3, 3] = 1.0
        J[2, 2] = 1.0 + kc
        J[2, 3] = 1.0
    return J


def _step_jacobian(step, phi, x):
    fpp, fpx, fxx = step.hessian(phi, x)
    J = np.eye(4)
    J[1, 0] = -step.epsilon * fpp
    J[1, 2] = -step.epsilon * fpx
    J[3, 0] = -step.epsilon * fpx
    J[3, 2] = -step.epsilon * fxx
    return J


def jacobian(md, p):
    """Analytic 4x4 Jacobian of the map at p, chained through all factors."""
    if isinstance(p, PhasePoint):
        p = p.as_array()
    phi, I, x, y = (float(v) for v in p)
    J = _base_jacobian(md, phi, I, x)
    phi, I, x, y = _base_forward(md, phi, I, x, y, math.sin)
    for step in md.perturbations:
        J = _step_jacobian(step, phi, x) @ J
        fphi, fx = step.grad(phi, x, sin=math.sin, cos=math.cos)
        I = I - step.epsilon * fphi
        y = y - step.epsilon * fx
    return J


def jacobian_fd(md, p, h=1e-6):
    """Central finite-difference Jacobian, for cross-checking the analytic one."""
    if isinstance(p, PhasePoint):
        p = p.as_array()
    p = np.asarray(p, dtype=float)
    J = np.zeros((4, 4))
    for j in range(4):
        dp = np.zeros(4)
        dp[j] = h
        fp = apply_array(md, p + dp, reduce=False)
        fm = apply_array(md, p - dp, reduce=False)
        J[:, j] = (fp - fm) / (2.0 * h)
    return J


@dataclass
class CheckReport:
    passed: bool
    max_residual: float
    worst_point: PhasePoint | None = None
    details: dict = field(default_factory=dict)


def check_symplectic(md, points, tol=1e-9):
    """Verify J^T Omega J = Omega at each sample point.

    ``points`` is an (N, 4) array; returns a CheckReport with the largest
    entrywise residual and the point where it occurred.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    worst_p = None
    for row in points:
        J = jacobian(md, row)
        r = float(np.max(np.abs(J.T @ OMEGA_MATRIX @ J - OMEGA_MATRIX)))
        if r > worst:
            worst = r
            worst_p = PhasePoint.from_array(row)
    return CheckReport(worst <= tol, worst, worst_p, {"n_points": len(points)})


def _polyline_action(pts):
    """Trapezoid quadrature of I dphi + y dx along a lifted closed polyline."""
    pts = np.asarray(pts, dtype=float)
    dphi = np.diff(pts[:, 0])
    dx = np.diff(pts[:, 2])
    Imid = 0.5 * (pts[1:, 1] + pts[:-1, 1])
    ymid = 0.5 * (pts[1:, 3] + pts[:-1, 3])
    return float(np.sum(Imid * dphi) + np.sum(ymid * dx))


def _sample_loop(loop, n):
    t = np.linspace(0.0, 1.0, n + 1)
    return np.array([np.asarray(loop(ti), dtype=float) for ti in t])


def check_exact(md, loop, quadrature_n=512, tol=1e-8):
    """Verify that the loop action of I dphi + y dx is preserved.

    ``loop`` is either a callable t -> lifted 4-vector for t in [0, 1]
    (with loop(1) the lifted closure of loop(0)) or an explicitly closed
    (N+1, 4) array of lifted samples.  For callables, the quadrature is
    Richardson-checked by doubling the node count.
    """
    def defect(sampled):
        a0 = _polyline_action(sampled)
        a1 = _polyline_action(apply_array(md, sampled, reduce=False))
        return np.array([a0, a1])

    if callable(loop):
        # trapezoid is O(n^-2); one Richardson step per doubling gives
        # O(n^-4), and the difference of successive extrapolants estimates
        # the remaining quadrature error.
        a1 = defect(_sample_loop(loop, quadrature_n))
        a2 = defect(_sample_loop(loop, 2 * quadrature_n))
        a4 = defect(_sample_loop(loop, 4 * quadrature_n))
        r1 = a2 + (a2 - a1) / 3.0
        r2 = a4 + (a4 - a2) / 3.0
        quad_err = float(np.max(np.abs(r2 - r1)))
        a0, a1 = r2
        converged = quad_err <= tol
    else:
        a0, a1 = defect(np.asarray(loop, dtype=float))
        quad_err = 0.0
        converged = True
    residual = abs(a1 - a0)
    passed = converged and residual <= tol
    return CheckReport(
        passed,
        residual,
        None,
        {"action_before": a0, "action_after": a1, "quadrature_error": quad_err,
         "converged": converged},
    )


@dataclass(frozen=True)
class MapFamily:
    """Base map plus up to two perturbation steps with independent sizes.

    ``at(mu1, mu2=...)`` scales each step's epsilon by its parameter; the
    steps compose after the base with the first-listed step outermost, so a
    two-step family evaluates as  step1 o step2 o base.  All parameters
    zero returns the base object unchanged.
    """

    base: MapDef
    steps: tuple = ()

    def at(self, *mus):
        if len(mus) != len(self.steps):
            raise ValueError(
                f"family has {len(self.steps)} steps, got {len(mus)} parameters")
        active = [
            replace(s, epsilon=mu)
            for s, mu in zip(self.steps, mus)
            if mu != 0.0
        ]
        if not active:
            return self.base
        # innermost (applied first) last in the listed order
        return replace(self.base, perturbations=tuple(reversed(active)))


def make_family(base, steps):
    if base.perturbations:
        raise ValueError("family base must be unperturbed")
    return MapFamily(base=base, steps=tuple(steps))


# --- serialization -------------------------------------------------------

def term_to_dict(t):
    return {"m": t.m, "n": t.n, "coeff": t.coeff, "basis": t.basis}


def step_to_dict(s):
    return {"epsilon": s.epsilon, "terms": [term_to_dict(t) for t in s.terms]}


def step_from_dict(d):
    return PerturbationStep(
        epsilon=float(d["epsilon"]),
        terms=tuple(
            TrigTerm(int(t["m"]), int(t["n"]), float(t["coeff"]),
                     t.get("basis", "cos"))
            for t in d.get("terms", ())
        ),
    )


def map_to_dict(md):
    d = {
        "kind": md.kind,
        "k": md.k,
        "k1": md.k1,
        "k2": md.k2,
        "omega_coeffs": list(md.omega_coeffs),
        "perturbations": [step_to_dict(s) for s in md.perturbations],
    }
    if md.defect_shear:
        d["defect_shear"] = md.defect_shear
    return d


def map_from_dict(d):
    return MapDef(
        kind=d.get("kind", PRODUCT_TWIST_STANDARD),
        k=float(d.get("k", 4.0)),
        k1=float(d.get("k1", 1.0)),
        k2=float(d.get("k2", 1.0)),
        omega_coeffs=tuple(float(c) for c in d.get("omega_coeffs", (0.0, 1.0))),
        perturbations=tuple(step_from_dict(s) for s in d.get("perturbations", ())),
        defect_shear=float(d.get("defect_shear", 0.0)),
    )
