"""Config-driven experiment runner.

Wires the map, cylinder, homoclinic, transport, and shadowing stages into
reproducible pipelines.  Every command writes a run manifest (config hash,
per-stage timings and pass/fail, checksummed artifact list) plus plain
CSV/JSON artifacts into the output directory.

Exit codes: 0 all stages passed, 1 an invariant or stage failed,
2 inconclusive (an obstruction blocks the requested drift), 3 bad
configuration.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np
import scipy

from . import __version__
from . import config as cf
from . import homoclinic as hc
from . import ifs as tr
from . import maps as mp
from . import nhim as nh
from . import shadowing as sh
from .errors import ConfigError, CyldriftError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INCONCLUSIVE = 2
EXIT_CONFIG = 3

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# manifest

@dataclass
class RunManifest:
    command: str
    config_hash: str
    versions: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)

    @property
    def passed(self):
        return all(s["passed"] for s in self.stages)

    def to_doc(self):
        return {"command": self.command, "config_hash": self.config_hash,
                "versions": self.versions, "stages": self.stages,
                "artifacts": self.artifacts, "passed": self.passed}

    def write(self, path):
        with open(path, "w") as f:
            json.dump(self.to_doc(), f, indent=1, default=float)


def _versions():
    return {"cyldrift": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "mpmath": mpmath.__version__,
            "python": platform.python_version()}


class StageFailed(Exception):
    """Internal: aborts the pipeline with the recorded exit code."""

    def __init__(self, code):
        super().__init__(f"exit {code}")
        self.code = code


class Pipeline:
    """Output directory plus manifest bookkeeping for one command."""

    def __init__(self, cfg, command, out_dir=None):
        self.cfg = cfg
        self.out = Path(out_dir if out_dir is not None else cfg.run.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(command=command,
                                    config_hash=cf.config_hash(cfg),
                                    versions=_versions())

    def stage(self, name, fn, detail=None):
        """Run one stage; a CheckReport-like result decides pass/fail."""
        t0 = time.perf_counter()
        try:
            result = fn()
        except CyldriftError as exc:
            self._record(name, t0, False,
                         {"error": f"{type(exc).__name__}: {exc}"})
            raise StageFailed(EXIT_FAILURE) from exc
        passed = bool(getattr(result, "passed", True))
        if hasattr(result, "__bool__") and not hasattr(result, "passed"):
            passed = bool(result)
        d = dict(detail(result)) if detail else {}
        self._record(name, t0, passed, d)
        if not passed:
            raise StageFailed(EXIT_FAILURE)
        return result

    def _record(self, name, t0, passed, detail):
        self.manifest.stages.append(
            {"name": name, "seconds": round(time.perf_counter() - t0, 3),
             "passed": passed, "detail": detail})

    def emit(self, name, writer):
        """Write an artifact through ``writer(path)`` and checksum it."""
        path = self.out / name
        writer(str(path))
        data = path.read_bytes()
        self.manifest.artifacts.append(
            {"path": name, "bytes": len(data),
             "sha256": hashlib.sha256(data).hexdigest()})
        return path

    def emit_json(self, name, doc):
        return self.emit(name, lambda p: Path(p).write_text(
            json.dumps(doc, indent=1, default=float)))

    def emit_csv(self, name, header, rows):
        def write(p):
            with open(p, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(header)
                for row in rows:
                    w.writerow([x if isinstance(x, str) else repr(x)
                                for x in row])
        return self.emit(name, write)

    def finish(self, code=EXIT_OK):
        self.manifest.write(self.out / "manifest.json")
        return code


# ---------------------------------------------------------------------------
# shared stage builders

def _random_points(cfg, n):
    rng = np.random.default_rng(cfg.run.seed)
    lo, hi = cfg.geometry.band
    pts = rng.uniform([0.0, lo, 0.0, -1.0], [TWO_PI, hi, TWO_PI, 1.0],
                      size=(n, 4))
    return pts

def _action_loops(band):
    """Five closed loops with nonzero winding or area for exactness checks."""
    mid = 0.5 * (band[0] + band[1])
    amp = 0.2 * (band[1] - band[0])
    return [
        lambda t: np.array([TWO_PI * t, mid, 0.0, 0.0]),
        lambda t: np.array([TWO_PI * t, mid + amp * np.sin(TWO_PI * t),
                            1.0, 0.2]),
        lambda t: np.array([1.0, mid, TWO_PI * t,
                            0.1 * np.cos(TWO_PI * t)]),
        lambda t: np.array([TWO_PI * t, mid, TWO_PI * t,
                            0.1 * np.sin(TWO_PI * t)]),
        lambda t: np.array([0.4 + 0.3 * np.sin(TWO_PI * t),
                            mid + amp * np.cos(TWO_PI * t), 2.0, -0.3]),
    ]


def _curve(spec, n_phi):
    """Essential curve from a constant action value or [phi, y] samples."""
    if isinstance(spec, (int, float)):
        return tr.flat_curve(float(spec), n_phi=n_phi)
    arr = np.asarray(spec, dtype=float)
    order = np.argsort(mp.reduce_angle(arr[:, 0]))
    p = mp.reduce_angle(arr[order, 0])
    y = arr[order, 1]
    phis = np.arange(n_phi) * TWO_PI / n_phi
    ys = np.interp(phis, np.concatenate([p, [p[0] + TWO_PI]]),
                   np.concatenate([y, [y[0]]]), period=TWO_PI)
    slopes = np.abs(np.diff(np.concatenate([y, [y[0]]]))
                    / np.maximum(np.diff(np.concatenate(
                        [p, [p[0] + TWO_PI]])), 1e-12))
    return tr.EssentialCurve(phis=phis, ys=ys,
                             L=max(1.0, 1.5 * float(slopes.max())))


def _cylinder(P, md):
    g = P.cfg.geometry
    return P.stage(
        "cylinder",
        lambda: nh.compute_cylinder(md, tuple(g.band),
                                    grid_sizes=tuple(g.cylinder_grid),
                                    tol=g.cylinder_tol),
        detail=lambda cyl: {"residual": cyl.residual,
                            "sup_g": cyl.sup_norm()})


def _homoclinic(P, md, cyl):
    g = P.cfg.geometry
    saddle = hc.find_saddle(md.normal_k)
    ph = hc.find_primary_homoclinic(saddle)
    return P.stage(
        "homoclinic",
        lambda: hc.build_homoclinic_cylinder(
            md, cyl, ph, tuple(g.band), grid_sizes=tuple(g.excursion_grid)),
        detail=lambda B: {"m_minus": B.m_minus, "m_plus": B.m_plus})


def _scattering(P, md, cyl, B):
    g = P.cfg.geometry
    return P.stage(
        "scattering",
        lambda: hc.scattering_map(md, cyl, B,
                                  grid_sizes=tuple(g.scattering_grid)),
        detail=lambda s: {"deviation": s.deviation(),
                          "exactness_residual": s.exactness_residual})


def _transport(P, md, cyl, samples):
    t = P.cfg.transport
    system = tr.IFS(F0=tr.restricted_evaluator(md, cyl),
                    Fn=[tr.scattering_evaluator(s) for s in samples],
                    band=tuple(P.cfg.geometry.sub_band))
    gm = _curve(t.gamma_minus, t.n_phi)
    gp = _curve(t.gamma_plus, t.n_phi)
    cert = P.stage(
        "transport",
        lambda: tr.birkhoff_transport(system, gm, gp, tol=t.tol,
                                      max_gen=t.max_gen),
        detail=lambda c: {"outcome": c.outcome,
                          "generations": c.generations,
                          "steps": len(c.steps or [])})
    P.stage("validate_certificate",
            lambda: tr.validate_certificate(cert, system, tol=P.cfg.run.tol),
            detail=lambda v: v.diagnosis)
    return system, cert


def _emit_curves(P, cert):
    for name, curve in (("gamma_minus.csv", cert.gamma_minus),
                        ("gamma_plus.csv", cert.gamma_plus)):
        if curve is not None:
            P.emit_csv(name, ["phi", "y"], zip(curve.phis, curve.ys))
    if cert.obstruction is not None:
        P.emit_csv("obstruction.csv", ["phi", "y"],
                   zip(cert.obstruction.phis, cert.obstruction.ys))


# ---------------------------------------------------------------------------
# commands

def cmd_check(cfg, out_dir=None):
    """Invariant suites of every module on the configured map."""
    P = Pipeline(cfg, "check", out_dir)
    try:
        md = cf.build_map(cfg)
        P.stage("symplectic",
                lambda: mp.check_symplectic(md, _random_points(cfg, 1000),
                                            tol=1e-9),
                detail=lambda r: {"max_residual": r.max_residual})

        def exactness():
            worst = None
            for loop in _action_loops(cfg.geometry.band):
                rep = mp.check_exact(md, loop, tol=1e-8)
                if worst is None or rep.max_residual > worst.max_residual:
                    worst = rep
                if not rep.passed:
                    return rep
            return worst
        P.stage("exactness", exactness,
                detail=lambda r: {"max_residual": r.max_residual})
        cyl = _cylinder(P, md)
        P.stage("spectral_gap", lambda: nh.spectral_gap(md, cyl),
                detail=lambda g: {"alpha": g.alpha, "lam": g.lam,
                                  "product": g.product})

        def orthogonality():
            _, _, e_s, _, _, _ = nh.saddle_frame(md.normal_k)
            mid = 0.5 * sum(cfg.geometry.band)
            pts = cyl.point4(np.column_stack(
                [np.linspace(0, 6, 5), np.full(5, mid)]))
            pts[:, 2:4] += 0.01 * e_s
            return hc.symplectic_orthogonality_check(md, cyl, pts)
        P.stage("orthogonality", orthogonality,
                detail=lambda r: {"max_residual": r.max_residual})
        P.stage("lambda_lemma", lambda: nh.lambda_lemma_check(md, cyl),
                detail=lambda r: {"ratios": list(np.asarray(r.c0_ratios))})
    except StageFailed as exc:
        return P.finish(exc.code)
    return P.finish()


def cmd_cylinder(cfg, out_dir=None):
    """Compute and persist the invariant cylinder graph."""
    P = Pipeline(cfg, "cylinder", out_dir)
    try:
        md = cf.build_map(cfg)
        cyl = _cylinder(P, md)
        P.emit("cylinder.csv", cyl.write_csv)
        P.emit_json("cylinder.json", cyl.sidecar())
    except StageFailed as exc:
        return P.finish(exc.code)
    return P.finish()


def cmd_scattering(cfg, out_dir=None):
    """Cylinder, homoclinic excursion data, and sampled scattering maps."""
    P = Pipeline(cfg, "scattering", out_dir)
    try:
        md = cf.build_map(cfg)
        cyl = _cylinder(P, md)
        B = _homoclinic(P, md, cyl)
        Bs = [B]
        n = cfg.geometry.homoclinic_count
        if n > 1:
            Bs += P.stage(
                "secondary_homoclinics",
                lambda: hc.generate_secondary(
                    md, cyl, B, n - 1,
                    grid_sizes=tuple(cfg.geometry.excursion_grid)),
                detail=lambda out: {"count": len(out)})
        for i, Bi in enumerate(Bs, start=1):
            smp = _scattering(P, md, cyl, Bi)
            P.emit(f"scattering_{i}.csv", smp.write_csv)
            P.emit_json(f"scattering_{i}.json", smp.sidecar())
    except StageFailed as exc:
        return P.finish(exc.code)
    return P.finish()


def cmd_transport(cfg, out_dir=None):
    """Full pipeline up to a validated transport certificate."""
    P = Pipeline(cfg, "transport", out_dir)
    try:
        md = cf.build_map(cfg)
        cyl = _cylinder(P, md)
        B = _homoclinic(P, md, cyl)
        smp = _scattering(P, md, cyl, B)
        _, cert = _transport(P, md, cyl, [smp])
        P.emit("certificate.json", lambda p: cert.to_json(p))
        _emit_curves(P, cert)
    except StageFailed as exc:
        return P.finish(exc.code)
    return P.finish()


def cmd_drift(cfg, out_dir=None):
    """Drift orbit: transport certificate -> proper code -> true orbit."""
    P = Pipeline(cfg, "drift", out_dir)
    s = cfg.shadowing
    try:
        md = cf.build_map(cfg)
        cyl = _cylinder(P, md)
        gap = P.stage("spectral_gap", lambda: nh.spectral_gap(md, cyl),
                      detail=lambda g: {"alpha": g.alpha, "lam": g.lam,
                                        "product": g.product})
        B = _homoclinic(P, md, cyl)
        smp = _scattering(P, md, cyl, B)
        system, cert = _transport(P, md, cyl, [smp])
        P.emit("certificate.json", lambda p: cert.to_json(p))
        _emit_curves(P, cert)
        if cert.outcome != "Connecting":
            # an invariant essential curve blocks the requested drift; that
            # is a verified negative, not a failure of the pipeline
            P.manifest.stages.append(
                {"name": "drift", "seconds": 0.0, "passed": False,
                 "detail": {"inconclusive": "transport returned Obstruction"}})
            return P.finish(EXIT_INCONCLUSIVE)

        F0, F1 = system.F0, system.Fn[0]
        v0, k0, raw = sh.collapse_certificate_steps(
            cert.steps, {1: B.m_minus}, {1: B.m_plus})
        Fbar = sh.modified_scattering_evaluator(F0, F1, B.m_minus, B.m_plus)
        code, shadow = P.stage(
            "proper_code",
            lambda: sh.make_proper_code((k0, raw), F0, {1: Fbar}, v0,
                                        k_bar=s.k_bar,
                                        gamma_rate=s.gamma_rate, D=s.D),
            detail=lambda cs: {"blocks": cs[0].block_lengths(),
                               "total_steps": int(sum(cs[0].block_lengths()))})
        orbit = P.stage(
            "shoot",
            lambda: sh.shoot_channel_orbit(
                md, cyl, {1: B}, shadow, delta=cfg.geometry.delta, gap=gap,
                tol_factor=s.tol_factor, tol_abs=s.tol_abs),
            detail=lambda o: {"u_in": o.details["u_in"], "bound": o.bound,
                              "max_deviation": float(np.max(o.deviations))})
        P.stage("verify",
                lambda: sh.verify_shadowing(md, cyl, orbit, shadow, gap,
                                            delta=cfg.geometry.delta),
                detail=lambda r: r.details)

        def drift_reached():
            dI = float(orbit.trajectory[:, 1].max()
                       - orbit.trajectory[:, 1].min())
            replay = mp.apply_array(md, orbit.trajectory[:-1], reduce=False)
            err = float(np.max(np.abs(replay - orbit.trajectory[1:])))
            rep = mp.CheckReport(
                passed=dI >= s.drift_target and err < 1e-8,
                max_residual=err,
                details={"delta_I": dI, "target": s.drift_target,
                         "replay_error": err})
            return rep
        P.stage("drift", drift_reached, detail=lambda r: r.details)
        P.emit("orbit.csv", orbit.write_csv)
        P.emit_json("code.json", code.to_json())
    except StageFailed as exc:
        return P.finish(exc.code)
    return P.finish()


def cmd_mu_scan(cfg, out_dir=None):
    """Transport outcome over the (mu1, mu2) grid of the two-step family."""
    P = Pipeline(cfg, "mu-scan", out_dir)
    rows = []
    t0 = time.perf_counter()
    n_fail = 0
    for mu1 in cfg.scan.mu1:
        for mu2 in cfg.scan.mu2:
            outcome, residual = _scan_node(cfg, mu1, mu2)
            if outcome == "Inconclusive":
                n_fail += 1
            rows.append((mu1, mu2, outcome, residual))
    P.manifest.stages.append(
        {"name": "scan", "seconds": round(time.perf_counter() - t0, 3),
         "passed": n_fail == 0,
         "detail": {"nodes": len(rows), "failed_nodes": n_fail}})
    P.emit_csv("scan.csv", ["mu1", "mu2", "outcome", "residual"],
               ((m1, m2, o, r) for m1, m2, o, r in rows))
    return P.finish(EXIT_OK if n_fail == 0 else EXIT_INCONCLUSIVE)


def _scan_node(cfg, mu1, mu2):
    """One transport run of the scan; failures are recorded, not raised."""
    g, t = cfg.geometry, cfg.transport
    try:
        md = cf.scan_map(cfg, mu1, mu2)
        cyl = nh.compute_cylinder(md, tuple(g.band),
                                  grid_sizes=tuple(g.cylinder_grid),
                                  tol=g.cylinder_tol)
        saddle = hc.find_saddle(md.normal_k)
        ph = hc.find_primary_homoclinic(saddle)
        B = hc.build_homoclinic_cylinder(md, cyl, ph, tuple(g.band),
                                         grid_sizes=tuple(g.excursion_grid))
        smp = hc.scattering_map(md, cyl, B,
                                grid_sizes=tuple(g.scattering_grid))
        system = tr.IFS(F0=tr.restricted_evaluator(md, cyl),
                        Fn=[tr.scattering_evaluator(smp)],
                        band=tuple(g.sub_band))
        cert = tr.birkhoff_transport(system, _curve(t.gamma_minus, t.n_phi),
                                     _curve(t.gamma_plus, t.n_phi),
                                     tol=t.tol, max_gen=t.max_gen)
        val = tr.validate_certificate(cert, system, tol=cfg.run.tol)
        if not val:
            return "Inconclusive", float("nan")
        if cert.outcome == "Obstruction":
            return "Obstruction", float(np.max(cert.residuals))
        return "Connecting", float(val.diagnosis["step_error"])
    except CyldriftError:
        return "Inconclusive", float("nan")


COLUMN_NOTES = """\
# cylinder.csv:    1 phi, 2 I, 3 x, 4 y           -- graph samples (x,y)=g(phi,I)
# scattering_*.csv: 1 phi, 2 I, 3 Psi, 4 Y        -- image of (phi,I) under F_B
# gamma_*.csv:     1 phi, 2 y                     -- essential boundary curves
# obstruction.csv: 1 phi, 2 y                     -- invariant blocking curve
# orbit.csv:       1 step, 2 phi, 3 I, 4 x, 5 y,
#                  6 station_flag, 7 deviation    -- true channel orbit
# scan.csv:        1 mu1, 2 mu2, 3 outcome, 4 residual
"""


def cmd_columns(cfg, out_dir=None):
    sys.stdout.write(COLUMN_NOTES)
    return EXIT_OK


COMMANDS = {
    "check": cmd_check,
    "cylinder": cmd_cylinder,
    "scattering": cmd_scattering,
    "transport": cmd_transport,
    "drift": cmd_drift,
    "mu-scan": cmd_mu_scan,
    "columns": cmd_columns,
}


def _parser():
    p = argparse.ArgumentParser(
        prog="cyldrift",
        description="Experiment runner for cylinder-drift pipelines.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--tol", type=float, default=None)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = cf.load(args.config) if args.config else cf.ExperimentConfig()
        overrides = {}
        for name in ("threads", "seed", "tol"):
            if getattr(args, name) is not None:
                overrides[name] = getattr(args, name)
        if overrides:
            cfg = dataclasses.replace(
                cfg, run=dataclasses.replace(cfg.run, **overrides))
            cf.validate(cfg)
        return COMMANDS[args.command](cfg, out_dir=args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
