"""Scratch probe: tune the perturbed drift pipeline before wiring the CLI."""
import sys
import time

import numpy as np

import cyldrift.homoclinic as hc
import cyldrift.ifs as tr
import cyldrift.maps as mp
import cyldrift.nhim as nh
import cyldrift.shadowing as sh

EPS = float(sys.argv[1]) if len(sys.argv) > 1 else 5e-3
KBAR = int(sys.argv[2]) if len(sys.argv) > 2 else 6
BAND = (0.5, 1.5)
SUB = (0.6, 1.4)

t0 = time.time()
base = mp.MapDef(kind=mp.PRODUCT_TWIST_STANDARD, k=4.0)
fam = mp.make_family(base, [mp.PerturbationStep(
    epsilon=1.0, terms=(mp.TrigTerm(1, -1, 1.0, basis="sin"),))])
md = fam.at(EPS)
cyl = nh.compute_cylinder(md, BAND, grid_sizes=(256, 32), tol=1e-9)
print(f"cylinder: {time.time()-t0:.1f}s  sup|g| = {cyl.sup_norm():.2e} "
      f"residual = {cyl.residual:.2e}")
gap = nh.spectral_gap(md, cyl)
print(f"gap: alpha={gap.alpha:.4f} lam={gap.lam:.4f} "
      f"prod={gap.product:.4f} passed={gap.passed}")

saddle = hc.find_saddle(4.0)
ph = hc.find_primary_homoclinic(saddle)
B = hc.build_homoclinic_cylinder(md, cyl, ph, BAND, grid_sizes=(32, 12))
print(f"B: {time.time()-t0:.1f}s  m-={B.m_minus} m+={B.m_plus}")
sample = hc.scattering_map(md, cyl, B, grid_sizes=(32, 16))
print(f"scattering dev = {sample.deviation():.3e}")

F0 = tr.restricted_evaluator(md, cyl)
F1 = tr.scattering_evaluator(sample)
system = tr.IFS(F0=F0, Fn=[F1], band=SUB)
cert = tr.birkhoff_transport(system, tr.flat_curve(0.95),
                             tr.flat_curve(1.005), max_gen=4000)
print(f"transport: {time.time()-t0:.1f}s outcome={cert.outcome} "
      f"gens={cert.generations} steps={len(cert.steps or [])}")
if cert.outcome != "Connecting":
    sys.exit(1)
print("validate:", bool(tr.validate_certificate(cert, system, tol=1e-8)))

v0, k0, raw_steps = sh.collapse_certificate_steps(
    cert.steps, {1: B.m_minus}, {1: B.m_plus})
print(f"raw code: k0={k0} steps={raw_steps}")
Fbar = sh.modified_scattering_evaluator(F0, F1, B.m_minus, B.m_plus)
code, shadow = sh.make_proper_code((k0, raw_steps), F0, {1: Fbar}, v0,
                                   k_bar=KBAR, gamma_rate=1.05, D=1)
print(f"proper: k0={code.k0} blocks={code.block_lengths()} "
      f"total={sum(code.block_lengths())}")
print(f"shadow I range: {shadow.points[:,1].min():.4f}.."
      f"{shadow.points[:,1].max():.4f}")

t1 = time.time()
orbit = sh.shoot_channel_orbit(md, cyl, {1: B}, shadow, delta=0.05, gap=gap,
                               tol_factor=1e-6, tol_abs=3e-9)
print(f"shoot: {time.time()-t1:.1f}s dps={orbit.details['dps']} "
      f"steps={len(orbit.trajectory)}")
print(f"u_in={orbit.details['u_in']:.3e} bound={orbit.bound:.3e} "
      f"max dev={np.max(orbit.deviations):.3e}")
dI = orbit.trajectory[:, 1].max() - orbit.trajectory[:, 1].min()
print(f"Delta I = {dI:.4f}")

rep = sh.verify_shadowing(md, cyl, orbit, shadow, gap, delta=0.05)
print(f"verify passed={rep.passed} details={rep.details}")
print(f"total {time.time()-t0:.1f}s")
