"""Tests for homoclinic points, cylinders, simplicity, and scattering maps."""

import numpy as np
import pytest

import cyldrift.homoclinic as hc
import cyldrift.maps as mp
import cyldrift.nhim as nh
from cyldrift.errors import FewerFound
from cyldrift.separatrix import sm_apply

K = 4.0
BAND = (0.5, 1.5)
EPS = 1e-3
LAM_S = 3.0 - 2.0 * np.sqrt(2.0)


def product_map():
    return mp.MapDef(kind=mp.PRODUCT_TWIST_STANDARD, k=K,
                     omega_coeffs=(0.0, 1.0))


def coupled_family():
    step = mp.PerturbationStep(
        epsilon=1.0, terms=(mp.TrigTerm(1, -1, 1.0, basis="sin"),))
    return mp.make_family(product_map(), [step])


@pytest.fixture(scope="module")
def saddle():
    return hc.find_saddle(K)


@pytest.fixture(scope="module")
def p_h(saddle):
    return hc.find_primary_homoclinic(saddle)


@pytest.fixture(scope="module")
def cyl0():
    return nh.compute_cylinder(product_map(), BAND, grid_sizes=(64, 16))


@pytest.fixture(scope="module")
def cyl_eps():
    return nh.compute_cylinder(coupled_family().at(EPS), BAND,
                               grid_sizes=(64, 16))


@pytest.fixture(scope="module")
def B0(cyl0, p_h):
    return hc.build_homoclinic_cylinder(product_map(), cyl0, p_h, BAND)


@pytest.fixture(scope="module")
def B_eps(cyl_eps, p_h):
    return hc.build_homoclinic_cylinder(coupled_family().at(EPS), cyl_eps,
                                        p_h, BAND)


# --- saddle data ---------------------------------------------------------

def test_saddle_multipliers():
    s4 = hc.find_saddle(4.0)
    assert abs(s4.multipliers[0] - (3 + 2 * np.sqrt(2))) < 1e-9
    assert abs(s4.multipliers[1] - (3 - 2 * np.sqrt(2))) < 1e-9
    s1 = hc.find_saddle(1.0)
    assert abs(s1.multipliers[0] - (3 + np.sqrt(5)) / 2) < 1e-9
    assert abs(s1.multipliers[1] - (3 - np.sqrt(5)) / 2) < 1e-9
    for s in (s4, s1):
        assert abs(s.multipliers[0] * s.multipliers[1] - 1.0) < 1e-12


def test_saddle_rejects_nonpositive_k():
    with pytest.raises(ValueError):
        hc.find_saddle(0.0)


# --- primary homoclinic point -------------------------------------------

def test_primary_on_symmetry_line(p_h):
    assert abs(p_h.xy[0] - np.pi) < 1e-9
    assert p_h.residual < 1e-8
    assert p_h.angle > 1e-3


def test_transversality_angle_grows_with_k(p_h):
    weak = hc.find_primary_homoclinic(hc.find_saddle(0.5))
    assert p_h.angle > weak.angle > 0


def test_forward_orbit_decays_at_stable_rate(p_h):
    p = p_h.xy.copy()
    d_prev = None
    for n in range(1, 11):
        p = sm_apply(K, p)
        d = np.hypot(nh.center_x(p[0]), p[1])
        if n == 10:
            assert abs(d / d_prev - LAM_S) < 0.05 * LAM_S
        d_prev = d


# --- homoclinic cylinders ------------------------------------------------

def test_unperturbed_cylinder_is_literal_product(B0, p_h):
    xy = np.array([mp.reduce_angle(p_h.xy[0]), p_h.xy[1]])
    dev = np.max(np.abs(B0.points[:, :, 2:4] - xy[None, None, :]))
    assert dev < 1e-9
    assert B0.m_plus <= 30 and B0.m_minus <= 30


def test_perturbed_cylinder_displacement_scales(B_eps, cyl_eps, p_h):
    xy = np.array([np.pi, p_h.xy[1]])
    dev = np.max(np.abs(B_eps.points[:, :, 2:4] - xy[None, None, :]))
    assert dev <= 10 * EPS
    md_half = coupled_family().at(EPS / 2)
    cyl_half = nh.compute_cylinder(md_half, BAND, grid_sizes=(64, 16))
    B_half = hc.build_homoclinic_cylinder(md_half, cyl_half, p_h, BAND)
    dev_half = np.max(np.abs(B_half.points[:, :, 2:4] - xy[None, None, :]))
    assert abs(dev_half / dev - 0.5) < 0.1


def test_cylinder_samples_on_both_manifolds(B_eps, cyl_eps):
    md = coupled_family().at(EPS)
    proj = nh.HolonomyProjector(md, cyl_eps, delta=0.05, tol=1e-7)
    pts = B_eps.points.reshape(-1, 4)[::7]
    for direction, m in (("stable", B_eps.m_plus),
                        ("unstable", B_eps.m_minus)):
        _, ok = hc.project_excursion(md, cyl_eps, pts, m, proj,
                                     direction=direction)
        assert np.all(ok)


# --- scattering map ------------------------------------------------------

def test_scattering_identity_unperturbed(B0, cyl0):
    smp = hc.scattering_map(product_map(), cyl0, B0)
    assert smp.deviation() < 1e-6
    assert smp.exactness_residual < 1e-6


def test_scattering_linear_in_epsilon(B_eps, cyl_eps, p_h):
    smp = hc.scattering_map(coupled_family().at(EPS), cyl_eps, B_eps)
    dev = smp.deviation()
    assert EPS / 10 < dev < 10 * EPS
    assert smp.exactness_residual < 1e-6
    md_half = coupled_family().at(EPS / 2)
    cyl_half = nh.compute_cylinder(md_half, BAND, grid_sizes=(64, 16))
    B_half = hc.build_homoclinic_cylinder(md_half, cyl_half, p_h, BAND)
    half = hc.scattering_map(md_half, cyl_half, B_half).deviation()
    assert abs(half / dev - 0.5) < 0.1


def test_scattering_conjugacy(B_eps, cyl_eps):
    res = hc.conjugacy_residual(coupled_family().at(EPS), cyl_eps, B_eps)
    assert res < 1e-6


# --- simplicity ----------------------------------------------------------

def test_simplicity_unperturbed(B0, cyl0):
    rep = hc.check_simplicity(product_map(), cyl0, B0)
    assert rep.passed
    assert rep.s1_condition < 1e6
    assert rep.s3_winding == 0


def test_simplicity_perturbed_within_factor_two(B0, cyl0, B_eps, cyl_eps):
    rep0 = hc.check_simplicity(product_map(), cyl0, B0)
    rep1 = hc.check_simplicity(coupled_family().at(EPS), cyl_eps, B_eps)
    assert rep1.passed
    assert rep1.s1_condition < 2 * rep0.s1_condition


def test_simplicity_detects_collapsed_tangents(B0, cyl0):
    md = product_map()

    def degenerate(node):
        fu, fs = hc.fiber_tangents(md, B0, node)
        tp, _ = hc._cylinder_tangents(B0, node)
        return tp + 1e-9 * fu, fs

    rep = hc.check_simplicity(md, cyl0, B0, fiber_override=degenerate)
    assert not rep.s1_ok
    assert rep.s1_condition > 1e8


# --- secondary cylinders -------------------------------------------------

def test_many_distinct_homoclinic_orbits():
    pts = hc.find_homoclinic_points(K)
    assert len(pts) >= 9
    for hp in pts:
        assert hp.residual < 1e-8
        assert hp.angle > 1e-6


def test_generate_eight_secondaries(B0, cyl0):
    md = product_map()
    secs = hc.generate_secondary(md, cyl0, B0, 8)
    assert len(secs) == 8
    lam_u = 3 + 2 * np.sqrt(2)
    keys = [hc._orbit_key(s.p_h, lam_u) for s in secs]
    keys.append(hc._orbit_key(B0.p_h, lam_u))
    for i in range(len(keys)):
        for j in range(i + 1, len(keys)):
            sep = max(abs(keys[i][0] - keys[j][0]) / keys[i][0],
                      abs(keys[i][1] - keys[j][1]) / keys[i][1])
            assert sep > 1e-3


def test_fewer_found_carries_survivors(B0, cyl0):
    with pytest.raises(FewerFound) as e:
        hc.generate_secondary(product_map(), cyl0, B0, 8, s_max=60.0)
    assert 0 < len(e.value.found) < 8


# --- symplectic geometry -------------------------------------------------

def test_fiber_orthogonal_to_stable_manifold(cyl0, cyl_eps):
    md0 = product_map()
    _, _, e_s, _, _, _ = nh.saddle_frame(K)
    pts = cyl0.point4(np.column_stack([np.linspace(0, 6, 5),
                                       np.full(5, 1.0)]))
    pts[:, 2:4] += 0.01 * e_s
    rep = hc.symplectic_orthogonality_check(md0, cyl0, pts)
    assert rep.passed and rep.max_residual == 0.0
    md1 = coupled_family().at(EPS)
    pts1 = cyl_eps.point4(np.column_stack([np.linspace(0, 6, 5),
                                           np.full(5, 1.0)]))
    pts1[:, 2:4] += 0.01 * e_s
    rep1 = hc.symplectic_orthogonality_check(md1, cyl_eps, pts1)
    assert rep1.passed and rep1.max_residual < 1e-6
    pair = rep1.details["pairings"]
    assert pair[-1] < pair[0]


def test_cylinder_form_nondegenerate(cyl0, cyl_eps):
    rep0 = hc.cylinder_form_check(product_map(), cyl0)
    assert rep0.passed and abs(rep0.max_residual - 1.0) < 1e-12
    rep1 = hc.cylinder_form_check(coupled_family().at(EPS), cyl_eps)
    assert rep1.passed and rep1.max_residual > 0.9
