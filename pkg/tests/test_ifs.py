"""Tests for the cylinder iterated function system and transport dichotomy."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from cyldrift import homoclinic as hc
from cyldrift import ifs as tr
from cyldrift import maps as mp
from cyldrift import nhim
from cyldrift.errors import BandOverflow, DomainExceeded, GenerationLimit

BAND = (0.0, 1.0)
ANGLE = 0.3 * 2 * np.pi


def plateau_bump(phi, lo=0.0, width=1.0, amp=0.05, edge=0.15):
    """amp on phi in [lo, lo+width], smoothly cut off over `edge`."""
    phi = np.asarray(phi)
    d = np.mod(phi - lo, 2 * np.pi)
    t = np.clip(d / edge, 0.0, 1.0)
    u = np.clip((width - d) / edge, 0.0, 1.0)
    s = (3 * t * t - 2 * t**3) * (3 * u * u - 2 * u**3)
    return amp * np.where(d <= width, s, 0.0)


@pytest.fixture(scope="module")
def rotation_system():
    rot = tr.rotation_evaluator(ANGLE)
    return tr.IFS(F0=rot, Fn=[tr.rotation_evaluator(ANGLE)], band=BAND)


@pytest.fixture(scope="module")
def bump_system():
    rot = tr.rotation_evaluator(ANGLE)
    F1 = tr.rotation_evaluator(ANGLE, bump=plateau_bump)
    return tr.IFS(F0=rot, Fn=[F1], band=BAND)


@pytest.fixture(scope="module")
def bump_certificate(bump_system):
    return tr.birkhoff_transport(bump_system, tr.flat_curve(0.1),
                                 tr.flat_curve(0.4))


# ---------------------------------------------------------------------------
# curve images

def test_curve_image_identity():
    g = tr.curve_from_function(lambda p: 0.5 + 0.1 * np.sin(p))
    lp, y, src = tr.curve_image(lambda p, q: (p, q), g)
    assert np.allclose(mp.reduce_angle(lp[:-1]), g.phis, atol=1e-12)
    assert np.allclose(y[:-1], g.ys, atol=1e-15)


def test_curve_image_twist_preserves_circle():
    g = tr.flat_curve(0.2)
    lp, y, _ = tr.curve_image(tr.twist_evaluator(), g, band=BAND)
    assert np.all(np.diff(lp) > 0)          # still a graph
    assert np.max(np.abs(y - 0.2)) < 1e-14


def test_curve_image_shifted_sine_graph():
    c = 0.7
    F = tr.rotation_evaluator(c, bump=lambda p: 0.01 * np.sin(p))
    g = tr.flat_curve(0.2)
    lp, y, _ = tr.curve_image(F, g)
    assert np.max(np.abs(y - (0.2 + 0.01 * np.sin(lp - c)))) < 1e-12


def test_curve_image_leaving_band_raises():
    F = tr.rotation_evaluator(0.0, bump=lambda p: 0.8 * np.ones_like(p))
    with pytest.raises(DomainExceeded):
        tr.curve_image(F, tr.flat_curve(0.5), band=BAND)


def test_curve_image_wrong_winding_raises():
    def doubling(p, q):
        return mp.reduce_angle(2 * p), q
    with pytest.raises(DomainExceeded):
        tr.curve_image(doubling, tr.flat_curve(0.5))


# ---------------------------------------------------------------------------
# upper boundary operator

def test_envelope_of_two_graphs():
    g = tr.flat_curve(0.5)
    F = tr.rotation_evaluator(0.0, bump=lambda p: 0.1 * np.sin(p))
    env = tr.upper_boundary_op(g, F, BAND)
    expected = np.maximum(0.5, 0.5 + 0.1 * np.sin(g.phis))
    assert np.max(np.abs(env.ys - expected)) < 1e-9
    # image samples win exactly where the sine is positive
    assert np.all(env.map_idx[env.ys > 0.5 + 1e-12] == 1)
    assert np.all(env.map_idx[env.ys <= 0.5] == tr.SEED)


def test_envelope_identity_returns_curve():
    g = tr.curve_from_function(lambda p: 0.4 + 0.05 * np.cos(p))
    env = tr.upper_boundary_op(g, lambda p, q: (p, q), BAND)
    assert np.max(np.abs(env.ys - g.ys)) < 1e-9


def test_envelope_band_overflow():
    g = tr.flat_curve(0.5)
    F = tr.rotation_evaluator(0.0, bump=lambda p: 0.45 * np.ones_like(p))
    with pytest.raises(BandOverflow):
        tr.upper_boundary_op(g, F, BAND, overflow_margin=0.1)


def test_envelope_fold_matches_rasterized_oracle():
    """Steep fold: the image polyline is not a graph, so the top-adjacent
    component reaches below the largest vertical crossing around the fold.
    Oracle: independent rasterized flood fill from the band top."""
    def fold(phi, y):
        return mp.reduce_angle(phi + 0.8 * np.sin(2 * phi)), y + 0.1 * np.cos(phi)

    g = tr.flat_curve(0.5)
    env = tr.upper_boundary_op(g, fold, BAND)
    assert np.all(env.ys >= g.ys - 1e-12)

    N = 400
    lp, yim, _ = tr.curve_image(fold, g)

    def rasterize(P, Y):
        walls = np.zeros((N, N), dtype=bool)
        for a, b, ya, yb in zip(P[:-1], P[1:], Y[:-1], Y[1:]):
            n = max(2, int(2 * N * (abs(b - a) / (2 * np.pi) + abs(yb - ya))) + 2)
            t = np.linspace(0, 1, n)
            i = ((mp.reduce_angle(a + t * (b - a)) / (2 * np.pi) * N).astype(int)) % N
            j = np.clip((Y[0] * 0 + (ya + t * (yb - ya)) * N).astype(int), 0, N - 1)
            walls[i, j] = True
        return walls

    walls = rasterize(lp, yim)
    walls |= rasterize(np.concatenate([g.phis, [2 * np.pi]]),
                       np.concatenate([g.ys, [g.ys[0]]]))
    labels, _ = ndimage.label(~walls)
    top = {a for a in labels[:, -1] if a}
    for a, b in zip(labels[0], labels[-1]):
        if a and b and (a in top or b in top):
            top |= {a, b}
    in_top = np.isin(labels, list(top))
    oracle = np.array([np.where(col)[0].min() / N for col in in_top])
    d = tr._polyline_hausdorff(
        env, np.concatenate([np.arange(N) * 2 * np.pi / N, [2 * np.pi]]),
        np.concatenate([oracle, [oracle[0]]]))
    assert d < 1.5 * 2 * np.pi / g.phis.size   # within one curve grid cell


@settings(max_examples=20, deadline=None)
@given(angle=st.floats(0.05, 6.0), amp=st.floats(0.0, 0.2))
def test_envelope_dominates_curve(angle, amp):
    g = tr.flat_curve(0.5)
    F = tr.rotation_evaluator(angle, bump=lambda p, a=amp: a * np.sin(p))
    env = tr.upper_boundary_op(g, F, (0.0, 2.0))
    assert np.all(env.ys >= g.ys - 1e-12)
    assert env.is_lipschitz(slack=1e-9)


# ---------------------------------------------------------------------------
# transport dichotomy on synthetic systems

def test_obstruction_two_rotations(rotation_system):
    cert = tr.birkhoff_transport(rotation_system, tr.flat_curve(0.1),
                                 tr.flat_curve(0.4))
    assert cert.outcome == "Obstruction"
    assert np.max(cert.residuals) < 1e-9
    v = tr.validate_certificate(cert, rotation_system)
    assert bool(v)
    assert v.diagnosis["hausdorff"] < 1e-9


def test_connecting_rotation_with_bump(bump_system, bump_certificate):
    cert = bump_certificate
    assert cert.outcome == "Connecting"
    assert len(cert.steps) - 1 <= 60
    v = tr.validate_certificate(cert, bump_system)
    assert bool(v)
    assert v.diagnosis["step_error"] < 1e-12
    p0, y0, _ = cert.steps[0]
    pe, ye, _ = cert.steps[-1]
    assert abs(y0 - 0.1) < 2 * np.pi / 256 * 2
    assert ye >= 0.4 - 2 * np.pi / 256 * 2


def test_generation_monotonicity(bump_certificate):
    hist = bump_certificate.history
    assert len(hist) >= 2
    for a, b in zip(hist, hist[1:]):
        assert np.all(b.ys >= a.ys - 1e-15)


def test_tampered_certificate_rejected(bump_system, bump_certificate):
    import copy
    bad = copy.deepcopy(bump_certificate)
    i = len(bad.steps) // 2
    p, y, n = bad.steps[i]
    bad.steps[i] = (p, y + 1e-2, n)
    v = tr.validate_certificate(bad, bump_system)
    assert not bool(v)
    assert v.diagnosis["step_error"] > 1e-3


def test_generation_limit(bump_system):
    with pytest.raises(GenerationLimit) as exc:
        tr.birkhoff_transport(bump_system, tr.flat_curve(0.1),
                              tr.flat_curve(0.4), max_gen=3)
    assert exc.value.generations == 3
    assert exc.value.last_curve is not None


def test_certificate_json_schema(bump_certificate, tmp_path):
    import json
    path = tmp_path / "cert.json"
    doc = bump_certificate.to_json(path)
    with open(path) as f:
        loaded = json.load(f)
    assert loaded["outcome"] == "Connecting"
    assert loaded["generations"] == doc["generations"]
    assert set(loaded["steps"][0]) == {"phi", "I", "map_index"}


# ---------------------------------------------------------------------------
# brute-force oracle

def _start_row(n_phi, row):
    return [(i, row) for i in range(n_phi)]


def test_brute_force_rotation_confined(rotation_system):
    reach = tr.brute_force_reachability(rotation_system, (200, 200),
                                        _start_row(200, 19))
    rows = np.where(reach.any(axis=0))[0]
    assert rows.min() == rows.max() == 19   # y never changes


def test_brute_force_connecting_reaches_goal(bump_system):
    reach = tr.brute_force_reachability(bump_system, (200, 200),
                                        _start_row(200, 19))
    assert reach[:, int(0.4 * 200):].any()


def test_brute_force_refinement_monotone(bump_system, rotation_system):
    """Refining the grid never converts reachable into unreachable."""
    for n in (100, 200, 400):
        row = int(0.1 * n)
        reach = tr.brute_force_reachability(bump_system, (n, n),
                                            _start_row(n, row))
        assert reach[:, int(0.4 * n):].any()
        reach = tr.brute_force_reachability(rotation_system, (n, n),
                                            _start_row(n, row))
        assert not reach[:, int(0.4 * n):].any()


def test_oracle_agreement_randomized():
    """birkhoff_transport outcome matches grid reachability on 10 randomized
    synthetic systems (even seeds get an upward bump, odd seeds are pairs of
    pure rotations)."""
    for seed in range(10):
        rng = np.random.default_rng(seed)
        a0 = rng.uniform(0.1, 0.9) * 2 * np.pi
        a1 = rng.uniform(0.1, 0.9) * 2 * np.pi
        if seed % 2 == 0:
            lo = rng.uniform(0, 2 * np.pi)
            width = rng.uniform(0.8, 1.5)
            amp = rng.uniform(0.03, 0.06)
            F1 = tr.rotation_evaluator(
                a1, bump=lambda p: plateau_bump(p, lo=lo, width=width, amp=amp))
        else:
            F1 = tr.rotation_evaluator(a1)
        system = tr.IFS(F0=tr.rotation_evaluator(a0), Fn=[F1], band=BAND)
        cert = tr.birkhoff_transport(system, tr.flat_curve(0.1),
                                     tr.flat_curve(0.4), max_gen=400)
        assert bool(tr.validate_certificate(cert, system))
        reach = tr.brute_force_reachability(system, (200, 200),
                                            _start_row(200, 19))
        reachable = bool(reach[:, int(0.4 * 200):].any())
        assert (cert.outcome == "Connecting") == reachable


# ---------------------------------------------------------------------------
# Lipschitz bound and IFS checks

def test_lipschitz_bound_of_twist():
    L = tr.lipschitz_bound(tr.twist_evaluator(), BAND)
    assert abs(L - 1.0) < 1e-6


def test_obstruction_curve_is_lipschitz():
    tw = tr.twist_evaluator()
    system = tr.IFS(F0=tw, Fn=[tw], band=BAND)
    gm = tr.curve_from_function(lambda p: 0.2 + 0.03 * np.sin(p))
    cert = tr.birkhoff_transport(system, gm, tr.flat_curve(0.6),
                                 tol=1e-5, max_gen=2000)
    assert cert.outcome == "Obstruction"
    assert bool(tr.validate_certificate(cert, system, tol=1e-4))
    L = tr.lipschitz_bound(tw, BAND)
    assert cert.obstruction.slope() <= 1.1 * L


def test_check_ifs_twist_passes():
    tw = tr.twist_evaluator()
    rep = tr.check_ifs(tr.IFS(F0=tw, Fn=[tw], band=(0.6, 1.4)))
    assert rep.passed
    assert rep.details["min_twist"] > 0.5
    assert rep.details["windings"] == [1, 1]


def test_check_ifs_rejects_wrong_winding():
    tw = tr.twist_evaluator()

    def collapse(p, q):
        return np.full_like(np.asarray(p, float), 0.3), q
    rep = tr.check_ifs(tr.IFS(F0=tw, Fn=[collapse], band=(0.6, 1.4)))
    assert not rep.passed


def test_curve_rejects_coarse_grid():
    with pytest.raises(ValueError):
        tr.EssentialCurve(phis=np.arange(64) * 2 * np.pi / 64,
                          ys=np.zeros(64), L=1.0)


# ---------------------------------------------------------------------------
# the perturbed product pipeline

@pytest.fixture(scope="module")
def pipeline():
    base = mp.MapDef(kind=mp.PRODUCT_TWIST_STANDARD, k=4.0)
    fam = mp.make_family(base, [mp.PerturbationStep(
        epsilon=1.0, terms=(mp.TrigTerm(1, -1, 1.0, basis="sin"),))])
    md = fam.at(1e-3)
    cyl = nhim.compute_cylinder(md, (0.5, 1.5), grid_sizes=(64, 16))
    saddle = hc.find_saddle(4.0)
    ph = hc.find_primary_homoclinic(saddle)
    B = hc.build_homoclinic_cylinder(md, cyl, ph, (0.5, 1.5),
                                     grid_sizes=(32, 12))
    sample = hc.scattering_map(md, cyl, B, grid_sizes=(32, 16))
    system = tr.IFS(F0=tr.restricted_evaluator(md, cyl),
                    Fn=[tr.scattering_evaluator(sample)], band=(0.6, 1.4))
    return system, sample


def test_scattering_shift_changes_sign_on_curves(pipeline):
    """Exactness: the action shift of the scattering map changes sign along
    every essential curve, so no image lies strictly above the curve."""
    system, sample = pipeline
    F1 = system.Fn[0]
    for y0 in (0.8, 1.0, 1.2):
        g = tr.flat_curve(y0)
        _, Y = F1(g.phis, g.ys)
        d = Y - g.ys
        assert d.min() < 0 < d.max()


def test_pipeline_transport_dichotomy(pipeline):
    system, _ = pipeline
    cert = tr.birkhoff_transport(system, tr.flat_curve(0.95),
                                 tr.flat_curve(1.05), max_gen=2000)
    assert cert.outcome in ("Connecting", "Obstruction")
    assert bool(tr.validate_certificate(cert, system, tol=1e-8))
    # with a genuinely perturbed map the curves do climb
    assert cert.outcome == "Connecting"
    assert len(cert.steps) - 1 <= 100
