"""Tests for proper codes, recurrence padding, and channel-orbit shooting."""

import numpy as np
import pytest

from cyldrift import homoclinic as hc
from cyldrift import ifs as tr
from cyldrift import maps as mp
from cyldrift import nhim
from cyldrift import shadowing as sh
from cyldrift.errors import (BoundViolated, NotFound, PaddingFailed)

TWO_PI = 2.0 * np.pi
GOLD = (np.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# codes and properness

def test_properness_floors_unroll_backward():
    code = sh.Code(k0=0, steps=[(1, 0)] * 3, properness=(10, 2.0, 5))
    assert code.floors() == [115, 55, 25, 10]


def test_properness_check_accepts_floor_code():
    code = sh.Code(k0=115, steps=[(1, 55), (1, 25), (1, 10)],
                   properness=(10, 2.0, 5))
    assert code.is_proper()


def test_properness_check_rejects_short_first_block():
    code = sh.Code(k0=114, steps=[(1, 55), (1, 25), (1, 10)],
                   properness=(10, 2.0, 5))
    assert not code.is_proper()


def test_properness_check_rejects_slow_decay():
    code = sh.Code(k0=115, steps=[(1, 55), (1, 54), (1, 53)],
                   properness=(10, 2.0, 5))
    assert not code.is_proper()


def test_gamma_rate_threshold_below_two():
    """With the measured rates of the k=4 cylinder, geometric decay at rate
    2 is admissible: the threshold log(1/(alpha*lam))/log(alpha/lam) is
    below one."""
    thr = sh.gamma_rate_threshold(1.0512492197250394, 0.17157287525380996)
    assert thr == pytest.approx(0.9448574356737728, abs=1e-12)
    assert thr < 2.0


def test_code_json_round_trip(tmp_path):
    import json
    code = sh.Code(k0=115, steps=[(1, 55), (2, 25)], properness=(10, 2.0, 5))
    path = tmp_path / "code.json"
    code.to_json(path)
    doc = json.loads(path.read_text())
    assert doc["k0"] == 115
    assert doc["steps"] == [[1, 55], [2, 25]]
    assert doc["properness"] == {"k_bar": 10, "gamma_rate": 2.0, "D": 5}


# ---------------------------------------------------------------------------
# recurrence return times

def _rotation(angle):
    def F(phi, y):
        return (phi + angle) % TWO_PI, y
    return F


def test_return_times_of_golden_rotation_are_fibonacci():
    F = _rotation(TWO_PI * GOLD)
    v = np.array([0.3, 1.0])
    # distances ||k*gold|| have record minima exactly at Fibonacci numbers
    for radius, k_expect in [(2.5, 1), (2.0, 2), (1.0, 3), (0.6, 5),
                             (0.4, 8), (0.3, 13), (0.2, 21)]:
        assert sh.find_return_time(F, v, radius) == k_expect


def test_return_time_of_rational_rotation():
    F = _rotation(TWO_PI * 3 / 7)
    assert sh.find_return_time(F, np.array([0.0, 1.0]), 1e-9) == 7


def test_return_time_respects_k_min():
    F = _rotation(TWO_PI * 3 / 7)
    assert sh.find_return_time(F, np.array([0.0, 1.0]), 1e-9, k_min=8) == 14


def test_return_time_not_found_raises():
    F = _rotation(TWO_PI * GOLD)
    with pytest.raises(NotFound):
        sh.find_return_time(F, np.array([0.0, 1.0]), 1e-6, k_max=50)


# ---------------------------------------------------------------------------
# certificate collapsing

def test_collapse_certificate_steps():
    steps = [(0.0, 1.0, 0)] * 5 + [(0.1, 1.0, 1)] + [(0.2, 1.1, 0)] * 9 + \
        [(0.3, 1.1, 1)] + [(0.4, 1.2, 0)] * 8 + [(0.5, 1.2, tr.SEED)]
    v0, k0, out = sh.collapse_certificate_steps(
        steps, m_minus={1: 3}, m_plus={1: 4})
    assert v0 == (0.0, 1.0)
    assert k0 == 5 - 3
    assert out == [(1, 9 - 4 - 3), (1, 8 - 4)]


def test_collapse_allows_tight_chains():
    steps = [(0.0, 1.0, 0)] * 2 + [(0.1, 1.0, 1)] + [(0.2, 1.1, 0)] * 3 + \
        [(0.3, 1.1, 1)] + [(0.4, 1.2, 0)] * 5 + [(0.5, 1.2, tr.SEED)]
    _, k0, out = sh.collapse_certificate_steps(
        steps, m_minus={1: 3}, m_plus={1: 4})
    assert k0 == -1
    assert out == [(1, -4), (1, 1)]


# ---------------------------------------------------------------------------
# the k=4 channel at epsilon = 0

@pytest.fixture(scope="module")
def channel():
    md = mp.MapDef(kind=mp.PRODUCT_TWIST_STANDARD, k=4.0)
    band = (2.3, 3.0)
    cyl = nhim.compute_cylinder(md, band, grid_sizes=(64, 16))
    ph = hc.find_primary_homoclinic(hc.find_saddle(4.0))
    B = hc.build_homoclinic_cylinder(md, cyl, ph, band, grid_sizes=(16, 8))
    sample = hc.scattering_map(md, cyl, B, grid_sizes=(16, 8))
    gap = nhim.spectral_gap(md, cyl)
    F0 = tr.restricted_evaluator(md, cyl)
    Fbar = sh.modified_scattering_evaluator(
        F0, tr.scattering_evaluator(sample), B.m_minus, B.m_plus)
    return md, cyl, B, gap, F0, Fbar


@pytest.fixture(scope="module")
def proper(channel):
    md, cyl, B, gap, F0, Fbar = channel
    raw = (5, [(1, 3), (1, 2), (1, 1)])
    v0 = (0.1, TWO_PI * 3 / 7)
    return sh.make_proper_code(raw, F0, {1: Fbar}, v0,
                               k_bar=10, gamma_rate=2.0, D=5)


@pytest.fixture(scope="module")
def shot(channel, proper):
    md, cyl, B, gap, F0, Fbar = channel
    _, shadow = proper
    orbit = sh.shoot_channel_orbit(md, cyl, {1: B}, shadow,
                                   delta=0.05, gap=gap)
    return orbit


def test_entry_signature(channel):
    md, cyl, B, gap, F0, Fbar = channel
    sig, dB = sh.entry_signature(md, cyl, B)
    assert sig == 1.0
    assert dB == pytest.approx(0.021378923977, abs=1e-9)


def test_padding_lands_on_rational_returns(proper):
    """At rotation number 3/7 every recurrence return is a multiple of
    seven, so the padded blocks are pinned exactly."""
    code, shadow = proper
    assert code.block_lengths() == [166, 80, 37, 15]
    assert code.is_proper()
    assert shadow.points.shape == (8, 2)
    # the twist preserves the action, and at epsilon = 0 so does the
    # modified scattering map
    assert np.allclose(shadow.points[:, 1], TWO_PI * 3 / 7, atol=1e-12)


def test_padding_failure_reports_block():
    F = _rotation(TWO_PI * GOLD)
    with pytest.raises(PaddingFailed, match="block"):
        sh.make_proper_code((1, []), F, {}, (0.0, 1.0),
                            k_bar=40, gamma_rate=2.0, D=5, k_max=30)


def test_shot_orbit_is_a_true_orbit(channel, shot):
    """Every stored step reproduces under a fresh float application of the
    map; the orbit property is exact by construction."""
    md = channel[0]
    step = mp.apply_array(md, shot.trajectory[:-1], reduce=False)
    assert np.max(np.abs(step - shot.trajectory[1:])) < 1e-8


def test_shot_orbit_starts_within_delta(shot):
    assert 0 < shot.details["u_in"] < 0.05


def test_shot_station_deviations_meet_bound(shot):
    assert shot.bound == pytest.approx(0.05 * 0.18036585123654925 ** 7.5,
                                       rel=1e-6)
    assert np.max(shot.deviations) <= 2 * shot.bound
    # the base decouples from the normal dynamics here, so the stations
    # track the shadow to roundoff
    assert np.max(shot.deviations) < 1e-10


def test_shot_orbit_verifies(channel, shot, proper):
    md, cyl, B, gap, F0, Fbar = channel
    _, shadow = proper
    rep = sh.verify_shadowing(md, cyl, shot, shadow, gap, delta=0.05)
    assert rep.passed
    assert rep.details["step_error"] < 1e-8
    assert rep.details["stable_ratio"] <= gap.lam + 0.05


def test_verify_rejects_tampered_trajectory(channel, shot, proper):
    md, cyl, B, gap, F0, Fbar = channel
    _, shadow = proper
    import copy
    bad = copy.deepcopy(shot)
    bad.trajectory[50, 3] += 1e-5
    rep = sh.verify_shadowing(md, cyl, bad, shadow, gap, delta=0.05)
    assert not rep.passed
    assert rep.details["step_error"] > 1e-6


def test_shoot_raises_on_unreachable_bound(channel, proper):
    """A doctored spectral gap shrinks the deviation bound below roundoff;
    the shot must refuse to certify."""
    md, cyl, B, gap, F0, Fbar = channel
    _, shadow = proper
    fake = nhim.SpectralGapReport(alpha=0.1, lam=0.1, product=1e-3,
                                  scaling=(1.0, 0.1), band=cyl.band,
                                  passed=True)
    with pytest.raises(BoundViolated):
        sh.shoot_channel_orbit(md, cyl, {1: B}, shadow, delta=0.05,
                               gap=fake)


def test_trivial_code_stays_on_cylinder(channel):
    md, cyl, B, gap, F0, Fbar = channel
    code = sh.Code(k0=12, steps=[], properness=(10, 2.0, 5))
    pts = [np.array([0.1, TWO_PI * 3 / 7])]
    p, y = np.array([0.1]), np.array([TWO_PI * 3 / 7])
    for _ in range(12):
        p, y = F0(p, y)
    pts.append(np.array([p[0], y[0]]))
    shadow = sh.ShadowOrbit(points=np.array(pts), code=code)
    orbit = sh.shoot_channel_orbit(md, cyl, {1: B}, shadow,
                                   delta=0.05, gap=gap)
    assert orbit.details["u_in"] == 0.0
    assert np.max(orbit.deviations) < 1e-9


def test_stable_component_contracts_along_blocks(channel, shot):
    """After each excursion the stable normal component decays at the
    saddle rate until it reaches the readability floor."""
    md, cyl = channel[0], channel[1]
    _, _, _, _, l_s, _ = nhim.saddle_frame(4.0)
    i0 = shot.station_index[2]
    i1 = shot.station_index[3]
    seg = shot.trajectory[i0:i1 + 1]
    off = nhim.centered_xy(seg) - cyl.g(seg[:, 0], seg[:, 1])
    s = np.abs(off @ l_s)
    lam = 0.17157287525380996
    n = 0
    while s[n + 1] > 1e-12:
        assert s[n + 1] / s[n] < lam + 0.05
        n += 1
    assert n >= 10


def test_channel_orbit_csv(shot, tmp_path):
    import csv
    path = tmp_path / "orbit.csv"
    shot.write_csv(path)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["step", "phi", "I", "x", "y",
                       "station_flag", "deviation"]
    assert len(rows) == len(shot.trajectory) + 1
    flags = [int(r[5]) for r in rows[1:]]
    assert sum(flags) == len(shot.station_index)
    # stations carry their deviation, other rows leave it empty
    first_station = shot.station_index[0]
    assert rows[1 + first_station][6] != ""
    assert rows[2][6] == ""
