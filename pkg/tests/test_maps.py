import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyldrift import maps as M

TWO_PI = 2.0 * math.pi


def random_points(n, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform([0, -1, 0, -1], [TWO_PI, 1, TWO_PI, 1], size=(n, 4))


@pytest.fixture
def product_map():
    return M.MapDef(kind=M.PRODUCT_TWIST_STANDARD, k=4.0, omega_coeffs=(0.0, 1.0))


@pytest.fixture
def double_map():
    return M.MapDef(kind=M.DOUBLE_STANDARD, k1=1.0, k2=4.0)


@pytest.fixture
def perturbed_map():
    step = M.PerturbationStep(
        1e-3, (M.TrigTerm(1, -1, 1.0, "cos"), M.TrigTerm(2, 1, 0.5, "sin")))
    return M.MapDef(kind=M.PRODUCT_TWIST_STANDARD, k=4.0, perturbations=(step,))


class TestApply:
    def test_product_known_value(self, product_map):
        # hand evaluation: phi'=0+0.3, I'=0.3, y'=0+4 sin 1, x'=1+y'
        p = M.apply(product_map, M.PhasePoint(0.0, 0.3, 1.0, 0.0))
        s = 4.0 * math.sin(1.0)
        assert p.phi == pytest.approx(0.3, abs=1e-15)
        assert p.I == pytest.approx(0.3, abs=1e-15)
        assert p.y == pytest.approx(s, abs=1e-14)
        assert p.x == pytest.approx(1.0 + s, abs=1e-14)

    def test_double_known_value(self, double_map):
        # I'=0.2+sin 1, phi'=1+I', then the (x,y) standard factor with k2=4
        p = M.apply(double_map, M.PhasePoint(1.0, 0.2, 1.0, 0.0))
        I1 = 0.2 + math.sin(1.0)
        assert p.I == pytest.approx(I1, abs=1e-14)
        assert p.phi == pytest.approx(1.0 + I1, abs=1e-14)

    def test_cylinder_invariance(self, product_map, perturbed_map):
        # x=y=0 is invariant for the product; the perturbed composite moves
        # it only at O(eps) in the actions.
        p = M.apply(product_map, M.PhasePoint(1.3, 0.25, 0.0, 0.0))
        assert p.x == 0.0 and p.y == 0.0
        q = M.apply(perturbed_map, M.PhasePoint(1.3, 0.25, 0.0, 0.0))
        assert abs(q.y) < 2e-3

    def test_angle_reduction_idempotent(self, product_map):
        pts = random_points(20) + np.array([10 * TWO_PI, 0, -6 * TWO_PI, 0])
        out = M.apply_array(product_map, pts)
        assert np.all(out[:, 0] >= 0) and np.all(out[:, 0] < TWO_PI)
        assert np.all(out[:, 2] >= 0) and np.all(out[:, 2] < TWO_PI)

    @pytest.mark.parametrize("fix", ["product_map", "double_map", "perturbed_map"])
    def test_inverse_roundtrip(self, fix, request):
        md = request.getfixturevalue(fix)
        pts = random_points(200, seed=3)
        back = M.apply_array(md, M.apply_array(md, pts), inverse=True)
        assert np.max(np.abs(M.wrap_diff(back[:, [0, 2]], pts[:, [0, 2]]))) < 1e-10
        assert np.max(np.abs(back[:, [1, 3]] - pts[:, [1, 3]])) < 1e-10


class TestJacobian:
    @pytest.mark.parametrize("fix", ["product_map", "double_map", "perturbed_map"])
    def test_matches_finite_differences(self, fix, request):
        md = request.getfixturevalue(fix)
        for row in random_points(10, seed=7):
            J = M.jacobian(md, row)
            assert np.max(np.abs(J - M.jacobian_fd(md, row))) < 1e-7

    def test_unit_determinant(self, product_map, double_map, perturbed_map):
        for md in (product_map, double_map, perturbed_map):
            for row in random_points(25, seed=5):
                assert np.linalg.det(M.jacobian(md, row)) == pytest.approx(1.0, abs=1e-12)


class TestSymplectic:
    @pytest.mark.parametrize("fix", ["product_map", "double_map", "perturbed_map"])
    def test_builtin_maps_pass(self, fix, request):
        md = request.getfixturevalue(fix)
        rep = M.check_symplectic(md, random_points(1000, seed=1), tol=1e-9)
        assert rep.passed and rep.max_residual < 1e-9

    def test_broken_map_fails_with_injected_residual(self):
        # y' = y + k sin x + 0.1 x (shear not fed into x'): det drops by 0.1,
        # so the J^T Omega J defect is 0.1 up to roundoff.
        md = M.MapDef(kind=M.PRODUCT_TWIST_STANDARD, k=4.0, defect_shear=0.1)
        rep = M.check_symplectic(md, random_points(100, seed=2), tol=1e-9)
        assert not rep.passed
        assert rep.max_residual == pytest.approx(0.1, rel=1e-6)


class TestExactness:
    def test_circle_loop_action(self, product_map):
        # oracle: for the circle I=0.2, x=y=0 the action is 2*pi*0.2 exactly
        loop = lambda t: np.array([TWO_PI * t, 0.2, 0.0, 0.0])
        rep = M.check_exact(product_map, loop, quadrature_n=256, tol=1e-8)
        assert rep.passed
        assert rep.details["action_before"] == pytest.approx(0.4 * math.pi, abs=1e-12)

    def test_perturbed_composite_exact(self, perturbed_map):
        loops = [
            lambda t: np.array([TWO_PI * t, 0.2, 0.0, 0.0]),
            lambda t: np.array([TWO_PI * t, 0.3 + 0.05 * np.sin(TWO_PI * t), 1.0, 0.2]),
            lambda t: np.array([1.0, 0.1, TWO_PI * t, 0.1 * np.cos(TWO_PI * t)]),
            lambda t: np.array([TWO_PI * t, 0.2, TWO_PI * t, 0.1 * np.sin(TWO_PI * t)]),
            lambda t: np.array([0.4 + 0.3 * np.sin(TWO_PI * t), 0.2 + 0.1 * np.cos(TWO_PI * t), 2.0, -0.3]),
        ]
        for loop in loops:
            rep = M.check_exact(perturbed_map, loop, quadrature_n=512, tol=1e-8)
            assert rep.passed, rep

    def test_broken_map_not_exact(self):
        md = M.MapDef(kind=M.PRODUCT_TWIST_STANDARD, k=4.0, defect_shear=0.1)
        loop = lambda t: np.array([0.3, 0.1, TWO_PI * t, 0.05 * np.sin(TWO_PI * t)])
        rep = M.check_exact(md, loop, quadrature_n=512, tol=1e-8)
        assert not rep.passed and rep.max_residual > 1e-3


class TestFamily:
    def test_zero_parameters_return_base_object(self, product_map):
        fam = M.make_family(product_map, [M.PerturbationStep(1.0, (M.TrigTerm(1, 0, 1.0),))])
        assert fam.at(0.0) is product_map

    def test_two_step_order(self, product_map):
        f1 = M.PerturbationStep(1.0, (M.TrigTerm(1, 0, 1.0, "cos"),))
        f2 = M.PerturbationStep(1.0, (M.TrigTerm(0, 1, 1.0, "cos"),))
        fam = M.make_family(product_map, [f1, f2])
        md = fam.at(0.01, 0.02)
        # first-listed step is outermost: applied last
        assert md.perturbations[0].terms == f2.terms
        assert md.perturbations[1].terms == f1.terms
        assert md.perturbations[0].epsilon == 0.02

    def test_family_members_symplectic(self, product_map):
        f1 = M.PerturbationStep(1.0, (M.TrigTerm(1, -1, 1.0, "cos"),))
        f2 = M.PerturbationStep(1.0, (M.TrigTerm(2, 1, 0.5, "sin"),))
        fam = M.make_family(product_map, [f1, f2])
        rep = M.check_symplectic(fam.at(1e-2, 5e-3), random_points(100, seed=9), tol=1e-9)
        assert rep.passed


class TestSerialization:
    def test_roundtrip(self, perturbed_map):
        d = M.map_to_dict(perturbed_map)
        md = M.map_from_dict(d)
        assert md == perturbed_map

    def test_defaults(self):
        md = M.map_from_dict({"kind": "DoubleStandard", "k1": 0.5, "k2": 2.0})
        assert md.kind == M.DOUBLE_STANDARD and md.omega_coeffs == (0.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(
    phi=st.floats(0, TWO_PI), I=st.floats(-1, 1),
    x=st.floats(0, TWO_PI), y=st.floats(-1, 1),
    k=st.floats(0.1, 6.0),
)
def test_symplectic_property(phi, I, x, y, k):
    md = M.MapDef(kind=M.PRODUCT_TWIST_STANDARD, k=k)
    J = M.jacobian(md, np.array([phi, I, x, y]))
    assert np.max(np.abs(J.T @ M.OMEGA_MATRIX @ J - M.OMEGA_MATRIX)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(
    phi=st.floats(0, TWO_PI), I=st.floats(-1, 1),
    x=st.floats(0, TWO_PI), y=st.floats(-1, 1),
    eps=st.floats(0, 0.1),
)
def test_inverse_property(phi, I, x, y, eps):
    step = M.PerturbationStep(eps, (M.TrigTerm(1, 1, 1.0, "sin"),))
    md = M.MapDef(kind=M.DOUBLE_STANDARD, k1=1.0, k2=4.0, perturbations=(step,))
    p = np.array([phi, I, x, y])
    back = M.apply_array(md, M.apply_array(md, p), inverse=True)
    assert float(np.abs(M.wrap_diff(back[0], p[0]))) < 1e-10
    assert float(np.abs(M.wrap_diff(back[2], p[2]))) < 1e-10
    assert abs(back[1] - p[1]) < 1e-10 and abs(back[3] - p[3]) < 1e-10
