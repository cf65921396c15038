import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from proxsweep.constraint import (
    ConstantsBundle,
    boundary_points,
    distance_to_boundary,
    distance_to_set,
    hausdorff_estimate,
    normal_ray,
    project_to_set,
    project_with_info,
    projection_inequality_residual,
    prox_inequality_residual,
    sample_members,
    sphere_directions,
)
from proxsweep.errors import NotOnBoundary, OutsideProxTube

from conftest import star_boundary

# Oracle values computed independently: dense polar scans of the star boundary.
STAR_PROJ_DIST = 0.3956171826  # (1.5, 0.4) onto Z(0), 1e6-point scan
STAR_HAUSDORFF_5DEG = 0.0449246  # Z(0) vs Z(0, 0, 5 deg), 1e5 x 1e5 KD-tree scan


def fd_grad(f, x, h=1e-6):
    x = np.asarray(x, float)
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


class TestConstantsBundle:
    def test_r_is_ratio(self):
        k = ConstantsBundle(2.0, 4.0, 1, 1, 1, 1, 1)
        assert k.r == 0.5

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ConstantsBundle(0.0, 1, 1, 1, 1, 1, 1)
        with pytest.raises(ValueError):
            ConstantsBundle(1.0, np.inf, 1, 1, 1, 1, 1)

    def test_hausdorff_constant(self):
        k = ConstantsBundle(2.0, 2.0, 1.0, 1, 1, 1, 1, coercivity_kappa=1.0)
        # max(2L/c, (2KL/kappa) L / (kappa r)) = max(1, 2K)
        assert k.hausdorff_constant(0.1) == pytest.approx(1.0)
        assert k.hausdorff_constant(3.0) == pytest.approx(6.0)
        assert ConstantsBundle(2.0, 2.0, 1.0, 1, 1, 1, 1).hausdorff_constant(3.0) == 1.0


class TestDerivatives:
    @pytest.mark.parametrize("fixture", ["play", "ball", "star"])
    def test_gradients_match_fd(self, fixture, request):
        cons = request.getfixturevalue(fixture)
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.uniform(-1.2, 1.2, cons.state_dim)
            w = rng.uniform(-0.3, 0.3, cons.param_dim)
            np.testing.assert_allclose(cons.grad_x(x, w), fd_grad(lambda z: cons.G(z, w), x),
                                       atol=1e-6)
            np.testing.assert_allclose(cons.grad_w(x, w), fd_grad(lambda v: cons.G(x, v), w),
                                       atol=1e-6)

    @pytest.mark.parametrize("fixture", ["ball", "star"])
    def test_hessian_matches_fd(self, fixture, request):
        cons = request.getfixturevalue(fixture)
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.uniform(-1.5, 1.5, cons.state_dim)
            w = rng.uniform(-0.3, 0.3, cons.param_dim)
            H = cons.hess_x(x, w)
            Hfd = np.array([fd_grad(lambda z: cons.grad_x(z, w)[i], x) for i in range(2)])
            np.testing.assert_allclose(H, Hfd, atol=2e-5)

    def test_saturated_region_outside(self, star):
        x = np.array([5.0, 0.0])
        assert star.value(x, np.zeros(3)) == 3.0
        np.testing.assert_array_equal(star.grad_x(x, np.zeros(3)), [0.0, 0.0])


class TestBoundary:
    def test_boundary_points_on_level_set(self, star):
        w = np.array([0.2, -0.1, 0.3])
        pts, _ = boundary_points(star, w, sphere_directions(2, 200))
        assert np.all(np.abs(star.G(pts, w) - 1.0) < 1e-12)

    def test_star_boundary_radius(self, star):
        th = np.linspace(0, 2 * np.pi, 50, endpoint=False)
        pts = star_boundary(th)
        np.testing.assert_allclose(star.G(pts, np.zeros(3)), 1.0, atol=1e-12)

    def test_members(self, star, rng):
        w = np.array([0.1, 0.2, -0.4])
        z = sample_members(star, w, rng, 500)
        assert np.all(star.G(z, w) <= 1.0)


class TestProjection:
    def test_member_unchanged(self, star):
        y = np.array([0.3, 0.1])
        np.testing.assert_array_equal(project_to_set(y, np.zeros(3), star), y)

    def test_ball_closed_form(self, ball):
        y = np.array([1.3, 0.4])
        w = np.array([0.1, -0.2])
        v = y - w
        np.testing.assert_allclose(project_to_set(y, w, ball), w + v / np.linalg.norm(v),
                                   atol=1e-9)

    def test_star_against_dense_scan(self, star):
        y = np.array([1.5, 0.4])
        res = project_with_info(y, np.zeros(3), star, enforce_tube=False)
        assert abs(res.distance - STAR_PROJ_DIST) < 1e-8
        pts = star_boundary(np.linspace(0, 2 * np.pi, 200000, endpoint=False))
        assert res.distance <= np.min(np.linalg.norm(pts - y, axis=1)) + 1e-9

    def test_outside_tube_raises(self, star):
        with pytest.raises(OutsideProxTube) as ei:
            project_to_set([1.5, 0.4], np.zeros(3), star)
        assert ei.value.distance > ei.value.limit

    def test_bad_tol(self, ball):
        with pytest.raises(ValueError):
            project_to_set([2.0, 0.0], np.zeros(2), ball, tol=0.0)

    @given(st.floats(0, 2 * np.pi), st.floats(0.0, 0.3))
    def test_star_feasible_and_idempotent(self, th, frac):
        from proxsweep.library import make_star_set
        star = make_star_set(1.0, 0.2, 3)
        w = np.array([0.1, -0.1, 0.2])
        x, _ = boundary_points(star, w, np.array([[np.cos(th), np.sin(th)]]))
        x = x[0]
        g = star.grad_x(x, w)
        y = x + frac * star.constants.r * g / np.linalg.norm(g)
        p = project_to_set(y, w, star)
        assert star.value(p, w) <= 1.0 + star.level_tol
        np.testing.assert_allclose(project_to_set(p, w, star), p, atol=1e-12)

    def test_normal_ray_round_trip(self, star):
        w = np.zeros(3)
        d = 0.3 * star.constants.r
        for th in np.linspace(0.1, 6.0, 7):
            pts, _ = boundary_points(star, w, np.array([[np.cos(th), np.sin(th)]]))
            y = normal_ray(pts[0], w, d, star)
            assert abs(distance_to_set(y, w, star) - d) < 1e-9

    def test_normal_ray_errors(self, star):
        with pytest.raises(NotOnBoundary):
            normal_ray([0.1, 0.0], np.zeros(3), 0.1, star)
        pts, _ = boundary_points(star, np.zeros(3), np.array([[1.0, 0.0]]))
        with pytest.raises(ValueError):
            normal_ray(pts[0], np.zeros(3), star.constants.r, star)


class TestDistances:
    def test_center_of_star(self, star):
        # nearest boundary from the centre is a lobe valley at radius 1 - a
        assert distance_to_boundary([0.0, 0.0], np.zeros(3), star) == pytest.approx(0.8, abs=1e-9)

    def test_ball(self, ball):
        assert distance_to_boundary([0.25, 0.0], np.zeros(2), ball) == pytest.approx(0.75)

    def test_requires_member(self, ball):
        with pytest.raises(ValueError):
            distance_to_boundary([2.0, 0.0], np.zeros(2), ball)


class TestInequalities:
    def test_prox_inequality_star(self, star, rng):
        w = np.array([0.2, 0.0, 0.5])
        xs, _ = boundary_points(star, w, sphere_directions(2, 60), side="inner")
        for x in xs:
            z = sample_members(star, w, rng, 200)
            assert np.min(prox_inequality_residual(x, z, w, star)) >= -1e-9

    def test_projection_inequality_star(self, star, rng):
        w = np.zeros(3)
        r = star.constants.r
        for th in np.linspace(0, 2 * np.pi, 12, endpoint=False):
            pts, _ = boundary_points(star, w, np.array([[np.cos(th), np.sin(th)]]))
            x = pts[0]
            if star.value(x, w) > 1.0:
                x = project_to_set(x, w, star)
            g = star.grad_x(x, w)
            y = x + 0.5 * r * g / np.linalg.norm(g)
            p = project_to_set(y, w, star)
            z = sample_members(star, w, rng, 300)
            assert np.min(projection_inequality_residual(y, p, z, r)) >= -1e-9

    def test_prox_residual_rejects_non_boundary(self, star):
        with pytest.raises(NotOnBoundary):
            prox_inequality_residual([0.0, 0.0], [[0.1, 0.0]], np.zeros(3), star)


class TestHausdorff:
    def test_translation_of_ball(self, ball):
        est = hausdorff_estimate([0.0, 0.0], [0.1, 0.0], ball)
        # sampled lower bound: 400 directions miss the maximiser by <= 0.1 (1 - cos(pi/400))
        assert 0.1 - 1e-5 <= est.value <= 0.1 + 1e-9
        assert est.value <= est.bound

    def test_star_rotation_against_scan(self, star):
        w2 = np.array([0.0, 0.0, np.deg2rad(5.0)])
        est = hausdorff_estimate(np.zeros(3), w2, star)
        assert abs(est.value - STAR_HAUSDORFF_5DEG) < 1e-6
        assert est.value <= est.bound
        th = np.linspace(0, 2 * np.pi, 20000, endpoint=False)
        a = star_boundary(th)
        b = star_boundary(th, phi=w2[2])
        scan = max(cKDTree(b).query(a)[0].max(), cKDTree(a).query(b)[0].max())
        assert abs(est.value - scan) < 1e-4

    def test_needs_samples(self, ball):
        with pytest.raises(ValueError):
            hausdorff_estimate([0, 0], [0, 1], ball, n_samples=10)
