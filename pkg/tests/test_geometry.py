"""Geometry tests: ray queries, sampling laws, insidedness, kernel identity."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from mcflow import geometry as G
from mcflow.kernels import surface_area_unit_sphere

from oracles import circle_line_hits, even_odd_inside, sweep_line_intersections


def circle_scene(radius=1.0, n=64, container=True, velocity=(0.0, 0.0), box=3.0):
    solid = G.Solid(G.circle_vertices((0.0, 0.0), radius, n), velocity=np.asarray(velocity, float),
                    container=container)
    return G.make_scene([solid], sim_domain=((-box, -box), (box, box)), bounded=container)


NONCONVEX_12GON = np.array([
    [1.0, 0.0], [0.4, 0.3], [0.5, 0.9], [0.05, 0.42], [-0.6, 0.85], [-0.37, 0.2],
    [-1.1, 0.1], [-0.45, -0.22], [-0.8, -0.9], [-0.05, -0.5], [0.6, -0.95], [0.37, -0.3],
])


class TestIntersectAll:
    def test_center_ray_single_forward_hit(self):
        scene = circle_scene(radius=1.0, n=64)
        hits = scene.intersect_all([0.0, 0.0], [1.0, 0.0])
        assert len(hits) == 1
        assert hits[0].t_ray == pytest.approx(1.0, abs=5e-3)

    def test_ray_outside_hull_empty(self):
        scene = circle_scene()
        assert scene.intersect_all([0.0, 2.5], [1.0, 0.0]) == []

    def test_matches_analytic_circle(self):
        scene = circle_scene(radius=0.8, n=4096)
        rng = np.random.default_rng(0)
        for _ in range(200):
            origin = rng.uniform(-2, 2, 2)
            theta = rng.uniform(0, 2 * np.pi)
            d = np.array([np.cos(theta), np.sin(theta)])
            # skip grazing rays: the polygon's sagitta error blows up there
            closest = np.linalg.norm(origin - np.dot(origin, d) * d)
            if closest > 0.9 * 0.8:
                continue
            ts = np.array([h.t_ray for h in scene.intersect_all(origin, d)])
            exact = circle_line_hits((0, 0), 0.8, origin, d)
            exact = exact[exact >= scene.eps_geo]
            assert len(ts) == len(exact)
            if len(ts):
                assert np.max(np.abs(ts - exact)) < 1e-6

    def test_hit_points_on_ray(self):
        scene = circle_scene(radius=1.0, n=256)
        origin = np.array([-2.0, 0.123])
        d = np.array([1.0, 0.0])
        for h in scene.intersect_all(origin, d):
            assert np.linalg.norm(origin + h.t_ray * d - h.point) <= scene.eps_geo

    def test_deterministic(self):
        scene = circle_scene(n=128)
        a = scene.intersect_all([-2.0, 0.1], [1.0, 0.0])
        b = scene.intersect_all([-2.0, 0.1], [1.0, 0.0])
        assert [(h.t_ray, h.solid_id) for h in a] == [(h.t_ray, h.solid_id) for h in b]


class TestSampleBoundaryUniform:
    def test_single_segment_pdf(self):
        solid = G.Solid(np.array([[0, 0], [1.0, 0], [1.0, 1.0]]), container=False)
        scene = G.make_scene([solid], sim_domain=((-2, -2), (2, 2)))
        _, _, _, pdf = scene.sample_boundary_uniform(np.random.default_rng(0), 10)
        assert pdf == pytest.approx(1.0 / scene.boundary.total_measure)

    def test_empty_boundary_raises(self):
        scene = G.make_scene([], sim_domain=((0, 0), (1, 1)))
        with pytest.raises(G.NoBoundary):
            scene.sample_boundary_uniform(np.random.default_rng(0))

    def test_length_weighted_selection(self):
        # two edges of length 1 and 3 inside a right triangle won't do;
        # use a thin rectangle: the two long sides dominate by ratio
        verts = np.array([[0, 0], [1.0, 0], [1.0, 3.0], [0.0, 3.0]])
        solid = G.Solid(verts)
        scene = G.make_scene([solid], sim_domain=((-1, -1), (2, 4)))
        rng = np.random.default_rng(1)
        pts, _, _, _ = scene.sample_boundary_uniform(rng, 10**5)
        # probability of landing on a horizontal edge = 2/8
        frac = np.mean((np.abs(pts[:, 1]) < 1e-12) | (np.abs(pts[:, 1] - 3.0) < 1e-12))
        p = 2.0 / 8.0
        se = np.sqrt(p * (1 - p) / 10**5)
        assert abs(frac - p) <= 3 * se

    def test_chi_square_over_primitives(self):
        scene = circle_scene(n=32)
        rng = np.random.default_rng(3)
        pts, _, _, _ = scene.sample_boundary_uniform(rng, 10**5)
        ang = np.arctan2(pts[:, 1], pts[:, 0])
        counts, _ = np.histogram(ang, bins=32, range=(-np.pi, np.pi))
        assert chisquare(counts).pvalue > 0.001

    def test_circle_sample_mean_near_center(self):
        scene = circle_scene(radius=1.0, n=256)
        rng = np.random.default_rng(4)
        pts, _, _, _ = scene.sample_boundary_uniform(rng, 10**5)
        se = 1.0 / np.sqrt(10**5)  # std of each coordinate is ~0.707
        assert np.all(np.abs(pts.mean(axis=0)) <= 3 * se)


class TestLineIntersectionSampling:
    def test_circle_center_kappa_two_sign_positive(self):
        scene = circle_scene(radius=1.0, n=512, container=True)
        rng = np.random.default_rng(5)
        x = np.zeros((200, 2))
        y, n_y, kappa, sign, hit = scene.sample_line_intersection(x, rng)
        assert hit.all()
        assert np.all(kappa == 2)
        assert np.all(sign == 1.0)
        assert np.allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-3)

    def test_no_geometry_no_hit(self):
        scene = G.make_scene([], sim_domain=((0, 0), (1, 1)))
        _, _, kappa, _, hit = scene.sample_line_intersection(np.zeros((8, 2)), np.random.default_rng(0))
        assert not hit.any() and np.all(kappa == 0)

    def test_kappa_parity_matches_sweep_oracle(self):
        solid = G.Solid(NONCONVEX_12GON, container=True)
        scene = G.make_scene([solid], sim_domain=((-2, -2), (2, 2)), bounded=True)
        rng = np.random.default_rng(6)
        x = np.tile(np.array([[0.05, 0.0]]), (20000, 1))
        _, _, kappa, _, hit = scene.sample_line_intersection(x, rng)
        assert hit.all()
        assert np.all(kappa % 2 == 0)  # interior point of a closed curve
        # distribution of kappa agrees with a brute-force line sweep
        rng2 = np.random.default_rng(7)
        sweep = []
        for _ in range(4000):
            th = rng2.uniform(0, np.pi)
            sweep.append(sweep_line_intersections(NONCONVEX_12GON, [0.05, 0.0],
                                                  [np.cos(th), np.sin(th)]))
        sweep = np.array(sweep)
        ks, kc = np.unique(kappa, return_counts=True)
        ss, sc = np.unique(sweep, return_counts=True)
        assert set(ks) == set(ss)
        for k in ks:
            f1 = kc[ks == k][0] / len(kappa)
            f2 = sc[ss == k][0] / len(sweep)
            se = np.sqrt(f2 * (1 - f2) / len(sweep))
            assert abs(f1 - f2) <= 4 * se + 1e-3

    def test_kappa_sign_kernel_identity(self):
        """2 dG/dn(target) / P_R == kappa * sign within 1e-9 (pins conventions)."""
        solid = G.Solid(NONCONVEX_12GON, container=True)
        scene = G.make_scene([solid], sim_domain=((-2, -2), (2, 2)), bounded=True)
        rng = np.random.default_rng(8)
        # start points on the boundary (as in the walk)
        x0, _, _, _ = scene.sample_boundary_uniform(rng, 10**4)
        y, n_y, kappa, sign, hit = scene.sample_line_intersection(x0, rng)
        assert hit.mean() > 0.99
        m = hit
        r_vec = y[m] - x0[m]
        r = np.linalg.norm(r_vec, axis=1)
        c = np.sum(n_y[m] * r_vec, axis=1)
        d = 2
        dB = surface_area_unit_sphere(d)
        dgdn_target = c / (dB * r**d)          # n(y) . grad_y G = n . (y-x)/(|dB| r^d)
        p_r = 2.0 * np.abs(c) / (dB * kappa[m] * r**d)
        ratio = 2.0 * dgdn_target / p_r
        assert np.max(np.abs(ratio - kappa[m] * sign[m])) < 1e-9


class TestInsideSolid:
    def test_center_of_solid_circle(self):
        scene = circle_scene(radius=0.5, container=False)
        rng = np.random.default_rng(0)
        assert scene.inside_solid(np.array([[0.0, 0.0]]), rng)[0]

    def test_far_point_outside(self):
        scene = circle_scene(radius=0.2, container=False, box=5.0)
        rng = np.random.default_rng(0)
        assert not scene.inside_solid(np.array([[2.0, 0.0]]), rng)[0]

    def test_grid_agreement_with_even_odd_oracle(self):
        solid = G.Solid(NONCONVEX_12GON, container=False)
        scene = G.make_scene([solid], sim_domain=((-2, -2), (2, 2)))
        xs = np.linspace(-1.4, 1.4, 100)
        pts = np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2)
        # exclude the eps band around the boundary
        closest, _ = scene.closest_boundary(pts)
        dist = np.linalg.norm(pts - closest, axis=1)
        keep = dist > 1e-6
        got = scene.inside_solid(pts[keep], np.random.default_rng(1))
        want = even_odd_inside(NONCONVEX_12GON, pts[keep])
        assert np.mean(got == want) >= 0.999

    def test_bounded_scene_fluid_region(self):
        scene = circle_scene(radius=1.0, container=True)
        rng = np.random.default_rng(2)
        inside_fluid = np.array([[0.0, 0.0], [0.5, 0.3]])
        outside = np.array([[2.0, 0.0], [0.0, -1.5]])
        assert not scene.inside_solid(inside_fluid, rng).any()
        assert scene.inside_solid(outside, rng).all()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=5, max_value=16), st.integers(min_value=0, max_value=10**6))
    def test_random_polygons_match_even_odd(self, nv, seed):
        rng = np.random.default_rng(seed)
        ang = np.sort(rng.uniform(0, 2 * np.pi, nv))
        if np.min(np.diff(ang)) < 1e-3:
            return
        rad = rng.uniform(0.3, 1.0, nv)
        verts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], 1)  # star-shaped, simple
        solid = G.Solid(verts, container=False)
        scene = G.make_scene([solid], sim_domain=((-2, -2), (2, 2)))
        pts = rng.uniform(-1.2, 1.2, (256, 2))
        closest, _ = scene.closest_boundary(pts)
        keep = np.linalg.norm(pts - closest, axis=1) > 1e-6
        got = scene.inside_solid(pts[keep], np.random.default_rng(seed + 1))
        want = even_odd_inside(verts, pts[keep])
        assert np.array_equal(got, want)


class TestSolidVelocity:
    def test_static_solid(self):
        scene = circle_scene(container=False)
        v = scene.solid_velocity(np.array([[1.0, 0.0]]))
        assert np.array_equal(v, [[0.0, 0.0]])

    def test_translating_square(self):
        solid = G.Solid(G.box_vertices((-0.2, -0.2), (0.2, 0.2)), velocity=np.array([1.0, 0.0]))
        scene = G.make_scene([solid], sim_domain=((-2, -2), (2, 2)))
        pts = np.array([[0.2, 0.1], [-0.2, 0.0], [0.0, 0.2]])
        assert np.allclose(scene.solid_velocity(pts), [[1.0, 0.0]] * 3)

    def test_two_solids_nearest_attribution(self):
        s1 = G.Solid(G.circle_vertices((-1.0, 0.0), 0.3, 64), velocity=np.array([1.0, 0.0]))
        s2 = G.Solid(G.circle_vertices((1.0, 0.0), 0.3, 64), velocity=np.array([0.0, 2.0]))
        scene = G.make_scene([s1, s2], sim_domain=((-3, -3), (3, 3)))
        rng = np.random.default_rng(0)
        th = rng.uniform(0, 2 * np.pi, 1000)
        which = rng.integers(0, 2, 1000)
        centers = np.where(which[:, None] == 0, [-1.0, 0.0], [1.0, 0.0])
        pts = centers + 0.3 * np.stack([np.cos(th), np.sin(th)], 1)
        v = scene.solid_velocity(pts)
        expect = np.where(which[:, None] == 0, [1.0, 0.0], [0.0, 2.0])
        assert np.allclose(v, expect)

    def test_no_solids_zero(self):
        scene = G.make_scene([], sim_domain=((0, 0), (1, 1)))
        assert np.array_equal(scene.solid_velocity(np.array([[0.5, 0.5]])), [[0.0, 0.0]])


class TestSceneMotion:
    def test_at_time_translates(self):
        solid = G.Solid(G.box_vertices((0, 0), (1, 1)), velocity=np.array([2.0, 0.0]))
        scene = G.make_scene([solid], sim_domain=((-5, -5), (6, 6)))
        moved = scene.at_time(0.5)
        assert np.allclose(moved.boundary.a.min(axis=0), [1.0, 0.0])
        # original untouched
        assert np.allclose(scene.boundary.a.min(axis=0), [0.0, 0.0])


class TestEnclosingRadius:
    def test_farthest_corner(self):
        scene = G.make_scene([], sim_domain=((-1, -1), (1, 1)))
        r = scene.enclosing_radius(np.array([[0.0, 0.0], [1.0, 1.0]]))
        assert r[0] == pytest.approx(np.sqrt(2))
        assert r[1] == pytest.approx(np.sqrt(8))


class TestThreeD:
    def test_sphere_center_ray(self):
        verts, faces = G.sphere_mesh((0, 0, 0), 1.0, subdiv=3)
        solid = G.Solid(verts, faces=faces, velocity=np.zeros(3), container=True)
        scene = G.make_scene([solid], sim_domain=((-2, -2, -2), (2, 2, 2)), bounded=True)
        d = np.array([0.3, -0.2, 0.93])
        d /= np.linalg.norm(d)  # generic direction; mesh vertices are degenerate
        hits = scene.intersect_all([0.0, 0.0, 0.0], d)
        assert len(hits) == 1
        assert hits[0].t_ray == pytest.approx(1.0, abs=2e-2)

    def test_inside_solid_sphere(self):
        verts, faces = G.sphere_mesh((0, 0, 0), 0.5, subdiv=2)
        solid = G.Solid(verts, faces=faces, velocity=np.zeros(3), container=False)
        scene = G.make_scene([solid], sim_domain=((-2, -2, -2), (2, 2, 2)))
        rng = np.random.default_rng(0)
        assert scene.inside_solid(np.array([[0.0, 0.0, 0.0]]), rng)[0]
        assert not scene.inside_solid(np.array([[1.5, 0.0, 0.0]]), rng)[0]

    def test_kappa_sign_identity_3d(self):
        verts, faces = G.sphere_mesh((0, 0, 0), 1.0, subdiv=2)
        solid = G.Solid(verts, faces=faces, velocity=np.zeros(3), container=True)
        scene = G.make_scene([solid], sim_domain=((-2, -2, -2), (2, 2, 2)), bounded=True)
        rng = np.random.default_rng(9)
        x0, _, _, _ = scene.sample_boundary_uniform(rng, 2000)
        y, n_y, kappa, sign, hit = scene.sample_line_intersection(x0, rng)
        m = hit
        r_vec = y[m] - x0[m]
        r = np.linalg.norm(r_vec, axis=1)
        c = np.sum(n_y[m] * r_vec, axis=1)
        dB = surface_area_unit_sphere(3)
        ratio = 2.0 * (c / (dB * r**3)) / (2.0 * np.abs(c) / (dB * kappa[m] * r**3))
        assert np.max(np.abs(ratio - kappa[m] * sign[m])) < 1e-9
