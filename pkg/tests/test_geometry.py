"""Geometry primitives: projection, width, inflated volumes, median cuts."""

import math

import numpy as np
import pytest

from steiner_search import geometry as G


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def disk_segment_area(y):
    """Area of {v in unit disk : v1 <= y}."""
    y = float(np.clip(y, -1.0, 1.0))
    return y * math.sqrt(1.0 - y * y) + math.asin(y) + math.pi / 2.0


def make_body(cuts=(), dim=2, radius=1.0):
    body = G.ConvexBody(dim, radius)
    for x, y, sign in cuts:
        body = G.add_cut(body, unit(x), y, sign)
    return body


class TestProject:
    def test_radial_projection_onto_ball(self):
        body = G.ConvexBody(2)
        np.testing.assert_allclose(G.project(body, [2.0, 0.0]), [1.0, 0.0], atol=1e-8)

    def test_projection_onto_face(self):
        body = make_body([([1, 0], 0.0, +1)])
        np.testing.assert_allclose(G.project(body, [0.5, 0.0]), [0.0, 0.0], atol=1e-8)

    def test_corner_projection_matches_grid_minimizer(self):
        # brute-force oracle: minimize distance over a dense feasible grid
        body = make_body([([1, 0], 0.0, +1), ([0, 1], 0.0, +1)])
        g = np.linspace(-1, 1, 801)
        xx, yy = np.meshgrid(g, g)
        pts = np.stack([xx.ravel(), yy.ravel()], axis=1)
        feas = (np.linalg.norm(pts, axis=1) <= 1) & (pts[:, 0] <= 0) & (pts[:, 1] <= 0)
        q = np.array([1.0, 1.0])
        oracle = pts[feas][np.argmin(np.linalg.norm(pts[feas] - q, axis=1))]
        np.testing.assert_allclose(oracle, [0.0, 0.0], atol=5e-3)
        np.testing.assert_allclose(G.project(body, q), [0.0, 0.0], atol=1e-8)

    def test_feasibility_and_idempotence(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            d = int(rng.integers(2, 5))
            hidden = unit(rng.normal(size=d)) * 0.4
            body = G.ConvexBody(d)
            for _ in range(int(rng.integers(1, 12))):
                n = unit(rng.normal(size=d))
                body = G.add_cut(body, n, float(n @ hidden + abs(rng.normal()) * 0.3), +1)
            p = G.project(body, rng.normal(size=d) * 2.0)
            assert np.linalg.norm(p) <= body.ball_radius + 1e-8
            assert np.all(body.normals @ p <= body.offsets + 1e-8)
            assert np.linalg.norm(G.project(body, p) - p) <= 1e-7

    def test_variational_inequality(self):
        # <q - p, w - p> <= 1e-6 for the projection p and any feasible w
        rng = np.random.default_rng(4)
        for _ in range(30):
            d = int(rng.integers(2, 5))
            hidden = unit(rng.normal(size=d)) * 0.3
            body = G.ConvexBody(d)
            for _ in range(int(rng.integers(1, 10))):
                n = unit(rng.normal(size=d))
                body = G.add_cut(body, n, float(n @ hidden + abs(rng.normal()) * 0.3), +1)
            q = rng.normal(size=d) * 2.0
            p = G.project(body, q)
            for _ in range(5):
                w = G.project(body, hidden + rng.normal(size=d) * 0.2)
                assert float((q - p) @ (w - p)) <= 1e-6

    def test_nonconvergence_on_empty_body(self):
        body = make_body([([1, 0], -0.6, +1), ([-1, 0], -0.6, +1)])
        with pytest.raises(G.NonConvergence):
            G.project(body, [0.9, 0.9])


class TestInflatedContains:
    def test_ball_inflation(self):
        body = G.ConvexBody(2)
        assert G.inflated_contains(body, 0.5, [1.4, 0.0])
        assert not G.inflated_contains(body, 0.0, [1.1, 0.0])

    def test_distance_via_projection(self):
        body = make_body([([1, 0], 0.0, +1)])
        assert G.inflated_contains(body, 0.1, [0.05, 0.0])
        assert not G.inflated_contains(body, 0.04, [0.05, 0.0])

    def test_batch_agrees_with_scalar(self):
        rng = np.random.default_rng(8)
        hidden = np.array([0.1, -0.2])
        body = G.ConvexBody(2)
        for _ in range(6):
            n = unit(rng.normal(size=2))
            body = G.add_cut(body, n, float(n @ hidden + 0.2), +1)
        body = body.replace_hint(hidden)
        pts = rng.normal(size=(200, 2))
        got = G.inflated_membership(body, 0.15, pts)
        for i in range(0, 200, 17):
            assert got[i] == G.inflated_contains(body, 0.15, pts[i])


class TestWidth:
    def test_ball_width_is_diameter(self):
        body = G.ConvexBody(2)
        assert abs(G.width(body, unit([1, 0])) - 2.0) < 1e-7
        assert abs(G.width(body, unit([3, 4])) - 2.0) < 1e-7

    def test_halfball_width(self):
        body = make_body([([1, 0], 0.0, +1)])
        assert abs(G.width(body, unit([1, 0])) - 1.0) < 1e-7

    def test_slab_width_analytic(self):
        body = make_body([([1, 0], 0.3, +1), ([1, 0], -0.3, -1)])
        assert abs(G.width(body, unit([1, 0])) - 0.6) < 1e-7

    def test_oblique_cap_support_analytic(self):
        # corner of the line 0.6 v1 + 0.8 v2 = 0.25 with the unit circle
        body = make_body([([0.6, 0.8], 0.25, +1)])
        lo, hi = G.support_interval(body, np.array([1.0, 0.0]))
        a = np.roots([1.0, -2 * 0.6 * 0.25, 0.25**2 - 0.8**2])
        assert abs(hi - max(a)) < 1e-7
        assert abs(lo - (-1.0)) < 1e-7

    def test_range_clamp(self):
        body = G.ConvexBody(3, ball_radius=1.5)
        w = G.width(body, unit([1, 1, 1]))
        assert 0.0 <= w <= 2 * 1.5 + 1e-12


class TestAddCut:
    def test_sign_convention(self):
        body = G.ConvexBody(2)
        kept_below = G.add_cut(body, np.array([1.0, 0.0]), 0.0, +1)
        assert kept_below.contains([-0.5, 0.0])
        assert not kept_below.contains([0.5, 0.0])
        kept_above = G.add_cut(body, np.array([1.0, 0.0]), 0.0, -1)
        assert kept_above.contains([0.5, 0.0])
        assert not kept_above.contains([-0.5, 0.0])

    def test_value_semantics(self):
        body = G.ConvexBody(2)
        G.add_cut(body, np.array([1.0, 0.0]), 0.0, +1)
        assert body.num_cuts == 0

    def test_chained_cuts_make_slab(self):
        body = G.ConvexBody(2)
        body = G.add_cut(body, np.array([1.0, 0.0]), 0.3, +1)
        body = G.add_cut(body, np.array([1.0, 0.0]), -0.3, -1)
        assert abs(G.width(body, unit([1, 0])) - 0.6) < 1e-7


class TestEstimateVolume:
    def test_inflated_disk(self):
        est = G.estimate_volume(G.ConvexBody(2), 0.5, samples=50_000,
                               rng=np.random.default_rng(1))
        assert abs(est.value - math.pi * 1.5**2) <= 0.05 * math.pi * 1.5**2

    def test_half_disk(self):
        est = G.estimate_volume(G.ConvexBody(2), 0.0,
                               cut=(np.array([1.0, 0.0]), 0.0, +1),
                               samples=50_000, rng=np.random.default_rng(2))
        assert abs(est.value - math.pi / 2) <= 0.05 * math.pi / 2
        assert est.rel_std_err > 0

    def test_inflated_3ball(self):
        expect = 4.0 / 3.0 * math.pi * 1.25**3
        est = G.estimate_volume(G.ConvexBody(3), 0.25, samples=50_000,
                               rng=np.random.default_rng(3))
        assert abs(est.value - expect) <= 0.05 * expect

    def test_value_consistent_with_hits(self):
        est = G.estimate_volume(G.ConvexBody(2), 0.0,
                               cut=(np.array([0.0, 1.0]), -0.2, -1),
                               samples=20_000, rng=np.random.default_rng(4))
        env_vol = math.pi  # envelope is the unit disk itself
        assert est.value == pytest.approx(est.hits / est.samples * env_vol)
        assert est.rel_std_err == pytest.approx(
            math.sqrt((1 - est.hits / est.samples) / est.hits))

    def test_steiner_identity_on_balls(self):
        # Vol(B + zB) = (1+z)^d * kappa_d, within 3 * rel_std_err
        for d in (2, 3):
            for z in (0.1, 0.5, 1.0):
                est = G.estimate_volume(G.ConvexBody(d), z, samples=50_000,
                                       rng=np.random.default_rng(d * 10 + int(10 * z)))
                oracle = G.unit_ball_volume(d) * (1 + z) ** d
                assert abs(est.value - oracle) <= 3 * est.rel_std_err * oracle + 1e-9 * oracle

    def test_monotone_under_cuts_with_shared_stream(self):
        body = G.ConvexBody(2)
        cut_body = G.add_cut(body, np.array([1.0, 0.0]), 0.1, +1)
        env = G.tight_envelope(body, 0.2)
        a = G.estimate_volume(body, 0.2, samples=30_000,
                             rng=np.random.default_rng(7), envelope=env)
        b = G.estimate_volume(cut_body, 0.2, samples=30_000,
                             rng=np.random.default_rng(7), envelope=env)
        assert b.value <= a.value
        assert b.hits <= a.hits

    def test_degenerate_raises(self):
        body = G.ConvexBody(2)
        env = G.Envelope(np.array([50.0, 0.0]), 1.0)
        with pytest.raises(G.DegenerateEstimate):
            G.estimate_volume(body, 0.0, samples=1000,
                             rng=np.random.default_rng(0), envelope=env)

    def test_sample_floor_enforced(self):
        with pytest.raises(ValueError):
            G.estimate_volume(G.ConvexBody(2), 0.0, samples=10,
                             rng=np.random.default_rng(0))


class TestMedianCut:
    def test_symmetric_ball(self):
        y = G.median_cut(G.ConvexBody(2), 0.0, unit([1, 0]), 0.5,
                         samples=50_000, rng=np.random.default_rng(5))
        assert abs(y) <= 0.02

    def test_symmetry_preserved_by_inflation(self):
        y = G.median_cut(G.ConvexBody(2), 0.5, unit([1, 0]), 0.5,
                         samples=50_000, rng=np.random.default_rng(6))
        assert abs(y) <= 0.02

    def test_half_disk_median_matches_quadrature_oracle(self):
        # oracle first: solve area(segment left of y) = pi/4 by bisection
        lo, hi = -1.0, 0.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if disk_segment_area(mid) < math.pi / 4:
                lo = mid
            else:
                hi = mid
        oracle = 0.5 * (lo + hi)
        assert oracle == pytest.approx(-0.4039727, abs=1e-6)
        body = make_body([([1, 0], 0.0, +1)])
        y = G.median_cut(body, 0.0, unit([1, 0]), 0.5,
                         samples=100_000, rng=np.random.default_rng(7))
        assert abs(y - oracle) <= 0.02

    def test_self_consistency(self):
        # re-estimating the fraction at the returned y reproduces it
        body = make_body([([0.6, 0.8], 0.25, +1)])
        frac = 0.25
        y = G.median_cut(body, 0.1, unit([1, 0]), frac,
                         samples=60_000, rng=np.random.default_rng(8))
        total = G.estimate_volume(body, 0.1, samples=60_000,
                                 rng=np.random.default_rng(9))
        part = G.estimate_volume(body, 0.1, cut=(unit([1, 0]), y, +1),
                                samples=60_000, rng=np.random.default_rng(9))
        assert abs(part.value / total.value - frac) <= 0.05

    def test_deterministic_given_seed(self):
        body = make_body([([1, 0], 0.2, +1)])
        a = G.median_cut(body, 0.1, unit([0, 1]), 0.5,
                         samples=20_000, rng=np.random.default_rng(11))
        b = G.median_cut(body, 0.1, unit([0, 1]), 0.5,
                         samples=20_000, rng=np.random.default_rng(11))
        assert a == b


class TestTypes:
    def test_halfspace_requires_unit_normal(self):
        with pytest.raises(ValueError):
            G.Halfspace(np.array([2.0, 0.0]), 0.5)

    def test_body_requires_positive_radius(self):
        with pytest.raises(ValueError):
            G.ConvexBody(2, ball_radius=0.0)

    def test_cut_requires_unit_direction(self):
        with pytest.raises(ValueError):
            G.add_cut(G.ConvexBody(2), np.array([2.0, 0.0]), 0.0, +1)
