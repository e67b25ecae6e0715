"""Tests for geometry.py - segments, domains, distances, corner frames and regions."""

import math

import numpy as np
import pytest


class TestPoints:
    """Test Point2 and as_points."""

    def test_arithmetic(self):
        from geometry import Point2
        p = Point2(1.0, 2.0) + Point2(0.5, -1.0)
        assert p == Point2(1.5, 1.0)
        assert (2 * p).norm() == pytest.approx(math.hypot(3.0, 2.0))

    def test_non_finite_rejected(self):
        from geometry import Point2
        from lab_utils import GeometryError
        with pytest.raises(GeometryError):
            Point2(float("nan"), 0.0)

    def test_as_points_shape_check(self):
        from geometry import as_points
        from lab_utils import GeometryError
        assert as_points([[0, 1], [2, 3]]).shape == (2, 2)
        with pytest.raises(GeometryError):
            as_points([1, 2, 3])


class TestSegments:
    """Test curve segments and curvature."""

    def test_ellipse_curvature_at_major_vertex(self):
        from geometry import EllipseArc, Point2, curvature_at
        e = EllipseArc(Point2(0.0, 0.0), 2.0, 1.0)
        assert curvature_at(e, 0.0) == pytest.approx(2.0)
        assert curvature_at(e, 0.25) == pytest.approx(1.0 / 4.0)

    def test_arc_curvature_is_inverse_radius(self):
        from geometry import ArcSegment, Point2, curvature_at
        arc = ArcSegment(Point2(0.0, 0.0), 0.5, 0.0, 2 * math.pi)
        ks = curvature_at(arc, np.linspace(0, 1, 7))
        np.testing.assert_allclose(ks, 2.0)

    def test_c1alpha_arm_has_no_curvature(self):
        from geometry import GraphArm, Point2, curvature_at
        from lab_utils import GeometryError
        arm = GraphArm(Point2(0.0, 0.0), 0.0, 0.5, 1.5, 1.0)
        reg = arm.regularity
        assert reg.kind == "C1a"
        assert reg.alpha == pytest.approx(0.5)
        with pytest.raises(GeometryError):
            curvature_at(arm, 0.5)

    def test_regularity_validation(self):
        from geometry import Regularity
        from lab_utils import ConstructionError
        with pytest.raises(ConstructionError):
            Regularity("C3", 1.0, 0.0)
        with pytest.raises(ConstructionError):
            Regularity("C2", 0.0, 1.0)

    def test_project_to_curve(self):
        from geometry import LineSegment, Point2, project_to_curve
        seg = LineSegment(Point2(0.0, 0.0), Point2(2.0, 0.0))
        res = project_to_curve(seg, (0.5, 0.3))
        assert res.d == pytest.approx(0.3)
        assert res.t == pytest.approx(0.25)
        assert project_to_curve(seg, (3.0, 0.0)).d == pytest.approx(1.0)

    def test_segment_dict_round_trip(self):
        from geometry import GraphArm, Point2, segment_from_dict
        arm = GraphArm(Point2(0.1, 0.2), 0.3, 0.2, 2.0, 1.0, side=-1.0, reverse=True)
        again = segment_from_dict(arm.to_dict())
        np.testing.assert_allclose(again.point(np.linspace(0, 1, 5)), arm.point(np.linspace(0, 1, 5)))

    def test_unknown_segment_type(self):
        from geometry import segment_from_dict
        from lab_utils import ConstructionError
        with pytest.raises(ConstructionError):
            segment_from_dict({"type": "spline"})


class TestDomainConstruction:
    """Test DomainSpec validation and the builders."""

    def test_rectangle_has_four_right_corners(self):
        from geometry import build_domain
        rect = build_domain("rectangle", width=2.0, height=1.0)
        assert len(rect.corners) == 4
        assert all(c.mu == 0.5 for c in rect.corners)
        assert rect.signed_area == pytest.approx(2.0, rel=1e-6)

    def test_clockwise_loop_rejected(self):
        from geometry import DomainSpec, LineSegment, Point2
        from lab_utils import ConstructionError
        v = [Point2(0, 0), Point2(0, 1), Point2(1, 1), Point2(1, 0)]
        segs = tuple(LineSegment(v[i], v[(i + 1) % 4]) for i in range(4))
        with pytest.raises(ConstructionError):
            DomainSpec(segs)

    def test_open_loop_rejected(self):
        from geometry import DomainSpec, LineSegment, Point2
        from lab_utils import ConstructionError
        segs = (LineSegment(Point2(0, 0), Point2(1, 0)), LineSegment(Point2(1, 0), Point2(0, 1)),
                LineSegment(Point2(0, 1), Point2(0, 0.5)))
        with pytest.raises(ConstructionError):
            DomainSpec(segs)

    def test_wrong_corner_angle_rejected(self):
        from geometry import CornerSpec, DomainSpec, build_domain
        from lab_utils import ConstructionError
        rect = build_domain("rectangle")
        bad = CornerSpec(rect.corners[0].vertex, 0.6, rect.corners[0].segments)
        with pytest.raises(ConstructionError):
            DomainSpec(rect.segments, (bad,))

    @pytest.mark.parametrize("mu", [0.25, 0.5, 1.0, 1.5])
    def test_sector_opening(self, mu):
        from geometry import build_domain
        dom = build_domain("sector", mu=mu, R=1.0)
        assert dom.corners[0].mu == mu
        assert dom.signed_area == pytest.approx(0.5 * mu * math.pi, rel=1e-3)

    def test_unknown_kind_and_params(self):
        from geometry import build_domain
        from lab_utils import ConstructionError
        with pytest.raises(ConstructionError):
            build_domain("torus")
        with pytest.raises(ConstructionError):
            build_domain("disk", radius=1.0)
        with pytest.raises(ConstructionError):
            build_domain("sector", mu=2.5)

    def test_c1alpha_alpha_range(self):
        from geometry import build_domain
        from lab_utils import ConstructionError
        with pytest.raises(ConstructionError):
            build_domain("c1alpha_corner", alpha=1.0)

    def test_localized_pair_coincides_near_vertex(self, rng):
        from geometry import build_domain, coincidence_radius, sample_points
        inner, outer = build_domain("localized_pair", mu=0.75, R=1.0, amplitude=0.1)
        R = coincidence_radius(inner, outer)
        assert R == pytest.approx(1.0)
        pts = sample_points(inner, rng, 50, d_max=0.3)
        near = pts[np.linalg.norm(pts, axis=1) < 0.9 * R]
        assert np.all(outer.contains(near))

    def test_json_round_trip(self):
        from geometry import DomainSpec, build_domain
        dom = build_domain("curved_corner", mu=0.75, amplitude=0.1)
        again = DomainSpec.from_json(dom.to_json())
        assert again.corners == dom.corners
        assert again.kind == "curved_corner"

    def test_scaled_domain(self):
        from geometry import build_domain
        dom = build_domain("disk", r=1.0).scaled(2.0)
        assert dom.diameter == pytest.approx(4.0, rel=1e-6)
        assert dom.params["scale"] == 2.0


class TestContainsAndDistance:
    """Test point location and boundary distances."""

    def test_contains(self, unit_disk):
        inside = unit_disk.contains([[0.0, 0.0], [0.99, 0.0], [1.0, 0.0], [1.2, 0.0]])
        assert inside.tolist() == [True, True, False, False]

    def test_distance_to_boundary_disk(self, unit_disk):
        from geometry import distance_to_boundary
        res = distance_to_boundary(unit_disk, (0.3, 0.4))
        assert res.d == pytest.approx(0.5, abs=1e-12)
        assert res.foot.x == pytest.approx(0.6)
        assert res.corner is None

    def test_distance_outside_raises(self, unit_disk):
        from geometry import distance_to_boundary
        from lab_utils import GeometryError
        with pytest.raises(GeometryError):
            distance_to_boundary(unit_disk, (2.0, 0.0))

    def test_corner_distances(self, quarter_sector):
        from geometry import distance_to_boundary
        res = distance_to_boundary(quarter_sector, (0.3, 0.2))
        assert res.d == pytest.approx(0.2, abs=1e-12)
        assert res.d1 == pytest.approx(0.2, abs=1e-12)
        assert res.d2 == pytest.approx(0.3, abs=1e-12)
        assert res.corner == 0

    def test_interior_distances_nan_outside(self, unit_disk):
        from geometry import interior_distances
        d = interior_distances(unit_disk, [[0.0, 0.0], [3.0, 0.0]])
        assert d[0] == pytest.approx(1.0)
        assert np.isnan(d[1])

    def test_ellipse_distance(self):
        from geometry import build_domain, distance_to_boundary
        dom = build_domain("ellipse", a=2.0, b=1.0)
        assert distance_to_boundary(dom, (0.0, 0.0)).d == pytest.approx(1.0, abs=1e-10)
        assert distance_to_boundary(dom, (1.9, 0.0)).d == pytest.approx(0.1, abs=1e-3)

    def test_sample_points_band(self, unit_disk, rng):
        from geometry import interior_distances, sample_points
        pts = sample_points(unit_disk, rng, 200, d_min=0.1, d_max=0.3)
        d = interior_distances(unit_disk, pts)
        assert len(pts) == 200
        assert np.all((d >= 0.1) & (d <= 0.3))

    def test_sample_points_impossible_band(self, unit_disk, rng):
        from geometry import sample_points
        from lab_utils import GeometryError
        with pytest.raises(GeometryError):
            sample_points(unit_disk, rng, 10, d_min=2.0, max_rounds=3)


class TestCornerFrames:
    """Test corner frames, chart radius and region classification."""

    def test_frame_polar(self):
        from geometry import build_domain, corner_frame
        dom = build_domain("sector", mu=0.5, R=1.0, vertex=(1.0, 1.0), rotation=math.pi / 4)
        frame = corner_frame(dom, dom.corners[0])
        r, theta = frame.polar(np.array([1.0, 1.5]))
        assert r == pytest.approx(0.5)
        assert theta == pytest.approx(math.pi / 4)
        np.testing.assert_allclose(frame.inverse(frame.apply([1.2, 1.3])), [1.2, 1.3])

    def test_foreign_corner_rejected(self, quarter_sector):
        from geometry import build_domain, corner_frame
        from lab_utils import GeometryError
        other = build_domain("sector", mu=0.75)
        with pytest.raises(GeometryError):
            corner_frame(quarter_sector, other.corners[0])

    def test_chart_radius(self, quarter_sector):
        from geometry import chart_radius
        assert chart_radius(quarter_sector, quarter_sector.corners[0]) == pytest.approx(0.2, rel=1e-6)

    def test_classify_regions(self, quarter_sector):
        from geometry import RegionClass, RegionConfig, classify_points
        corner = quarter_sector.corners[0]
        cfg = RegionConfig(c0=0.05, c1=2.0)
        pts = [
            [0.1, 0.1],      # bisector
            [0.15, 0.004],   # d below c1 |z|^2 = 0.045
            [0.01, 0.0003],  # c1 |z|^2 = 0.0002 < d < c0 |z| = 0.0005
        ]
        classes = classify_points(quarter_sector, corner, pts, cfg)
        assert classes == [RegionClass.OMEGA1, RegionClass.OMEGA3, RegionClass.OMEGA2]

    def test_region_boundary_gamma1(self, quarter_sector):
        from geometry import RegionClass, RegionConfig, classify_region
        corner = quarter_sector.corners[0]
        cfg = RegionConfig(c0=0.05, c1=2.0)
        # d = y = c0 |z|
        theta = math.asin(0.05)
        z = 0.1 * np.array([math.cos(theta), math.sin(theta)])
        assert classify_region(quarter_sector, corner, z, cfg) == RegionClass.GAMMA1

    def test_region_c0_bound(self, quarter_sector):
        from geometry import RegionConfig, classify_region, region_c0_bound
        from lab_utils import ConstructionError
        corner = quarter_sector.corners[0]
        strict = region_c0_bound(0.5)
        assert strict == pytest.approx(0.25 * math.atan(0.25))
        loose = RegionConfig(c0=0.9 * region_c0_bound(0.5, False), c1=1.0, strict_mu_bound=False)
        with pytest.raises(ConstructionError):
            classify_region(quarter_sector, corner, (0.05, 0.05), RegionConfig(c0=1.01 * strict, c1=1.0))
        classify_region(quarter_sector, corner, (0.05, 0.05), loose)

    def test_points_outside_chart(self, quarter_sector):
        from geometry import RegionConfig, classify_region
        from lab_utils import GeometryError
        cfg = RegionConfig(c0=0.05, c1=2.0)
        with pytest.raises(GeometryError):
            classify_region(quarter_sector, quarter_sector.corners[0], (0.5, 0.5), cfg)


class TestGraphBounds:
    """Test the graph-bound fit and the foot property of graph arms."""

    def test_fit_graph_bound_recovers_amplitude(self):
        from geometry import GraphArm, Point2, fit_graph_bound
        arm = GraphArm(Point2(0.0, 0.0), 0.0, 0.3, 1.5, 1.0)
        assert fit_graph_bound(arm, 0.5) == pytest.approx(0.3, rel=1e-6)

    def test_foot_property_holds(self, rng):
        from geometry import build_domain, graph_foot_violations, sample_points
        dom = build_domain("c1alpha_corner", alpha=0.5, M=0.5, mu=1.0)
        pts = sample_points(dom, rng, 300, d_max=0.2)
        pts = pts[np.linalg.norm(pts, axis=1) < 0.5]
        report = graph_foot_violations(dom.segments[0], pts)
        assert report["checked"] > 0
        assert report["radius_violations"] == 0
        assert report["shift_violations"] == 0
