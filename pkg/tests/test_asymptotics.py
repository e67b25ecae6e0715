"""Tests for asymptotics.py - profiles, rate fits, brackets and barrier checks."""

import math

import numpy as np
import pytest


def _profile(x, e):
    from asymptotics import make_profile
    x = np.asarray(x, dtype=float)
    return make_profile(x, np.asarray(e, dtype=float), np.column_stack([x, np.zeros_like(x)]))


def _kinked(lower_slope, upper_slope):
    """|e| with one slope below x = 1e-2 and another above, continuous at the kink."""
    x = np.geomspace(1e-3, 1e-1, 41)
    e = np.where(x >= 1e-2, (x / 1e-2) ** upper_slope, (x / 1e-2) ** lower_slope) * 1e-3
    return _profile(x, e)


class TestSampler:
    """Test sampling rays."""

    def test_geometric_levels(self):
        from asymptotics import Sampler
        from geometry import Point2
        s = Sampler(Point2(0.0, 0.0), 0.0, 0.4, 5, per_octave=1)
        np.testing.assert_allclose(s.ts, [0.4, 0.2, 0.1, 0.05, 0.025])
        np.testing.assert_allclose(s.points()[:, 1], 0.0)

    def test_rejects_bad_axis(self):
        from asymptotics import Sampler
        from geometry import Point2
        from lab_utils import ProfileError
        with pytest.raises(ProfileError):
            Sampler(Point2(0.0, 0.0), 0.0, 0.4, 5, axis="theta")
        with pytest.raises(ProfileError):
            Sampler(Point2(0.0, 0.0), 0.0, 0.0, 5)

    def test_normal_ray_points_inward(self, unit_disk):
        from asymptotics import Sampler
        s = Sampler.normal_ray(unit_disk, 0, 0.3, 0.2, 6)
        norms = np.linalg.norm(s.points(), axis=1)
        np.testing.assert_allclose(norms, 1 - s.ts, atol=1e-12)

    def test_corner_ray_on_bisector(self, quarter_sector):
        from asymptotics import Sampler
        s = Sampler.corner_ray(quarter_sector, quarter_sector.corners[0], math.pi / 4, 0.3, 4)
        pts = s.points()
        np.testing.assert_allclose(pts[:, 0], pts[:, 1], atol=1e-12)


class TestProfiles:
    """Test make_profile and fit_rate."""

    def test_make_profile_sorts_and_filters(self):
        from asymptotics import make_profile
        x = np.array([0.4, 0.1, 0.2, 0.3, -1.0, 0.5])
        e = np.array([4.0, 1.0, 2.0, 3.0, 9.0, np.nan])
        prof = make_profile(x, e, np.zeros((6, 2)))
        np.testing.assert_array_equal(prof.x, [0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(prof.signed, [1.0, 2.0, 3.0, 4.0])

    def test_too_few_samples(self):
        from lab_utils import ProfileError
        with pytest.raises(ProfileError):
            _profile([0.1, 0.2, 0.3], [1.0, 2.0, 3.0])

    def test_fit_recovers_power_law(self):
        from asymptotics import fit_rate
        x = np.geomspace(1e-3, 1e-1, 12)
        fit = fit_rate(_profile(x, 3.0 * x ** 1.5))
        assert fit.slope == pytest.approx(1.5)
        assert fit.C == pytest.approx(3.0)
        assert fit.rms < 1e-10

    def test_fit_window_and_zero_drop(self):
        from asymptotics import fit_rate
        x = np.geomspace(1e-3, 1.0, 16)
        e = x ** 2
        e[3] = 0.0
        fit = fit_rate(_profile(x, e), (1e-3, 0.5))
        assert fit.dropped == 1
        assert fit.window[1] <= 0.5
        assert fit.slope == pytest.approx(2.0)

    def test_fit_window_too_narrow(self):
        from asymptotics import fit_rate
        from lab_utils import ProfileError
        x = np.geomspace(1e-3, 1.0, 16)
        with pytest.raises(ProfileError):
            fit_rate(_profile(x, x), (0.5, 1.0))


class TestEstimates:
    """Test check_estimate verdicts."""

    def test_pass(self):
        from asymptotics import check_estimate
        x = np.geomspace(1e-3, 1e-1, 12)
        report = check_estimate(_profile(x, 3.0 * x ** 2), 2.0, 0.1)
        assert report.verdict == "pass"
        assert report.passed
        assert len(report.samples) == 12

    def test_flattening_tail_is_inconclusive(self):
        from asymptotics import check_estimate
        report = check_estimate(_kinked(1.0, 2.0), 2.0, 0.1)
        assert not report.passed
        assert report.pre_asymptotic
        assert report.verdict == "inconclusive"
        assert report.lower_window_slope == pytest.approx(1.0, abs=1e-6)

    def test_flattening_tail_keeps_a_pass(self):
        from asymptotics import check_estimate
        report = check_estimate(_kinked(1.6, 2.4), 1.5, 0.1)
        assert report.passed
        assert report.verdict == "pass"
        assert report.pre_asymptotic
        assert report.lower_window_slope == pytest.approx(1.6, abs=1e-6)

    def test_steepening_tail_fails(self):
        from asymptotics import check_estimate
        report = check_estimate(_kinked(1.5, 0.5), 2.0, 0.1)
        assert report.verdict == "fail"
        assert not report.pre_asymptotic

    def test_advisory_flag_is_reported(self):
        from asymptotics import check_estimate
        x = np.geomspace(1e-3, 1e-1, 12)
        report = check_estimate(_profile(x, x), 2.0, 0.1, advisory=True)
        assert report.to_dict()["advisory"] is True

    def test_smooth_model_profile(self, unit_disk):
        from asymptotics import Sampler, check_estimate, error_profile
        from closedform import ball_solution, smooth_model
        sampler = Sampler.normal_ray(unit_disk, 0, 0.0, 0.2, 8)
        prof = error_profile(ball_solution(1.0), smooth_model(unit_disk), sampler, domain=unit_disk)
        np.testing.assert_allclose(prof.x, np.sort(sampler.ts), rtol=1e-9)
        assert check_estimate(prof, 2.0, 0.2).verdict == "pass"

    def test_callable_d_profile_needs_domain(self, unit_disk):
        from asymptotics import Sampler, error_profile
        from closedform import ball_solution
        from lab_utils import ProfileError
        sampler = Sampler.normal_ray(unit_disk, 0, 0.0, 0.2, 8)
        with pytest.raises(ProfileError):
            error_profile(ball_solution(1.0), ball_solution(1.0), sampler)


class TestBrackets:
    """Tangent-ball brackets and the audit."""

    def test_disk_bracket(self, unit_disk):
        from asymptotics import bracket_point
        from closedform import ball_solution
        b = bracket_point(unit_disk, (0.5, 0.0))
        assert b.d == pytest.approx(0.5)
        assert b.upper == pytest.approx(ball_solution(1.0)((0.5, 0.0)), rel=1e-6)
        assert b.lower_kind == "exterior_ball"
        assert b.lower == pytest.approx(math.log(1.6))
        assert not b.flagged

    def test_reentrant_corner_shrinks_exterior_ball(self):
        from asymptotics import bracket_point
        from geometry import build_domain
        pacman = build_domain("sector", mu=1.5, R=1.0)
        b = bracket_point(pacman, (0.1, 0.01))
        assert b.lower_kind == "exterior_ball"
        assert b.lower_radius <= 0.1
        assert b.lower < b.upper

    def test_outside_point_rejected(self, unit_disk):
        from asymptotics import bracket_points
        from lab_utils import GeometryError
        with pytest.raises(GeometryError):
            bracket_points(unit_disk, [[2.0, 0.0]])

    def test_width_shrinks_toward_boundary(self, unit_disk):
        from asymptotics import Sampler, bracket_width_profile
        prof = bracket_width_profile(unit_disk, Sampler.normal_ray(unit_disk, 0, 0.0, 0.4, 6))
        assert np.all(np.diff(prof.signed) > 0)

    def test_audit_exact_field(self, unit_disk, rng):
        from asymptotics import bracket_audit
        from closedform import ball_solution
        from geometry import sample_points
        from solver import GridSolution, discretize
        sol = GridSolution.from_field(discretize(unit_disk, 1 / 16), ball_solution(1.0))
        pts = sample_points(unit_disk, rng, 20, d_min=0.7)
        audit = bracket_audit(sol, pts)
        assert audit.checked == 20
        assert audit.passed
        assert audit.slack == pytest.approx(10 / 256)

    def test_audit_counts_violations(self, unit_disk, rng):
        from asymptotics import bracket_audit
        from closedform import ball_solution
        from geometry import sample_points
        from solver import GridSolution, discretize
        exact = ball_solution(1.0)
        sol = GridSolution.from_field(discretize(unit_disk, 1 / 16), lambda p: exact(p) + 1.0)
        audit = bracket_audit(sol, sample_points(unit_disk, rng, 10, d_min=0.7))
        assert audit.violations == 10
        assert audit.worst_excess > 0.5
        assert not audit.to_dict()["passed"]


class TestLocalization:
    """Gap between solutions on domains sharing a corner."""

    @staticmethod
    def _field(R, offset=0.0, mu=0.5):
        from closedform import cone_solution
        from geometry import build_domain
        from solver import GridSolution, discretize
        cone = cone_solution(mu)
        grid = discretize(build_domain("sector", mu=mu, R=R), 1 / 64)
        return GridSolution.from_field(grid, lambda p: cone(p) + offset)

    def test_constant_gap(self):
        from asymptotics import Sampler, localization_gap
        sol1 = self._field(1.0)
        sol2 = self._field(1.5, offset=0.01)
        corner = sol1.grid.domain.corners[0]
        sampler = Sampler.corner_ray(sol1.grid.domain, corner, math.pi / 4, 0.6, 6, per_octave=4, axis="r")
        result = localization_gap(sol1, sol2, corner, sampler)
        assert result.profile.axis == "r"
        assert result.max_gap == pytest.approx(0.01, rel=1e-9)
        assert abs(result.fit.slope) < 1e-6

    def test_identical_fields_have_no_fit(self):
        from asymptotics import Sampler, localization_gap
        sol1 = self._field(1.0)
        sol2 = self._field(1.5)
        corner = sol1.grid.domain.corners[0]
        sampler = Sampler.corner_ray(sol1.grid.domain, corner, math.pi / 4, 0.6, 6, per_octave=4, axis="r")
        result = localization_gap(sol1, sol2, corner, sampler)
        assert result.fit is None
        assert result.max_gap == 0.0

    def test_different_domains_rejected(self):
        from asymptotics import Sampler, localization_gap
        from lab_utils import GeometryError
        sol1 = self._field(1.0)
        sol2 = self._field(1.0, mu=0.75)
        corner = sol1.grid.domain.corners[0]
        sampler = Sampler.corner_ray(sol1.grid.domain, corner, math.pi / 4, 0.6, 6, per_octave=4, axis="r")
        with pytest.raises(GeometryError):
            localization_gap(sol1, sol2, corner, sampler)


class TestSuperSub:
    """Sign checks of the cone barriers."""

    @pytest.mark.parametrize("mu,A", [(0.5, 1.0), (1.5, 0.3)])
    def test_barriers_have_the_right_sign(self, mu, A):
        from asymptotics import super_sub_check
        report = super_sub_check(mu, A, 64, seed=3)
        assert report.count == 64
        assert report.passed
        assert report.max_margin_deviation < 1e-5

    def test_seeded_points_are_reproducible(self):
        from asymptotics import super_sub_check
        a = super_sub_check(0.5, 1.0, 16, seed=11)
        b = super_sub_check(0.5, 1.0, 16, seed=11)
        assert a.to_dict() == b.to_dict()


class TestWriters:
    """CSV and JSON output."""

    def test_profile_csv(self, temp_dir):
        from pathlib import Path

        from asymptotics import profile_csv, write_profile_csv
        x = np.geomspace(1e-3, 1e-1, 5)
        prof = _profile(x, x ** 2)
        lines = profile_csv(prof).splitlines()
        assert lines[0] == "d,signed_error,abs_error,px,py"
        assert len(lines) == 6
        path = Path(temp_dir) / "p.csv"
        write_profile_csv(path, prof)
        assert path.read_text() == profile_csv(prof)
