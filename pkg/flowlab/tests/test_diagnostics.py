"""
Tests for the theorem-level checks and the report they feed
"""
import math
from dataclasses import replace

import numpy as np
import pytest

from flowlab.exceptions import ConfigurationError, PreconditionError
from flowlab.services import diagnostics
from flowlab.services.diagnostics import (
    CRITERION_NOT_SATISFIED, DEGENERATE, FAIL, PASS, PRECONDITION_FAILED, CheckEntry, DiagnosticsReport,
)
from flowlab.services.domain import Ball, Box, ExhaustionDomain, WholeSpace
from flowlab.services.integrator import IntegratorParams, integrate, integrate_ensemble
from flowlab.services.transport import ParticleEnsemble, TestFunction, sample_ensemble
from flowlab.services.vector_field import make_field


@pytest.fixture
def plane():
    return ExhaustionDomain.build(WholeSpace(2))


@pytest.fixture
def tight():
    return IntegratorParams(rel_tol=1e-10, abs_tol=1e-12)


@pytest.fixture
def unit_circle():
    angles = np.linspace(0.0, 2.0 * math.pi, 8, endpoint=False)
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def single_particle(point):
    points = np.array([point], dtype=float)
    return ParticleEnsemble(points=points, weights=np.ones(1), descriptor=None)


class TestReport:
    """Entries, expected verdicts and serialization"""

    def test_pass_needs_expected_verdicts(self):
        """Test a report passes when every verdict matches its expectation"""
        report = DiagnosticsReport("demo", "abc", "0.1.0")
        assert not report.passed
        report.add(CheckEntry("a", PASS, {}))
        report.add(CheckEntry("b", CRITERION_NOT_SATISFIED, {}, expected=CRITERION_NOT_SATISFIED))
        assert report.passed
        report.add(CheckEntry("c", FAIL, {}))
        assert not report.passed
        assert report.entry("b").verdict == CRITERION_NOT_SATISFIED
        assert report.entry("missing") is None

    def test_serialization(self):
        """Test numpy values and infinities become JSON-safe"""
        entry = CheckEntry("a", PASS, {"x": np.float64(1.5), "n": np.int64(3), "inf": math.inf,
                                       "arr": np.array([1.0, 2.0]), "ok": np.bool_(True)}, wall_clock=0.25)
        data = entry.to_dict()
        assert data["metrics"] == {"x": 1.5, "n": 3, "inf": "inf", "arr": [1.0, 2.0], "ok": True}
        assert data["wall_clock"] == 0.25
        assert "wall_clock" not in entry.to_dict(include_timing=False)

    def test_report_schema(self):
        """Test the report header"""
        report = DiagnosticsReport("demo", "abc", "0.1.0", [CheckEntry("a", PASS, {})])
        data = report.to_dict(include_timing=False)
        assert data["schema_version"] == 1
        assert data["pass"] is True
        assert data["checks"][0]["check"] == "a"

    def test_inputs_digest_is_canonical(self):
        """Test key order does not change the digest"""
        assert diagnostics.inputs_digest({"a": 1, "b": 2}) == diagnostics.inputs_digest({"b": 2, "a": 1})
        assert diagnostics.inputs_digest({"a": 1}) != diagnostics.inputs_digest({"a": 2})


class TestSemigroup:
    """Restart consistency"""

    def test_linear_flow(self, plane, tight, unit_circle):
        """Test restarting b = x at s reproduces X(t, x)"""
        entry = diagnostics.check_semigroup(make_field("linear", 2, 1.0), plane, unit_circle, 0.3, 1.0, tight)
        assert entry.verdict == PASS
        assert entry.metrics["positional_defect"] < 1e-6
        assert entry.counts["compared"] == 8

    def test_cubic_maximal_times(self, plane, tight, unit_circle):
        """Test the restarted maximal time matches T(x) = 1/2"""
        entry = diagnostics.check_semigroup(make_field("cubic", 2, 1.0), plane, unit_circle, 0.25, 0.4, tight,
                                            tmax_tolerance=0.01)
        assert entry.verdict == PASS
        assert entry.counts["blowups"] == 8
        assert entry.metrics["original_tmax_mean"] == pytest.approx(0.5, abs=1e-5)

    def test_times_ordered(self, plane, tight, unit_circle):
        """Test s < t is required"""
        with pytest.raises(ConfigurationError):
            diagnostics.check_semigroup(make_field("linear", 2, 1.0), plane, unit_circle, 0.5, 0.5, tight)


class TestBlowup:
    """Proper blow-up and its precondition"""

    def test_cubic_blows_up_properly(self, plane, tight, unit_circle):
        """Test every blow-up of x|x|^2 is proper with finite path length"""
        entry = diagnostics.check_proper_blowup(make_field("cubic", 2, 1.0), plane, unit_circle, tight)
        assert entry.verdict == PASS
        assert entry.metrics["census"] == {"proper": 8, "oscillating": 0, "none": 0}
        assert entry.metrics["path_lengths_finite"]
        assert entry.metrics["mean_blowup_time"] == pytest.approx(0.5, abs=1e-5)

    def test_missing_bound_refused(self, plane, tight, unit_circle):
        """Test a field without a global bound is refused"""
        unbounded = replace(make_field("cubic", 2, 1.0), divergence_bounds=())
        with pytest.raises(PreconditionError) as excinfo:
            diagnostics.check_proper_blowup(unbounded, plane, unit_circle, tight)
        entry = diagnostics.precondition_entry("proper-blowup", excinfo.value, expected=PRECONDITION_FAILED)
        assert entry.verdict == PRECONDITION_FAILED
        assert entry.as_expected

    def test_census_without_precondition(self, plane, tight, unit_circle):
        """Test the census runs for any field"""
        unbounded = replace(make_field("cubic", 2, 1.0), divergence_bounds=())
        entry = diagnostics.check_blowup_census(unbounded, plane, unit_circle, tight)
        assert entry.metrics["census"]["proper"] == 8


class TestCrossingTime:
    """Annulus crossings against the radial speed profile"""

    @pytest.fixture
    def horizon(self):
        return IntegratorParams(rel_tol=1e-10, abs_tol=1e-12, horizon=2.0)

    def test_radial_field_attains_bound(self, plane, horizon):
        """Test unit radial speed crosses B_3 minus B_2 in exactly one time unit"""
        field = make_field("spiral", 2, 2.0, radial=1.0, angular=0.0)
        trajectory = integrate(field, plane, [1.5, 0.0], horizon)
        entry, analysis = diagnostics.check_crossing_time(field, [trajectory], 2.0, mode="analytic")
        assert entry.verdict == PASS
        assert analysis.min_ratio == pytest.approx(1.0, abs=1e-6)
        assert analysis.crossings[0][0] == pytest.approx(0.5, abs=1e-8)

    def test_sampled_profile_with_rotation(self, plane, horizon):
        """Test the angular part speeds up f but not the crossing"""
        field = make_field("spiral", 2, 2.0, radial=1.0, angular=2.0)
        trajectory = integrate(field, plane, [1.5, 0.0], horizon)
        entry, analysis = diagnostics.check_crossing_time(field, [trajectory], 2.0, angular_samples=90)
        assert entry.verdict == PASS
        assert analysis.f_integral == pytest.approx(math.sqrt(5.0), rel=1e-9)
        assert analysis.min_ratio == pytest.approx(math.sqrt(5.0), rel=1e-4)
        assert analysis.sigma_monotone

    def test_no_crossing_is_degenerate(self, plane, horizon):
        """Test trajectories that never cross"""
        field = make_field("rotation", 2, 2.0)
        trajectory = integrate(field, plane, [1.0, 0.0], horizon)
        entry, _ = diagnostics.check_crossing_time(field, [trajectory], 2.0, angular_samples=90)
        assert entry.verdict == DEGENERATE

    def test_planar_only(self, tight):
        """Test the check refuses non-planar fields"""
        with pytest.raises(ConfigurationError):
            diagnostics.check_crossing_time(make_field("linear", 3, 1.0), [], 2.0)


class TestNoBlowup:
    """Survival under the growth criterion and the Lyapunov constant"""

    def test_linear_survives(self, plane, tight):
        """Test the growth integral of b = x from (1, 0) is log((1 + e) / 2)"""
        entry, flow, functionals = diagnostics.check_no_blowup(
            make_field("linear", 2, 1.0), plane, single_particle([1.0, 0.0]), tight, time_samples=201)
        assert entry.verdict == PASS
        assert entry.metrics["surviving_mass_fraction"] == 1.0
        assert functionals.growth_integral == pytest.approx(math.log((1.0 + math.e) / 2.0), rel=1e-5)

    def test_cubic_does_not_satisfy(self, plane, tight):
        """Test blow-up before the horizon"""
        entry, _, _ = diagnostics.check_no_blowup(make_field("cubic", 2, 1.0), plane, single_particle([1.0, 0.0]), tight)
        assert entry.verdict == CRITERION_NOT_SATISFIED

    def test_lyapunov_constant(self, plane, tight):
        """Test Psi = log(1 + |x|^2) grows at most at rate 2 under b = x"""
        field = make_field("linear", 2, 1.0)
        flow = integrate_ensemble(field, plane, [[1.0, 0.0], [0.0, 3.0]], tight, output_times=np.linspace(0.0, 1.0, 11))
        entry = diagnostics.check_lyapunov(field, flow)
        assert entry.verdict == PASS
        assert 0.0 < entry.metrics["constant"] <= 2.0

    def test_lyapunov_fails_near_blowup(self, plane, tight):
        """Test the constant explodes close to the cubic blow-up time"""
        field = make_field("cubic", 2, 1.0)
        flow = integrate_ensemble(field, plane, [[1.0, 0.0]], tight, output_times=[0.0, 0.25, 0.499])
        entry = diagnostics.check_lyapunov(field, flow)
        assert entry.verdict == CRITERION_NOT_SATISFIED
        assert entry.metrics["constant"] > 100.0


class TestTransportChecks:
    """Compression, Jacobian, continuity and Phi_delta"""

    def test_compression(self, plane, tight):
        """Test contraction stays within e^L"""
        ensemble = sample_ensemble(Box([-1.0, -1.0], [1.0, 1.0]), 8192, seed=2)
        entry, report = diagnostics.check_compression(
            make_field("linear", 2, 1.0, rate=-1.0), plane, ensemble, tight, [0.5, 1.0], 16, stat_tol=0.2)
        assert entry.verdict == PASS
        assert entry.bound == pytest.approx(math.e ** 2)
        assert report.measured[0] == pytest.approx(math.e, rel=0.2)

    def test_compression_needs_bound(self, plane, tight):
        """Test a field without any divergence bound"""
        ensemble = sample_ensemble(Box([-1.0, -1.0], [1.0, 1.0]), 64)
        unbounded = replace(make_field("linear", 2, 1.0), divergence_bounds=())
        with pytest.raises(PreconditionError):
            diagnostics.check_compression(unbounded, plane, ensemble, tight, [0.5], 4)

    def test_jacobian(self, tight):
        """Test log J(1) = 3 for b = x in R^3"""
        space = ExhaustionDomain.build(WholeSpace(3))
        entry, _ = diagnostics.check_jacobian(make_field("linear", 3, 1.0), space, [[0.1, 0.2, 0.3], [1.0, 0.0, 0.0]],
                                              tight, expected_log=3.0)
        assert entry.verdict == PASS
        assert entry.metrics["max_log_jacobian_error"] < 1e-5

    def test_continuity(self, plane, tight):
        """Test the weak continuity equation with a first-order forward residual"""
        ensemble = sample_ensemble(Ball([0.0, 0.0], 1.0), 2048, total_mass=1.0)
        entry = diagnostics.check_continuity(make_field("linear", 2, 1.0, rate=0.5), plane, ensemble,
                                             TestFunction((0.2, 0.1), 0.6), 0.5, 5e-3, tight)
        assert entry.verdict == PASS
        assert not entry.metrics["contaminated"]
        assert entry.metrics["scheme"] == "centered"

    def test_continuity_forward_scheme(self, plane, tight):
        """Test the magnitude can be measured with the forward difference"""
        ensemble = sample_ensemble(Ball([0.0, 0.0], 1.0), 256, total_mass=1.0)
        field = make_field("linear", 2, 1.0, rate=0.5)
        entry = diagnostics.check_continuity(field, plane, ensemble, TestFunction((0.2, 0.1), 0.6), 0.5, 5e-3, tight,
                                             scheme="forward")
        assert entry.metrics["scheme"] == "forward"
        assert entry.metrics["residual"] == entry.metrics["forward_residual"]
        with pytest.raises(ConfigurationError):
            diagnostics.check_continuity(field, plane, ensemble, TestFunction((0.2, 0.1), 0.6), 0.5, 5e-3, tight,
                                         scheme="backward")

    def test_tolerance_functional(self, plane):
        """Test Phi_delta between two tolerances stays under its ceiling"""
        points = np.array([[1.0, 0.0], [0.0, 0.5]])
        entry = diagnostics.check_tolerance_functional(make_field("rotation", 2, 1.0), plane, points, [0.5, 0.5],
                                                       IntegratorParams())
        assert entry.verdict == PASS
        assert entry.metrics["phi_delta"] >= 0.0
        assert entry.metrics["psi_delta"] == pytest.approx(entry.metrics["phi_delta"], rel=1e-12, abs=1e-15)


class TestHittingSemicontinuity:
    """Fractions of particles whose approximation already left A"""

    def stability_entry(self, fractions, alive=100, liminf=1.0):
        return CheckEntry("stability", PASS, {
            "epsilons": [0.2, 0.1, 0.05],
            "hitting_fractions": fractions,
            "liminf_fraction": liminf,
        }, counts={"samples": 128, "alive_reference": alive})

    def test_decreasing_fractions(self):
        """Test nonincreasing fractions pass"""
        entry = diagnostics.hitting_entry_from_stability(self.stability_entry([0.05, 0.02, 0.0]))
        assert entry.verdict == PASS

    def test_one_particle_rise_allowed(self):
        """Test a rise of a single alive particle is tolerated"""
        entry = diagnostics.hitting_entry_from_stability(self.stability_entry([0.02, 0.025, 0.0]))
        assert entry.verdict == PASS
        assert entry.tolerance["rise"] == pytest.approx(0.01)

    def test_rise_and_low_liminf_fail(self):
        """Test larger rises and a low liminf fraction"""
        assert diagnostics.hitting_entry_from_stability(self.stability_entry([0.0, 0.05, 0.0])).verdict == FAIL
        assert diagnostics.hitting_entry_from_stability(self.stability_entry([0.0, 0.0, 0.0], liminf=0.9)).verdict == FAIL

    def test_direct_check_with_identical_fields(self, plane, tight):
        """Test approximating a field by itself"""
        field = make_field("linear", 2, 1.0)
        points = sample_ensemble(Ball([0.0, 0.0], 1.0), 64).points
        entry = diagnostics.check_hitting_semicontinuity(field, [field, field], plane, Ball([0.0, 0.0], 2.0),
                                                         points, 1.0, tight)
        assert entry.verdict == PASS
        assert entry.metrics["fractions"] == [0.0, 0.0]


@pytest.mark.slow
class TestStability:
    """Mollified flows converging to a Lipschitz flow"""

    def test_distances_shrink(self, plane):
        """Test the stopped L^1 distance decreases with eps"""
        field = make_field("kinked_rotation", 2, 1.0, kink=0.5, rate=0.3)
        ensemble = sample_ensemble(Ball([0.0, 0.0], 1.0), 256, total_mass=1.0)
        entry = diagnostics.check_stability(field, plane, Ball([0.0, 0.0], 2.0), [0.2, 0.1, 0.05],
                                            ensemble.points, ensemble.weights, 1.0, IntegratorParams(),
                                            clip_region=Ball([0.0, 0.0], 4.0), time_samples=11)
        distances = entry.metrics["distances"]
        assert distances[2] < distances[0]
        assert entry.metrics["liminf_fraction"] >= 0.99
