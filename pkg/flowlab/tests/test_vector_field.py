"""
Tests for vector fields, divergence bounds and mollification
"""
import math
from unittest.mock import patch

import numpy as np
import pytest

from flowlab.exceptions import ConfigurationError, DomainError, NonFiniteFieldError
from flowlab.services.domain import Ball, Box
from flowlab.services.vector_field import (
    DivergenceBound, MollifierParams, SamplePlan, VectorFieldSpec, bump_kernel_mass, combine,
    divergence, evaluate, fd_divergence, field_distance, make_field, mollify, sphere_rule, verify_divergence_bound,
)


@pytest.fixture
def linear():
    return make_field("linear", 2, 1.0, rate=1.0)


class TestEvaluate:
    """Pointwise evaluation"""

    def test_linear_value(self, linear):
        """Test b(x) = x"""
        assert evaluate(linear, 0.5, [1.0, -2.0]).tolist() == [1.0, -2.0]

    def test_time_outside_horizon(self, linear):
        """Test t > T is rejected"""
        with pytest.raises(DomainError):
            evaluate(linear, 1.5, [0.0, 0.0])

    def test_non_finite_value(self):
        """Test a field returning NaN raises with the offending point"""
        spec = VectorFieldSpec(dimension=1, time_horizon=1.0, evaluator=lambda t, x: np.full_like(x, np.nan))
        with pytest.raises(NonFiniteFieldError) as excinfo:
            evaluate(spec, 0.0, [3.0])
        assert excinfo.value.x.tolist() == [3.0]

    def test_support_zeroes_field(self, linear):
        """Test the field vanishes outside its support and on its boundary"""
        supported = make_field("linear", 2, 1.0, support=Ball([0.0, 0.0], 1.0), rate=1.0)
        assert evaluate(supported, 0.0, [2.0, 0.0]).tolist() == [0.0, 0.0]
        assert evaluate(supported, 0.0, [1.0, 0.0]).tolist() == [0.0, 0.0]
        assert evaluate(supported, 0.0, [0.5, 0.0]).tolist() == [0.5, 0.0]

    def test_unknown_family(self):
        """Test unknown family names"""
        with pytest.raises(ConfigurationError):
            make_field("vortex", 2, 1.0)

    def test_bad_family_parameters(self):
        """Test unexpected keyword parameters"""
        with pytest.raises(ConfigurationError):
            make_field("linear", 2, 1.0, speed=3.0)


class TestDivergence:
    """Analytic and finite-difference divergence"""

    @pytest.mark.parametrize("family,params", [
        ("linear", {"rate": 2.0}),
        ("rotation", {"omega": 3.0}),
        ("cubic", {"scale": 1.0}),
        ("saturating", {}),
        ("spiral", {"radial": 1.0, "angular": 2.0, "r_min": 0.5}),
        ("kinked_rotation", {"kink": 0.5, "rate": 0.3}),
    ])
    def test_analytic_matches_finite_differences(self, family, params):
        """Test every shipped family declares its divergence correctly"""
        spec = make_field(family, 2, 1.0, **params)
        points = np.array([[0.7, 0.4], [-1.2, 0.9], [0.3, -1.5]])
        analytic = divergence(spec, 0.0, points)
        numeric = fd_divergence(spec, np.zeros(3), points, 1e-5)
        assert analytic == pytest.approx(numeric, abs=1e-5)

    def test_fd_used_without_analytic(self):
        """Test FD divergence when none is declared"""
        spec = VectorFieldSpec(dimension=2, time_horizon=1.0, evaluator=lambda t, x: x ** 2)
        values = divergence(spec, 0.0, [[1.0, 2.0]], h=1e-5)
        assert values[0] == pytest.approx(6.0, abs=1e-6)


class TestDivergenceBound:
    """One-sided bounds and compression constants"""

    def test_constant_bound(self):
        """Test L = |m| T and e^L"""
        bound = DivergenceBound.constant(-2.0, 1.0)
        assert bound.total == pytest.approx(2.0)
        assert bound.compression_bound() == pytest.approx(math.e ** 2)

    def test_piecewise_bound(self):
        """Test segment-wise integration over breakpoints"""
        bound = DivergenceBound.piecewise([0.5], [-1.0, 3.0], 1.0)
        assert bound.total == pytest.approx(0.5 + 1.5)

    def test_piecewise_needs_matching_values(self):
        """Test value count is checked"""
        with pytest.raises(ConfigurationError):
            DivergenceBound.piecewise([0.5], [1.0], 1.0)

    def test_declared_bounds_hold(self):
        """Test the declared bounds of shipped fields on sampled points"""
        for family in ("linear", "cubic", "saturating", "rotation"):
            spec = make_field(family, 2, 1.0)
            check = verify_divergence_bound(spec, spec.global_bound(), SamplePlan(Box([-2, -2], [2, 2]), count=256))
            assert check.passed, family

    def test_violation_reported(self, linear):
        """Test a too-strong bound is caught"""
        check = verify_divergence_bound(linear, DivergenceBound.constant(5.0, 1.0),
                                        SamplePlan(Ball([0.0, 0.0], 1.0), count=64, time_samples=2))
        assert not check.passed
        assert check.worst_margin == pytest.approx(-3.0)

    def test_combine_adds_bounds(self, linear):
        """Test composite fields sum values and global bounds"""
        rotation = make_field("rotation", 2, 1.0)
        total = combine(linear, rotation)
        assert total.kind == "composite"
        assert evaluate(total, 0.0, [1.0, 0.0]).tolist() == pytest.approx([1.0, 1.0])
        assert total.global_bound().total == pytest.approx(2.0)


class TestMollification:
    """Kernel normalization and convergence"""

    def test_kernel_mass_closed_form(self):
        """Test the bump mass in 1D: int (1 - y^2)^4 = 256/315"""
        assert bump_kernel_mass(1, 4) == pytest.approx(256.0 / 315.0)

    @pytest.mark.parametrize("dimension", [1, 2, 3, 4])
    @pytest.mark.parametrize("points", [2, 4, 6, 8])
    def test_kernel_integrates_to_one(self, dimension, points):
        """Test the polar rule integrates the kernel to 1 within 1e-8"""
        params = MollifierParams(0.1, quadrature_points=points)
        _, weights = params.nodes(dimension)
        assert abs(params.raw_mass(dimension) - 1.0) <= 1e-8
        assert abs(weights.sum() - 1.0) <= 1e-8
        assert np.all(weights > 0.0)

    def test_sphere_rule_area_and_symmetry(self):
        """Test direction weights add up to |S^2| = 4 pi and first moments vanish"""
        directions, weights = sphere_rule(3, 5)
        assert weights.sum() == pytest.approx(4.0 * math.pi, rel=1e-12)
        assert np.linalg.norm(directions, axis=1) == pytest.approx(np.ones(len(weights)))
        assert weights @ directions == pytest.approx(np.zeros(3), abs=1e-12)

    def test_mass_defect_rejected(self):
        """Test a rule missing unit mass is an error, not renormalized"""
        params = MollifierParams(0.1)
        original = MollifierParams.kernel
        with patch.object(MollifierParams, "kernel", lambda self, y: 1.01 * original(self, y)):
            with pytest.raises(ConfigurationError, match="not 1 within"):
                params.nodes(2)

    def test_invalid_params(self):
        """Test nonpositive eps and too few nodes"""
        with pytest.raises(ConfigurationError):
            MollifierParams(0.0)
        with pytest.raises(ConfigurationError):
            MollifierParams(0.1, quadrature_points=1)

    def test_linear_field_reproduced(self, linear):
        """Test symmetric kernels reproduce linear fields away from the clip boundary"""
        smooth = mollify(linear, MollifierParams(0.1), Ball([0.0, 0.0], 4.0))
        assert smooth.kind == "mollified"
        assert evaluate(smooth, 0.0, [1.0, 0.5]) == pytest.approx([1.0, 0.5], abs=1e-12)

    def test_vanishes_outside_clip(self, linear):
        """Test the mollified field is supported in A"""
        smooth = mollify(linear, MollifierParams(0.1), Ball([0.0, 0.0], 1.0))
        assert evaluate(smooth, 0.0, [1.5, 0.0]).tolist() == [0.0, 0.0]

    def test_kinked_field_converges(self):
        """Test the L1 distance to a Lipschitz field shrinks with eps"""
        kinked = make_field("kinked_rotation", 2, 1.0, kink=0.5)
        clip = Ball([0.0, 0.0], 4.0)
        region = Ball([0.0, 0.0], 2.0)
        distances = [
            field_distance(mollify(kinked, MollifierParams(eps), clip), kinked, region, count=2048)
            for eps in (0.2, 0.1, 0.05)
        ]
        assert distances[0] > distances[1] > distances[2]
        assert distances[2] < 0.01

    def test_field_distance_unknown_norm(self, linear):
        """Test unknown norm names"""
        with pytest.raises(ConfigurationError):
            field_distance(linear, linear, Ball([0.0, 0.0], 1.0), norm="l2")
