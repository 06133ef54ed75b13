"""
Tests for regions, exhaustions, potentials and hitting times
"""
import math

import numpy as np
import pytest

from flowlab.exceptions import ConfigurationError, DomainError
from flowlab.services.domain import (
    Ball, Box, ExhaustionDomain, HalfSpace, Intersection, Union, WholeSpace,
    contains, first_hitting, parse_region, potential, sample_points,
)


@pytest.fixture
def unit_disc_domain():
    return ExhaustionDomain.build(Ball([0.0, 0.0], 1.0))


class TestRegions:
    """Margins, bounds and volumes"""

    def test_ball_margin(self):
        """Test signed distance of a ball"""
        ball = Ball([0.0, 0.0], 1.0)
        margins = ball.margin([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
        assert margins.tolist() == pytest.approx([1.0, 0.0, -1.0])

    def test_box_margin_inside_and_outside(self):
        """Test box margin is the distance to the nearest face"""
        box = Box([0.0, 0.0], [2.0, 1.0])
        assert box.margin([[1.0, 0.5]])[0] == pytest.approx(0.5)
        assert box.margin([[3.0, 2.0]])[0] == pytest.approx(-math.sqrt(2.0))

    def test_halfspace_normalizes(self):
        """Test half-space normal is normalized together with the offset"""
        half = HalfSpace([2.0, 0.0], 2.0)
        assert half.margin([[0.0, 5.0]])[0] == pytest.approx(1.0)

    def test_union_and_intersection(self):
        """Test union takes the max margin and intersection the min"""
        a, b = Ball([0.0, 0.0], 1.0), Ball([1.5, 0.0], 1.0)
        point = [[0.75, 0.0]]
        assert Union([a, b]).margin(point)[0] == pytest.approx(0.25)
        assert Intersection([a, b]).margin(point)[0] == pytest.approx(0.25)
        assert not Intersection([a, b]).inside([[-0.5, 0.0]])[0]

    def test_whole_space_unbounded(self):
        """Test R^d has infinite volume and no boundary"""
        space = WholeSpace(3)
        assert not space.is_bounded()
        assert space.volume() == math.inf
        assert space.boundary_samples(10).shape == (0, 3)

    def test_ball_volume_closed_form(self):
        """Test volume of the unit ball in R^3"""
        assert Ball([0.0, 0.0, 0.0], 1.0).volume() == pytest.approx(4.0 / 3.0 * math.pi)

    def test_sobol_volume_estimate(self):
        """Test the generic Sobol volume on an intersection"""
        lens = Intersection([Box([-1.0, -1.0], [1.0, 1.0]), Ball([0.0, 0.0], 1.0)])
        assert lens.volume() == pytest.approx(math.pi, rel=1e-2)

    def test_invalid_ball(self):
        """Test nonpositive radius is rejected"""
        with pytest.raises(ConfigurationError):
            Ball([0.0], 0.0)


class TestMembership:
    """contains on interior, boundary and exterior points"""

    def test_interior(self):
        """Test point strictly inside"""
        membership = contains(Ball([0.0, 0.0], 1.0), [0.5, 0.0])
        assert membership.inside
        assert membership.status == "inside"

    def test_boundary_is_not_inside(self):
        """Test boundary point reports margin 0"""
        membership = contains(Ball([0.0, 0.0], 1.0), [1.0, 0.0])
        assert not membership.inside
        assert membership.status == "boundary"

    def test_exterior(self):
        """Test point outside"""
        assert contains(Box([0.0], [1.0]), [2.0]).status == "outside"


class TestParseRegion:
    """Config syntax for regions"""

    def test_ball(self):
        """Test ball syntax"""
        region = parse_region("ball([0, 0], 2)", 2)
        assert isinstance(region, Ball)
        assert region.radius == 2.0

    def test_nested_union(self):
        """Test union with nested calls"""
        region = parse_region("union[ball([0, 0], 1), box([2, 2], [3, 3])]", 2)
        assert isinstance(region, Union)
        assert len(region.members) == 2

    def test_rspace_needs_dimension(self):
        """Test rspace without dimension is rejected"""
        assert isinstance(parse_region("rspace", 2), WholeSpace)
        with pytest.raises(ConfigurationError):
            parse_region("rspace")

    def test_dimension_mismatch(self):
        """Test wrong dimension is rejected"""
        with pytest.raises(ConfigurationError):
            parse_region("ball([0, 0, 0], 1)", 2)

    def test_describe_round_trip(self):
        """Test describe produces parseable syntax"""
        region = Box([0.0, -1.0], [1.0, 1.0])
        assert parse_region(region.describe(), 2).margin([[0.5, 0.0]])[0] == pytest.approx(0.5)

    def test_garbage(self):
        """Test unknown syntax"""
        with pytest.raises(ConfigurationError):
            parse_region("sphere(1)", 2)


class TestSampling:
    """Deterministic samplers"""

    @pytest.mark.parametrize("sampler", ["sobol", "halton", "uniform"])
    def test_points_inside_and_counted(self, sampler):
        """Test every sampler returns the requested count inside the region"""
        ball = Ball([1.0, 1.0], 0.5)
        points = sample_points(ball, 500, sampler, seed=3)
        assert points.shape == (500, 2)
        assert np.all(ball.inside(points))

    def test_seed_reproducible(self):
        """Test equal seeds give identical points"""
        ball = Ball([0.0, 0.0], 1.0)
        assert np.array_equal(sample_points(ball, 100, seed=7), sample_points(ball, 100, seed=7))

    def test_unbounded_rejected(self):
        """Test sampling R^d fails loudly"""
        with pytest.raises(ConfigurationError):
            sample_points(WholeSpace(2), 10)

    def test_unknown_sampler(self):
        """Test unknown sampler name"""
        with pytest.raises(ConfigurationError):
            sample_points(Ball([0.0], 1.0), 10, sampler="grid")


class TestExhaustion:
    """Default exhaustions and the confining potential"""

    def test_whole_space_dyadic_balls(self):
        """Test R^d is exhausted by B_{2^n}"""
        domain = ExhaustionDomain.build(WholeSpace(2), level_count=4)
        assert [level.radius for level in domain.levels] == [1.0, 2.0, 4.0, 8.0]

    def test_levels_nested(self, unit_disc_domain):
        """Test every level is compactly contained in the next"""
        assert unit_disc_domain.verify_nesting() > 0.0

    def test_potential_outside_raises(self, unit_disc_domain):
        """Test V is undefined outside Omega"""
        with pytest.raises(DomainError):
            potential(unit_disc_domain, [2.0, 0.0])

    def test_potential_diverges_at_boundary(self, unit_disc_domain):
        """Test V = 1/dist near the boundary of the unit disc"""
        assert potential(unit_disc_domain, [0.999, 0.0]) == pytest.approx(1000.0, rel=1e-9)
        assert potential(unit_disc_domain, [0.0, 0.0]) == pytest.approx(1.0)

    def test_potential_at_infinity(self):
        """Test V = |x| on R^d"""
        domain = ExhaustionDomain.build(WholeSpace(2))
        assert potential(domain, [3.0, 4.0]) == pytest.approx(5.0)

    def test_confinement_level(self, unit_disc_domain):
        """Test a level exists beyond which V exceeds a bound"""
        level = unit_disc_domain.confinement_level(10.0)
        assert level is not None
        radius = unit_disc_domain.levels[level].radius
        assert 1.0 / (1.0 - radius) > 10.0


class TestFirstHitting:
    """Exit times from sampled trajectories"""

    def test_linear_exit(self):
        """Test exit time of x(t) = t from (-inf, 0.5) is found by bisection"""
        times = np.linspace(0.0, 1.0, 5)
        positions = times[:, None]
        velocities = np.ones_like(positions)
        record = first_hitting(times, positions, velocities, HalfSpace([1.0], 0.5), dt_min=1e-13)
        assert record.hit_time == pytest.approx(0.5, abs=1e-12)
        assert record.exit_point[0] == pytest.approx(0.5, abs=1e-12)

    def test_never_exits(self):
        """Test a path staying inside never hits"""
        times = np.linspace(0.0, 1.0, 3)
        record = first_hitting(times, np.zeros((3, 1)), np.zeros((3, 1)), Ball([0.0], 1.0))
        assert record.never
        assert record.as_extended() == math.inf

    def test_start_outside(self):
        """Test a path starting outside hits at its first sample"""
        times = np.array([0.2, 0.4])
        record = first_hitting(times, [[5.0], [6.0]], [[1.0], [1.0]], Ball([0.0], 1.0))
        assert record.hit_time == 0.2

    def test_empty_trajectory(self):
        """Test empty input is an error"""
        with pytest.raises(DomainError):
            first_hitting(np.array([]), np.empty((0, 1)), np.empty((0, 1)), Ball([0.0], 1.0))
