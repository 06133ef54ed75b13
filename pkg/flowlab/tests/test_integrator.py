"""
Tests for the flow integrator, ensembles and blow-up classification
"""
import math
from types import SimpleNamespace

import numpy as np
import pytest

from flowlab.exceptions import ConfigurationError, DomainError
from flowlab.services.domain import Ball, ExhaustionDomain, WholeSpace
from flowlab.services.integrator import (
    BLOWUP, HORIZON, UNDERFLOW, IntegratorParams, classify_blowup, count_excursions, integrate,
    integrate_ensemble, integrate_jacobian,
)
from flowlab.services.vector_field import make_field


@pytest.fixture
def plane():
    return ExhaustionDomain.build(WholeSpace(2))


@pytest.fixture
def tight():
    return IntegratorParams(rel_tol=1e-10, abs_tol=1e-12)


class TestParams:
    """Parameter validation"""

    def test_defaults_valid(self):
        """Test the default parameters validate"""
        assert IntegratorParams().validate().scheme == "rk45-adaptive"

    @pytest.mark.parametrize("changes", [
        {"scheme": "euler"},
        {"dt_min": 1.0, "dt_init": 0.1},
        {"rel_tol": 0.0},
        {"horizon": -1.0},
        {"speed_cap": 0.0},
    ])
    def test_invalid(self, changes):
        """Test inconsistent parameters are rejected"""
        with pytest.raises(ConfigurationError):
            IntegratorParams(**changes).validate()


class TestIntegrate:
    """Single trajectories against closed forms"""

    def test_exponential_flow(self, plane, tight):
        """Test X(1, x) = e x for b(x) = x"""
        trajectory = integrate(make_field("linear", 2, 1.0), plane, [1.0, 0.5], tight)
        assert trajectory.termination == HORIZON
        assert trajectory.positions[-1] == pytest.approx([math.e, 0.5 * math.e], rel=1e-8)
        assert trajectory.times[-1] == pytest.approx(1.0)

    def test_rotation_preserves_radius(self, plane, tight):
        """Test rotation flow stays on its circle"""
        trajectory = integrate(make_field("rotation", 2, 1.0), plane, [1.0, 0.0], tight)
        assert np.linalg.norm(trajectory.positions, axis=1) == pytest.approx(np.ones(len(trajectory.times)), abs=1e-8)
        assert trajectory.positions[-1] == pytest.approx([math.cos(1.0), math.sin(1.0)], abs=1e-8)

    def test_cubic_blowup_time(self, plane, tight):
        """Test b = x|x|^2 from |x0| = 1 blows up at t = 1/2"""
        trajectory = integrate(make_field("cubic", 2, 1.0), plane, [1.0, 0.0], tight)
        assert trajectory.termination in (BLOWUP, UNDERFLOW)
        assert trajectory.t_max_estimate == pytest.approx(0.5, abs=1e-6)
        assert math.isfinite(trajectory.path_length)

    def test_start_outside_omega(self, tight):
        """Test initial points must lie in Omega"""
        disc = ExhaustionDomain.build(Ball([0.0, 0.0], 1.0))
        with pytest.raises(DomainError):
            integrate(make_field("linear", 2, 1.0), disc, [2.0, 0.0], tight)

    def test_horizon_beyond_field(self, plane):
        """Test the horizon may not exceed the field's T"""
        with pytest.raises(ConfigurationError):
            integrate(make_field("linear", 2, 1.0), plane, [0.0, 0.0], IntegratorParams(horizon=2.0))

    def test_rk4_converges_at_fourth_order(self, plane):
        """Test halving the fixed step divides the error by about 16"""
        field = make_field("linear", 2, 1.0)
        errors = []
        for dt in (0.1, 0.05, 0.025):
            params = IntegratorParams(scheme="rk4-fixed", dt_init=dt, dt_min=dt, dt_max=dt)
            trajectory = integrate(field, plane, [1.0, 0.0], params)
            errors.append(abs(trajectory.positions[-1][0] - math.e))
        assert errors[0] / errors[1] == pytest.approx(16.0, rel=0.1)
        assert errors[1] / errors[2] == pytest.approx(16.0, rel=0.1)

    def test_exit_from_bounded_domain(self, tight):
        """Test a constant field leaves the unit disc at t = 1/2 and blows up there"""
        disc = ExhaustionDomain.build(Ball([0.0, 0.0], 1.0))
        field = make_field("constant", 2, 1.0, vector=[1.0, 0.0])
        trajectory = integrate(field, disc, [0.5, 0.0], tight)
        assert trajectory.termination != HORIZON
        assert trajectory.t_max_estimate == pytest.approx(0.5, abs=1e-5)

    def test_jacobian(self, plane, tight):
        """Test log J(1) = d for b(x) = x"""
        trajectory = integrate(make_field("linear", 2, 1.0), plane, [0.3, 0.2], tight, track_jacobian=True)
        assert trajectory.log_jacobian[-1] == pytest.approx(2.0, abs=1e-5)
        samples = integrate_jacobian(make_field("linear", 2, 1.0), trajectory)
        assert samples[-1][1] == pytest.approx(math.e ** 2, rel=1e-5)
        assert all(j > 0 for _, j in samples)


class TestEnsemble:
    """Vectorized ensembles"""

    def test_outputs_and_hitting(self, tight):
        """Test positions at output times and level hitting times"""
        domain = ExhaustionDomain.build(WholeSpace(2), levels=[Ball([0.0, 0.0], 2.0)])
        points = np.array([[1.0, 0.0], [0.0, 0.5]])
        flow = integrate_ensemble(make_field("linear", 2, 1.0), domain, points, tight, output_times=[0.0, 0.5, 1.0])
        assert flow.positions_at(0.5) == pytest.approx(points * math.exp(0.5), rel=1e-8)
        assert flow.hit_times[0, 0] == pytest.approx(math.log(2.0), abs=1e-8)
        assert flow.hit_times[1, 0] == math.inf
        assert flow.alive(0.8, level=0).tolist() == [False, True]
        assert flow.census()[HORIZON] == 2

    def test_thread_count_does_not_change_results(self, plane, tight):
        """Test bit-identical results for 1 and 4 threads"""
        points = np.random.default_rng(0).uniform(-1.0, 1.0, (300, 2))
        field = make_field("rotation", 2, 1.0)
        one = integrate_ensemble(field, plane, points, tight, threads=1, chunk_size=64)
        four = integrate_ensemble(field, plane, points, tight, threads=4, chunk_size=64)
        assert np.array_equal(one.positions, four.positions)
        assert np.array_equal(one.t_max, four.t_max)

    def test_output_times_checked(self, plane, tight):
        """Test output times beyond the horizon"""
        with pytest.raises(ConfigurationError):
            integrate_ensemble(make_field("linear", 2, 1.0), plane, [[0.0, 0.0]], tight, output_times=[2.0])

    def test_dead_particles_are_nan(self, plane, tight):
        """Test positions after blow-up are NaN"""
        flow = integrate_ensemble(make_field("cubic", 2, 1.0), plane, [[1.0, 0.0]], tight, output_times=[0.0, 0.75])
        assert np.all(np.isnan(flow.positions_at(0.75)))
        assert not flow.alive(0.75)[0]


class TestBlowupClassification:
    """Proper against oscillating blow-up"""

    def test_count_excursions(self):
        """Test excursions need a dip below the low level in between"""
        assert count_excursions([0, 10, 5, 12, 0.5, 11], 8, 1) == 2
        assert count_excursions([0, 10, 0.5, 10, 0.2, 10], 8, 1) == 3

    def test_cubic_is_proper(self, plane, tight):
        """Test monotone radial blow-up is proper"""
        trajectory = integrate(make_field("cubic", 2, 1.0), plane, [1.0, 0.0], tight)
        assert classify_blowup(trajectory, plane) == "proper"

    def test_no_blowup(self, plane, tight):
        """Test a trajectory reaching the horizon"""
        trajectory = integrate(make_field("rotation", 2, 1.0), plane, [1.0, 0.0], tight)
        assert classify_blowup(trajectory, plane) == "none"

    def test_oscillating_profile(self, plane):
        """Test a potential trace with repeated excursions"""
        values = np.array([1.0, 50.0, 0.5, 500.0, 0.5, 5000.0])
        trajectory = SimpleNamespace(
            potentials=values, times=np.linspace(0.0, 1.0, 6), positions=np.zeros((6, 2)),
            blowup_threshold=40.0, termination=UNDERFLOW,
        )
        assert classify_blowup(trajectory, plane) == "oscillating"

    def test_underflow_at_bounded_potential(self, plane):
        """Test a stalled trajectory that never reaches the threshold is not a blow-up"""
        trajectory = SimpleNamespace(
            potentials=np.array([1.0, 2.0, 3.0, 2.5, 3.0]), times=np.linspace(0.0, 0.5, 5),
            positions=np.zeros((5, 2)), blowup_threshold=1e8, termination=UNDERFLOW,
        )
        assert classify_blowup(trajectory, plane) == "none"

    def test_underflow_past_threshold(self, plane):
        """Test a monotone trace that reached the threshold before the step underflowed"""
        trajectory = SimpleNamespace(
            potentials=np.array([1.0, 1e2, 1e4, 1e6, 1e8]), times=np.linspace(0.0, 0.5, 5),
            positions=np.zeros((5, 2)), blowup_threshold=1e8, termination=UNDERFLOW,
        )
        assert classify_blowup(trajectory, plane) == "proper"

    def test_excursions_below_threshold_seen_by_default(self, plane):
        """Test returns that peak one growth factor below the stopping level count as oscillation"""
        trajectory = SimpleNamespace(
            potentials=np.array([1.0, 2e5, 0.5, 3e5, 0.5, 1e6]), times=np.linspace(0.0, 1.0, 6),
            positions=np.zeros((6, 2)), blowup_threshold=1e6, termination=BLOWUP,
        )
        assert classify_blowup(trajectory, plane) == "oscillating"

    def test_window_out_of_range(self, plane, tight):
        """Test a window longer than the trajectory"""
        trajectory = integrate(make_field("cubic", 2, 1.0), plane, [1.0, 0.0], tight)
        with pytest.raises(ConfigurationError):
            classify_blowup(trajectory, plane, window=len(trajectory.times) + 1)
