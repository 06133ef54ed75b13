"""
Tests for the config table forms
"""
import pytest

from flowlab.exceptions import ConfigurationError
from flowlab.forms import (
    CounterexampleForm, DiagnosticsForm, DomainSpecForm, EnsembleSpecForm, ExperimentConfigForm,
    FieldSpecForm, IntegratorParamsForm,
)


class TestExperimentConfigForm:
    """Test the [experiment] table"""

    def test_valid(self):
        """Test a minimal experiment table"""
        form = ExperimentConfigForm(data={'name': 'flow-exponential', 'kind': 'flow'})
        assert form.is_valid()
        assert form.cleaned_or_raise() == {'name': 'flow-exponential', 'kind': 'flow'}

    def test_unknown_kind(self):
        """Test kinds outside the known list"""
        form = ExperimentConfigForm(data={'name': 'x', 'kind': 'weather'})
        assert not form.is_valid()
        assert 'kind' in form.errors

    def test_name_with_separator(self):
        """Test names are used as directory names"""
        form = ExperimentConfigForm(data={'name': '../evil', 'kind': 'flow'})
        assert not form.is_valid()
        assert 'name' in form.errors

    def test_unknown_key_rejected(self):
        """Test a misspelt key is an error naming table and key"""
        form = ExperimentConfigForm(data={'name': 'x', 'kind': 'flow', 'sede': 3})
        with pytest.raises(ConfigurationError, match=r"\[experiment\].*sede"):
            form.cleaned_or_raise()


class TestFieldSpecForm:
    """Test the [field] table"""

    def test_valid_with_params(self):
        """Test family parameters pass through as a table"""
        form = FieldSpecForm(data={'family': 'linear', 'dimension': 2, 'time_horizon': 1.0,
                                   'params': {'rate': -1.0}})
        cleaned = form.cleaned_or_raise()
        assert cleaned['params'] == {'rate': -1.0}
        assert 'support' not in cleaned

    def test_nonpositive_horizon(self):
        """Test T must be positive"""
        form = FieldSpecForm(data={'family': 'linear', 'dimension': 2, 'time_horizon': 0.0})
        with pytest.raises(ConfigurationError, match=r"\[field\]\.time_horizon"):
            form.cleaned_or_raise()

    def test_unknown_family(self):
        """Test families outside the shipped list"""
        form = FieldSpecForm(data={'family': 'vortex', 'dimension': 2, 'time_horizon': 1.0})
        assert not form.is_valid()

    def test_plus_needs_families(self):
        """Test composite field entries"""
        good = FieldSpecForm(data={'family': 'linear', 'dimension': 2, 'time_horizon': 1.0,
                                   'plus': [{'family': 'rotation', 'params': {'omega': 2.0}}]})
        assert good.is_valid()
        bad = FieldSpecForm(data={'family': 'linear', 'dimension': 2, 'time_horizon': 1.0,
                                  'plus': [{'omega': 2.0}]})
        assert not bad.is_valid()
        assert 'plus' in bad.errors

    def test_bad_support(self):
        """Test region syntax errors"""
        form = FieldSpecForm(data={'family': 'linear', 'dimension': 2, 'time_horizon': 1.0,
                                   'support': 'sphere(2)'})
        assert 'support' in form.errors


class TestDomainAndEnsembleForms:
    """Test the [domain] and [ensemble] tables"""

    def test_rspace(self):
        """Test R^d is accepted without a dimension at form level"""
        form = DomainSpecForm(data={'omega': 'rspace'})
        assert form.cleaned_or_raise() == {'omega': 'rspace'}

    def test_levels_must_be_strings(self):
        """Test levels are region strings"""
        form = DomainSpecForm(data={'omega': 'rspace', 'levels': [1, 2]})
        assert 'levels' in form.errors

    def test_ensemble_points(self):
        """Test explicit points become float lists"""
        form = EnsembleSpecForm(data={'region': 'ball([0, 0], 1)', 'count': 1, 'points': [[1, 0]]})
        assert form.cleaned_or_raise()['points'] == [[1.0, 0.0]]

    def test_ensemble_count_positive(self):
        """Test empty ensembles are rejected"""
        form = EnsembleSpecForm(data={'region': 'ball([0, 0], 1)', 'count': 0})
        assert 'count' in form.errors

    def test_unknown_sampler(self):
        """Test sampler choices"""
        form = EnsembleSpecForm(data={'region': 'ball([0, 0], 1)', 'count': 10, 'sampler': 'grid'})
        assert 'sampler' in form.errors


class TestIntegratorParamsForm:
    """Test the [integrator] table"""

    def test_partial_table(self):
        """Test only given keys are returned"""
        form = IntegratorParamsForm(data={'scheme': 'rk4-fixed', 'dt_max': 0.01})
        assert form.cleaned_or_raise() == {'scheme': 'rk4-fixed', 'dt_max': 0.01}

    def test_step_order(self):
        """Test dt_min <= dt_max"""
        form = IntegratorParamsForm(data={'dt_min': 0.1, 'dt_max': 0.01})
        with pytest.raises(ConfigurationError, match='dt_min must not exceed dt_max'):
            form.cleaned_or_raise()


class TestDiagnosticsForm:
    """Test the [diagnostics] table"""

    def test_epsilons_decreasing(self):
        """Test mollification parameters shrink strictly"""
        assert DiagnosticsForm(data={'epsilons': [0.2, 0.1, 0.05]}).is_valid()
        form = DiagnosticsForm(data={'epsilons': [0.1, 0.2]})
        assert 'epsilons' in form.errors

    def test_restart_before_comparison(self):
        """Test s < t"""
        form = DiagnosticsForm(data={'s': 0.5, 't': 0.3})
        assert not form.is_valid()

    def test_order_band(self):
        """Test the band is an increasing pair"""
        assert DiagnosticsForm(data={'order_band': [0.4, 0.6]}).is_valid()
        assert 'order_band' in DiagnosticsForm(data={'order_band': [0.6, 0.4]}).errors
        assert 'order_band' in DiagnosticsForm(data={'order_band': [0.4]}).errors

    def test_expect_map(self):
        """Test expected verdicts are keyed by check"""
        form = DiagnosticsForm(data={'expect': {'no-blowup': 'criterion-not-satisfied'}})
        assert form.cleaned_or_raise()['expect'] == {'no-blowup': 'criterion-not-satisfied'}
        assert 'expect' in DiagnosticsForm(data={'expect': ['no-blowup']}).errors

    def test_unknown_mode(self):
        """Test crossing profile modes"""
        assert 'mode' in DiagnosticsForm(data={'mode': 'exact'}).errors


class TestCounterexampleForm:
    """Test the [counterexample] table"""

    def test_valid(self):
        """Test sizing keys"""
        form = CounterexampleForm(data={'dimension': 3, 'p': 1.5, 'k_max': 8, 'radii': [1e-3] * 8})
        assert form.cleaned_or_raise()['radii'] == [1e-3] * 8

    def test_planar_rejected(self):
        """Test the construction needs d >= 3"""
        assert 'dimension' in CounterexampleForm(data={'dimension': 2}).errors
