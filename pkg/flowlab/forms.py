"""
Strict schema for experiment configs

Each TOML table is validated by one form. Keys a form does not declare are
rejected, so a misspelt parameter never silently falls back to a default.
"""
import math

from django import forms
from django.core.exceptions import ValidationError

from .exceptions import ConfigurationError
from .models import ExperimentRun
from .services.domain import SAMPLERS, parse_region
from .services.integrator import SCHEMES
from .services.transport import FD_SCHEMES
from .services.vector_field import FIELD_FAMILIES

RUNTIME_CLASSES = [('fast', 'Fast (< 1 s)'), ('medium', 'Medium (< 1 min)'), ('slow', 'Slow (minutes)')]


class StrictForm(forms.Form):
    """Form over a plain dict that refuses undeclared keys"""
    table = ""

    def clean(self):
        cleaned_data = super().clean()
        unknown = sorted(set(self.data) - set(self.fields))
        if unknown:
            raise ValidationError(f"Unknown key(s) in [{self.table}]: {', '.join(unknown)}")
        return cleaned_data

    def cleaned_or_raise(self):
        """
        Returns:
            dict: Cleaned values with undeclared optional keys dropped

        Raises:
            ConfigurationError: With the table and key of every error
        """
        if not self.is_valid():
            messages = []
            for key, errors in self.errors.items():
                where = f"[{self.table}]" if key == "__all__" else f"[{self.table}].{key}"
                messages.extend(f"{where}: {error}" for error in errors)
            raise ConfigurationError("; ".join(messages))
        return {key: value for key, value in self.cleaned_data.items() if key in self.data}


def _float_list(value, name, length=None):
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, (int, float)) for v in value):
        raise ValidationError(f"{name} must be a list of numbers")
    if length is not None and len(value) != length:
        raise ValidationError(f"{name} must have {length} entries")
    return [float(v) for v in value]


def _region_text(value, name):
    """Syntax check only; the ambient dimension is checked when the region is built"""
    value = str(value).strip()
    dimensions = range(1, 11) if "rspace" in value else [None]
    error = None
    for dimension in dimensions:
        try:
            parse_region(value, dimension)
            return value
        except ConfigurationError as exc:
            error = error or exc
    raise ValidationError(f"{name}: {error}")


class ExperimentConfigForm(StrictForm):
    """[experiment] table"""
    table = "experiment"

    name = forms.CharField(max_length=200)
    kind = forms.ChoiceField(choices=ExperimentRun.KIND_CHOICES)
    anchor = forms.CharField(required=False, max_length=300)
    runtime = forms.ChoiceField(choices=RUNTIME_CLASSES, required=False)
    description = forms.CharField(required=False)
    seed = forms.IntegerField(required=False, min_value=0)
    output = forms.CharField(required=False)
    trajectories = forms.BooleanField(required=False)

    def clean_name(self):
        """Validate experiment name"""
        name = self.cleaned_data.get('name', '').strip()
        if not name:
            raise ValidationError('Experiment name is required')
        if any(sep in name for sep in ('/', '\\')):
            raise ValidationError('Experiment name must not contain path separators')
        return name


class FieldSpecForm(StrictForm):
    """[field] table"""
    table = "field"

    family = forms.ChoiceField(choices=[(name, name) for name in sorted(FIELD_FAMILIES)])
    dimension = forms.IntegerField(min_value=1, max_value=10)
    time_horizon = forms.FloatField()
    support = forms.CharField(required=False)
    params = forms.JSONField(required=False)
    plus = forms.JSONField(required=False)

    def clean_time_horizon(self):
        horizon = self.cleaned_data.get('time_horizon')
        if horizon is None or not horizon > 0 or not math.isfinite(horizon):
            raise ValidationError('time_horizon must be a positive finite number')
        return horizon

    def clean_support(self):
        support = self.cleaned_data.get('support')
        return _region_text(support, 'support') if support else None

    def clean_params(self):
        params = self.cleaned_data.get('params') or {}
        if not isinstance(params, dict):
            raise ValidationError('params must be a table')
        return params

    def clean_plus(self):
        """Further families summed onto the main one"""
        extra = self.cleaned_data.get('plus') or []
        if not isinstance(extra, list) or not all(isinstance(item, dict) and 'family' in item for item in extra):
            raise ValidationError('plus must be a list of tables with a family key')
        for item in extra:
            if item['family'] not in FIELD_FAMILIES:
                raise ValidationError(f"Unknown field family {item['family']!r} in plus")
        return extra


class DomainSpecForm(StrictForm):
    """[domain] table"""
    table = "domain"

    omega = forms.CharField()
    levels = forms.JSONField(required=False)
    exhaustion_count = forms.IntegerField(required=False, min_value=1, max_value=64)

    def clean_omega(self):
        return _region_text(self.cleaned_data.get('omega', ''), 'omega')

    def clean_levels(self):
        levels = self.cleaned_data.get('levels')
        if levels is None:
            return None
        if not isinstance(levels, list) or not all(isinstance(level, str) for level in levels):
            raise ValidationError('levels must be a list of region strings')
        return [_region_text(level, 'levels') for level in levels]


class IntegratorParamsForm(StrictForm):
    """[integrator] table"""
    table = "integrator"

    scheme = forms.ChoiceField(choices=[(s, s) for s in SCHEMES], required=False)
    dt_init = forms.FloatField(required=False, min_value=0.0)
    dt_min = forms.FloatField(required=False, min_value=0.0)
    dt_max = forms.FloatField(required=False, min_value=0.0)
    rel_tol = forms.FloatField(required=False, min_value=0.0)
    abs_tol = forms.FloatField(required=False, min_value=0.0)
    speed_cap = forms.FloatField(required=False, min_value=0.0)
    horizon = forms.FloatField(required=False, min_value=0.0)
    blowup_potential_threshold = forms.FloatField(required=False, min_value=1.0)
    max_steps = forms.IntegerField(required=False, min_value=1)

    def clean(self):
        cleaned_data = super().clean()
        dt_min = cleaned_data.get('dt_min')
        dt_max = cleaned_data.get('dt_max')
        if dt_min is not None and dt_max is not None and dt_min > dt_max:
            raise ValidationError('dt_min must not exceed dt_max')
        return cleaned_data


class EnsembleSpecForm(StrictForm):
    """[ensemble] table"""
    table = "ensemble"

    region = forms.CharField()
    count = forms.IntegerField(min_value=1, max_value=10_000_000)
    sampler = forms.ChoiceField(choices=[(s, s) for s in SAMPLERS], required=False)
    seed = forms.IntegerField(required=False, min_value=0)
    total_mass = forms.FloatField(required=False, min_value=0.0)
    points = forms.JSONField(required=False)

    def clean_region(self):
        return _region_text(self.cleaned_data.get('region', ''), 'region')

    def clean_points(self):
        """Explicit initial points replace the sampled ones"""
        points = self.cleaned_data.get('points')
        if points is None:
            return None
        if not isinstance(points, list) or not points:
            raise ValidationError('points must be a non-empty list of coordinate lists')
        return [_float_list(point, 'points entry') for point in points]


class DiagnosticsForm(StrictForm):
    """[diagnostics] table; which keys matter depends on the experiment kind"""
    table = "diagnostics"

    checks = forms.JSONField(required=False)
    expect = forms.JSONField(required=False)
    output_times = forms.JSONField(required=False)
    time_samples = forms.IntegerField(required=False, min_value=2)
    # semigroup
    s = forms.FloatField(required=False, min_value=0.0)
    t = forms.FloatField(required=False, min_value=0.0)
    tolerance = forms.FloatField(required=False, min_value=0.0)
    tmax_tolerance = forms.FloatField(required=False, min_value=0.0)
    # compression
    times = forms.JSONField(required=False)
    cells = forms.IntegerField(required=False, min_value=1)
    level = forms.IntegerField(required=False, min_value=0)
    stat_tol = forms.FloatField(required=False, min_value=0.0)
    attain_tolerance = forms.FloatField(required=False, min_value=0.0)
    # stability
    epsilons = forms.JSONField(required=False)
    region = forms.CharField(required=False)
    clip_region = forms.CharField(required=False)
    quadrature_points = forms.IntegerField(required=False, min_value=2, max_value=16)
    final_tolerance = forms.FloatField(required=False, min_value=0.0)
    monotone_slack = forms.FloatField(required=False, min_value=0.0)
    # blow-up
    window = forms.IntegerField(required=False, min_value=2)
    endpoint_tolerance = forms.FloatField(required=False, min_value=0.0)
    high = forms.FloatField(required=False)
    low = forms.FloatField(required=False)
    # crossing time
    radius = forms.FloatField(required=False, min_value=0.0)
    mode = forms.ChoiceField(choices=[('sampled', 'sampled'), ('analytic', 'analytic')], required=False)
    angular_samples = forms.IntegerField(required=False, min_value=8)
    # no blow-up
    tol_frac = forms.FloatField(required=False, min_value=0.0, max_value=1.0)
    split_region = forms.CharField(required=False)
    cap = forms.FloatField(required=False, min_value=0.0)
    max_constant = forms.FloatField(required=False, min_value=0.0)
    # flow extras
    expected_log_jacobian = forms.FloatField(required=False)
    test_center = forms.JSONField(required=False)
    test_radius = forms.FloatField(required=False, min_value=0.0)
    dt_fd = forms.FloatField(required=False, min_value=0.0)
    fd_scheme = forms.ChoiceField(choices=[(s, s) for s in FD_SCHEMES], required=False)
    order_band = forms.JSONField(required=False)
    delta = forms.FloatField(required=False, min_value=0.0)
    tol_factor = forms.FloatField(required=False, min_value=0.0)

    def clean_checks(self):
        checks = self.cleaned_data.get('checks')
        if checks is None:
            return None
        if not isinstance(checks, list) or not all(isinstance(c, str) for c in checks):
            raise ValidationError('checks must be a list of check names')
        return checks

    def clean_expect(self):
        expect = self.cleaned_data.get('expect') or {}
        if not isinstance(expect, dict) or not all(isinstance(v, str) for v in expect.values()):
            raise ValidationError('expect must map check names to verdicts')
        return expect

    def clean_output_times(self):
        times = self.cleaned_data.get('output_times')
        return None if times is None else _float_list(times, 'output_times')

    def clean_times(self):
        times = self.cleaned_data.get('times')
        return None if times is None else _float_list(times, 'times')

    def clean_epsilons(self):
        epsilons = self.cleaned_data.get('epsilons')
        if epsilons is None:
            return None
        epsilons = _float_list(epsilons, 'epsilons')
        if any(later >= earlier for earlier, later in zip(epsilons, epsilons[1:])):
            raise ValidationError('epsilons must be strictly decreasing')
        if any(eps < 0 for eps in epsilons):
            raise ValidationError('epsilons must be non-negative')
        return epsilons

    def clean_region(self):
        region = self.cleaned_data.get('region')
        return _region_text(region, 'region') if region else None

    def clean_clip_region(self):
        region = self.cleaned_data.get('clip_region')
        return _region_text(region, 'clip_region') if region else None

    def clean_split_region(self):
        region = self.cleaned_data.get('split_region')
        return _region_text(region, 'split_region') if region else None

    def clean_test_center(self):
        center = self.cleaned_data.get('test_center')
        return None if center is None else _float_list(center, 'test_center')

    def clean_order_band(self):
        band = self.cleaned_data.get('order_band')
        if band is None:
            return None
        lo, hi = _float_list(band, 'order_band', length=2)
        if not lo < hi:
            raise ValidationError('order_band must be increasing')
        return [lo, hi]

    def clean(self):
        cleaned_data = super().clean()
        s, t = cleaned_data.get('s'), cleaned_data.get('t')
        if s is not None and t is not None and not s < t:
            raise ValidationError('Need s < t')
        return cleaned_data


class CounterexampleForm(StrictForm):
    """[counterexample] table"""
    table = "counterexample"

    dimension = forms.IntegerField(required=False, min_value=3)
    p = forms.FloatField(required=False)
    k_max = forms.IntegerField(required=False, min_value=3, max_value=20)
    time_horizon = forms.FloatField(required=False, min_value=0.0)
    radii = forms.JSONField(required=False)
    samples = forms.IntegerField(required=False, min_value=1)
    sobolev_radius = forms.FloatField(required=False, min_value=0.0)
    cauchy_tol = forms.FloatField(required=False, min_value=0.0)

    def clean_radii(self):
        radii = self.cleaned_data.get('radii')
        return None if radii is None else _float_list(radii, 'radii')


TABLE_FORMS = {
    'experiment': ExperimentConfigForm,
    'field': FieldSpecForm,
    'domain': DomainSpecForm,
    'integrator': IntegratorParamsForm,
    'ensemble': EnsembleSpecForm,
    'diagnostics': DiagnosticsForm,
    'counterexample': CounterexampleForm,
}
