"""
Tests for run records and the run log service
"""
import pytest
from django.test import override_settings

from flowlab.models import CheckResult, ExperimentRun
from flowlab.services import run_log_service
from flowlab.services.diagnostics import CRITERION_NOT_SATISFIED, FAIL, PASS, CheckEntry, DiagnosticsReport


@pytest.fixture
def run():
    return run_log_service.start_run(
        name="flow-exponential", kind="flow", config_digest="a" * 64,
        seed=0, threads=2, version="0.1.0", config_path="presets/flow-exponential.toml",
    )


@pytest.mark.django_db
class TestExperimentRunModel:
    """Test ExperimentRun"""

    def test_create_run(self, run):
        """Test a new run is open"""
        assert run.status == 'running'
        assert not run.passed
        assert run.duration is None
        assert str(run) == "flow-exponential (flow) - Running"

    def test_lookup_by_digest(self, run):
        """Test runs of the same config share their digest"""
        again = run_log_service.start_run("flow-exponential", "flow", "a" * 64, 0, 4, "0.1.0")
        assert ExperimentRun.objects.filter(config_digest="a" * 64).count() == 2
        assert again.get_kind_display() == "Flow"


@pytest.mark.django_db
class TestRunLogService:
    """Test start_run, record_checks and finish_run"""

    def test_record_checks(self, run):
        """Test every report entry becomes a CheckResult"""
        report = DiagnosticsReport("flow-exponential", "a" * 64, "0.1.0", [
            CheckEntry("jacobian", PASS, {"max_log_jacobian_error": 1e-9}, bound=2.0, tolerance=1e-5,
                       counts={"samples": 16}, wall_clock=0.5, inputs_digest="c" * 64),
            CheckEntry("lyapunov", CRITERION_NOT_SATISFIED, {"constant": float("inf")},
                       expected=CRITERION_NOT_SATISFIED),
        ])
        results = run_log_service.record_checks(run, report)
        assert len(results) == 2
        jacobian = run.checks.get(check_name="jacobian")
        assert jacobian.passed
        assert jacobian.sample_count == 16
        assert jacobian.bound == 2.0
        lyapunov = run.checks.get(check_name="lyapunov")
        assert lyapunov.expected == CRITERION_NOT_SATISFIED
        assert lyapunov.metrics == {"constant": "inf"}
        assert str(lyapunov) == "flow-exponential / lyapunov: criterion-not-satisfied"

    def test_finish_passed(self, run):
        """Test a passing run is closed with a duration"""
        run_log_service.finish_run(run, passed=True)
        run.refresh_from_db()
        assert run.status == 'passed'
        assert run.passed
        assert run.duration >= 0.0

    def test_finish_failed(self, run):
        """Test a run with a failing check"""
        run_log_service.record_checks(run, DiagnosticsReport("x", "a" * 64, "0.1.0", [CheckEntry("c", FAIL, {})]))
        run_log_service.finish_run(run, passed=False)
        assert run.status == 'failed'
        assert CheckResult.objects.filter(run=run, passed=False).count() == 1

    def test_finish_error(self, run):
        """Test an aborted run keeps its error message"""
        run_log_service.finish_run(run, passed=True, error=RuntimeError("boom"))
        run.refresh_from_db()
        assert run.status == 'error'
        assert not run.passed
        assert run.error_message == "boom"

    def test_cascade_delete(self, run):
        """Test check results go with their run"""
        run_log_service.record_checks(run, DiagnosticsReport("x", "a" * 64, "0.1.0", [CheckEntry("c", PASS, {})]))
        run.delete()
        assert CheckResult.objects.count() == 0

    @override_settings(FLOWLAB_RECORD_RUNS=False)
    def test_recording_disabled(self):
        """Test nothing is stored when recording is off"""
        assert run_log_service.start_run("x", "flow", "a" * 64, 0, 1, "0.1.0") is None
        assert run_log_service.record_checks(None, DiagnosticsReport("x", "a", "0.1.0")) == []
        assert run_log_service.finish_run(None, True) is None
        assert ExperimentRun.objects.count() == 0
