"""
Run audit trail for experiment invocations
"""
import logging

from django.conf import settings
from django.utils import timezone

from ..models import CheckResult, ExperimentRun

logger = logging.getLogger(__name__)


def recording_enabled():
    return getattr(settings, "FLOWLAB_RECORD_RUNS", True)


def start_run(name, kind, config_digest, seed, threads, version, config_path="", output_dir=""):
    """
    Open a run record in state 'running'

    Args:
        name: Experiment name
        kind: Experiment kind
        config_digest: sha256 of the canonical config
        seed: Effective seed
        threads: Worker threads
        version: Tool version
        config_path: Source file of the config (optional)
        output_dir: Artifact directory (optional)

    Returns:
        ExperimentRun or None when recording is disabled
    """
    if not recording_enabled():
        return None
    return ExperimentRun.objects.create(
        name=name,
        kind=kind,
        config_digest=config_digest,
        seed=seed,
        threads=threads,
        version=version,
        config_path=str(config_path),
        output_dir=str(output_dir),
    )


def record_checks(run, report):
    """
    Store every entry of a DiagnosticsReport as a CheckResult

    Returns:
        list: Created CheckResult instances
    """
    if run is None:
        return []
    results = []
    for entry in report.entries:
        data = entry.to_dict()
        results.append(CheckResult.objects.create(
            run=run,
            check_name=entry.check,
            verdict=entry.verdict,
            expected=entry.expected,
            passed=entry.passed,
            metrics=data["metrics"],
            bound=data["bound"],
            tolerance=data["tolerance"],
            sample_count=int(entry.counts.get("samples", 0)),
            wall_clock=entry.wall_clock,
            inputs_digest=entry.inputs_digest,
        ))
    return results


def finish_run(run, passed, error=None):
    """Close a run record as passed, failed or error"""
    if run is None:
        return None
    if error is not None:
        run.status = 'error'
        run.error_message = str(error)
    else:
        run.status = 'passed' if passed else 'failed'
    run.passed = bool(passed) and error is None
    run.finished_at = timezone.now()
    run.save()
    logger.info(f"Run {run.pk} ({run.name}) finished with status {run.status}")
    return run
