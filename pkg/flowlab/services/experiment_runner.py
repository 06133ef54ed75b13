"""
Config-driven experiment runner

A run parses and validates the whole config first, builds the field,
domain, integrator parameters and ensemble, dispatches on the experiment
kind, and only then writes its artifacts. Nothing is written when parsing
fails.
"""
import hashlib
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from django.conf import settings

from .. import __version__
from ..exceptions import ConfigurationError, ExperimentPhaseError, FlowLabError, PreconditionError
from ..forms import TABLE_FORMS
from . import artifact_service, diagnostics, run_log_service
from .counterexample import CounterexampleParams, build_field as build_counterexample_field, geometry_dump
from .domain import ExhaustionDomain, parse_region
from .integrator import IntegratorParams, integrate_ensemble
from .transport import (
    MeasureDescriptor, ParticleEnsemble, TestFunction, log_moment_functionals, sample_ensemble,
)
from .vector_field import combine, make_field

logger = logging.getLogger(__name__)

ANALYTIC_TABLES = ("experiment", "field", "domain", "ensemble")
COUNTEREXAMPLE_TABLES = ("experiment", "counterexample")
DEFAULT_EPSILONS = (0.2, 0.1, 0.05, 0.025)
FLOW_CHECKS = ("jacobian", "continuity", "lyapunov", "phi-delta")


# Parsing ================================================================================

@dataclass
class ExperimentConfig:
    """Validated experiment config; one cleaned dict per TOML table"""
    tables: dict
    digest: str
    source: str = ""

    @property
    def name(self):
        return self.tables["experiment"]["name"]

    @property
    def kind(self):
        return self.tables["experiment"]["kind"]

    @property
    def seed(self):
        return self.tables["experiment"].get("seed", self.table("ensemble").get("seed", 0))

    def table(self, name):
        return self.tables.get(name) or {}

    @property
    def diagnostics(self):
        return self.table("diagnostics")


def load_config(path):
    """
    Read a TOML experiment config

    Raises:
        ConfigurationError: If the file is unreadable or not valid TOML; the
            message carries tomllib's line and column
    """
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            return tomllib.load(handle)
    except FileNotFoundError:
        logger.error(f"Config file {path} not found")
        raise ConfigurationError(f"Config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        logger.error(f"Config file {path} is not valid TOML: {exc}")
        raise ConfigurationError(f"{path}: {exc}") from exc


def config_digest(raw):
    """sha256 of the canonical JSON form of a raw config"""
    text = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def parse_config(raw, source="", seed=None):
    """
    Validate every table of a raw config

    Args:
        raw: dict as read from TOML
        source: Where the config came from (for messages)
        seed: Optional seed override; it is written into [experiment] before hashing

    Returns:
        ExperimentConfig

    Raises:
        ConfigurationError: On unknown tables, unknown keys or invalid values
    """
    unknown = sorted(set(raw) - set(TABLE_FORMS))
    if unknown:
        raise ConfigurationError(f"{source}: unknown table(s) {', '.join(unknown)}")
    raw = {name: dict(table) for name, table in raw.items()}
    if "experiment" not in raw:
        raise ConfigurationError(f"{source}: missing [experiment] table")
    if seed is not None:
        raw["experiment"]["seed"] = int(seed)

    tables = {}
    for name, table in raw.items():
        if not isinstance(table, dict):
            raise ConfigurationError(f"{source}: [{name}] must be a table")
        try:
            tables[name] = TABLE_FORMS[name](data=table).cleaned_or_raise()
        except ConfigurationError as exc:
            raise ConfigurationError(f"{source}: {exc}") from exc

    required = COUNTEREXAMPLE_TABLES if tables["experiment"]["kind"] == "counterexample" else ANALYTIC_TABLES
    missing = [name for name in required if name not in tables]
    if missing:
        raise ConfigurationError(f"{source}: kind {tables['experiment']['kind']!r} needs table(s) {', '.join(missing)}")
    return ExperimentConfig(tables=tables, digest=config_digest(raw), source=str(source))


# Building ===============================================================================

def build_field_spec(config):
    spec = config.table("field")
    dimension = spec["dimension"]
    support = parse_region(spec["support"], dimension) if spec.get("support") else None
    base = make_field(spec["family"], dimension, spec["time_horizon"], support=support, **spec.get("params", {}))
    extras = [
        make_field(item["family"], dimension, spec["time_horizon"], **{
            **item.get("params", {}),
            **{k: v for k, v in item.items() if k not in ("family", "params")},
        })
        for item in spec.get("plus", [])
    ]
    return combine(base, *extras) if extras else base


def build_domain(config, dimension):
    spec = config.table("domain")
    omega = parse_region(spec["omega"], dimension)
    levels = [parse_region(text, dimension) for text in spec["levels"]] if spec.get("levels") else None
    return ExhaustionDomain.build(omega, levels, spec.get("exhaustion_count", 12))


def build_integrator_params(config, horizon):
    values = dict(config.table("integrator"))
    values.setdefault("horizon", horizon)
    values.setdefault("blowup_potential_threshold", getattr(settings, "FLOWLAB_BLOWUP_THRESHOLD", 1e6))
    return IntegratorParams(**values).validate()


def build_ensemble(config, dimension):
    spec = config.table("ensemble")
    region = parse_region(spec["region"], dimension)
    if spec.get("points"):
        points = np.asarray(spec["points"], dtype=float)
        if points.shape[1] != dimension:
            raise ConfigurationError(f"Ensemble points must have dimension {dimension}")
        mass = spec.get("total_mass", float(points.shape[0]))
        descriptor = MeasureDescriptor("atomic", region, mass, np.inf)
        return ParticleEnsemble(points, np.full(points.shape[0], mass / points.shape[0]), descriptor)
    return sample_ensemble(region, spec["count"], spec.get("sampler", "sobol"), config.seed,
                           total_mass=spec.get("total_mass"))


@dataclass
class RunContext:
    """Everything a kind handler needs, plus the artifacts it wants written"""
    config: ExperimentConfig
    threads: int
    trajectories: bool
    field_spec: object = None
    domain: Optional[ExhaustionDomain] = None
    params: Optional[IntegratorParams] = None
    ensemble: Optional[ParticleEnsemble] = None
    pending: list = field(default_factory=list)

    @property
    def diag(self):
        return self.config.diagnostics

    def emit(self, writer, *args):
        self.pending.append((writer, args))


@contextmanager
def phase(name):
    """Tag numerical failures with the experiment phase they happened in"""
    try:
        yield
    except ExperimentPhaseError:
        raise
    except (FlowLabError, ArithmeticError, ValueError) as exc:
        logger.error(f"Experiment failed in phase {name}: {exc}")
        raise ExperimentPhaseError(name, exc) from exc


# Kind handlers ==========================================================================

def _output_times(ctx):
    times = ctx.diag.get("output_times")
    if times:
        return times
    return np.linspace(0.0, ctx.params.horizon, ctx.diag.get("time_samples", 11)).tolist()


def run_flow(ctx):
    flow = integrate_ensemble(ctx.field_spec, ctx.domain, ctx.ensemble.points, ctx.params,
                              output_times=_output_times(ctx), threads=ctx.threads,
                              record=ctx.trajectories, track_jacobian=True)
    functionals = log_moment_functionals(ctx.ensemble, flow, ctx.field_spec)
    ctx.emit(artifact_service.write_functionals, functionals)
    if ctx.trajectories:
        ctx.emit(artifact_service.write_trajectories, flow.trajectories)

    entries = [diagnostics.CheckEntry(
        check="flow",
        verdict=diagnostics.PASS,
        metrics={"terminations": flow.census(), "growth_integral": functionals.growth_integral,
                 "log_moment_final": float(functionals.log_moment[-1]),
                 "mean_path_length": float(np.mean(flow.path_length))},
        counts={"samples": ctx.ensemble.count},
    )]
    diag = ctx.diag
    for name in diag.get("checks") or []:
        if name not in FLOW_CHECKS:
            raise ConfigurationError(f"Unknown flow check {name!r}, expected one of {FLOW_CHECKS}")
        if name == "jacobian":
            entry, _ = diagnostics.check_jacobian(
                ctx.field_spec, ctx.domain, ctx.ensemble.points, ctx.params,
                expected_log=diag.get("expected_log_jacobian"), tolerance=diag.get("tolerance", 1e-5),
                threads=ctx.threads,
            )
        elif name == "continuity":
            test = TestFunction(tuple(diag.get("test_center") or [0.0] * ctx.field_spec.dimension),
                                diag.get("test_radius", 2.0))
            entry = diagnostics.check_continuity(
                ctx.field_spec, ctx.domain, ctx.ensemble, test, diag.get("t", 0.5 * ctx.params.horizon),
                diag.get("dt_fd", 1e-3), ctx.params, tolerance=diag.get("tolerance", 1e-4),
                order_band=tuple(diag.get("order_band") or (0.4, 0.6)),
                scheme=diag.get("fd_scheme") or "centered", threads=ctx.threads,
            )
        elif name == "lyapunov":
            entry = diagnostics.check_lyapunov(ctx.field_spec, flow, diag.get("max_constant", 100.0))
        else:
            entry = diagnostics.check_tolerance_functional(
                ctx.field_spec, ctx.domain, ctx.ensemble.points, ctx.ensemble.weights, ctx.params,
                delta=diag.get("delta", 1e-3), tol_factor=diag.get("tol_factor", 1e-4), threads=ctx.threads,
            )
        entries.append(entry)
    return entries


def run_compression(ctx):
    diag = ctx.diag
    level = diag.get("level")
    region = parse_region(diag["region"], ctx.field_spec.dimension) if diag.get("region") else None
    entry, report = diagnostics.check_compression(
        ctx.field_spec, ctx.domain, ctx.ensemble, ctx.params,
        times=diag.get("times") or [ctx.params.horizon], cells=diag.get("cells", 20), level=level,
        region=region, stat_tol=diag.get("stat_tol", 0.1), attain_tolerance=diag.get("attain_tolerance"),
        threads=ctx.threads,
    )
    ctx.emit(artifact_service.write_densities, report.estimates)
    return [entry]


def run_semigroup(ctx):
    diag = ctx.diag
    t = diag.get("t", ctx.params.horizon)
    return [diagnostics.check_semigroup(
        ctx.field_spec, ctx.domain, ctx.ensemble.points, diag.get("s", 0.5 * t), t, ctx.params,
        tolerance=diag.get("tolerance", 1e-6), tmax_tolerance=diag.get("tmax_tolerance"), threads=ctx.threads,
    )]


def run_stability(ctx):
    diag = ctx.diag
    dimension = ctx.field_spec.dimension
    if not diag.get("region"):
        raise ConfigurationError("Stability experiments need [diagnostics].region (the set A)")
    region = parse_region(diag["region"], dimension)
    clip = parse_region(diag["clip_region"], dimension) if diag.get("clip_region") else None
    entry = diagnostics.check_stability(
        ctx.field_spec, ctx.domain, region, diag.get("epsilons") or list(DEFAULT_EPSILONS),
        ctx.ensemble.points, ctx.ensemble.weights, diag.get("t", ctx.params.horizon), ctx.params,
        quadrature_points=diag.get("quadrature_points", 6), clip_region=clip,
        monotone_slack=diag.get("monotone_slack", 0.1), final_tolerance=diag.get("final_tolerance", 1e-2),
        threads=ctx.threads,
    )
    return [entry, diagnostics.hitting_entry_from_stability(entry)]


def run_blowup_census(ctx):
    diag = ctx.diag
    try:
        entry = diagnostics.check_proper_blowup(
            ctx.field_spec, ctx.domain, ctx.ensemble.points, ctx.params, window=diag.get("window"),
            endpoint_tolerance=diag.get("endpoint_tolerance", 1e-3), threads=ctx.threads,
        )
        return [entry]
    except PreconditionError as exc:
        refused = diagnostics.precondition_entry("proper-blowup", exc)
    census = diagnostics.check_blowup_census(
        ctx.field_spec, ctx.domain, ctx.ensemble.points, ctx.params,
        high=diag.get("high"), low=diag.get("low", 1.0), threads=ctx.threads,
    )
    return [refused, census]


def run_counterexample(ctx):
    spec = ctx.config.table("counterexample")
    keys = ("dimension", "p", "k_max", "time_horizon")
    values = {key: spec[key] for key in keys if key in spec}
    if spec.get("radii"):
        values["radii"] = tuple(spec["radii"])
    params = CounterexampleParams(**values)
    integrator_params = None
    if ctx.config.table("integrator"):
        integrator_params = build_integrator_params(ctx.config, params.time_horizon)

    oscillation = diagnostics.check_oscillation(params, spec.get("samples", 100), integrator_params,
                                                seed=ctx.config.seed, threads=ctx.threads)
    sobolev = diagnostics.check_sobolev(params, spec.get("sobolev_radius", 2.0), spec.get("cauchy_tol", 1e-6))
    try:
        diagnostics.require_global_bound(build_counterexample_field(params))
        refused = diagnostics.CheckEntry("proper-blowup", diagnostics.FAIL,
                                         {"reason": "counterexample field declares a global divergence bound"})
    except PreconditionError as exc:
        refused = diagnostics.precondition_entry("proper-blowup", exc, expected=diagnostics.PRECONDITION_FAILED)

    ctx.emit(artifact_service.write_json, {"geometry": geometry_dump(params)}, "geometry.json")
    ctx.emit(artifact_service.write_table, sobolev.metrics["rows"], "sobolev.csv")
    return [oscillation, sobolev, refused]


def run_crossing_time(ctx):
    diag = ctx.diag
    if "radius" not in diag:
        raise ConfigurationError("Crossing-time experiments need [diagnostics].radius")
    flow = integrate_ensemble(ctx.field_spec, ctx.domain, ctx.ensemble.points, ctx.params,
                              threads=ctx.threads, record=True)
    entry, analysis = diagnostics.check_crossing_time(
        ctx.field_spec, flow.trajectories, diag["radius"], mode=diag.get("mode", "sampled"),
        angular_samples=diag.get("angular_samples"), tolerance=diag.get("tolerance", 0.02),
    )
    ctx.emit(artifact_service.write_table,
             [{"entry": a, "exit": b, "duration": tau, "ratio": tau * analysis.f_integral}
              for a, b, tau in analysis.crossings], "crossings.csv")
    ctx.emit(artifact_service.write_table,
             [{"r": r, "f": f} for r, f in zip(analysis.f_radii.tolist(), analysis.f_values.tolist())],
             "radial_profile.csv")
    if ctx.trajectories:
        ctx.emit(artifact_service.write_trajectories, flow.trajectories)
    return [entry]


def run_no_blowup(ctx):
    diag = ctx.diag
    dimension = ctx.field_spec.dimension
    split = parse_region(diag["split_region"], dimension) if diag.get("split_region") else None
    entry, flow, functionals = diagnostics.check_no_blowup(
        ctx.field_spec, ctx.domain, ctx.ensemble, ctx.params, time_samples=diag.get("time_samples", 101),
        tol_frac=diag.get("tol_frac"), split_region=split, cap=diag.get("cap", 1.0), threads=ctx.threads,
    )
    ctx.emit(artifact_service.write_functionals, functionals)
    lyapunov = diagnostics.check_lyapunov(ctx.field_spec, flow, diag.get("max_constant", 100.0))
    return [entry, lyapunov]


KIND_HANDLERS = {
    "flow": run_flow,
    "compression": run_compression,
    "semigroup": run_semigroup,
    "stability": run_stability,
    "blowup-census": run_blowup_census,
    "counterexample": run_counterexample,
    "crossing-time": run_crossing_time,
    "no-blowup": run_no_blowup,
}


# Orchestration ==========================================================================

@dataclass
class ExperimentOutcome:
    config: ExperimentConfig
    report: diagnostics.DiagnosticsReport
    output_dir: Path
    artifacts: list

    @property
    def passed(self):
        return self.report.passed


def setup_context(config, threads, trajectories):
    ctx = RunContext(config=config, threads=threads, trajectories=trajectories)
    if config.kind == "counterexample":
        return ctx
    ctx.field_spec = build_field_spec(config)
    dimension = ctx.field_spec.dimension
    ctx.domain = build_domain(config, dimension)
    ctx.params = build_integrator_params(config, ctx.field_spec.time_horizon)
    ctx.ensemble = build_ensemble(config, dimension)
    return ctx


def run_experiment(config, output_root=None, threads=None, trajectories=None):
    """
    Run a parsed experiment and write its artifacts

    Args:
        config: ExperimentConfig
        output_root: Artifact root (default [experiment].output, then FLOWLAB_OUTPUT_ROOT)
        threads: Worker threads (default FLOWLAB_DEFAULT_THREADS)
        trajectories: Export trajectories (default [experiment].trajectories)

    Returns:
        ExperimentOutcome

    Raises:
        ExperimentPhaseError: If a numerical error occurs; tagged with the phase
    """
    threads = threads or getattr(settings, "FLOWLAB_DEFAULT_THREADS", 1)
    if trajectories is None:
        trajectories = config.table("experiment").get("trajectories", False)
    output_root = Path(output_root or config.table("experiment").get("output")
                       or getattr(settings, "FLOWLAB_OUTPUT_ROOT", "runs"))
    logger.info(f"Starting experiment {config.name} ({config.kind}), digest {config.digest[:12]}, "
                f"seed {config.seed}, {threads} threads")

    run = run_log_service.start_run(config.name, config.kind, config.digest, config.seed, threads,
                                    __version__, config.source, output_root)
    try:
        with phase("setup"):
            ctx = setup_context(config, threads, trajectories)
        with phase(config.kind):
            entries = KIND_HANDLERS[config.kind](ctx)

        report = diagnostics.DiagnosticsReport(config.name, config.digest, __version__)
        expect = config.diagnostics.get("expect", {})
        for entry in entries:
            entry.expected = expect.get(entry.check, entry.expected)
            report.add(entry)

        with phase("write"):
            directory = artifact_service.output_directory(output_root, config.name, config.digest)
            artifacts = [artifact_service.write_report(report, directory)]
            for writer, args in ctx.pending:
                written = writer(*_with_target(writer, args, directory), config.digest)
                artifacts.extend(written if isinstance(written, list) else [written])
    except Exception as exc:
        run_log_service.finish_run(run, False, error=exc)
        raise

    run_log_service.record_checks(run, report)
    run_log_service.finish_run(run, report.passed)
    logger.info(f"Experiment {config.name} {'passed' if report.passed else 'failed'}; artifacts in {directory}")
    return ExperimentOutcome(config, report, directory, artifacts)


def _with_target(writer, args, directory):
    """Writers taking a file name get directory / name; the rest get the directory"""
    if writer is artifact_service.write_json:
        data, name = args
        return data, directory / name
    if writer is artifact_service.write_table:
        rows, name = args
        return rows, directory, name
    return (*args, directory)


def run(path, output_root=None, threads=None, seed=None, trajectories=None):
    """Load, validate and run a config file"""
    config = parse_config(load_config(path), source=str(path), seed=seed)
    return run_experiment(config, output_root=output_root, threads=threads, trajectories=trajectories)


# Presets ================================================================================

@dataclass
class PresetInfo:
    name: str
    kind: str
    anchor: str
    runtime: str
    path: Path


def list_presets(preset_dir=None):
    """
    Shipped presets, sorted by file name

    Raises:
        ConfigurationError: If the preset directory is missing or holds no presets
    """
    preset_dir = Path(preset_dir or getattr(settings, "FLOWLAB_PRESET_DIR", "presets"))
    paths = sorted(preset_dir.glob("*.toml")) if preset_dir.is_dir() else []
    if not paths:
        logger.error(f"No presets found in {preset_dir}")
        raise ConfigurationError(f"No experiment presets found in {preset_dir}; the installation is incomplete")
    presets = []
    for path in paths:
        experiment = load_config(path).get("experiment", {})
        presets.append(PresetInfo(
            name=experiment.get("name", path.stem),
            kind=experiment.get("kind", "?"),
            anchor=experiment.get("anchor", ""),
            runtime=experiment.get("runtime", ""),
            path=path,
        ))
    return presets
