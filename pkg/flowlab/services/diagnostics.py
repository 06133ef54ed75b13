"""
Theorem-level checks on computed flows

Every check returns a CheckEntry with its metrics, bound, tolerance,
verdict and counts; a DiagnosticsReport collects the entries of one run.
"""
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from django.conf import settings
from numpy.polynomial.legendre import leggauss
from scipy import integrate

from ..exceptions import ConfigurationError, PreconditionError
from . import counterexample
from .domain import Ball, ExhaustionDomain, bisect_exit
from .integrator import HORIZON, classify_blowup, integrate_ensemble
from .transport import (
    GridSpec, continuity_residual, divergence_functional_phi_delta, divergence_functional_psi_delta,
    growth_condition_split, log_moment_functionals, measure_compression,
)
from .vector_field import MollifierParams, mollify

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

PASS = "pass"
FAIL = "fail"
DEGENERATE = "degenerate"
PRECONDITION_FAILED = "precondition-failed"
CRITERION_NOT_SATISFIED = "criterion-not-satisfied"
VERDICTS = (PASS, FAIL, DEGENERATE, PRECONDITION_FAILED, CRITERION_NOT_SATISFIED)


def inputs_digest(payload):
    """sha256 of the canonical JSON form of a check's inputs"""
    text = json.dumps(payload, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


@dataclass
class CheckEntry:
    """Outcome of one check"""
    check: str
    verdict: str
    metrics: dict
    bound: Optional[object] = None
    tolerance: Optional[object] = None
    counts: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    inputs_digest: str = ""
    expected: str = PASS

    @property
    def passed(self):
        return self.verdict == PASS

    @property
    def as_expected(self):
        return self.verdict == self.expected

    def to_dict(self, include_timing=True):
        data = {
            "check": self.check,
            "verdict": self.verdict,
            "pass": self.passed,
            "expected": self.expected,
            "inputs_digest": self.inputs_digest,
            "metrics": _jsonable(self.metrics),
            "bound": _jsonable(self.bound),
            "tolerance": _jsonable(self.tolerance),
            "counts": _jsonable(self.counts),
        }
        if include_timing:
            data["wall_clock"] = self.wall_clock
        return data


@dataclass
class DiagnosticsReport:
    """All check entries of one experiment run"""
    experiment: str
    config_digest: str
    version: str
    entries: list = field(default_factory=list)

    def add(self, entry):
        self.entries.append(entry)
        level = logging.INFO if entry.as_expected else logging.WARNING
        logger.log(level, f"Check {entry.check}: {entry.verdict} (expected {entry.expected})")
        return entry

    def entry(self, check):
        for entry in self.entries:
            if entry.check == check:
                return entry
        return None

    @property
    def passed(self):
        return bool(self.entries) and all(entry.as_expected for entry in self.entries)

    def to_dict(self, include_timing=True):
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "experiment": self.experiment,
            "config_digest": self.config_digest,
            "version": self.version,
            "pass": self.passed,
            "checks": [entry.to_dict(include_timing) for entry in self.entries],
        }


class _Stopwatch:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


def _tol_fraction():
    return getattr(settings, "FLOWLAB_TOL_FRACTION", 1e-3)


def _angular_samples():
    return getattr(settings, "FLOWLAB_ANGULAR_SAMPLES", 720)


def _single_level(domain, region):
    return ExhaustionDomain(omega=domain.omega, levels=(region,), potential_fn=domain.potential_fn)


# Semigroup ==============================================================================

def check_semigroup(field_spec, domain, points, s, t, params, tolerance=1e-6, tmax_tolerance=None, threads=1):
    """
    Restart consistency X(t, s, X(s, x)) = X(t, x) and T_s(X(s, x)) = T(x) - s

    Times are absolute, so the restarted maximal time is compared directly
    with the original one.

    Args:
        field_spec: VectorFieldSpec
        domain: ExhaustionDomain
        points: Initial points
        s: Restart time
        t: Comparison time, s < t <= T
        params: IntegratorParams
        tolerance: Allowed positional defect
        tmax_tolerance: Allowed maximal-time defect (default 2 dt_max)
        threads: Worker threads

    Returns:
        CheckEntry
    """
    if not 0.0 <= s < t <= params.horizon:
        raise ConfigurationError(f"Need 0 <= s < t <= T, got s={s}, t={t}")
    tmax_tolerance = 2.0 * params.dt_max if tmax_tolerance is None else tmax_tolerance
    with _Stopwatch() as watch:
        first = integrate_ensemble(field_spec, domain, points, params, output_times=[0.0, s, t], threads=threads)
        restartable = first.alive(s) & np.all(np.isfinite(first.positions_at(s)), axis=1)
        restarted = integrate_ensemble(field_spec, domain, first.positions_at(s)[restartable], params,
                                       output_times=[s, t], s0=s, threads=threads)
        rows = np.flatnonzero(restartable)
        both = first.alive(t)[rows] & restarted.alive(t)
        gaps = np.linalg.norm(first.positions_at(t)[rows][both] - restarted.positions_at(t)[both], axis=1)
        defect = float(gaps.max()) if gaps.size else 0.0

        blown = first.termination[rows] != HORIZON
        tmax_gaps = np.abs(restarted.t_max[blown] - first.t_max[rows][blown])
        tmax_defect = float(tmax_gaps.max()) if tmax_gaps.size else 0.0

    verdict = PASS if defect <= tolerance and tmax_defect <= tmax_tolerance else FAIL
    if not both.any() and not blown.any():
        verdict = DEGENERATE
    return CheckEntry(
        check="semigroup",
        verdict=verdict,
        metrics={
            "positional_defect": defect,
            "tmax_defect": tmax_defect,
            "original_tmax_mean": float(np.mean(first.t_max[rows][blown])) if blown.any() else None,
            "restarted_tmax_mean": float(np.mean(restarted.t_max[blown])) if blown.any() else None,
        },
        bound=0.0,
        tolerance={"position": tolerance, "tmax": tmax_tolerance},
        counts={"samples": int(len(points)), "restarted": int(rows.size),
                "compared": int(both.sum()), "blowups": int(blown.sum())},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "s": s, "t": t, "params": asdict(params),
                                     "points": len(points)}),
    )


# Stability ==============================================================================

def _stopped_paths(flow, times):
    """Positions of the flow stopped at its A-hitting time, shape (K, N, d)"""
    hit = flow.hit_times[:, 0]
    stopped = flow.positions.copy()
    for k, s in enumerate(times):
        late = hit <= s
        stopped[k, late] = flow.hit_points[late, 0]
    return stopped


def _hitting_fractions(reference_hits, approximate_hits, t):
    alive = reference_hits > t
    if not alive.any():
        return 0.0
    return float(np.mean(approximate_hits[alive] <= t))


def check_stability(field_spec, domain, region, epsilons, points, weights, t, params,
                    quadrature_points=6, clip_region=None, time_samples=41, monotone_slack=0.1,
                    final_tolerance=1e-2, threads=1):
    """
    L^1 distance of stopped mollified flows to the reference flow

    For each eps the field is clipped to the inner set of `clip_region`,
    mollified, integrated, and stopped on leaving A = `region`. The metric
    sums w_i min(sup_{s <= t} |X^eps_A(s, x_i) - X(s, x_i)|, 1) over the
    particles with h_A(X(., x_i)) > t. eps = 0 stands for the field itself.

    Returns:
        CheckEntry: with the hitting-semicontinuity fractions alongside
    """
    clip_region = clip_region or region
    level_domain = _single_level(domain, region)
    times = np.linspace(0.0, t, time_samples)
    weights = np.asarray(weights, dtype=float)
    with _Stopwatch() as watch:
        reference = integrate_ensemble(field_spec, level_domain, points, params, output_times=times, threads=threads)
        alive = reference.hit_times[:, 0] > t
        distances, fractions, hits = [], [], []
        for eps in epsilons:
            if eps == 0:
                approx = reference
            else:
                smooth = mollify(field_spec, MollifierParams(eps, quadrature_points), clip_region)
                approx = integrate_ensemble(smooth, level_domain, points, params, output_times=times, threads=threads)
            gaps = np.linalg.norm(_stopped_paths(approx, times) - reference.positions, axis=2)
            sup_gap = np.nan_to_num(gaps, nan=1.0).max(axis=0)
            distances.append(float(np.sum(weights[alive] * np.minimum(sup_gap[alive], 1.0))))
            fractions.append(_hitting_fractions(reference.hit_times[:, 0], approx.hit_times[:, 0], t))
            hits.append(approx.hit_times[:, 0])

    monotone = all(later <= earlier * (1.0 + monotone_slack) + 1e-12
                   for earlier, later in zip(distances, distances[1:]))
    liminf_fraction = _liminf_fraction(reference.hit_times[:, 0], hits[-2:], params.dt_max)
    verdict = PASS if monotone and distances[-1] <= final_tolerance else FAIL
    return CheckEntry(
        check="stability",
        verdict=verdict,
        metrics={
            "epsilons": list(map(float, epsilons)),
            "distances": distances,
            "hitting_fractions": fractions,
            "liminf_fraction": liminf_fraction,
            "monotone": monotone,
        },
        bound=0.0,
        tolerance={"final": final_tolerance, "monotone_slack": monotone_slack},
        counts={"samples": int(len(points)), "alive_reference": int(alive.sum())},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "region": region.describe(),
                                     "epsilons": list(epsilons), "t": t, "params": asdict(params)}),
    )


def _liminf_fraction(reference_hits, finest_hits, dt_tolerance):
    """Fraction of particles with h_A(X) <= min over the finest approximations + dt"""
    if not finest_hits:
        return 1.0
    finest = np.min(np.stack(finest_hits), axis=0)
    ok = (reference_hits <= finest + dt_tolerance) | (np.isinf(reference_hits) & np.isinf(finest))
    return float(np.mean(ok))


def check_hitting_semicontinuity(field_spec, approximations, domain, region, points, t, params,
                                 liminf_min_fraction=0.99, threads=1):
    """
    Fraction of particles alive for X in A at t whose approximate flow already left A

    Args:
        field_spec: Reference VectorFieldSpec
        approximations: Sequence of approximating fields, coarsest first
        domain: ExhaustionDomain
        region: Region A
        points: Initial points
        t: Time
        params: IntegratorParams

    Returns:
        CheckEntry
    """
    level_domain = _single_level(domain, region)
    with _Stopwatch() as watch:
        reference = integrate_ensemble(field_spec, level_domain, points, params, output_times=[0.0, t], threads=threads)
        ref_hits = reference.hit_times[:, 0]
        hits = [integrate_ensemble(f, level_domain, points, params, output_times=[0.0, t], threads=threads).hit_times[:, 0]
                for f in approximations]
    fractions = [_hitting_fractions(ref_hits, h, t) for h in hits]
    decreasing = all(later <= earlier + 1e-12 for earlier, later in zip(fractions, fractions[1:]))
    liminf = _liminf_fraction(ref_hits, hits[-2:], params.dt_max)
    verdict = PASS if decreasing and liminf >= liminf_min_fraction else FAIL
    return CheckEntry(
        check="hitting-semicontinuity",
        verdict=verdict,
        metrics={"fractions": fractions, "liminf_fraction": liminf, "decreasing": decreasing},
        bound=0.0,
        tolerance={"liminf_min_fraction": liminf_min_fraction},
        counts={"samples": int(len(points)), "approximations": len(approximations)},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "region": region.describe(), "t": t,
                                     "approximations": [f.name for f in approximations]}),
    )


def hitting_entry_from_stability(entry, liminf_min_fraction=0.99):
    """
    Hitting-semicontinuity verdict from the fractions a stability run measured

    Fractions may rise by at most one alive particle between consecutive eps.
    """
    fractions = [f for eps, f in zip(entry.metrics["epsilons"], entry.metrics["hitting_fractions"]) if eps > 0]
    slack = 1.0 / max(entry.counts.get("alive_reference", 1), 1)
    decreasing = all(later <= earlier + slack for earlier, later in zip(fractions, fractions[1:]))
    liminf = entry.metrics["liminf_fraction"]
    return CheckEntry(
        check="hitting-semicontinuity",
        verdict=PASS if decreasing and liminf >= liminf_min_fraction else FAIL,
        metrics={"fractions": fractions, "liminf_fraction": liminf, "decreasing": decreasing},
        bound=0.0,
        tolerance={"rise": slack, "liminf_min_fraction": liminf_min_fraction},
        counts=dict(entry.counts),
        inputs_digest=entry.inputs_digest,
    )


# Blow-up ================================================================================

def require_global_bound(field_spec):
    """
    Returns:
        DivergenceBound: The field's bound on all of Omega

    Raises:
        PreconditionError: If there is none
    """
    bound = field_spec.global_bound()
    if bound is None:
        logger.error(f"Field {field_spec.name} has no global divergence bound")
        raise PreconditionError(
            f"Field {field_spec.name} declares no divergence bound on all of Omega; proper blow-up is not guaranteed"
        )
    return bound


def precondition_entry(check, error, expected=PASS):
    """Entry recording that a check refused to run"""
    return CheckEntry(
        check=check,
        verdict=PRECONDITION_FAILED,
        metrics={"reason": str(error)},
        expected=expected,
    )


def check_proper_blowup(field_spec, domain, points, params, window=None, endpoint_tolerance=1e-3, threads=1):
    """
    Census of blow-up classes under a global divergence bound

    Every particle that blows up must do so properly. For bounded Omega the
    last recorded position must lie within `endpoint_tolerance` of the boundary.

    Raises:
        PreconditionError: If the field declares no global divergence bound
    """
    bound = require_global_bound(field_spec)
    with _Stopwatch() as watch:
        flow = integrate_ensemble(field_spec, domain, points, params, threads=threads, record=True)
        census = {"proper": 0, "oscillating": 0, "none": 0}
        endpoint_gaps, path_lengths = [], []
        for trajectory in flow.trajectories:
            if trajectory.termination == HORIZON:
                census["none"] += 1
                continue
            use = None if window is None else min(window, len(trajectory.times))
            census[classify_blowup(trajectory, domain, window=use)] += 1
            path_lengths.append(trajectory.path_length)
            if domain.omega.is_bounded():
                endpoint_gaps.append(float(domain.omega.margin(trajectory.positions[-1])[0]))

    blowups = census["proper"] + census["oscillating"]
    endpoint_ok = not endpoint_gaps or max(endpoint_gaps) <= endpoint_tolerance
    verdict = PASS if census["oscillating"] == 0 and endpoint_ok else FAIL
    return CheckEntry(
        check="proper-blowup",
        verdict=verdict,
        metrics={
            "census": census,
            "compression_bound": bound.compression_bound(),
            "max_path_length": max(path_lengths) if path_lengths else 0.0,
            "path_lengths_finite": bool(np.all(np.isfinite(path_lengths))) if path_lengths else True,
            "max_endpoint_distance": max(endpoint_gaps) if endpoint_gaps else None,
            "mean_blowup_time": float(np.mean(flow.t_max[flow.termination != HORIZON])) if blowups else None,
        },
        bound={"oscillating": 0},
        tolerance={"endpoint": endpoint_tolerance},
        counts={"samples": int(len(points)), "blowups": blowups},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "params": asdict(params), "points": len(points)}),
    )


def check_blowup_census(field_spec, domain, points, params, high=None, low=1.0, threads=1):
    """Classification census without the global-bound precondition"""
    with _Stopwatch() as watch:
        flow = integrate_ensemble(field_spec, domain, points, params, threads=threads, record=True)
        census = {"proper": 0, "oscillating": 0, "none": 0}
        for trajectory in flow.trajectories:
            census[classify_blowup(trajectory, domain, high=high, low=low)] += 1
    return CheckEntry(
        check="blowup-census",
        verdict=PASS,
        metrics={"census": census, "terminations": flow.census()},
        counts={"samples": int(len(points))},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "params": asdict(params), "points": len(points)}),
    )


# Crossing times =========================================================================

@dataclass
class CrossingAnalysis:
    """Annulus crossings B_{R+1} minus B_R against the bound 1 / integral of f"""
    radius: float
    mode: str
    f_radii: np.ndarray
    f_values: np.ndarray
    f_integral: float
    crossings: list
    sigma_traces: list = field(repr=False, default_factory=list)
    tv_bound: Optional[float] = None

    @property
    def ratios(self):
        return [duration * self.f_integral for _, _, duration in self.crossings]

    @property
    def min_ratio(self):
        return min(self.ratios) if self.crossings else None

    @property
    def sigma_monotone(self):
        return all(np.all(np.diff(trace) >= 0.0) for trace in self.sigma_traces)


def radial_sup_profile(field_spec, radii, angular_samples, time_samples=5):
    """Sampled f(r) = sup over the circle of radius r (and sampled times) of |b|"""
    angles = np.linspace(0.0, 2.0 * math.pi, angular_samples, endpoint=False)
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    times = np.linspace(0.0, field_spec.time_horizon, time_samples)
    values = np.zeros(len(radii))
    for i, r in enumerate(radii):
        points = r * ring
        values[i] = max(float(np.linalg.norm(field_spec.velocity(t, points), axis=1).max()) for t in times)
    return values


def tv_control_estimate(field_spec, radius, angular_samples, radial_nodes=32, t=0.0):
    """
    (1 / (2 pi R)) int_{annulus} |b| dx + int_{annulus} |Db| dx on a polar grid

    |Db| is the Frobenius norm of the centered-difference Jacobian.
    """
    nodes, weights = leggauss(radial_nodes)
    radii = radius + 0.5 * (nodes + 1.0)
    radial_weights = 0.5 * weights
    angles = np.linspace(0.0, 2.0 * math.pi, angular_samples, endpoint=False)
    d_theta = 2.0 * math.pi / angular_samples
    step = 1e-5 * (radius + 1.0)
    mass, variation = 0.0, 0.0
    for r, w in zip(radii, radial_weights):
        points = r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        speed = np.linalg.norm(field_spec.velocity(t, points), axis=1)
        jacobian = np.zeros((len(angles), 2, 2))
        for axis in range(2):
            shift = np.zeros(2)
            shift[axis] = step
            jacobian[:, :, axis] = (field_spec.velocity(t, points + shift)
                                    - field_spec.velocity(t, points - shift)) / (2.0 * step)
        frobenius = np.sqrt(np.sum(jacobian ** 2, axis=(1, 2)))
        mass += w * r * d_theta * float(speed.sum())
        variation += w * r * d_theta * float(frobenius.sum())
    return mass / (2.0 * math.pi * radius) + variation


def annulus_crossings(trajectory, radius, dt_min=1e-12):
    """
    (entry, exit, duration) of every crossing from |x| = R out to |x| = R + 1

    The entry is the last outward passage through |x| = R before the
    trajectory reaches R + 1; a return inside B_R cancels it.
    """
    inner, outer = Ball(np.zeros(2), radius), Ball(np.zeros(2), radius + 1.0)
    times, positions, velocities = trajectory.times, trajectory.positions, trajectory.velocities
    radii = np.linalg.norm(positions, axis=1)
    crossings, entry = [], None

    def locate(region, i):
        tau, _ = bisect_exit(times[i - 1:i], times[i:i + 1], positions[i - 1:i], positions[i:i + 1],
                             velocities[i - 1:i], velocities[i:i + 1], region, dt_min)
        return float(tau[0])

    for i in range(1, len(times)):
        if radii[i - 1] < radius <= radii[i]:
            entry = locate(inner, i)
        elif radii[i - 1] >= radius > radii[i]:
            entry = None
        if entry is not None and radii[i - 1] < radius + 1.0 <= radii[i]:
            exit_time = locate(outer, i)
            crossings.append((entry, exit_time, exit_time - entry))
            entry = None
    return crossings


def check_crossing_time(field_spec, trajectories, radius, mode="sampled", angular_samples=None,
                        radial_samples=201, tolerance=0.02):
    """
    Every annulus crossing lasts at least 1 / int_R^{R+1} f(r) dr

    Args:
        field_spec: Planar VectorFieldSpec
        trajectories: Recorded trajectories
        radius: Inner radius R
        mode: 'sampled' (angular sup on a radial grid) or 'analytic' (field.radial_speed)
        angular_samples: Angles per circle (default FLOWLAB_ANGULAR_SAMPLES)
        radial_samples: Radii on [R, R + 1] for the sampled profile
        tolerance: Allowed relative shortfall of tau * int f below 1

    Returns:
        tuple: (CheckEntry, CrossingAnalysis)
    """
    if field_spec.dimension != 2:
        raise ConfigurationError("Crossing-time check needs a planar field")
    angular_samples = angular_samples or _angular_samples()
    with _Stopwatch() as watch:
        radii = np.linspace(radius, radius + 1.0, radial_samples)
        if mode == "analytic":
            if field_spec.radial_speed is None:
                raise ConfigurationError(f"Field {field_spec.name} has no analytic radial speed profile")
            values = np.asarray(field_spec.radial_speed(radii), dtype=float)
            f_integral, _ = integrate.quad(lambda r: float(field_spec.radial_speed(r)), radius, radius + 1.0,
                                           epsabs=0.0, epsrel=1e-10)
        elif mode == "sampled":
            values = radial_sup_profile(field_spec, radii, angular_samples)
            f_integral = float(integrate.trapezoid(values, radii))
        else:
            raise ConfigurationError(f"Unknown crossing profile mode {mode!r}")

        crossings = [c for trajectory in trajectories for c in annulus_crossings(trajectory, radius)]
        traces = [np.maximum.accumulate(np.linalg.norm(tr.positions, axis=1)) for tr in trajectories]
        tv_bound = tv_control_estimate(field_spec, radius, angular_samples)

    analysis = CrossingAnalysis(radius=radius, mode=mode, f_radii=radii, f_values=values,
                                f_integral=float(f_integral), crossings=crossings,
                                sigma_traces=traces, tv_bound=tv_bound)
    if not crossings:
        logger.warning(f"No annulus crossings observed at R={radius}")
        verdict = DEGENERATE
    else:
        verdict = PASS if analysis.min_ratio >= 1.0 - tolerance and analysis.sigma_monotone else FAIL
    entry = CheckEntry(
        check="crossing-time",
        verdict=verdict,
        metrics={
            "f_integral": analysis.f_integral,
            "min_ratio": analysis.min_ratio,
            "max_ratio": max(analysis.ratios) if crossings else None,
            "min_duration": min(c[2] for c in crossings) if crossings else None,
            "tv_bound": tv_bound,
            "tv_margin": tv_bound - analysis.f_integral,
            "tv_control_holds": tv_bound >= analysis.f_integral,
            "sigma_monotone": analysis.sigma_monotone,
        },
        bound=1.0,
        tolerance=tolerance,
        counts={"trajectories": len(trajectories), "crossings": len(crossings), "angles": angular_samples},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "R": radius, "mode": mode,
                                     "trajectories": len(trajectories)}),
    )
    return entry, analysis


# No blow-up =============================================================================

def check_no_blowup(field_spec, domain, ensemble, params, time_samples=101, tol_frac=None,
                    split_region=None, cap=1.0, threads=1):
    """
    Survival of the transported mass when the growth integral is finite

    The criterion holds when at least (1 - tol_frac) of the mass reaches the
    horizon and the growth integral of |b|/(1+|x|) against mu_t is finite.
    Otherwise the verdict is 'criterion-not-satisfied'.

    Returns:
        tuple: (CheckEntry, FlowResult, LogMomentReport)
    """
    tol_frac = _tol_fraction() if tol_frac is None else tol_frac
    times = np.linspace(0.0, params.horizon, time_samples)
    with _Stopwatch() as watch:
        flow = integrate_ensemble(field_spec, domain, ensemble.points, params, output_times=times, threads=threads)
        functionals = log_moment_functionals(ensemble, flow, field_spec)
        survived = float(np.sum(ensemble.weights[flow.termination == HORIZON]) / ensemble.total_mass)
        split = growth_condition_split(field_spec, split_region, cap) if split_region is not None else None

    growth = functionals.growth_integral
    satisfied = survived >= 1.0 - tol_frac and math.isfinite(growth)
    entry = CheckEntry(
        check="no-blowup",
        verdict=PASS if satisfied else CRITERION_NOT_SATISFIED,
        metrics={
            "surviving_mass_fraction": survived,
            "growth_integral": growth,
            "terminations": flow.census(),
            "growth_split": split,
        },
        bound=1.0,
        tolerance=tol_frac,
        counts={"samples": ensemble.count},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "params": asdict(params), "samples": ensemble.count}),
    )
    return entry, flow, functionals


def check_lyapunov(field_spec, flow, max_constant=100.0):
    """
    Smallest C with d/dt Psi(X) <= C (1 + Psi(X)) for Psi(x) = log(1 + |x|^2)

    Evaluated on the flow's alive positions at every output time.
    """
    with _Stopwatch() as watch:
        worst, samples = 0.0, 0
        for k, t in enumerate(flow.times):
            alive = flow.alive(t) & np.all(np.isfinite(flow.positions[k]), axis=1)
            x = flow.positions[k][alive]
            if not x.size:
                continue
            r2 = np.sum(x * x, axis=1)
            rate = 2.0 * np.sum(x * field_spec.velocity(t, x), axis=1) / (1.0 + r2)
            worst = max(worst, float(np.max(rate / (1.0 + np.log1p(r2)))))
            samples += x.shape[0]
    return CheckEntry(
        check="lyapunov",
        verdict=PASS if worst <= max_constant else CRITERION_NOT_SATISFIED,
        metrics={"constant": worst},
        bound=max_constant,
        counts={"samples": samples},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "times": flow.times.tolist()}),
    )


# Transport-level checks =================================================================

def check_compression(field_spec, domain, ensemble, params, times, cells, level=None, region=None,
                      stat_tol=0.1, attain_tolerance=None, threads=1):
    """
    Push-forward compression against e^{L(Omega', b)}

    With `attain_tolerance` the measured constant at the last time must also
    match the bound within that relative tolerance.

    Returns:
        tuple: (CheckEntry, CompressionReport)
    """
    bound = field_spec.bound_for_level(level)
    if bound is None:
        raise PreconditionError(f"Field {field_spec.name} declares no divergence bound for level {level}")
    region = region or (domain.levels[level] if level is not None else ensemble.descriptor.region)
    grid = GridSpec.for_region(region, cells)
    with _Stopwatch() as watch:
        flow = integrate_ensemble(field_spec, domain, ensemble.points, params,
                                  output_times=[0.0] + list(times), threads=threads)
        report = measure_compression(ensemble, flow, bound, times, grid, level, stat_tol)

    verdict = PASS if report.passed else FAIL
    if all(report.degenerate):
        verdict = DEGENERATE
    attained = None
    if attain_tolerance is not None and report.measured:
        attained = abs(report.measured[-1] / report.bound - 1.0)
        if attained > attain_tolerance:
            verdict = FAIL
    entry = CheckEntry(
        check="compression",
        verdict=verdict,
        metrics={
            "times": report.times,
            "measured": report.measured,
            "worst_ratio": report.worst_ratio,
            "attainment_gap": attained,
            "alive_mass": [e.alive_mass for e in report.estimates],
            "grid_mass": [e.grid_mass for e in report.estimates],
            "escaped_mass": [e.escaped_mass for e in report.estimates],
            "degenerate": report.degenerate,
        },
        bound=report.bound,
        tolerance=stat_tol,
        counts={"samples": ensemble.count, "cells": int(np.prod(grid.cells))},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "times": list(times), "cells": cells,
                                     "level": level, "samples": ensemble.count}),
    )
    return entry, report


def check_jacobian(field_spec, domain, points, params, expected_log=None, tolerance=1e-5, threads=1):
    """
    log J(T) from J' = J div b against an expected value, and positivity of J

    Returns:
        tuple: (CheckEntry, FlowResult)
    """
    with _Stopwatch() as watch:
        flow = integrate_ensemble(field_spec, domain, points, params, threads=threads, track_jacobian=True)
        final = flow.log_jacobian[-1]
        alive = flow.alive(params.horizon)
        error = float(np.max(np.abs(final[alive] - expected_log))) if expected_log is not None and alive.any() else None
    positive = bool(np.all(np.exp(final[np.isfinite(final)]) > 0.0))
    verdict = PASS if positive and (error is None or error <= tolerance) else FAIL
    entry = CheckEntry(
        check="jacobian",
        verdict=verdict,
        metrics={"max_log_jacobian_error": error, "mean_log_jacobian": float(np.nanmean(final)), "positive": positive},
        bound=expected_log,
        tolerance=tolerance,
        counts={"samples": int(len(points))},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "params": asdict(params), "points": len(points)}),
    )
    return entry, flow


def check_continuity(field_spec, domain, ensemble, test, t, dt_fd, params, tolerance=1e-4,
                     order_band=(0.4, 0.6), scheme="centered", threads=1):
    """
    Continuity-equation residual and its first-order decay in dt_fd

    The magnitude is measured with `scheme`; the order always with the
    forward difference at dt_fd and dt_fd / 2.
    """
    with _Stopwatch() as watch:
        coarse = continuity_residual(ensemble, field_spec, domain, test, t, dt_fd, params, "forward", threads)
        fine = continuity_residual(ensemble, field_spec, domain, test, t, dt_fd / 2.0, params, "forward", threads)
        measured = coarse if scheme == "forward" else continuity_residual(
            ensemble, field_spec, domain, test, t, dt_fd, params, scheme, threads)
    ratio = fine.residual / coarse.residual if coarse.residual else None
    small = measured.relative <= tolerance
    ordered = ratio is not None and order_band[0] <= ratio <= order_band[1]
    entry = CheckEntry(
        check="continuity",
        verdict=PASS if small and ordered else FAIL,
        metrics={
            "scheme": measured.scheme,
            "residual": measured.residual,
            "relative_residual": measured.relative,
            "flux": measured.rhs,
            "forward_residual": coarse.residual,
            "forward_residual_half_step": fine.residual,
            "halving_ratio": ratio,
            "contaminated": measured.contaminated or coarse.contaminated or fine.contaminated,
        },
        bound=0.0,
        tolerance={"relative": tolerance, "order_band": list(order_band)},
        counts={"samples": ensemble.count},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "t": t, "dt_fd": dt_fd, "scheme": scheme,
                                    "samples": ensemble.count}),
    )
    return entry


def check_tolerance_functional(field_spec, domain, points, weights, params, delta=1e-3, tol_factor=1e-4, threads=1):
    """
    Phi_delta between the flow at two tolerances

    Per-particle separations bound the functional: it never exceeds
    sum_i w_i log(1 + max separation / delta). Both flows are deterministic,
    so Psi_delta over their path measures must equal Phi_delta.
    """
    with _Stopwatch() as watch:
        loose = integrate_ensemble(field_spec, domain, points, params, threads=threads)
        tight_params = replace(params, rel_tol=params.rel_tol * tol_factor, abs_tol=params.abs_tol * tol_factor)
        tight = integrate_ensemble(field_spec, domain, points, tight_params, threads=threads)
        value = divergence_functional_phi_delta(loose, tight, weights, delta, params.horizon)
        psi = divergence_functional_psi_delta(loose, tight, weights, delta, params.horizon)
        both = loose.alive(params.horizon) & tight.alive(params.horizon)
        gaps = np.linalg.norm(loose.positions_at(params.horizon)[both] - tight.positions_at(params.horizon)[both], axis=1)
        ceiling = float(np.sum(np.asarray(weights)[both]) * math.log1p((gaps.max() if gaps.size else 0.0) / delta))
    return CheckEntry(
        check="phi-delta",
        verdict=PASS if value <= ceiling + 1e-15 and abs(psi - value) <= 1e-12 * max(1.0, value) else FAIL,
        metrics={"phi_delta": value, "psi_delta": psi, "max_separation": float(gaps.max()) if gaps.size else 0.0},
        bound=ceiling,
        tolerance=0.0,
        counts={"samples": int(len(points))},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"field": field_spec.name, "delta": delta, "tol_factor": tol_factor}),
    )


# Counterexample checks ==================================================================

def check_oscillation(params, count=100, integrator_params=None, seed=0, threads=1, min_fraction=0.99):
    """Oscillating blow-up census of the cylinder-and-handle field"""
    with _Stopwatch() as watch:
        census = counterexample.verify_oscillation(params, count, integrator_params, seed, threads)
    census.min_fraction = min_fraction
    handle_ratios = {k: max(times) * 4.0 ** k for k, times in census.handle_times.items() if times}
    level_ratios = {k: float(np.median(times)) / (2.0 ** k / 4.0 ** k) for k, times in census.level_times.items() if times}
    return CheckEntry(
        check="oscillation",
        verdict=PASS if census.passed else FAIL,
        metrics={
            "fraction_ok": census.fraction_ok,
            "min_excursions": min(census.excursion_counts),
            "max_total_time": max(census.total_times),
            "handle_time_ratios": handle_ratios,
            "level_time_ratios": level_ratios,
            "classifications": census.classifications,
            "cumulative_ok": census.cumulative_ok,
            "return_minima": {k: min(v) for k, v in census.return_minima.items() if v},
            "excursion_maxima": {k: max(v) for k, v in census.excursion_maxima.items() if v},
        },
        bound=2.0,
        tolerance={"total_time": 0.05, "min_fraction": min_fraction},
        counts={"samples": census.samples},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"params": asdict(params), "count": count, "seed": seed}),
    )


def check_sobolev(params, radius=2.0, cauchy_tol=1e-6, max_level=6, identity_tol=1e-3):
    """Per-cylinder norm accounting and summability of the norm series"""
    with _Stopwatch() as watch:
        report = counterexample.estimate_sobolev_norm(params, radius, cauchy_tol)
    rows = [row for row in report.rows if row["k"] <= max_level]
    bounds_hold = all(row["lp_true"] <= row["lp_closed_form"] * (1.0 + 1e-9) for row in rows)
    identity = max(abs(row["lp_slab_quadrature"] / row["lp_closed_form"] - 1.0) for row in rows)
    verdict = PASS if (bounds_hold and identity <= identity_tol and report.lp_cauchy <= cauchy_tol
                       and report.geometric) else FAIL
    return CheckEntry(
        check="sobolev",
        verdict=verdict,
        metrics={
            "rows": report.rows,
            "closed_form_identity_error": identity,
            "lp_cauchy": report.lp_cauchy,
            "w1p_partial_sums": report.w1p_partial_sums,
            "w1p_term_ratios": report.w1p_term_ratios,
            "w1p_predicted_ratio": report.w1p_predicted_ratio,
            "w1p_tail_estimate": report.w1p_tail_estimate,
        },
        bound={"lp_cauchy": cauchy_tol, "closed_form_identity_error": identity_tol},
        tolerance=cauchy_tol,
        counts={"levels": len(report.rows)},
        wall_clock=watch.elapsed,
        inputs_digest=inputs_digest({"params": asdict(params), "R": radius}),
    )
