"""
Particle integrator for maximal regular flows

Trajectories of x' = b(t, x) are integrated in vectorized batches with
fixed-step RK4 or the adaptive Runge-Kutta-Fehlberg 4(5) pair. Each row
carries its own time and step size; finished rows drop out of the batch.
Along the way the engine records exits from every exhaustion level, the
log-Jacobian and the path length, and stops a row on the horizon, on a
declared blow-up (V_Omega above threshold) or on step underflow.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss

from ..exceptions import ConfigurationError, DomainError, IntegrationError
from .domain import HittingRecord, as_points, bisect_exit, hermite
from .vector_field import check_finite, divergence

logger = logging.getLogger(__name__)

SCHEMES = ("rk4-fixed", "rk45-adaptive")

HORIZON = "horizon-reached"
BLOWUP = "blowup-declared"
UNDERFLOW = "step-underflow"
TERMINATIONS = (HORIZON, BLOWUP, UNDERFLOW)

DEFAULT_CHUNK_SIZE = 4096

# Classical RK4
RK4_C = np.array([0.0, 0.5, 0.5, 1.0])
RK4_A = (
    (),
    (0.5,),
    (0.0, 0.5),
    (0.0, 0.0, 1.0),
)
RK4_B = np.array([1 / 6, 1 / 3, 1 / 3, 1 / 6])

# Runge-Kutta-Fehlberg 4(5); the fifth order solution is propagated
RKF_C = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
RKF_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
RKF_B5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])
RKF_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0

GAUSS_NODES, GAUSS_WEIGHTS = leggauss(3)


@dataclass(frozen=True)
class IntegratorParams:
    """Scheme, step control and termination thresholds"""
    scheme: str = "rk45-adaptive"
    dt_init: float = 1e-3
    dt_min: float = 1e-14
    dt_max: float = 1e-1
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    speed_cap: float = math.inf
    horizon: float = 1.0
    blowup_potential_threshold: float = 1e6
    max_steps: int = 1_000_000

    def validate(self):
        """
        Raises:
            ConfigurationError: If the parameters are inconsistent
        """
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"Unknown scheme {self.scheme!r}, expected one of {SCHEMES}")
        if not 0.0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise ConfigurationError(
                f"Need 0 < dt_min <= dt_init <= dt_max, got {self.dt_min}, {self.dt_init}, {self.dt_max}"
            )
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ConfigurationError("Tolerances must be positive")
        if self.speed_cap <= 0:
            raise ConfigurationError("speed_cap must be positive")
        if self.horizon <= 0:
            raise ConfigurationError("Horizon must be positive")
        if self.blowup_potential_threshold <= 0:
            raise ConfigurationError("Blow-up threshold must be positive")
        return self


@dataclass
class Trajectory:
    """Sampled path of one particle"""
    initial_point: np.ndarray
    start_time: float
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    potentials: np.ndarray
    hitting: list
    t_max_estimate: float
    termination: str
    path_length: float
    blowup_threshold: float
    log_jacobian: Optional[np.ndarray] = None

    @property
    def jacobian_samples(self):
        if self.log_jacobian is None:
            return None
        return list(zip(self.times.tolist(), np.exp(self.log_jacobian).tolist()))

    def hit_time(self, level):
        for record in self.hitting:
            if record.level == level:
                return record.as_extended()
        return math.inf

    def position_at(self, t):
        """Hermite interpolation of the path at time t"""
        if not self.times[0] <= t <= self.times[-1]:
            raise IntegrationError(f"Time {t} is outside the sampled range of the trajectory")
        j = int(np.clip(np.searchsorted(self.times, t), 1, len(self.times) - 1))
        return hermite(
            self.times[j - 1:j], self.times[j:j + 1],
            self.positions[j - 1:j], self.positions[j:j + 1],
            self.velocities[j - 1:j], self.velocities[j:j + 1],
            np.array([t]),
        )[0]


@dataclass
class FlowResult:
    """
    Ensemble flow X(t, x_i) at the requested output times

    Positions of particles that died before an output time are NaN.
    `hit_times[i, n]` is the exit time from level n, +inf when never.
    """
    initial_points: np.ndarray
    start_time: float
    times: np.ndarray
    positions: np.ndarray
    t_max: np.ndarray
    termination: np.ndarray
    hit_times: np.ndarray
    hit_points: np.ndarray
    path_length: np.ndarray
    log_jacobian: Optional[np.ndarray] = None
    trajectories: Optional[list] = None
    horizon: float = 1.0

    @property
    def count(self):
        return self.initial_points.shape[0]

    def time_index(self, t):
        matches = np.flatnonzero(np.isclose(self.times, t, rtol=0.0, atol=1e-12))
        if not matches.size:
            raise IntegrationError(f"Time {t} is not one of the output times {self.times.tolist()}")
        return int(matches[0])

    def positions_at(self, t):
        return self.positions[self.time_index(t)]

    def jacobian_at(self, t):
        if self.log_jacobian is None:
            raise IntegrationError("Flow was integrated without the Jacobian")
        return np.exp(self.log_jacobian[self.time_index(t)])

    def alive(self, t, level=None):
        """
        Particles still in the flow at time t

        With a level, the predicate is h_{Omega_n} > t; otherwise T_{Omega,X} > t,
        counting particles that reached the horizon as alive up to it.
        """
        if level is not None:
            return self.hit_times[:, level] > t
        return (self.t_max > t) | ((self.termination == HORIZON) & (t <= self.horizon))

    def census(self):
        return {name: int(np.sum(self.termination == name)) for name in TERMINATIONS}


# Engine =================================================================================

def _stages(field_spec, t, x, h, k1, tableau_c, tableau_a):
    stages = [k1]
    for i in range(1, len(tableau_c)):
        increment = sum(a * k for a, k in zip(tableau_a[i], stages))
        stages.append(field_spec.velocity(t + tableau_c[i] * h[:, 0], x + h * increment))
    return stages


def _log_jacobian_increment(field_spec, t0, t1, x0, x1, v0, v1):
    """Three-point Gauss-Legendre rule for the integral of div b along the Hermite arc"""
    half = 0.5 * (t1 - t0)
    mid = 0.5 * (t1 + t0)
    total = np.zeros(t0.shape[0])
    for node, weight in zip(GAUSS_NODES, GAUSS_WEIGHTS):
        tau = mid + half * node
        point = hermite(t0, t1, x0, x1, v0, v1, tau)
        values = divergence(field_spec, tau, point)
        if not np.all(np.isfinite(values)):
            logger.error("Divergence evaluation failed along the flow")
            raise IntegrationError("Non-finite divergence while integrating the Jacobian")
        total += weight * values
    return half * total


class _Recorder:
    """Per-step sample buffers regrouped per particle at the end"""

    def __init__(self):
        self.rows, self.t, self.x, self.v, self.V, self.logj = [], [], [], [], [], []

    def add(self, rows, t, x, v, V, logj):
        self.rows.append(rows)
        self.t.append(t)
        self.x.append(x)
        self.v.append(v)
        self.V.append(V)
        self.logj.append(logj)

    def split(self, count):
        rows = np.concatenate(self.rows)
        order = np.argsort(rows, kind="stable")
        rows = rows[order]
        bounds = np.searchsorted(rows, np.arange(count + 1))
        columns = [np.concatenate(c)[order] for c in (self.t, self.x, self.v, self.V, self.logj)]
        return [tuple(c[bounds[i]:bounds[i + 1]] for c in columns) for i in range(count)]


def _integrate_batch(field_spec, domain, x0, params, s0, output_times, record, track_jacobian):
    """Integrate one batch of rows; every row is independent of the others"""
    n, d = x0.shape
    levels = domain.levels
    horizon = params.horizon
    adaptive = params.scheme == "rk45-adaptive"
    tableau = (RKF_C, RKF_A) if adaptive else (RK4_C, RK4_A)

    t = np.full(n, float(s0))
    x = x0.copy()
    v = field_spec.velocity(t, x)
    check_finite(t, x, v)
    V = domain.potential_values(x)
    dt = np.full(n, params.dt_init)
    logj = np.zeros(n)
    path = np.zeros(n)
    t_max = np.full(n, horizon)
    termination = np.full(n, HORIZON, dtype=object)

    stops = np.append(output_times[output_times > s0], horizon)
    stops = np.unique(stops[stops <= horizon])
    # output slot of every stop, -1 for the horizon when it is not an output time
    stop_slots = np.array([
        int(np.flatnonzero(output_times == stop)[0]) if np.any(output_times == stop) else -1
        for stop in stops
    ], dtype=int)
    next_stop = np.zeros(n, dtype=int)
    positions = np.full((len(output_times), n, d), np.nan)
    log_jacobian = np.full((len(output_times), n), np.nan) if track_jacobian else None
    at_start = np.flatnonzero(np.isclose(output_times, s0, rtol=0.0, atol=1e-15))
    positions[at_start] = x
    if track_jacobian:
        log_jacobian[at_start] = 0.0

    hit_times = np.full((n, len(levels)), np.inf)
    hit_points = np.full((n, len(levels), d), np.nan)
    margins = domain.level_margins(x)
    start_out = margins <= 0.0
    hit_times[start_out] = s0
    for level in range(len(levels)):
        hit_points[start_out[:, level], level] = x[start_out[:, level]]

    recorder = _Recorder() if record else None
    if record:
        recorder.add(np.arange(n), t.copy(), x.copy(), v.copy(), V.copy(), logj.copy())

    running = np.ones(n, dtype=bool)
    if s0 >= horizon:
        running[:] = False
    steps = 0
    while running.any():
        steps += 1
        if steps > params.max_steps:
            logger.error(f"Integration exceeded {params.max_steps} steps with {int(running.sum())} rows active")
            raise IntegrationError(f"Step limit {params.max_steps} exceeded")

        rows = np.flatnonzero(running)
        t_a, x_a, v_a = t[rows], x[rows], v[rows]
        target = stops[next_stop[rows]]
        controller = dt[rows]
        speed = np.linalg.norm(v_a, axis=1)
        capped = np.where(speed > params.speed_cap,
                          params.dt_max * params.speed_cap / np.maximum(speed, 1e-300), np.inf)
        h_try = np.minimum(np.minimum(controller, capped), params.dt_max)
        clipped = h_try >= target - t_a
        h = np.where(clipped, target - t_a, h_try)
        t_new = np.where(clipped, target, t_a + h)

        with np.errstate(over="ignore", invalid="ignore"):
            stages = _stages(field_spec, t_a, x_a, h[:, None], v_a, *tableau)
            if adaptive:
                x_new = x_a + h[:, None] * sum(b * k for b, k in zip(RKF_B5, stages))
                error = h[:, None] * sum((b5 - b4) * k for b5, b4, k in zip(RKF_B5, RKF_B4, stages))
                scale = np.maximum(params.abs_tol, params.rel_tol * np.maximum(
                    np.linalg.norm(x_a, axis=1), np.linalg.norm(x_new, axis=1)))
                ratio = np.linalg.norm(error, axis=1) / scale
            else:
                x_new = x_a + h[:, None] * sum(b * k for b, k in zip(RK4_B, stages))
                ratio = np.zeros(len(rows))
        finite = np.all(np.isfinite(x_new), axis=1) & np.isfinite(ratio)
        V_new = np.full(len(rows), np.inf)
        V_new[finite] = domain.potential_values(x_new[finite])
        inside = np.isfinite(V_new)
        accepted = finite & inside & (ratio <= 1.0)

        if adaptive:
            with np.errstate(divide="ignore"):
                factor = np.clip(SAFETY * np.power(np.maximum(ratio, 1e-300), -0.2), MIN_FACTOR, MAX_FACTOR)
            factor = np.where(finite & inside, factor, 0.5)
            proposal = h * factor
            proposal = np.where(accepted & clipped, np.maximum(proposal, controller), proposal)
        else:
            proposal = np.where(accepted, params.dt_init, 0.5 * h)
        dt[rows] = np.minimum(proposal, params.dt_max)

        underflow = ~accepted & (proposal < params.dt_min)
        if underflow.any():
            dead = rows[underflow]
            termination[dead] = UNDERFLOW
            t_max[dead] = t[dead]
            running[dead] = False

        if not accepted.any():
            continue
        keep = np.flatnonzero(accepted)
        acc = rows[keep]
        t0, t1 = t_a[keep], t_new[keep]
        x0_, x1 = x_a[keep], x_new[keep]
        v0 = v_a[keep]
        v1 = field_spec.velocity(t1, x1)
        check_finite(t1, x1, v1)

        if levels:
            new_margins = domain.level_margins(x1)
            crossed = np.isinf(hit_times[acc]) & (new_margins <= 0.0)
            for level in np.flatnonzero(crossed.any(axis=0)):
                sel = np.flatnonzero(crossed[:, level])
                tau, point = bisect_exit(t0[sel], t1[sel], x0_[sel], x1[sel], v0[sel], v1[sel],
                                         levels[level], params.dt_min)
                hit_times[acc[sel], level] = tau
                hit_points[acc[sel], level] = point

        if track_jacobian:
            logj[acc] += _log_jacobian_increment(field_spec, t0, t1, x0_, x1, v0, v1)
        path[acc] += np.linalg.norm(x1 - x0_, axis=1)

        t[acc], x[acc], v[acc], V[acc] = t1, x1, v1, V_new[keep]
        if record:
            recorder.add(acc, t1.copy(), x1.copy(), v1.copy(), V_new[keep].copy(), logj[acc].copy())

        landed = acc[clipped[keep]]
        slots = stop_slots[next_stop[landed]]
        reported = landed[slots >= 0]
        positions[slots[slots >= 0], reported] = x[reported]
        if track_jacobian:
            log_jacobian[slots[slots >= 0], reported] = logj[reported]
        next_stop[landed] += 1

        blown = V_new[keep] >= params.blowup_potential_threshold
        if blown.any():
            dead = acc[blown]
            termination[dead] = BLOWUP
            t_max[dead] = t[dead]
            running[dead] = False
        finished = acc[~blown & (t1 >= horizon)]
        running[finished] = False

    # a row that blew up has left every compact level by then
    stopped = termination != HORIZON
    late = np.isinf(hit_times) & stopped[:, None]
    hit_times = np.where(late, t_max[:, None], hit_times)
    if hit_times.shape[1]:
        hit_times = np.minimum.accumulate(hit_times[:, ::-1], axis=1)[:, ::-1]

    trajectories = None
    if record:
        trajectories = []
        for i, (ts, xs, vs, Vs, ls) in enumerate(recorder.split(n)):
            hitting = [
                HittingRecord(
                    level=level,
                    hit_time=None if math.isinf(hit_times[i, level]) else float(hit_times[i, level]),
                    exit_point=None if math.isinf(hit_times[i, level]) else hit_points[i, level],
                )
                for level in range(len(levels))
            ]
            trajectories.append(Trajectory(
                initial_point=x0[i].copy(), start_time=float(s0),
                times=ts, positions=xs, velocities=vs, potentials=Vs,
                hitting=hitting, t_max_estimate=float(t_max[i]),
                termination=str(termination[i]), path_length=float(path[i]),
                blowup_threshold=params.blowup_potential_threshold,
                log_jacobian=ls if track_jacobian else None,
            ))

    return {
        "positions": positions,
        "t_max": t_max,
        "termination": termination,
        "hit_times": hit_times,
        "hit_points": hit_points,
        "path_length": path,
        "log_jacobian": log_jacobian,
        "trajectories": trajectories,
    }


def _check_start(field_spec, domain, points, params, s0):
    params.validate()
    if field_spec.dimension != domain.dimension or points.shape[1] != domain.dimension:
        raise ConfigurationError("Field, domain and initial points must share a dimension")
    if params.horizon > field_spec.time_horizon + 1e-12:
        raise ConfigurationError(
            f"Integration horizon {params.horizon} exceeds the field horizon {field_spec.time_horizon}"
        )
    if not 0.0 <= s0 <= params.horizon:
        raise ConfigurationError(f"Start time {s0} is outside [0, {params.horizon}]")
    outside = ~domain.omega.inside(points)
    if outside.any():
        bad = points[int(np.argmax(outside))]
        logger.error(f"Initial point {bad.tolist()} is outside Omega")
        raise DomainError(f"Initial point {bad.tolist()} is outside Omega")


def integrate(field_spec, domain, x0, params, s0=0.0, track_jacobian=False):
    """
    Integrate a single trajectory from x0 at start time s0

    Args:
        field_spec: VectorFieldSpec
        domain: ExhaustionDomain
        x0: Initial point in Omega
        params: IntegratorParams
        s0: Start time
        track_jacobian: Accumulate log J along the way

    Returns:
        Trajectory: Samples, hitting records and termination state

    Raises:
        DomainError: If x0 is outside Omega
        NonFiniteFieldError: If the field is not finite along the path
    """
    points = as_points(x0)
    _check_start(field_spec, domain, points, params, s0)
    result = _integrate_batch(field_spec, domain, points, params, float(s0),
                              np.array([float(s0)]), True, track_jacobian)
    return result["trajectories"][0]


def integrate_ensemble(field_spec, domain, points, params, output_times=None, s0=0.0,
                       threads=1, record=False, track_jacobian=False, chunk_size=DEFAULT_CHUNK_SIZE):
    """
    Integrate many particles in fixed-size chunks on a thread pool

    The chunking does not depend on `threads`, so the results are
    bit-identical for any thread count.

    Args:
        field_spec: VectorFieldSpec
        domain: ExhaustionDomain
        points: Initial points (N, d)
        params: IntegratorParams
        output_times: Times at which positions are reported (default [s0, T])
        s0: Common start time
        threads: Worker threads
        record: Keep full per-particle trajectories
        track_jacobian: Accumulate log J
        chunk_size: Rows per batch

    Returns:
        FlowResult: Flow of the ensemble
    """
    points = as_points(points)
    _check_start(field_spec, domain, points, params, s0)
    if output_times is None:
        output_times = [s0, params.horizon]
    output_times = np.asarray(sorted(set(float(t) for t in output_times)))
    if output_times.size and (output_times[0] < s0 - 1e-15 or output_times[-1] > params.horizon + 1e-15):
        raise ConfigurationError(f"Output times must lie in [{s0}, {params.horizon}]")

    chunks = [points[i:i + chunk_size] for i in range(0, points.shape[0], chunk_size)]
    logger.info(f"Integrating {points.shape[0]} particles in {len(chunks)} chunks on {threads} threads")

    def work(chunk):
        return _integrate_batch(field_spec, domain, chunk, params, float(s0),
                                output_times, record, track_jacobian)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(chunk) for chunk in chunks]

    def stack(key, axis=0):
        return np.concatenate([p[key] for p in parts], axis=axis)

    result = FlowResult(
        initial_points=points.copy(),
        start_time=float(s0),
        times=output_times,
        positions=stack("positions", axis=1),
        t_max=stack("t_max"),
        termination=stack("termination"),
        hit_times=stack("hit_times"),
        hit_points=stack("hit_points"),
        path_length=stack("path_length"),
        log_jacobian=stack("log_jacobian", axis=1) if track_jacobian else None,
        trajectories=[tr for p in parts for tr in p["trajectories"]] if record else None,
        horizon=params.horizon,
    )
    logger.info(f"Flow finished: {result.census()}")
    return result


def integrate_jacobian(field_spec, trajectory, params=None):
    """
    Jacobian J(t) along a recorded trajectory from J' = J div b(t, X(t))

    log J is accumulated with a three-point Gauss-Legendre rule on the
    Hermite arc of every recorded step.

    Returns:
        list: (t, J(t)) pairs co-sampled with the trajectory
    """
    times = trajectory.times
    if times.size == 0:
        raise IntegrationError("Cannot integrate the Jacobian of an empty trajectory")
    increments = _log_jacobian_increment(
        field_spec, times[:-1], times[1:],
        trajectory.positions[:-1], trajectory.positions[1:],
        trajectory.velocities[:-1], trajectory.velocities[1:],
    )
    log_j = np.concatenate([[0.0], np.cumsum(increments)])
    return list(zip(times.tolist(), np.exp(log_j).tolist()))


# Blow-up classification =================================================================

BLOWUP_CLASSES = ("proper", "oscillating", "none")


def count_excursions(values, high, low):
    """
    Count upcrossings of `high` that are separated by dips below `low`

    Returns:
        int: Number of excursions to `high` after the first one returned below `low`
    """
    excursions, armed = 0, True
    for value in values:
        if armed and value >= high:
            excursions += 1
            armed = False
        elif not armed and value <= low:
            armed = True
    return excursions


def classify_blowup(trajectory, domain, window=None, high=None, low=1.0, growth=10.0):
    """
    Classify the end of a trajectory as proper blow-up, oscillating blow-up or none

    Oscillating: V_Omega reaches `high` at least twice with a dip below `low`
    in between. Proper: V reached the blow-up threshold and, after V first
    exceeds each geometric level base * growth^j in the trailing window, it
    never falls back below the previous level. Anything else, including a
    step underflow at bounded V, is none.

    Args:
        trajectory: Terminated Trajectory
        domain: ExhaustionDomain the potential belongs to
        window: Trailing sample count to inspect (default: all samples)
        high: Excursion level (default: one growth factor below the blow-up
            threshold, since integration stops at the first crossing of it)
        low: Return level for excursions
        growth: Ratio between consecutive proper blow-up levels

    Returns:
        str: 'proper', 'oscillating' or 'none'

    Raises:
        ConfigurationError: If the window is larger than the sample count
    """
    potentials = trajectory.potentials
    if potentials is None or len(potentials) != len(trajectory.times):
        potentials = domain.potential_values(trajectory.positions)
    count = len(potentials)
    window = count if window is None else int(window)
    if window < 1 or window > count:
        raise ConfigurationError(f"Window {window} is outside [1, {count}] samples")
    values = potentials[-window:]
    high = trajectory.blowup_threshold / growth if high is None else high

    if count_excursions(values, high, low) >= 2:
        return "oscillating"
    if trajectory.termination != BLOWUP and values[-1] < trajectory.blowup_threshold:
        return "none"

    suffix_min = np.minimum.accumulate(values[::-1])[::-1]
    base = max(float(values[0]), 1.0)
    level = base * growth
    while level <= values[-1]:
        first = int(np.argmax(values >= level))
        if suffix_min[first] < level / growth:
            return "oscillating"
        level *= growth
    return "proper"
