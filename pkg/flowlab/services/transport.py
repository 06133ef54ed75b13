"""
Measure transport along computed flows

Push-forward densities, compression constants, weak-form continuity
residuals and the integral functionals of the flow.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid, trapezoid

from ..exceptions import ConfigurationError
from .domain import as_points, sample_points
from .integrator import integrate_ensemble

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeasureDescriptor:
    """Initial measure mu_0: uniform on a region or a density with a sup bound"""
    kind: str
    region: object
    total_mass: float
    sup_density: float
    density: Optional[Callable] = None

    def describe(self):
        return f"{self.kind} on {self.region.describe()} (mass {self.total_mass:.6g})"


@dataclass
class ParticleEnsemble:
    """Weighted particles standing in for mu_0; weights never change in time"""
    points: np.ndarray
    weights: np.ndarray
    descriptor: MeasureDescriptor

    def __post_init__(self):
        self.points = as_points(self.points)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.points.shape[0],):
            raise ConfigurationError("Ensemble needs one weight per particle")
        if np.any(self.weights < 0):
            raise ConfigurationError("Ensemble weights must be nonnegative")

    @property
    def count(self):
        return self.points.shape[0]

    @property
    def total_mass(self):
        return float(self.weights.sum())

    @property
    def dimension(self):
        return self.points.shape[1]


def sample_ensemble(region, count, sampler="sobol", seed=0, total_mass=None, density=None, sup_density=None):
    """
    Sample an initial particle ensemble on a bounded region

    Args:
        region: Region carrying mu_0
        count: Number of particles
        sampler: 'sobol', 'halton' or 'uniform'
        seed: Sampler seed
        total_mass: Mass of the uniform measure (default: the region volume, i.e. Lebesgue)
        density: Optional vectorized rho_0; weights become rho_0(x_i) |region| / N
        sup_density: Declared sup of rho_0 (default: max over the sample)

    Returns:
        ParticleEnsemble
    """
    points = sample_points(region, count, sampler, seed)
    volume = region.volume()
    if density is None:
        mass = volume if total_mass is None else float(total_mass)
        weights = np.full(count, mass / count)
        descriptor = MeasureDescriptor("uniform", region, float(weights.sum()), mass / volume)
    else:
        values = np.asarray(density(points), dtype=float)
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ConfigurationError("Initial density must be finite and nonnegative")
        weights = values * volume / count
        declared = float(values.max()) if sup_density is None else float(sup_density)
        descriptor = MeasureDescriptor("density", region, float(weights.sum()), declared, density)
    logger.info(f"Sampled {count} particles ({sampler}, seed {seed}) from {descriptor.describe()}")
    return ParticleEnsemble(points=points, weights=weights, descriptor=descriptor)


# Densities ==============================================================================

@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned uniform grid of cells"""
    lo: tuple
    hi: tuple
    cells: tuple

    @classmethod
    def for_region(cls, region, cells_per_axis):
        lo, hi = region.bounds()
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigurationError(f"Grid needs a bounded region, got {region.describe()}")
        return cls(tuple(lo.tolist()), tuple(hi.tolist()), (int(cells_per_axis),) * region.dimension)

    @property
    def edges(self):
        return [np.linspace(a, b, n + 1) for a, b, n in zip(self.lo, self.hi, self.cells)]

    @property
    def cell_volume(self):
        return float(np.prod((np.asarray(self.hi) - np.asarray(self.lo)) / np.asarray(self.cells)))

    def centers(self):
        mids = [0.5 * (e[1:] + e[:-1]) for e in self.edges]
        grids = np.meshgrid(*mids, indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)


@dataclass
class DensityEstimate:
    """Histogram of alive-particle mass on a grid"""
    time: float
    grid: GridSpec
    masses: np.ndarray
    alive_mass: float
    alive_count: int

    @property
    def grid_mass(self):
        return float(self.masses.sum())

    @property
    def escaped_mass(self):
        return max(self.alive_mass - self.grid_mass, 0.0)

    @property
    def densities(self):
        return self.masses / self.grid.cell_volume

    @property
    def sup_density(self):
        return float(self.densities.max()) if self.masses.size else 0.0

    def to_frame(self):
        """Tidy table: time, cell index, center coordinates, mass, density"""
        centers = self.grid.centers()
        frame = pd.DataFrame({"t": self.time, "cell": np.arange(centers.shape[0])})
        for axis in range(centers.shape[1]):
            frame[f"c_{axis + 1}"] = centers[:, axis]
        frame["mass"] = self.masses.reshape(-1)
        frame["density"] = self.densities.reshape(-1)
        return frame


def push_forward(ensemble, flow, t, grid, level=None):
    """
    Histogram of X(t, .)_# mu_0 restricted to the particles alive at t

    Args:
        ensemble: ParticleEnsemble the flow was started from
        flow: FlowResult with t among its output times
        t: Time
        grid: GridSpec
        level: Exhaustion level for the alive predicate h_{Omega_n} > t;
            None uses T_{Omega,X} > t

    Returns:
        DensityEstimate

    Raises:
        ConfigurationError: If t is beyond the flow horizon
    """
    if t > flow.horizon + 1e-12:
        raise ConfigurationError(f"Time {t} is beyond the horizon {flow.horizon}")
    alive = flow.alive(t, level) & np.all(np.isfinite(flow.positions_at(t)), axis=1)
    positions = flow.positions_at(t)[alive]
    weights = ensemble.weights[alive]
    masses, _ = np.histogramdd(positions, bins=grid.edges, weights=weights)
    estimate = DensityEstimate(
        time=float(t), grid=grid, masses=masses,
        alive_mass=float(weights.sum()), alive_count=int(alive.sum()),
    )
    if estimate.alive_count == 0:
        logger.warning(f"Push-forward at t={t} has an empty alive set")
    return estimate


@dataclass
class CompressionReport:
    times: list
    measured: list
    bound: float
    stat_tol: float
    degenerate: list
    estimates: list = field(default_factory=list, repr=False)

    @property
    def violations(self):
        return [t for t, c in zip(self.times, self.measured) if c > self.bound * (1.0 + self.stat_tol)]

    @property
    def passed(self):
        return not self.violations

    @property
    def worst_ratio(self):
        return max(self.measured) / self.bound if self.measured else 0.0


def measure_compression(ensemble, flow, divergence_bound, times, grid, level=None, stat_tol=0.1):
    """
    Measured compression sup(rho_t) / sup(rho_0) against the bound e^L

    Args:
        ensemble: ParticleEnsemble
        flow: FlowResult with every t in `times` as an output time
        divergence_bound: DivergenceBound on the subdomain
        times: Times to measure at
        grid: GridSpec over the subdomain
        level: Exhaustion level of the subdomain (None for Omega)
        stat_tol: Relative statistical tolerance on the bound

    Returns:
        CompressionReport
    """
    reference = ensemble.descriptor.sup_density
    bound = divergence_bound.compression_bound()
    measured, degenerate, estimates = [], [], []
    for t in times:
        estimate = push_forward(ensemble, flow, t, grid, level)
        estimates.append(estimate)
        if estimate.alive_count == 0:
            measured.append(0.0)
            degenerate.append(True)
            continue
        measured.append(estimate.sup_density / reference)
        degenerate.append(False)
    report = CompressionReport(list(map(float, times)), measured, bound, stat_tol, degenerate, estimates)
    logger.info(f"Compression: measured max {max(measured, default=0.0):.4f}, bound e^L = {bound:.4f}")
    return report


# Continuity equation ====================================================================

@dataclass(frozen=True)
class TestFunction:
    """Bump phi(x) = (1 - |x - c|^2 / r^2)^power on B_r(c), zero outside"""
    __test__ = False

    center: tuple
    radius: float
    power: int = 4

    def _scaled(self, x):
        offset = as_points(x) - np.asarray(self.center, dtype=float)
        return offset, np.sum(offset * offset, axis=1) / self.radius ** 2

    def __call__(self, x):
        _, s = self._scaled(x)
        return np.where(s < 1.0, (1.0 - np.minimum(s, 1.0)) ** self.power, 0.0)

    def gradient(self, x):
        offset, s = self._scaled(x)
        inner = np.where(s < 1.0, (1.0 - np.minimum(s, 1.0)) ** (self.power - 1), 0.0)
        return (-2.0 * self.power / self.radius ** 2) * inner[:, None] * offset

    def support_margin(self, x):
        return self.radius - np.linalg.norm(as_points(x) - np.asarray(self.center, dtype=float), axis=1)


@dataclass
class ResidualReport:
    residual: float
    lhs: float
    rhs: float
    scheme: str
    dt_fd: float
    contaminated: bool

    @property
    def relative(self):
        return self.residual / abs(self.rhs) if self.rhs else self.residual


FD_SCHEMES = ("centered", "forward")


def continuity_residual(ensemble, field_spec, domain, test, t, dt_fd, params, scheme="centered", threads=1):
    """
    Weak-form continuity residual of the push-forward at time t

    Compares the finite-difference time derivative of
    F(s) = sum_i w_i phi(X(s, x_i)) over alive particles with the flux
    sum_i w_i grad(phi)(X(t, x_i)) . b(t, X(t, x_i)).

    Args:
        ensemble: ParticleEnsemble
        field_spec: VectorFieldSpec
        domain: ExhaustionDomain
        test: TestFunction
        t: Time
        dt_fd: Finite-difference step
        params: IntegratorParams
        scheme: 'centered' or 'forward' difference in time
        threads: Worker threads

    Returns:
        ResidualReport
    """
    if scheme not in FD_SCHEMES:
        raise ConfigurationError(f"Unknown difference scheme {scheme!r}")
    window = (t - dt_fd, t, t + dt_fd) if scheme == "centered" else (t, t + dt_fd)
    if window[0] < 0.0 or window[-1] > params.horizon:
        raise ConfigurationError(f"Difference window {window} is outside [0, {params.horizon}]")

    flow = integrate_ensemble(field_spec, domain, ensemble.points, params,
                              output_times=sorted(set((0.0,) + window)), threads=threads)

    def functional(s):
        alive = flow.alive(s)
        return float(np.sum(ensemble.weights[alive] * test(flow.positions_at(s)[alive])))

    lhs = (functional(window[-1]) - functional(window[0])) / (window[-1] - window[0])
    alive = flow.alive(t)
    positions = flow.positions_at(t)[alive]
    flux = np.sum(test.gradient(positions) * field_spec.velocity(t, positions), axis=1)
    rhs = float(np.sum(ensemble.weights[alive] * flux))

    died = flow.alive(window[0]) & ~flow.alive(window[-1])
    contaminated = bool(np.any(died & (test.support_margin(np.nan_to_num(flow.positions_at(window[0]))) > 0)))
    if contaminated:
        logger.warning(f"Particles died inside the difference window around t={t} within supp phi")
    return ResidualReport(abs(lhs - rhs), lhs, rhs, scheme, float(dt_fd), contaminated)


# Functionals ============================================================================

@dataclass
class LogMomentReport:
    times: np.ndarray
    integrand: np.ndarray
    cumulative_growth: np.ndarray
    log_moment: np.ndarray

    @property
    def growth_integral(self):
        return float(self.cumulative_growth[-1])

    def to_frame(self):
        return pd.DataFrame({
            "t": self.times,
            "growth_integrand": self.integrand,
            "growth_integral": self.cumulative_growth,
            "log_moment": self.log_moment,
        })


def log_moment_functionals(ensemble, flow, field_spec):
    """
    Growth integral of |b|/(1+|x|) against mu_t and the log moments of mu_t

    The flow's output times are the quadrature grid.

    Returns:
        LogMomentReport
    """
    times = flow.times
    integrand = np.zeros(len(times))
    log_moment = np.zeros(len(times))
    for k, t in enumerate(times):
        alive = flow.alive(t) & np.all(np.isfinite(flow.positions[k]), axis=1)
        positions = flow.positions[k][alive]
        weights = ensemble.weights[alive]
        radius = np.linalg.norm(positions, axis=1)
        speed = np.linalg.norm(field_spec.velocity(t, positions), axis=1)
        integrand[k] = float(np.sum(weights * speed / (1.0 + radius)))
        log_moment[k] = float(np.sum(weights * np.log1p(radius)))
    cumulative = cumulative_trapezoid(integrand, times, initial=0.0) if len(times) > 1 else np.zeros(1)
    return LogMomentReport(times=np.asarray(times), integrand=integrand,
                           cumulative_growth=cumulative, log_moment=log_moment)


def divergence_functional_phi_delta(flow_a, flow_b, weights, delta, t):
    """
    Phi_delta(t) = sum_i w_i log(1 + |X(t, x_i) - Y(t, x_i)| / delta)

    Only particles alive in both flows at t contribute.

    Raises:
        ConfigurationError: If the flows were not started from the same particles
    """
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    if flow_a.initial_points.shape != flow_b.initial_points.shape or not np.array_equal(
            flow_a.initial_points, flow_b.initial_points):
        raise ConfigurationError("Flows do not share their initial points")
    weights = np.asarray(weights, dtype=float)
    both = flow_a.alive(t) & flow_b.alive(t)
    gap = np.linalg.norm(flow_a.positions_at(t)[both] - flow_b.positions_at(t)[both], axis=1)
    return float(np.sum(weights[both] * np.log1p(gap / delta)))


def divergence_functional_psi_delta(flow_a, flow_b, weights, delta, t):
    """
    Psi_delta(t) = sum_i w_i E[log(1 + |gamma(t) - eta(t)| / delta)], gamma ~ eta^a_i, eta ~ eta^b_i

    Each particle's path measure is given by equally weighted sample paths:
    flow_a holds len(weights) * k_a rows grouped by particle, flow_b
    len(weights) * k_b. Pairs where either path is dead at t do not
    contribute. For deterministic flows (k_a = k_b = 1) this is Phi_delta.

    Raises:
        ConfigurationError: If the row counts do not split into particles, or
            the sample paths of a particle do not share its initial point
    """
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    weights = np.asarray(weights, dtype=float)
    n = len(weights)
    grouped = []
    for flow in (flow_a, flow_b):
        rows, d = flow.initial_points.shape
        if rows % n:
            raise ConfigurationError(f"{rows} paths do not split into {n} particles")
        starts = flow.initial_points.reshape(n, rows // n, d)
        if not np.array_equal(starts, np.broadcast_to(starts[:, :1], starts.shape)):
            raise ConfigurationError("Sample paths of a particle start from different points")
        positions = np.asarray(flow.positions_at(t)).reshape(n, rows // n, d)
        alive = np.asarray(flow.alive(t)).reshape(n, rows // n)
        grouped.append((starts[:, 0], positions, alive))
    (starts_a, x_a, alive_a), (starts_b, x_b, alive_b) = grouped
    if not np.array_equal(starts_a, starts_b):
        raise ConfigurationError("Flows do not share their initial points")

    gap = np.linalg.norm(x_a[:, :, None, :] - x_b[:, None, :, :], axis=3)
    both = alive_a[:, :, None] & alive_b[:, None, :]
    terms = np.where(both, np.log1p(np.where(both, gap, 0.0) / delta), 0.0)
    pairs = x_a.shape[1] * x_b.shape[1]
    return float(np.sum(weights * terms.sum(axis=(1, 2)) / pairs))


def growth_condition_split(field_spec, region, cap, time_samples=33, count=8192, seed=0):
    """
    Split g = |b|/(1+|x|) into an L^1(L^1) part above `cap` and an L^1(L^inf) part below it

    Both parts are estimated on a bounded region: the first by a scrambled
    Sobol rule in space and the trapezoid rule in time, the second as the
    time integral of the sampled sup of the capped part.

    Returns:
        dict: l1_part, linf_part, cap, region
    """
    points = sample_points(region, count, "sobol", seed)
    volume = region.volume()
    times = np.linspace(0.0, field_spec.time_horizon, time_samples)
    l1, linf = np.zeros(time_samples), np.zeros(time_samples)
    radius = np.linalg.norm(points, axis=1)
    for k, t in enumerate(times):
        g = np.linalg.norm(field_spec.velocity(t, points), axis=1) / (1.0 + radius)
        above = g > cap
        l1[k] = float(np.mean(np.where(above, g, 0.0)) * volume)
        linf[k] = float(np.max(np.where(above, 0.0, g)))
    return {
        "l1_part": float(trapezoid(l1, times)),
        "linf_part": float(trapezoid(linf, times)),
        "cap": float(cap),
        "region": region.describe(),
    }
