"""
Divergence-controlled field with oscillating blow-up in d >= 3

The field lives on a tube made of vertical cylinders E_k around the axes
x' = 2^-k e_1 and semicircular handles F_k joining the end of E_k to the
start of E_{k+1}. In E_k it is (-1)^{k+1} 4^k phi((x' - 2^-k e_1)/a_k) e_d,
so particles climb to height 2^k, turn through a handle, dive to -2^{k+1},
and so on: |X| is unbounded above while passing within 2^-k of the origin
at every level.

The radii a_k shrink like 8^{-pk/(d-1-p)}, far below double precision at
the later levels, so trajectories are integrated in tube coordinates
(sigma, u): sigma runs one unit per segment along the centerline and the
normalized cross-section coordinate u is constant along fibres. `embed`
maps tube coordinates back to R^d.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import gamma

from ..exceptions import ConfigurationError, GeometryError
from .domain import Box, ExhaustionDomain, HalfSpace, WholeSpace, sample_points
from .integrator import IntegratorParams, classify_blowup, count_excursions, integrate_ensemble
from .vector_field import DivergenceBound, VectorFieldSpec

logger = logging.getLogger(__name__)

CYLINDER = "cylinder"
HANDLE = "handle"


def _bump_tail(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x > 0.0, np.exp(-1.0 / np.where(x > 0.0, x, 1.0)), 0.0)


def _bump_tail_derivative(x):
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0.0, x, 1.0)
    return np.where(x > 0.0, _bump_tail(x) / safe ** 2, 0.0)


def cutoff(r):
    """Smooth radial cutoff: 1 for r <= 1/2, 0 for r >= 1"""
    r = np.asarray(r, dtype=float)
    inner, outer = _bump_tail(1.0 - r), _bump_tail(r - 0.5)
    return inner / (inner + outer)


def cutoff_derivative(r):
    r = np.asarray(r, dtype=float)
    inner, outer = _bump_tail(1.0 - r), _bump_tail(r - 0.5)
    d_inner, d_outer = -_bump_tail_derivative(1.0 - r), _bump_tail_derivative(r - 0.5)
    return (d_inner * outer - inner * d_outer) / (inner + outer) ** 2


def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _smoothstep_derivative(s):
    inside = (s > 0.0) & (s < 1.0)
    return np.where(inside, 6.0 * s * (1.0 - s), 0.0)


@dataclass(frozen=True)
class CounterexampleParams:
    """
    Sizing of the cylinder-and-handle field

    `radii` overrides the default a_k = 8^{-pk/(d-1-p)}; overrides may only
    shrink the cylinders.
    """
    dimension: int = 3
    p: float = 1.5
    k_max: int = 8
    time_horizon: float = 2.5
    radii: Optional[tuple] = None

    def __post_init__(self):
        if self.dimension < 3:
            raise ConfigurationError("The cylinder construction needs d >= 3")
        if not 1.0 < self.p:
            raise ConfigurationError(f"Sobolev exponent must exceed 1, got {self.p}")
        if self.p >= self.dimension - 1:
            raise ConfigurationError(
                f"p = {self.p} >= d - 1 = {self.dimension - 1}: the norm series diverges"
            )
        if self.k_max < 3:
            raise ConfigurationError(f"k_max must be at least 3, got {self.k_max}")
        if self.radii is not None:
            if len(self.radii) != self.k_max:
                raise ConfigurationError(f"Need {self.k_max} radii, got {len(self.radii)}")
            for k, a in enumerate(self.radii, start=1):
                if not 0.0 < a <= min(1.0, self.default_radius(k)):
                    raise ConfigurationError(f"Radius a_{k} = {a} exceeds 8^(-pk/(d-1-p))")
        for k in range(1, self.k_max):
            if self.radius(k) + self.radius(k + 1) >= 2.0 ** -(k + 1):
                raise GeometryError(f"Cylinders E_{k} and E_{k + 1} overlap")

    @property
    def exponent(self):
        return self.p / (self.dimension - 1 - self.p)

    def default_radius(self, k):
        return 8.0 ** (-self.exponent * k)

    def radius(self, k):
        if self.radii is not None:
            return float(self.radii[k - 1])
        return self.default_radius(k)

    @staticmethod
    def axis(k):
        return 2.0 ** -k

    @staticmethod
    def sign(k):
        return 1.0 if k % 2 == 1 else -1.0

    @staticmethod
    def z_interval(k):
        if k % 2 == 1:
            return -(2.0 ** (k - 1)), 2.0 ** k
        return -(2.0 ** k), 2.0 ** (k - 1)

    def z_start(self, k):
        lo, hi = self.z_interval(k)
        return lo if k % 2 == 1 else hi

    def z_end(self, k):
        lo, hi = self.z_interval(k)
        return hi if k % 2 == 1 else lo

    def height(self, k):
        lo, hi = self.z_interval(k)
        return hi - lo


@dataclass(frozen=True)
class TubeGeometry:
    """Segment table E_1, F_1, E_2, ..., E_{k_max} with per-segment constants"""
    params: CounterexampleParams
    kinds: tuple = field(init=False)
    levels: np.ndarray = field(init=False)

    def __post_init__(self):
        kinds, levels = [], []
        for k in range(1, self.params.k_max + 1):
            kinds.append(CYLINDER)
            levels.append(k)
            if k < self.params.k_max:
                kinds.append(HANDLE)
                levels.append(k)
        object.__setattr__(self, "kinds", tuple(kinds))
        object.__setattr__(self, "levels", np.array(levels))

    @property
    def segment_count(self):
        return len(self.kinds)

    @staticmethod
    def cylinder_segment(k):
        return 2 * (k - 1)

    @staticmethod
    def handle_segment(k):
        return 2 * (k - 1) + 1

    def _tables(self):
        pr = self.params
        ks = self.levels
        handle = np.array([kind == HANDLE for kind in self.kinds])
        a_here = np.array([pr.radius(k) for k in ks])
        a_next = np.array([pr.radius(min(k + 1, pr.k_max)) for k in ks])
        return ks, handle, a_here, a_next

    def locate(self, sigma):
        """Segment index and local parameter s in [0, 1] for each sigma"""
        sigma = np.clip(np.asarray(sigma, dtype=float), 0.0, float(self.segment_count))
        j = np.minimum(np.floor(sigma).astype(int), self.segment_count - 1)
        return j, sigma - j

    def handle_radius(self, s, a_here, a_next):
        """Tube radius r and dr/dtheta along handle F_k"""
        r = a_here + (a_next - a_here) * _smoothstep(s)
        dr = (a_next - a_here) * _smoothstep_derivative(s) / math.pi
        return r, dr

    def sigma_rate(self, sigma, u):
        """d sigma / dt of the fibre through (sigma, u)"""
        pr = self.params
        ks, handle, a_here, a_next = self._tables()
        j, s = self.locate(sigma)
        k = ks[j].astype(float)
        norm_u = np.linalg.norm(u, axis=1)
        weight = cutoff(norm_u)
        mirror = np.where(ks[j] % 2 == 1, 1.0, -1.0)

        heights = np.array([pr.height(int(level)) for level in ks])
        cylinder_rate = 4.0 ** k * weight / heights[j]

        rho = 2.0 ** -(k + 2)
        r, dr = self.handle_radius(s, a_here[j], a_next[j])
        stretch = np.sqrt((rho + r * mirror * u[:, 0]) ** 2 + dr ** 2 * norm_u ** 2)
        speed = 4.0 ** k * 4.0 ** _smoothstep(s)
        handle_rate = speed * weight / (math.pi * stretch)

        rate = np.where(handle[j], handle_rate, cylinder_rate)
        live = (np.asarray(sigma) >= 0.0) & (np.asarray(sigma) < self.segment_count) & (norm_u < 1.0)
        return np.where(live, rate, 0.0)

    def handle_speed(self, sigma, u):
        """Ambient speed |b| on handle samples"""
        ks = self.levels
        j, s = self.locate(sigma)
        return 4.0 ** ks[j] * 4.0 ** _smoothstep(s) * cutoff(np.linalg.norm(u, axis=1))

    def embed(self, y):
        """Map tube coordinates (sigma, u) to points of R^d"""
        pr = self.params
        y = np.atleast_2d(np.asarray(y, dtype=float))
        sigma, u = y[:, 0], y[:, 1:]
        ks, handle, a_here, a_next = self._tables()
        j, s = self.locate(sigma)
        k = ks[j]
        mirror = np.where(k % 2 == 1, 1.0, -1.0)
        side = np.where(k % 2 == 1, 1.0, -1.0)
        out = np.zeros_like(y)

        starts = np.array([pr.z_start(int(level)) for level in ks])
        ends = np.array([pr.z_end(int(level)) for level in ks])
        axis = 2.0 ** -k.astype(float)

        # cylinders
        cyl_x1 = axis + a_here[j] * mirror * u[:, 0]
        cyl_z = starts[j] + s * (ends[j] - starts[j])
        cyl_perp = a_here[j][:, None] * u[:, 1:]

        # handles
        rho = 2.0 ** -(k.astype(float) + 2)
        center = 3.0 * rho
        r, _ = self.handle_radius(s, a_here[j], a_next[j])
        theta = math.pi * s
        q = rho + r * mirror * u[:, 0]
        handle_x1 = center + q * np.cos(theta)
        handle_z = ends[j] + side * q * np.sin(theta)
        handle_perp = r[:, None] * u[:, 1:]

        out[:, 0] = np.where(handle[j], handle_x1, cyl_x1)
        out[:, -1] = np.where(handle[j], handle_z, cyl_z)
        out[:, 1:-1] = np.where(handle[j][:, None], handle_perp, cyl_perp)
        return out

    def sigma_at_height(self, k, z):
        """sigma of the point at height z on the centerline of E_k"""
        pr = self.params
        start, end = pr.z_start(k), pr.z_end(k)
        return self.cylinder_segment(k) + (z - start) / (end - start)


def build_field(params):
    """
    Ambient field of the construction, zero off the tube

    Cylinders carry (-1)^{k+1} 4^k phi(.) e_d; handles carry speed
    4^k 4^{w} phi(.) along the tube fibres, with w rising smoothly from 0 to 1.
    Only levels whose radii are resolvable in double precision around the
    axis position give meaningful values.

    Returns:
        VectorFieldSpec: kind 'counterexample'
    """
    geometry = TubeGeometry(params)
    d = params.dimension

    def evaluator(t, x):
        out = np.zeros_like(x)
        x1, perp, z = x[:, 0], x[:, 1:-1], x[:, -1]
        for k in range(1, params.k_max + 1):
            a = params.radius(k)
            lo, hi = params.z_interval(k)
            offset = np.sqrt((x1 - params.axis(k)) ** 2 + np.sum(perp * perp, axis=1))
            inside = (offset < a) & (z > lo) & (z < hi)
            if inside.any():
                out[inside, -1] = params.sign(k) * 4.0 ** k * cutoff(offset[inside] / a)
        for k in range(1, params.k_max):
            rho = 2.0 ** -(k + 2)
            side = params.sign(k)
            mirror = params.sign(k)
            dx, dz = x1 - 3.0 * rho, z - params.z_end(k)
            q = np.hypot(dx, dz)
            theta = np.arctan2(side * dz, dx)
            on_side = (side * dz >= 0.0) & (theta >= 0.0) & (theta <= math.pi)
            s = np.clip(theta / math.pi, 0.0, 1.0)
            r, dr = geometry.handle_radius(s, params.radius(k), params.radius(k + 1))
            u1 = mirror * (q - rho) / r
            u_perp = perp / r[:, None]
            norm_u = np.sqrt(u1 ** 2 + np.sum(u_perp * u_perp, axis=1))
            inside = on_side & (norm_u < 1.0)
            if not inside.any():
                continue
            tangent = np.zeros((x.shape[0], d))
            tangent[:, 0] = -q * np.sin(theta) + dr * mirror * u1 * np.cos(theta)
            tangent[:, -1] = side * (q * np.cos(theta) + dr * mirror * u1 * np.sin(theta))
            tangent[:, 1:-1] = dr[:, None] * u_perp
            length = np.linalg.norm(tangent, axis=1)
            speed = 4.0 ** k * 4.0 ** _smoothstep(s) * cutoff(norm_u)
            direction = tangent / np.where(length > 0, length, 1.0)[:, None]
            out[inside] = (speed[:, None] * direction)[inside]
        return out

    logger.info(f"Built counterexample field d={d}, p={params.p}, k_max={params.k_max}")
    return VectorFieldSpec(
        dimension=d,
        time_horizon=params.time_horizon,
        evaluator=evaluator,
        kind="counterexample",
        name="counterexample",
        divergence_bounds=(DivergenceBound.constant(0.0, params.time_horizon, level=0),),
        params={"p": params.p, "k_max": params.k_max, "radii": [params.radius(k) for k in range(1, params.k_max + 1)]},
    )


def build_chart_field(params):
    """Field in tube coordinates: sigma' = rate(sigma, u), u' = 0"""
    geometry = TubeGeometry(params)

    def evaluator(t, y):
        out = np.zeros_like(y)
        out[:, 0] = geometry.sigma_rate(y[:, 0], y[:, 1:])
        return out

    return VectorFieldSpec(
        dimension=params.dimension,
        time_horizon=params.time_horizon,
        evaluator=evaluator,
        kind="counterexample",
        name="counterexample-chart",
        params={"chart": True},
    )


def build_chart_domain(params):
    """
    R^d in tube coordinates with V = |embed(y)| and one level per segment

    Level j is {sigma < j + 1}, so its hitting time is the exit time from
    segment j.
    """
    geometry = TubeGeometry(params)
    d = params.dimension
    normal = np.zeros(d)
    normal[0] = 1.0
    levels = tuple(HalfSpace(normal, j + 1.0) for j in range(geometry.segment_count))
    return ExhaustionDomain(
        omega=WholeSpace(d),
        levels=levels,
        potential_fn=lambda y: np.linalg.norm(geometry.embed(y), axis=1),
    )


def geometry_dump(params):
    """Cylinder and handle coordinates for external visualization"""
    cylinders, handles = [], []
    for k in range(1, params.k_max + 1):
        lo, hi = params.z_interval(k)
        cylinders.append({
            "k": k,
            "axis_x1": params.axis(k),
            "radius": params.radius(k),
            "z_range": [lo, hi],
            "direction": params.sign(k),
            "speed": 4.0 ** k,
        })
    for k in range(1, params.k_max):
        rho = 2.0 ** -(k + 2)
        handles.append({
            "k": k,
            "center_x1": 3.0 * rho,
            "center_z": params.z_end(k),
            "centerline_radius": rho,
            "side": params.sign(k),
            "tube_radii": [params.radius(k), params.radius(k + 1)],
            "speed_range": [4.0 ** k, 4.0 ** (k + 1)],
            "length": math.pi * rho,
        })
    return {
        "dimension": params.dimension,
        "p": params.p,
        "k_max": params.k_max,
        "cylinders": cylinders,
        "handles": handles,
    }


# Sobolev accounting =====================================================================

def _sphere_area(dimension):
    """Surface area of the unit sphere in R^dimension"""
    return 2.0 * math.pi ** (dimension / 2) / gamma(dimension / 2)


def cutoff_norms(dimension, p):
    """||phi||_{L^p} and ||grad phi||_{L^p} on the unit ball of R^{d-1}"""
    area = _sphere_area(dimension - 1)
    power = dimension - 2
    value, _ = integrate.quad(lambda r: float(cutoff(r)) ** p * r ** power, 0.0, 1.0,
                              points=[0.5], epsabs=0.0, epsrel=1e-12, limit=200)
    grad, _ = integrate.quad(lambda r: abs(float(cutoff_derivative(r))) ** p * r ** power, 0.5, 1.0,
                             epsabs=0.0, epsrel=1e-12, limit=200)
    return (area * value) ** (1.0 / p), (area * grad) ** (1.0 / p)


@dataclass
class SobolevReport:
    rows: list
    lp_partial_sums: list
    w1p_partial_sums: list
    lp_cauchy: float
    w1p_term_ratios: list
    w1p_predicted_ratio: float
    w1p_tail_estimate: float

    @property
    def geometric(self):
        return all(ratio < 1.0 for ratio in self.w1p_term_ratios) and self.w1p_predicted_ratio < 1.0

    @property
    def bounds_hold(self):
        return all(row["lp_true"] <= row["lp_closed_form"] * (1.0 + 1e-9) for row in self.rows)


def estimate_sobolev_norm(params, radius=2.0, cauchy_tol=1e-6):
    """
    Per-cylinder L^p and W^{1,p} norms on the slab |x_d| < R

    The L^p norm of b on the full-height slab cylinder is integrated in
    physical coordinates and compared with 4^k (2R a_k^{d-1})^{1/p} ||phi||_p;
    the norm on E_k itself (its height cut to the slab) never exceeds it.

    Returns:
        SobolevReport
    """
    d, p = params.dimension, params.p
    phi_norm, grad_norm = cutoff_norms(d, p)
    area = _sphere_area(d - 1)
    rows, lp_terms, w1p_terms = [], [], []
    for k in range(1, params.k_max + 1):
        a = params.radius(k)
        integrand = lambda r, z: (4.0 ** k * float(cutoff(r / a))) ** p * r ** (d - 2)
        value, _ = integrate.dblquad(integrand, -radius, radius, 0.0, a, epsabs=0.0, epsrel=1e-10)
        slab = (area * value) ** (1.0 / p)
        closed = 4.0 ** k * (2.0 * radius * a ** (d - 1)) ** (1.0 / p) * phi_norm
        lo, hi = params.z_interval(k)
        overlap = max(0.0, min(hi, radius) - max(lo, -radius))
        true = slab * (overlap / (2.0 * radius)) ** (1.0 / p)
        gradient = 4.0 ** k / a * (2.0 * radius * a ** (d - 1)) ** (1.0 / p) * grad_norm
        rows.append({
            "k": k,
            "radius": a,
            "lp_slab_quadrature": slab,
            "lp_closed_form": closed,
            "lp_true": true,
            "lp_ratio": true / closed,
            "grad_lp": gradient,
            "w1p_term": true + gradient * (overlap / (2.0 * radius)) ** (1.0 / p),
            "w1p_bound_term": 4.0 ** k * a ** ((d - 1) / p - 1.0),
        })
        lp_terms.append(closed)
        w1p_terms.append(closed + gradient)

    lp_sums = np.cumsum(lp_terms).tolist()
    w1p_sums = np.cumsum(w1p_terms).tolist()
    ratios = [w1p_terms[i + 1] / w1p_terms[i] for i in range(len(w1p_terms) - 1)]
    predicted = 4.0 * 8.0 ** (-params.exponent * ((d - 1) / p - 1.0))
    tail = w1p_terms[-1] * predicted / (1.0 - predicted) if predicted < 1.0 else math.inf
    cauchy = abs(lp_sums[-1] - lp_sums[-3]) / lp_sums[-1]
    if cauchy > cauchy_tol:
        logger.warning(f"L^p partial sums not Cauchy to {cauchy_tol}: {cauchy:.3e}")
    return SobolevReport(rows, lp_sums, w1p_sums, cauchy, ratios, predicted, tail)


# Oscillation census =====================================================================

@dataclass
class OscillationCensus:
    samples: int
    oscillating: int
    excursion_counts: list
    total_times: list
    level_times: dict
    handle_times: dict
    cumulative_ok: int
    classifications: dict
    return_minima: dict
    excursion_maxima: dict
    min_fraction: float = 0.99

    @property
    def fraction_ok(self):
        return self.oscillating / self.samples if self.samples else 0.0

    @property
    def passed(self):
        return self.fraction_ok >= self.min_fraction


def sample_sigma_set(params, count, seed=0):
    """Tube coordinates of points in B_{a_1/2}(e_1/2) x [0, 1] inside E_1"""
    geometry = TubeGeometry(params)
    d = params.dimension
    box = Box([-0.5] * (d - 1) + [0.0], [0.5] * (d - 1) + [1.0])
    drawn = sample_points(box, 4 * count, "sobol", seed)
    drawn = drawn[np.linalg.norm(drawn[:, :-1], axis=1) <= 0.5][:count]
    if drawn.shape[0] < count:
        raise ConfigurationError(f"Could not draw {count} samples from the oscillation set")
    u = drawn[:, :-1]
    sigma = geometry.sigma_at_height(1, drawn[:, -1])
    return np.column_stack([sigma, u])


def _check_tube(trajectory, geometry):
    y0 = trajectory.positions[0]
    drift = np.abs(trajectory.positions[:, 1:] - y0[1:]).max() if len(trajectory.positions) else 0.0
    if drift > 1e-12 or np.linalg.norm(y0[1:]) >= 1.0:
        raise GeometryError(f"Trajectory from {y0.tolist()} left its tube fibre (drift {drift:.3e})")
    if np.any(np.diff(trajectory.positions[:, 0]) < -1e-12):
        raise GeometryError(f"Trajectory from {y0.tolist()} moved backwards along the tube")
    if trajectory.positions[-1, 0] > geometry.segment_count + 1e-6:
        raise GeometryError(f"Trajectory from {y0.tolist()} ran past the end of the tube")


def verify_oscillation(params, count=100, integrator_params=None, seed=0, threads=1,
                       high=8.0, low=1.0, total_slack=0.05, handle_slack=1.1, level_band=2.0,
                       min_excursions=3):
    """
    Integrate samples of the oscillation set and check the blow-up pattern

    A sample passes when it records at least `min_excursions` excursions to
    |X| >= high separated by returns to |X| <= low, and reaches the end of
    the tube before 2 + total_slack.

    Returns:
        OscillationCensus

    Raises:
        GeometryError: If a trajectory leaves the tube
    """
    geometry = TubeGeometry(params)
    integrator_params = integrator_params or IntegratorParams(
        scheme="rk45-adaptive", dt_init=1e-6, dt_min=1e-16, dt_max=1e-3,
        rel_tol=1e-9, abs_tol=1e-12, horizon=params.time_horizon,
    )
    chart_field = build_chart_field(params)
    domain = build_chart_domain(params)
    starts = sample_sigma_set(params, count, seed)
    flow = integrate_ensemble(chart_field, domain, starts, integrator_params,
                              threads=threads, record=True)

    last = geometry.segment_count - 1
    budget = np.cumsum([(2.0 ** m + 1.0) / 4.0 ** m for m in range(1, params.k_max + 1)])
    excursions, totals, ok, classes = [], [], 0, {"proper": 0, "oscillating": 0, "none": 0}
    level_times = {k: [] for k in range(2, params.k_max + 1)}
    handle_times = {k: [] for k in range(1, params.k_max)}
    minima = {k: [] for k in range(2, params.k_max + 1)}
    maxima = {k: [] for k in range(1, params.k_max + 1)}
    cumulative_ok = 0
    for i, trajectory in enumerate(flow.trajectories):
        _check_tube(trajectory, geometry)
        exits = flow.hit_times[i]
        u = starts[i, 1:]

        # exact extrema along each cylinder: |x'| at z = 0 and the end cap
        events = [float(np.linalg.norm(geometry.embed(starts[i:i + 1])[0]))]
        for k in range(1, params.k_max + 1):
            j = geometry.cylinder_segment(k)
            if k > 1 and math.isfinite(exits[j - 1]):
                middle = np.concatenate([[geometry.sigma_at_height(k, 0.0)], u])
                low_value = float(np.linalg.norm(geometry.embed(middle)[0]))
                minima[k].append(low_value)
                events.append(low_value)
            if math.isfinite(exits[j]):
                high_value = float(np.linalg.norm(geometry.embed(flow.hit_points[i, j])[0]))
                maxima[k].append(high_value)
                events.append(high_value)
        excursions.append(count_excursions(events, high, low))

        level_ok, handles_fast = True, True
        for k in range(2, params.k_max + 1):
            j = geometry.cylinder_segment(k)
            if math.isfinite(exits[j]):
                elapsed = float(exits[j] - exits[j - 1])
                level_times[k].append(elapsed)
                ratio = elapsed / (2.0 ** k / 4.0 ** k)
                level_ok = level_ok and 1.0 / level_band <= ratio <= level_band
        for k in range(1, params.k_max):
            j = geometry.handle_segment(k)
            if math.isfinite(exits[j]):
                elapsed = float(exits[j] - exits[j - 1])
                handle_times[k].append(elapsed)
                handles_fast = handles_fast and elapsed <= 4.0 ** -k * handle_slack

        total = float(exits[last])
        totals.append(total)
        cumulative = all(
            exits[geometry.cylinder_segment(k)] <= budget[k - 1] + total_slack
            for k in range(1, params.k_max + 1)
        )
        cumulative_ok += int(cumulative)
        classes[classify_blowup(trajectory, domain, high=high, low=low)] += 1
        if (excursions[-1] >= min_excursions and total <= 2.0 + total_slack
                and cumulative and handles_fast and level_ok):
            ok += 1

    census = OscillationCensus(
        samples=count, oscillating=ok, excursion_counts=excursions, total_times=totals,
        level_times=level_times, handle_times=handle_times, cumulative_ok=cumulative_ok,
        classifications=classes, return_minima=minima, excursion_maxima=maxima,
    )
    logger.info(f"Oscillation census: {ok}/{count} samples oscillate, max total time {max(totals):.4f}")
    return census
