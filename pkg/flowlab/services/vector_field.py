"""
Time-dependent vector fields b(t, x): analytic families, mollification,
divergence bounds and their verification
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate
from scipy.special import gamma, roots_gegenbauer

from ..exceptions import ConfigurationError, DomainError, NonFiniteFieldError
from .domain import Region, as_points, sample_points

logger = logging.getLogger(__name__)

FIELD_KINDS = ("analytic", "counterexample", "mollified", "composite")


@dataclass(frozen=True)
class DivergenceBound:
    """
    One-sided divergence bound div b(t, .) >= m(t) on a subdomain

    `level` indexes the exhaustion; None means the bound holds on all of
    Omega (a global bound).
    """
    rate: Callable
    time_horizon: float
    level: Optional[int] = None
    region: Optional[Region] = None
    breakpoints: tuple = ()

    @classmethod
    def constant(cls, value, time_horizon, level=None, region=None):
        value = float(value)
        return cls(
            rate=lambda t: np.full_like(np.asarray(t, dtype=float), value),
            time_horizon=float(time_horizon), level=level, region=region,
        )

    @classmethod
    def piecewise(cls, breakpoints, values, time_horizon, level=None, region=None):
        """m(t) = values[i] on [breakpoints[i-1], breakpoints[i])"""
        breakpoints = tuple(float(b) for b in breakpoints)
        values = np.asarray(values, dtype=float)
        if len(values) != len(breakpoints) + 1:
            raise ConfigurationError("Piecewise divergence bound needs one more value than breakpoints")
        if list(breakpoints) != sorted(breakpoints):
            raise ConfigurationError("Divergence bound breakpoints must be increasing")

        def rate(t):
            return values[np.searchsorted(breakpoints, np.asarray(t, dtype=float), side="right")]

        return cls(rate=rate, time_horizon=float(time_horizon), level=level,
                   region=region, breakpoints=breakpoints)

    @property
    def is_global(self):
        return self.level is None

    @property
    def total(self):
        """L = integral of |m(t)| over [0, T], segment by segment"""
        edges = [0.0] + [b for b in self.breakpoints if 0.0 < b < self.time_horizon] + [self.time_horizon]
        total = 0.0
        for a, b in zip(edges, edges[1:]):
            value, _ = integrate.quad(lambda s: abs(float(self.rate(s))), a, b,
                                      epsabs=0.0, epsrel=1e-12, limit=200)
            total += value
        return total

    def compression_bound(self):
        return math.exp(self.total)


@dataclass(frozen=True)
class VectorFieldSpec:
    """
    Evaluable field b(t, x) on [0, T] x R^d

    `evaluator` and `divergence_evaluator` are vectorized: they take `t` of
    shape (N,) and `x` of shape (N, d). Outside `support` the field is zero,
    and ties on the support boundary go to zero.
    """
    dimension: int
    time_horizon: float
    evaluator: Callable
    divergence_evaluator: Optional[Callable] = None
    kind: str = "analytic"
    name: str = ""
    support: Optional[Region] = None
    divergence_bounds: tuple = ()
    radial_speed: Optional[Callable] = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise ConfigurationError(f"Unknown field kind {self.kind!r}")
        if self.dimension < 1 or self.time_horizon <= 0:
            raise ConfigurationError("Field needs a positive dimension and time horizon")

    def _times(self, t, n):
        return np.broadcast_to(np.asarray(t, dtype=float), (n,))

    def velocity(self, t, x):
        """Vectorized b(t, x), shape (N, d), without finiteness checks"""
        x = as_points(x)
        v = np.asarray(self.evaluator(self._times(t, x.shape[0]), x), dtype=float).reshape(x.shape)
        if self.support is not None:
            v = np.where(self.support.inside(x)[:, None], v, 0.0)
        return v

    def global_bound(self):
        """The divergence bound declared on all of Omega, if any"""
        for bound in self.divergence_bounds:
            if bound.is_global:
                return bound
        return None

    def bound_for_level(self, level):
        for bound in self.divergence_bounds:
            if bound.level == level:
                return bound
        return self.global_bound()


def check_finite(t, x, v):
    """Raise NonFiniteFieldError at the first row of `v` that is not finite"""
    bad = ~np.all(np.isfinite(v), axis=1)
    if bad.any():
        row = int(np.argmax(bad))
        t_row = float(np.broadcast_to(np.asarray(t, dtype=float), (v.shape[0],))[row])
        logger.error(f"Non-finite field value at t={t_row}, x={as_points(x)[row].tolist()}")
        raise NonFiniteFieldError(t_row, as_points(x)[row])


def evaluate(field_spec, t, x):
    """
    Evaluate the field at a single (t, x)

    Args:
        field_spec: VectorFieldSpec
        t: Time in [0, T]
        x: Point in R^d

    Returns:
        np.ndarray: Velocity of shape (d,)

    Raises:
        DomainError: If t is outside [0, T]
        NonFiniteFieldError: If the field value is not finite
    """
    if not 0.0 <= t <= field_spec.time_horizon:
        raise DomainError(f"Time {t} is outside [0, {field_spec.time_horizon}]")
    x = as_points(x)
    v = field_spec.velocity(t, x)
    check_finite(t, x, v)
    return v[0]


def default_fd_step(field_spec, region=None):
    region = region or field_spec.support
    if region is not None and region.is_bounded():
        lo, hi = region.bounds()
        return 1e-4 * float(np.linalg.norm(hi - lo))
    return 1e-4


def divergence(field_spec, t, x, h=None):
    """
    Divergence of the field, analytic when declared, else centered differences

    Returns:
        np.ndarray: Shape (N,)
    """
    x = as_points(x)
    times = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
    if field_spec.divergence_evaluator is not None:
        values = np.asarray(field_spec.divergence_evaluator(times, x), dtype=float).reshape(-1)
        if field_spec.support is not None:
            values = np.where(field_spec.support.inside(x), values, 0.0)
        return values
    return fd_divergence(field_spec, times, x, h if h is not None else default_fd_step(field_spec))


def fd_divergence(field_spec, t, x, h):
    """Centered finite-difference divergence with step h"""
    x = as_points(x)
    total = np.zeros(x.shape[0])
    for axis in range(field_spec.dimension):
        step = np.zeros(field_spec.dimension)
        step[axis] = h
        forward = field_spec.velocity(t, x + step)[:, axis]
        backward = field_spec.velocity(t, x - step)[:, axis]
        total += (forward - backward) / (2.0 * h)
    return total


@dataclass(frozen=True)
class SamplePlan:
    """Where and when to sample a field for a pointwise check"""
    region: Region
    count: int = 2048
    time_samples: int = 5
    sampler: str = "sobol"
    seed: int = 0


@dataclass
class DivergenceCheck:
    violations: list
    worst_margin: float
    sample_count: int

    @property
    def passed(self):
        return not self.violations


def verify_divergence_bound(field_spec, bound, plan, tolerance=1e-9, h=None):
    """
    Sample div b - m(t) on a region and list every violation

    Args:
        field_spec: VectorFieldSpec
        bound: DivergenceBound to verify
        plan: SamplePlan giving the region and sample counts
        tolerance: Allowed undershoot below m(t)
        h: Finite-difference step when no analytic divergence is declared

    Returns:
        DivergenceCheck: violations as (t, x, div, m) tuples and the worst margin
    """
    points = sample_points(plan.region, plan.count, plan.sampler, plan.seed)
    times = np.linspace(0.0, field_spec.time_horizon, plan.time_samples)
    violations, worst = [], math.inf
    for t in times:
        div = divergence(field_spec, t, points, h)
        rate = float(bound.rate(t))
        margin = div - rate
        worst = min(worst, float(margin.min()))
        for row in np.flatnonzero(margin < -tolerance):
            violations.append((float(t), points[row].tolist(), float(div[row]), rate))
    if violations:
        logger.warning(f"{len(violations)} divergence bound violations for {field_spec.name}, worst margin {worst:.3e}")
    return DivergenceCheck(violations=violations, worst_margin=worst, sample_count=points.shape[0] * len(times))


# Mollification ==========================================================================

def bump_kernel_mass(dimension, power=4):
    """Integral of (1 - |y|^2)^power over the unit ball of R^d"""
    return math.pi ** (dimension / 2) * gamma(power + 1) / gamma(dimension / 2 + power + 1)


MASS_TOLERANCE = 1e-8


def sphere_rule(dimension, points):
    """
    Product rule on the unit sphere S^{d-1}

    The circle gets 2 * points equally spaced angles; each further dimension
    adds `points` Gauss-Gegenbauer nodes in the polar coordinate t = cos(theta).

    Returns:
        tuple: (directions (Q, d), weights (Q,)) with weights summing to |S^{d-1}|
    """
    if dimension == 1:
        return np.array([[1.0], [-1.0]]), np.ones(2)
    if dimension == 2:
        angles = 2.0 * np.pi * np.arange(2 * points) / (2 * points)
        return np.stack([np.cos(angles), np.sin(angles)], axis=1), np.full(2 * points, np.pi / points)
    t, t_weights = roots_gegenbauer(points, (dimension - 2) / 2)
    sub_directions, sub_weights = sphere_rule(dimension - 1, points)
    scale = np.sqrt(1.0 - t * t)
    directions = np.concatenate([
        np.column_stack([np.full(len(sub_weights), ti), si * sub_directions]) for ti, si in zip(t, scale)
    ])
    return directions, np.outer(t_weights, sub_weights).reshape(-1)


@dataclass(frozen=True)
class MollifierParams:
    """
    Scale and quadrature of the mollifier rho_eps(y) = eps^-d rho(y / eps)

    rho is the normalized bump (1 - |y|^2)^power on the unit ball. The kernel is
    integrated in polar coordinates: Gauss-Legendre in r, with enough nodes to
    integrate (1 - r^2)^power r^(d-1) exactly, times `sphere_rule` directions.
    """
    epsilon: float
    quadrature_points: int = 6
    kernel_power: int = 4

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError(f"Mollifier epsilon must be positive, got {self.epsilon}")
        if self.quadrature_points < 2:
            raise ConfigurationError(
                f"Mollifier needs at least 2 quadrature points per coordinate, got {self.quadrature_points}"
            )

    def kernel(self, y):
        y = as_points(y)
        dimension = y.shape[1]
        r2 = np.sum(y * y, axis=1)
        return np.where(r2 < 1.0, (1.0 - r2) ** self.kernel_power, 0.0) / bump_kernel_mass(dimension, self.kernel_power)

    def radial_points(self, dimension):
        return max(self.quadrature_points, self.kernel_power + math.ceil(dimension / 2))

    def _rule(self, dimension):
        r, r_weights = leggauss(self.radial_points(dimension))
        r, r_weights = 0.5 * (r + 1.0), 0.5 * r_weights
        directions, d_weights = sphere_rule(dimension, self.quadrature_points)
        offsets = (r[:, None, None] * directions[None, :, :]).reshape(-1, dimension)
        weights = np.outer(r_weights * r ** (dimension - 1), d_weights).reshape(-1)
        return offsets, weights * self.kernel(offsets)

    def raw_mass(self, dimension):
        """Quadrature of the normalized kernel"""
        return float(np.sum(self._rule(dimension)[1]))

    def nodes(self, dimension):
        """
        Polar nodes inside the unit ball with kernel-weighted quadrature weights

        Returns:
            tuple: (offsets (Q, d), weights (Q,))

        Raises:
            ConfigurationError: If the weights miss unit mass by more than 1e-8
        """
        offsets, weights = self._rule(dimension)
        mass = float(np.sum(weights))
        if abs(mass - 1.0) > MASS_TOLERANCE:
            logger.error(f"Mollifier quadrature in dimension {dimension} has mass {mass!r}")
            raise ConfigurationError(
                f"Mollifier quadrature integrates the kernel to {mass!r} in dimension {dimension}, "
                f"not 1 within {MASS_TOLERANCE}"
            )
        return offsets, weights


def mollify(field_spec, params, clip_domain):
    """
    Convolve the field, clipped to the inner set A^eps, with the kernel at scale eps

    A^eps = {x in A : dist(x, R^d \\ A) >= eps}, so the mollified field at x
    only sees values of b within distance eps of x, and vanishes outside A.

    Args:
        field_spec: VectorFieldSpec to smooth
        params: MollifierParams
        clip_domain: Region A

    Returns:
        VectorFieldSpec: kind 'mollified', supported in A
    """
    eps = params.epsilon
    offsets, weights = params.nodes(field_spec.dimension)
    offsets = eps * offsets

    def clipped(t, x):
        v = field_spec.velocity(t, x)
        return np.where((clip_domain.margin(x) >= eps)[:, None], v, 0.0)

    def evaluator(t, x):
        total = np.zeros_like(x, dtype=float)
        for offset, weight in zip(offsets, weights):
            total += weight * clipped(t, x - offset)
        return total

    logger.info(f"Mollified {field_spec.name or field_spec.kind} at eps={eps} with {len(weights)} nodes")
    return VectorFieldSpec(
        dimension=field_spec.dimension,
        time_horizon=field_spec.time_horizon,
        evaluator=evaluator,
        kind="mollified",
        name=f"{field_spec.name}*rho[{eps:g}]",
        support=clip_domain,
        params={"epsilon": eps, "base": field_spec.name, "clip": clip_domain.describe()},
    )


def field_distance(field_a, field_b, region, t=0.0, norm="l1", count=8192, seed=0):
    """
    Distance between two fields on a bounded region

    'l1' integrates |b_a - b_b| by a scrambled Sobol rule; 'sup' takes the
    maximum over the same points.
    """
    points = sample_points(region, count, "sobol", seed)
    gap = np.linalg.norm(field_a.velocity(t, points) - field_b.velocity(t, points), axis=1)
    if norm == "sup":
        return float(gap.max())
    if norm != "l1":
        raise ConfigurationError(f"Unknown field norm {norm!r}")
    return float(gap.mean() * region.volume())


def combine(*fields, name=None):
    """Sum of fields on a common dimension; global divergence bounds add up"""
    if not fields:
        raise ConfigurationError("combine() needs at least one field")
    dimension = fields[0].dimension
    if any(f.dimension != dimension for f in fields):
        raise ConfigurationError("Cannot combine fields of different dimensions")
    horizon = min(f.time_horizon for f in fields)

    def evaluator(t, x):
        return sum(f.velocity(t, x) for f in fields)

    divergence_evaluator = None
    if all(f.divergence_evaluator is not None for f in fields):
        def divergence_evaluator(t, x):
            return sum(divergence(f, t, x) for f in fields)

    bounds = ()
    globals_ = [f.global_bound() for f in fields]
    if all(b is not None for b in globals_):
        bounds = (DivergenceBound(
            rate=lambda t: sum(b.rate(t) for b in globals_),
            time_horizon=horizon,
            breakpoints=tuple(sorted({p for b in globals_ for p in b.breakpoints})),
        ),)

    return VectorFieldSpec(
        dimension=dimension,
        time_horizon=horizon,
        evaluator=evaluator,
        divergence_evaluator=divergence_evaluator,
        kind="composite",
        name=name or "+".join(f.name for f in fields),
        divergence_bounds=bounds,
        params={"members": [f.name for f in fields]},
    )


# Analytic families ======================================================================

def _norms(x):
    return np.linalg.norm(x, axis=1)


def zero_field(dimension, time_horizon):
    return VectorFieldSpec(
        dimension=dimension, time_horizon=time_horizon,
        evaluator=lambda t, x: np.zeros_like(x),
        divergence_evaluator=lambda t, x: np.zeros(x.shape[0]),
        name="zero",
        divergence_bounds=(DivergenceBound.constant(0.0, time_horizon),),
        radial_speed=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
    )


def constant_field(dimension, time_horizon, vector):
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (dimension,):
        raise ConfigurationError(f"Constant field vector must have {dimension} components")
    speed = float(np.linalg.norm(vector))
    return VectorFieldSpec(
        dimension=dimension, time_horizon=time_horizon,
        evaluator=lambda t, x: np.broadcast_to(vector, x.shape).copy(),
        divergence_evaluator=lambda t, x: np.zeros(x.shape[0]),
        name="constant",
        divergence_bounds=(DivergenceBound.constant(0.0, time_horizon),),
        radial_speed=lambda r: np.full_like(np.asarray(r, dtype=float), speed),
        params={"vector": vector.tolist()},
    )


def linear_field(dimension, time_horizon, rate=1.0):
    """b(x) = rate * x, divergence rate * d"""
    rate = float(rate)
    return VectorFieldSpec(
        dimension=dimension, time_horizon=time_horizon,
        evaluator=lambda t, x: rate * x,
        divergence_evaluator=lambda t, x: np.full(x.shape[0], rate * dimension),
        name="linear",
        divergence_bounds=(DivergenceBound.constant(rate * dimension, time_horizon),),
        radial_speed=lambda r: abs(rate) * np.asarray(r, dtype=float),
        params={"rate": rate},
    )


def rotation_field(dimension, time_horizon, omega=1.0):
    """Rigid rotation in the (x_1, x_2) plane"""
    if dimension < 2:
        raise ConfigurationError("Rotation field needs dimension >= 2")
    omega = float(omega)

    def evaluator(t, x):
        v = np.zeros_like(x)
        v[:, 0] = -omega * x[:, 1]
        v[:, 1] = omega * x[:, 0]
        return v

    return VectorFieldSpec(
        dimension=dimension, time_horizon=time_horizon,
        evaluator=evaluator,
        divergence_evaluator=lambda t, x: np.zeros(x.shape[0]),
        name="rotation",
        divergence_bounds=(DivergenceBound.constant(0.0, time_horizon),),
        radial_speed=lambda r: abs(omega) * np.asarray(r, dtype=float),
        params={"omega": omega},
    )


def cubic_field(dimension, time_horizon, scale=1.0):
    """b(x) = scale * x|x|^2; radial solutions blow up at t = 1/(2 scale |x0|^2)"""
    scale = float(scale)
    if scale < 0:
        raise ConfigurationError("Cubic field scale must be nonnegative")
    return VectorFieldSpec(
        dimension=dimension, time_horizon=time_horizon,
        evaluator=lambda t, x: scale * x * np.sum(x * x, axis=1)[:, None],
        divergence_evaluator=lambda t, x: scale * (dimension + 2) * np.sum(x * x, axis=1),
        name="cubic",
        divergence_bounds=(DivergenceBound.constant(0.0, time_horizon),),
        radial_speed=lambda r: scale * np.asarray(r, dtype=float) ** 3,
        params={"scale": scale},
    )


def saturating_field(dimension, time_horizon):
    """b(x) = x / (1 + |x|), bounded by 1"""

    def div(t, x):
        r = _norms(x)
        return dimension / (1.0 + r) - r / (1.0 + r) ** 2

    return VectorFieldSpec(
        dimension=dimension, time_horizon=time_horizon,
        evaluator=lambda t, x: x / (1.0 + _norms(x))[:, None],
        divergence_evaluator=div,
        name="saturating",
        divergence_bounds=(DivergenceBound.constant(0.0, time_horizon),),
        radial_speed=lambda r: np.asarray(r, dtype=float) / (1.0 + np.asarray(r, dtype=float)),
    )


def spiral_field(dimension, time_horizon, radial=1.0, angular=0.0, r_min=0.5):
    """
    Planar field with constant radial and angular components for |x| >= r_min

    Inside B_{r_min} the field is scaled linearly to zero so it stays continuous.
    """
    if dimension != 2:
        raise ConfigurationError("Spiral field is planar")
    radial, angular, r_min = float(radial), float(angular), float(r_min)
    if r_min <= 0:
        raise ConfigurationError("Spiral r_min must be positive")
    speed = math.hypot(radial, angular)

    def evaluator(t, x):
        r = _norms(x)
        scale = np.where(r >= r_min, 1.0 / np.maximum(r, r_min), 1.0 / r_min)
        perp = np.stack([-x[:, 1], x[:, 0]], axis=1)
        return (radial * x + angular * perp) * scale[:, None]

    def div(t, x):
        r = _norms(x)
        return np.where(r >= r_min, radial / np.maximum(r, r_min), 2.0 * radial / r_min)

    return VectorFieldSpec(
        dimension=2, time_horizon=time_horizon,
        evaluator=evaluator,
        divergence_evaluator=div,
        name="spiral",
        divergence_bounds=(DivergenceBound.constant(min(0.0, 2.0 * radial / r_min), time_horizon),),
        radial_speed=lambda r: np.where(np.asarray(r, dtype=float) >= r_min, speed,
                                        speed * np.asarray(r, dtype=float) / r_min),
        params={"radial": radial, "angular": angular, "r_min": r_min},
    )


def kinked_rotation_field(dimension, time_horizon, kink=0.5, rate=0.0):
    """
    b(x) = (-x_2 + rate x_1, x_1 + kink |x_1| + rate x_2)

    Lipschitz with a gradient jump on x_1 = 0; divergence 2 * rate.
    """
    if dimension != 2:
        raise ConfigurationError("Kinked rotation field is planar")
    kink, rate = float(kink), float(rate)

    def evaluator(t, x):
        return np.stack([
            -x[:, 1] + rate * x[:, 0],
            x[:, 0] + kink * np.abs(x[:, 0]) + rate * x[:, 1],
        ], axis=1)

    return VectorFieldSpec(
        dimension=2, time_horizon=time_horizon,
        evaluator=evaluator,
        divergence_evaluator=lambda t, x: np.full(x.shape[0], 2.0 * rate),
        name="kinked_rotation",
        divergence_bounds=(DivergenceBound.constant(2.0 * rate, time_horizon),),
        params={"kink": kink, "rate": rate},
    )


FIELD_FAMILIES = {
    "zero": zero_field,
    "constant": constant_field,
    "linear": linear_field,
    "rotation": rotation_field,
    "cubic": cubic_field,
    "saturating": saturating_field,
    "spiral": spiral_field,
    "kinked_rotation": kinked_rotation_field,
}


def make_field(family, dimension, time_horizon, support=None, **params):
    """
    Build a shipped analytic field by family name

    Raises:
        ConfigurationError: If the family is unknown or its parameters are invalid
    """
    try:
        factory = FIELD_FAMILIES[family]
    except KeyError:
        raise ConfigurationError(
            f"Unknown field family {family!r}, expected one of {sorted(FIELD_FAMILIES)}"
        ) from None
    try:
        spec = factory(dimension, float(time_horizon), **params)
    except TypeError as exc:
        raise ConfigurationError(f"Bad parameters for field family {family!r}: {exc}") from exc
    if support is not None:
        spec = replace(spec, support=support)
    return spec
