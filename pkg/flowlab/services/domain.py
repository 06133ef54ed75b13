"""
Open sets, exhaustions, confining potentials and hitting times
"""
import json
import logging
import math
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import gamma
from scipy.stats import qmc

from ..exceptions import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

BOUNDARY_SEED = 20140321
VOLUME_SAMPLES_LOG2 = 16


def as_points(x):
    """Return `x` as a float array of shape (N, d)"""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :]
    return x


class Region(ABC):
    """An open subset of R^d with a signed distance estimate"""

    dimension: int

    @abstractmethod
    def margin(self, x):
        """Signed distance estimate to the boundary, positive inside, shape (N,)"""

    @abstractmethod
    def bounds(self):
        """Axis-aligned bounding box (lo, hi), possibly infinite"""

    @abstractmethod
    def boundary_samples(self, count):
        """Deterministic sample of boundary points, shape (M, d)"""

    @abstractmethod
    def describe(self):
        """Config syntax for this region"""

    def inside(self, x):
        return self.margin(x) > 0.0

    def is_bounded(self):
        lo, hi = self.bounds()
        return bool(np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)))

    def volume(self):
        """Lebesgue measure, estimated by a Sobol sweep of the bounding box"""
        if not self.is_bounded():
            return math.inf
        lo, hi = self.bounds()
        sampler = qmc.Sobol(self.dimension, scramble=False)
        points = qmc.scale(sampler.random_base2(VOLUME_SAMPLES_LOG2), lo, hi)
        return float(np.prod(hi - lo) * np.mean(self.inside(points)))

    def __str__(self):
        return self.describe()


class WholeSpace(Region):
    """R^d itself"""

    def __init__(self, dimension):
        self.dimension = int(dimension)

    def margin(self, x):
        return np.full(as_points(x).shape[0], np.inf)

    def bounds(self):
        return np.full(self.dimension, -np.inf), np.full(self.dimension, np.inf)

    def boundary_samples(self, count):
        return np.empty((0, self.dimension))

    def volume(self):
        return math.inf

    def describe(self):
        return "rspace"


class Ball(Region):
    """Open Euclidean ball B_r(c)"""

    def __init__(self, center, radius):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.dimension = self.center.shape[0]
        if self.radius <= 0:
            raise ConfigurationError(f"Ball radius must be positive, got {radius}")

    def margin(self, x):
        return self.radius - np.linalg.norm(as_points(x) - self.center, axis=1)

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def boundary_samples(self, count):
        rng = np.random.default_rng(BOUNDARY_SEED)
        directions = rng.standard_normal((count, self.dimension))
        directions /= np.linalg.norm(directions, axis=1)[:, None]
        return self.center + self.radius * directions

    def volume(self):
        d = self.dimension
        return math.pi ** (d / 2) / gamma(d / 2 + 1) * self.radius ** d

    def describe(self):
        return f"ball({json.dumps(self.center.tolist())}, {self.radius!r})"


class Box(Region):
    """Open axis-aligned box (lo, hi)"""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.dimension = self.lo.shape[0]
        if self.hi.shape != self.lo.shape or np.any(self.hi <= self.lo):
            raise ConfigurationError(f"Box needs lo < hi componentwise, got {lo} and {hi}")

    def margin(self, x):
        x = as_points(x)
        inner = np.minimum(x - self.lo, self.hi - x).min(axis=1)
        excess = np.maximum(self.lo - x, 0.0) + np.maximum(x - self.hi, 0.0)
        outer = -np.linalg.norm(excess, axis=1)
        return np.where(inner > 0.0, inner, np.minimum(outer, inner.clip(max=0.0)))

    def bounds(self):
        return self.lo.copy(), self.hi.copy()

    def boundary_samples(self, count):
        rng = np.random.default_rng(BOUNDARY_SEED)
        lo = np.where(np.isfinite(self.lo), self.lo, -10.0)
        hi = np.where(np.isfinite(self.hi), self.hi, 10.0)
        points = lo + (hi - lo) * rng.random((count, self.dimension))
        axes = rng.integers(0, self.dimension, count)
        upper = rng.random(count) < 0.5
        rows = np.arange(count)
        points[rows, axes] = np.where(upper, self.hi[axes], self.lo[axes])
        return points[np.all(np.isfinite(points), axis=1)]

    def volume(self):
        return float(np.prod(self.hi - self.lo))

    def describe(self):
        return f"box({json.dumps(self.lo.tolist())}, {json.dumps(self.hi.tolist())})"


class HalfSpace(Region):
    """Open half-space {x : n.x < offset}"""

    def __init__(self, normal, offset):
        normal = np.asarray(normal, dtype=float)
        length = np.linalg.norm(normal)
        if length == 0:
            raise ConfigurationError("Half-space normal must be nonzero")
        self.normal = normal / length
        self.offset = float(offset) / length
        self.dimension = normal.shape[0]

    def margin(self, x):
        return self.offset - as_points(x) @ self.normal

    def bounds(self):
        return np.full(self.dimension, -np.inf), np.full(self.dimension, np.inf)

    def boundary_samples(self, count, extent=10.0):
        rng = np.random.default_rng(BOUNDARY_SEED)
        points = extent * (2.0 * rng.random((count, self.dimension)) - 1.0)
        return points + np.outer(self.margin(points), self.normal)

    def describe(self):
        return f"halfspace({json.dumps(self.normal.tolist())}, {self.offset!r})"


class Union(Region):
    """Finite union of regions; margin is the largest member margin"""

    def __init__(self, members):
        self.members = tuple(members)
        if not self.members:
            raise ConfigurationError("Union needs at least one member")
        self.dimension = self.members[0].dimension

    def margin(self, x):
        return np.max([member.margin(x) for member in self.members], axis=0)

    def bounds(self):
        lows, highs = zip(*(member.bounds() for member in self.members))
        return np.min(lows, axis=0), np.max(highs, axis=0)

    def boundary_samples(self, count):
        samples = []
        for member in self.members:
            points = member.boundary_samples(count)
            others = [m for m in self.members if m is not member]
            if others and len(points):
                points = points[np.max([m.margin(points) for m in others], axis=0) <= 0.0]
            samples.append(points)
        return np.concatenate(samples)

    def describe(self):
        return "union[" + ", ".join(m.describe() for m in self.members) + "]"


class Intersection(Region):
    """Finite intersection of regions; margin is the smallest member margin"""

    def __init__(self, members):
        self.members = tuple(members)
        if not self.members:
            raise ConfigurationError("Intersection needs at least one member")
        self.dimension = self.members[0].dimension

    def margin(self, x):
        return np.min([member.margin(x) for member in self.members], axis=0)

    def bounds(self):
        lows, highs = zip(*(member.bounds() for member in self.members))
        return np.max(lows, axis=0), np.min(highs, axis=0)

    def boundary_samples(self, count):
        samples = []
        for member in self.members:
            points = member.boundary_samples(count)
            others = [m for m in self.members if m is not member]
            if others and len(points):
                points = points[np.min([m.margin(points) for m in others], axis=0) >= 0.0]
            samples.append(points)
        return np.concatenate(samples)

    def describe(self):
        return "intersection[" + ", ".join(m.describe() for m in self.members) + "]"


class SublevelSet(Region):
    """{x in Omega : V(x) < threshold}; margin is threshold - V, not a distance"""

    def __init__(self, domain, threshold):
        self.domain = domain
        self.threshold = float(threshold)
        self.dimension = domain.dimension

    def margin(self, x):
        return self.threshold - self.domain.potential_values(x)

    def bounds(self):
        return self.domain.omega.bounds()

    def boundary_samples(self, count):
        return np.empty((0, self.dimension))

    def describe(self):
        return f"sublevel(V < {self.threshold!r})"


# Region config syntax ==================================================================

_CALL = re.compile(r"(ball|box|halfspace)\s*\((.*)\)", re.S)
_GROUP = re.compile(r"(union|intersection)\s*\[(.*)\]", re.S)


def _split_top_level(text):
    """Split on commas that are not nested inside brackets"""
    parts, depth, current = [], 0, []
    for char in text:
        if char in "([":
            depth += 1
        elif char in ")]":
            depth -= 1
        if char == "," and depth == 0:
            parts.append("".join(current).strip())
            current = []
        else:
            current.append(char)
    tail = "".join(current).strip()
    if tail:
        parts.append(tail)
    return parts


def parse_region(text, dimension=None):
    """
    Parse the region syntax used in experiment configs

    Args:
        text: `ball(center, radius)`, `box(lo, hi)`, `halfspace(normal, offset)`,
            `rspace`, `union[...]` or `intersection[...]`
        dimension: Ambient dimension, required for `rspace`

    Returns:
        Region: Parsed region

    Raises:
        ConfigurationError: If the text is not valid region syntax
    """
    text = str(text).strip()
    if text == "rspace":
        if dimension is None:
            raise ConfigurationError("'rspace' needs the ambient dimension")
        return WholeSpace(dimension)

    group = _GROUP.fullmatch(text)
    if group:
        members = [parse_region(part, dimension) for part in _split_top_level(group.group(2))]
        return Union(members) if group.group(1) == "union" else Intersection(members)

    call = _CALL.fullmatch(text)
    if not call:
        raise ConfigurationError(f"Unrecognised region syntax: {text!r}")
    try:
        args = json.loads("[" + call.group(2) + "]")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"Bad arguments in region {text!r}: {exc}") from exc
    if len(args) != 2:
        raise ConfigurationError(f"Region {text!r} takes exactly two arguments")

    kind = call.group(1)
    if kind == "ball":
        region = Ball(args[0], args[1])
    elif kind == "box":
        region = Box(args[0], args[1])
    else:
        region = HalfSpace(args[0], args[1])
    if dimension is not None and region.dimension != dimension:
        raise ConfigurationError(
            f"Region {text!r} has dimension {region.dimension}, expected {dimension}"
        )
    return region


# Sampling ===============================================================================

SAMPLERS = ("sobol", "halton", "uniform")


def sample_points(region, count, sampler="sobol", seed=0, bounding_box=None):
    """
    Deterministic sample of points inside a region

    Points are drawn in the bounding box with a scrambled low-discrepancy
    sequence (or a seeded uniform generator) and kept when inside.

    Args:
        region: Region to sample
        count: Number of points to return
        sampler: 'sobol', 'halton' or 'uniform'
        seed: Scrambling / generator seed
        bounding_box: Optional (lo, hi) to use instead of region.bounds()

    Returns:
        np.ndarray: Points of shape (count, d)

    Raises:
        ConfigurationError: If the sampler is unknown or the box is unbounded
    """
    if sampler not in SAMPLERS:
        raise ConfigurationError(f"Unknown sampler {sampler!r}, expected one of {SAMPLERS}")
    lo, hi = bounding_box if bounding_box is not None else region.bounds()
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ConfigurationError(f"Cannot sample the unbounded region {region.describe()}")

    d = region.dimension
    if sampler == "sobol":
        engine = qmc.Sobol(d, scramble=True, seed=seed)
    elif sampler == "halton":
        engine = qmc.Halton(d, scramble=True, seed=seed)
    else:
        engine = np.random.default_rng(seed)

    accepted, total, acceptance = [], 0, 1.0
    for _ in range(64):
        wanted = int(math.ceil((count - total) / max(acceptance, 1e-3) * 1.1)) + 16
        if sampler == "sobol":
            # Sobol balance needs the running total to stay a power of two
            generated = engine.num_generated
            m = int(math.log2(generated)) if generated else max(int(math.ceil(math.log2(wanted))), 1)
            raw = engine.random_base2(m)
        elif sampler == "halton":
            raw = engine.random(wanted)
        else:
            raw = engine.random((wanted, d))
        points = qmc.scale(raw, lo, hi)
        keep = region.inside(points)
        acceptance = max(float(keep.mean()), 1e-3)
        accepted.append(points[keep])
        total += int(keep.sum())
        if total >= count:
            break
    else:
        raise ConfigurationError(f"Region {region.describe()} is too thin to sample {count} points")
    return np.concatenate(accepted)[:count]


# Membership =============================================================================

@dataclass(frozen=True)
class Membership:
    """Result of a membership query"""
    inside: bool
    margin: float

    @property
    def status(self):
        if self.margin > 0:
            return "inside"
        if self.margin == 0:
            return "boundary"
        return "outside"


def contains(region, x):
    """
    Membership of one point together with its signed margin

    Args:
        region: Region to query
        x: Point in R^d

    Returns:
        Membership: `inside` is False on the boundary itself
    """
    margin = float(region.margin(x)[0])
    return Membership(inside=margin > 0.0, margin=margin)


# Exhaustion domains =====================================================================

def default_potential(omega):
    """V(x) = max{dist(x, R^d \\ Omega)^-1, |x|}, +inf outside Omega"""

    def potential(x):
        x = as_points(x)
        margin = omega.margin(x)
        with np.errstate(divide="ignore"):
            inverse_distance = np.where(margin > 0.0, 1.0 / margin, np.inf)
        return np.maximum(inverse_distance, np.linalg.norm(x, axis=1))

    return potential


def default_exhaustion(omega, count=12):
    """
    Nested regions Omega_0 ⋐ Omega_1 ⋐ ... with union Omega

    For R^d the levels are the dyadic balls B_{2^n}; bounded shapes are
    shrunk towards their boundary at dyadic rates.
    """
    if isinstance(omega, WholeSpace):
        origin = np.zeros(omega.dimension)
        return tuple(Ball(origin, 2.0 ** n) for n in range(count))
    if isinstance(omega, Ball):
        return tuple(Ball(omega.center, omega.radius * (1.0 - 2.0 ** -(n + 1))) for n in range(count))
    if isinstance(omega, Box):
        half = 0.5 * (omega.hi - omega.lo)
        return tuple(
            Box(omega.lo + half * 2.0 ** -(n + 1), omega.hi - half * 2.0 ** -(n + 1))
            for n in range(count)
        )
    if isinstance(omega, HalfSpace):
        foot = omega.offset * omega.normal
        return tuple(
            Intersection([
                HalfSpace(omega.normal, omega.offset - 2.0 ** -n),
                Ball(foot, 2.0 ** n),
            ])
            for n in range(count)
        )
    if isinstance(omega, (Union, Intersection)):
        per_member = [default_exhaustion(member, count) for member in omega.members]
        cls = type(omega)
        return tuple(cls([levels[n] for levels in per_member]) for n in range(count))
    raise ConfigurationError(f"No default exhaustion for {omega.describe()}")


@dataclass(frozen=True)
class ExhaustionDomain:
    """Open set Omega, its exhaustion Omega_n and the confining potential V_Omega"""
    omega: Region
    levels: tuple
    potential_fn: Optional[Callable] = None

    @classmethod
    def build(cls, omega, levels=None, level_count=12, potential_fn=None):
        if levels is None:
            levels = default_exhaustion(omega, level_count)
        return cls(omega=omega, levels=tuple(levels), potential_fn=potential_fn)

    @property
    def dimension(self):
        return self.omega.dimension

    def potential_values(self, x):
        """Vectorized V_Omega, +inf outside Omega"""
        fn = self.potential_fn or default_potential(self.omega)
        values = np.asarray(fn(as_points(x)), dtype=float)
        return np.where(self.omega.inside(x), values, np.inf)

    def level_margins(self, x):
        """Signed margins to every exhaustion level, shape (N, L)"""
        x = as_points(x)
        if not self.levels:
            return np.empty((x.shape[0], 0))
        return np.stack([level.margin(x) for level in self.levels], axis=1)

    def verify_nesting(self, samples=256):
        """
        Smallest margin of sampled boundary points of Omega_n inside Omega_{n+1}

        Returns:
            float: Positive when every level is compactly contained in the next
        """
        worst = math.inf
        for inner, outer in zip(self.levels, self.levels[1:]):
            points = inner.boundary_samples(samples)
            if len(points):
                worst = min(worst, float(outer.margin(points).min()))
        return worst

    def confinement_level(self, bound, samples=256):
        """First level n with V_Omega > bound on the sampled boundary of Omega_n"""
        for n, level in enumerate(self.levels):
            points = level.boundary_samples(samples)
            points = points[self.omega.inside(points)] if len(points) else points
            if len(points) and float(self.potential_values(points).min()) > bound:
                return n
        return None


def potential(domain, x):
    """
    Confining potential V_Omega at one point

    Raises:
        DomainError: If x is not in Omega
    """
    x = as_points(x)
    if not bool(domain.omega.inside(x)[0]):
        raise DomainError(f"Potential is undefined outside Omega at x={x[0].tolist()}")
    return float(domain.potential_values(x)[0])


# Hitting times ==========================================================================

@dataclass(frozen=True)
class HittingRecord:
    """First exit of a trajectory from one region"""
    level: Optional[int]
    hit_time: Optional[float]
    exit_point: Optional[np.ndarray] = None

    @property
    def never(self):
        return self.hit_time is None

    def as_extended(self):
        return math.inf if self.hit_time is None else self.hit_time


def hermite(t0, t1, x0, x1, v0, v1, tau):
    """
    Cubic Hermite interpolation between two samples, vectorized over rows

    `t0`, `t1`, `tau` have shape (N,); positions and velocities (N, d).
    """
    h = (t1 - t0)[:, None]
    s = np.where(h > 0, (tau[:, None] - t0[:, None]) / np.where(h > 0, h, 1.0), 0.0)
    s2, s3 = s * s, s * s * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * x0 + h10 * h * v0 + h01 * x1 + h11 * h * v1


def bisect_exit(t0, t1, x0, x1, v0, v1, region, dt_min, max_iterations=200):
    """
    Locate exit times inside bracketing steps by bisection on the Hermite arc

    Each row must start inside `region` at t0 and end outside at t1.

    Returns:
        tuple: (exit times (N,), exit points (N, d))
    """
    lo = np.array(t0, dtype=float)
    hi = np.array(t1, dtype=float)
    for _ in range(max_iterations):
        open_rows = (hi - lo) > dt_min
        if not np.any(open_rows):
            break
        mid = np.where(open_rows, 0.5 * (lo + hi), hi)
        inside = region.inside(hermite(t0, t1, x0, x1, v0, v1, mid))
        lo = np.where(open_rows & inside, mid, lo)
        hi = np.where(open_rows & ~inside, mid, hi)
    return hi, hermite(t0, t1, x0, x1, v0, v1, hi)


def first_hitting(times, positions, velocities, region, dt_min=1e-12, level=None):
    """
    First time a sampled trajectory leaves the closed region

    The bracketing step is refined by bisection on the cubic Hermite arc
    through the recorded positions and velocities. A trajectory starting
    outside the region hits at its first sample time.

    Args:
        times: Sample times (M,)
        positions: Sample positions (M, d)
        velocities: Sample velocities (M, d)
        region: Region to leave
        dt_min: Bisection tolerance in time
        level: Exhaustion index to store on the record

    Returns:
        HittingRecord: `hit_time` None when the trajectory never leaves

    Raises:
        DomainError: If the trajectory has no samples
    """
    times = np.asarray(times, dtype=float)
    positions = as_points(positions)
    velocities = as_points(velocities)
    if times.size == 0:
        raise DomainError("Cannot compute a hitting time of an empty trajectory")

    outside = ~region.inside(positions)
    if not outside.any():
        return HittingRecord(level=level, hit_time=None)
    j = int(np.argmax(outside))
    if j == 0:
        return HittingRecord(level=level, hit_time=float(times[0]), exit_point=positions[0].copy())

    rows = slice(j - 1, j)
    hit, point = bisect_exit(
        times[j - 1:j], times[j:j + 1],
        positions[rows], positions[j:j + 1],
        velocities[rows], velocities[j:j + 1],
        region, dt_min,
    )
    return HittingRecord(level=level, hit_time=float(hit[0]), exit_point=point[0])


def potential_hitting(times, positions, velocities, domain, threshold, dt_min=1e-12):
    """First time V_Omega reaches `threshold` along a sampled trajectory"""
    return first_hitting(times, positions, velocities, SublevelSet(domain, threshold), dt_min)
