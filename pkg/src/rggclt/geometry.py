"""Observation windows, cone systems and the special functions behind them.

Volumes of spherical caps and ball intersections are expressed as fractions of
the unit-ball volume, so a ball of radius ``r`` has "fraction" ``r**d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import betaln

from .errors import ArgumentError, NumericError

CONE_HALF_ANGLE = math.pi / 12
WIDE_HALF_ANGLE = math.pi / 6
ANGLE_SLACK = 1e-12


def unit_ball_volume(d: int) -> float:
    """kappa_d = pi^(d/2) / Gamma(d/2 + 1)."""
    if d < 0:
        raise ArgumentError(f"dimension must be nonnegative, got {d}")
    return math.exp(0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d + 1.0))


# ---------------------------------------------------------------------------
# regularized incomplete beta
# ---------------------------------------------------------------------------

_CF_TINY = 1e-300
_CF_EPS = 1e-16
_CF_MAXITER = 2000


def _beta_cf(x, a, b):
    """Modified Lentz evaluation of the incomplete-beta continued fraction.

    Works elementwise on broadcast arrays; all inputs satisfy
    x < (a+1)/(a+b+2) so the fraction converges quickly.
    """
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    dd = 1.0 - qab * x / qap
    dd = np.where(np.abs(dd) < _CF_TINY, _CF_TINY, dd)
    dd = 1.0 / dd
    h = dd.copy()
    active = np.ones(x.shape, dtype=bool)
    for m in range(1, _CF_MAXITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        dd = 1.0 + aa * dd
        dd = np.where(np.abs(dd) < _CF_TINY, _CF_TINY, dd)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _CF_TINY, _CF_TINY, c)
        dd = 1.0 / dd
        h = np.where(active, h * dd * c, h)
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        dd = 1.0 + aa * dd
        dd = np.where(np.abs(dd) < _CF_TINY, _CF_TINY, dd)
        c = 1.0 + aa / c
        c = np.where(np.abs(c) < _CF_TINY, _CF_TINY, c)
        dd = 1.0 / dd
        delta = dd * c
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > _CF_EPS
        if not active.any():
            return h
    raise NumericError("incomplete beta continued fraction did not converge")


def reg_inc_beta(x, a, b):
    """Regularized incomplete beta function I_x(a, b).

    Accepts scalars or arrays (broadcast together). Returns a float for
    scalar input.
    """
    scalar = np.ndim(x) == 0 and np.ndim(a) == 0 and np.ndim(b) == 0
    x, a, b = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    )
    if np.any(~np.isfinite(x)) or np.any((x < 0.0) | (x > 1.0)):
        raise ArgumentError("reg_inc_beta: x must lie in [0, 1]")
    if np.any(~(a > 0.0)) or np.any(~(b > 0.0)):
        raise ArgumentError("reg_inc_beta: a and b must be positive")

    out = np.empty(x.shape, dtype=float)
    lo = x <= 0.0
    hi = x >= 1.0
    mid = ~(lo | hi)
    out[lo] = 0.0
    out[hi] = 1.0
    if mid.any():
        xm, am, bm = x[mid], a[mid], b[mid]
        swap = xm > (am + 1.0) / (am + bm + 2.0)
        xs = np.where(swap, 1.0 - xm, xm)
        as_ = np.where(swap, bm, am)
        bs = np.where(swap, am, bm)
        front = np.exp(as_ * np.log(xs) + bs * np.log1p(-xs) - betaln(as_, bs)) / as_
        val = front * _beta_cf(xs, as_, bs)
        val = np.where(swap, 1.0 - val, val)
        out[mid] = np.clip(val, 0.0, 1.0)
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# caps and lenses (fractions of the unit ball volume)
# ---------------------------------------------------------------------------

def cap_fraction(r, a, d: int):
    """Volume of the cap {y in B(0,r): y_1 >= a} divided by kappa_d."""
    scalar = np.ndim(r) == 0 and np.ndim(a) == 0
    r, a = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(a, dtype=float))
    if np.any(~(r > 0.0)):
        raise ArgumentError("cap_fraction: radius must be positive")
    # tolerate rounding noise of a few ulps at |a| == r
    if np.any(np.abs(a) > r * (1.0 + 1e-12)):
        raise ArgumentError("cap_fraction: need |a| <= r")
    a = np.clip(a, -r, r)
    z = np.clip(1.0 - (a / r) ** 2, 0.0, 1.0)
    small = 0.5 * r**d * reg_inc_beta(z, 0.5 * (d + 1), 0.5)
    out = np.where(a >= 0.0, small, r**d - small)
    return float(out) if scalar else out


def ball_intersection_fraction(x, r1, r2, d: int):
    """|B(0,r1) ∩ B(x e_1, r2)| / kappa_d."""
    scalar = np.ndim(x) == 0 and np.ndim(r1) == 0 and np.ndim(r2) == 0
    x, r1, r2 = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(r1, dtype=float), np.asarray(r2, dtype=float)
    )
    out = np.zeros(x.shape, dtype=float)
    nested = x <= np.abs(r1 - r2)
    out[nested] = np.minimum(r1[nested], r2[nested]) ** d
    lens = ~nested & (x < r1 + r2)
    if lens.any():
        xl, p, q = x[lens], r1[lens], r2[lens]
        c1 = (xl**2 + p**2 - q**2) / (2.0 * xl)
        c2 = (xl**2 - p**2 + q**2) / (2.0 * xl)
        c1 = np.clip(c1, -p, p)
        c2 = np.clip(c2, -q, q)
        out[lens] = cap_fraction(p, c1, d) + cap_fraction(q, c2, d)
    return float(out) if scalar else out


# ---------------------------------------------------------------------------
# convex bodies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConvexBody:
    """A ball or an axis-aligned box in R^d."""

    kind: str
    dimension: int
    center: Tuple[float, ...] = ()
    radius: float = 0.0
    lo: Tuple[float, ...] = ()
    hi: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == "ball":
            if len(self.center) != self.dimension or not self.radius > 0:
                raise ArgumentError("ball needs a d-vector centre and a positive radius")
        elif self.kind == "box":
            if len(self.lo) != self.dimension or len(self.hi) != self.dimension:
                raise ArgumentError("box corners must be d-vectors")
            if not all(a < b for a, b in zip(self.lo, self.hi)):
                raise ArgumentError("box needs min < max componentwise")
        else:
            raise ArgumentError(f"unknown body kind {self.kind!r}")
        if self.dimension < 1:
            raise ArgumentError("dimension must be >= 1")

    @classmethod
    def ball(cls, center, radius: float) -> "ConvexBody":
        center = tuple(float(c) for c in np.atleast_1d(center))
        return cls("ball", len(center), center=center, radius=float(radius))

    @classmethod
    def box(cls, lo, hi) -> "ConvexBody":
        lo = tuple(float(c) for c in np.atleast_1d(lo))
        hi = tuple(float(c) for c in np.atleast_1d(hi))
        return cls("box", len(lo), lo=lo, hi=hi)

    @classmethod
    def unit_cube(cls, d: int) -> "ConvexBody":
        return cls.box([0.0] * d, [1.0] * d)

    @property
    def volume(self) -> float:
        if self.kind == "ball":
            return unit_ball_volume(self.dimension) * self.radius**self.dimension
        return float(np.prod(np.subtract(self.hi, self.lo)))

    @property
    def diameter(self) -> float:
        if self.kind == "ball":
            return 2.0 * self.radius
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    @property
    def interior_ball(self) -> Tuple[np.ndarray, float]:
        """A witness (y0, delta) with B(y0, delta) inside the body."""
        if self.kind == "ball":
            return np.array(self.center), self.radius
        lo, hi = np.array(self.lo), np.array(self.hi)
        return 0.5 * (lo + hi), 0.5 * float(np.min(hi - lo))

    def contains(self, points) -> np.ndarray | bool:
        """Closed-set membership; vectorized over the leading axis."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        if self.kind == "ball":
            inside = np.sum((p - np.array(self.center)) ** 2, axis=1) <= self.radius**2
        else:
            inside = np.all((p >= np.array(self.lo)) & (p <= np.array(self.hi)), axis=1)
        return bool(inside[0]) if single else inside

    def scale(self, t: float) -> "ConvexBody":
        """The dilate tH = {t y : y in H}."""
        if not t > 0:
            raise ArgumentError("scale factor must be positive")
        if self.kind == "ball":
            return ConvexBody.ball(np.multiply(self.center, t), self.radius * t)
        return ConvexBody.box(np.multiply(self.lo, t), np.multiply(self.hi, t))

    def bounding_box(self) -> "ConvexBody":
        if self.kind == "box":
            return self
        c = np.array(self.center)
        return ConvexBody.box(c - self.radius, c + self.radius)

    def sample_uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n i.i.d. uniform points (rejection-free)."""
        d = self.dimension
        if self.kind == "box":
            lo, hi = np.array(self.lo), np.array(self.hi)
            return lo + (hi - lo) * rng.random((n, d))
        g = rng.standard_normal((n, d))
        norms = np.linalg.norm(g, axis=1)
        # a zero Gaussian vector has probability zero; redraw to be safe
        while n and np.any(norms == 0.0):
            bad = norms == 0.0
            g[bad] = rng.standard_normal((int(bad.sum()), d))
            norms = np.linalg.norm(g, axis=1)
        radii = self.radius * rng.random(n) ** (1.0 / d)
        return np.array(self.center) + g / norms[:, None] * radii[:, None]

    def to_dict(self) -> dict:
        if self.kind == "ball":
            return {"kind": "ball", "center": list(self.center), "radius": self.radius}
        return {"kind": "box", "min": list(self.lo), "max": list(self.hi)}

    @classmethod
    def from_dict(cls, spec: dict) -> "ConvexBody":
        if spec["kind"] == "ball":
            return cls.ball(spec["center"], spec["radius"])
        if spec["kind"] == "box":
            return cls.box(spec["min"], spec["max"])
        raise ArgumentError(f"unknown body kind {spec['kind']!r}")


# ---------------------------------------------------------------------------
# cones
# ---------------------------------------------------------------------------

def _angle_members(vectors: np.ndarray, axes: np.ndarray, half_angle: float) -> np.ndarray:
    """Boolean (n, K): is vectors[j] within half_angle of axes[i]? Zero vectors are members."""
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    cosines = (vectors @ axes.T) / safe[:, None]
    inside = cosines >= math.cos(min(half_angle + ANGLE_SLACK, math.pi))
    inside[norms == 0.0] = True
    return inside


@dataclass(frozen=True)
class Cone:
    apex: np.ndarray
    axis: np.ndarray
    half_angle: float

    def contains(self, points) -> np.ndarray | bool:
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        inside = _angle_members(p - self.apex, self.axis[None, :], self.half_angle)[:, 0]
        return bool(inside[0]) if single else inside


@dataclass(frozen=True)
class ConeCover:
    """K closed cones at the origin of half-angle pi/12 covering R^d, plus
    the pi/6 cones sharing their axes."""

    dimension: int
    axes: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.axes)

    @property
    def cones(self):
        origin = np.zeros(self.dimension)
        return [Cone(origin, ax, CONE_HALF_ANGLE) for ax in self.axes]

    @property
    def widened(self):
        origin = np.zeros(self.dimension)
        return [Cone(origin, ax, WIDE_HALF_ANGLE) for ax in self.axes]

    def members(self, vectors, widened: bool = False) -> np.ndarray:
        """Membership matrix (n, K) of displacement vectors in the cones at 0."""
        v = np.atleast_2d(np.asarray(vectors, dtype=float))
        half = WIDE_HALF_ANGLE if widened else CONE_HALF_ANGLE
        return _angle_members(v, self.axes, half)

    def max_gap(self, directions: np.ndarray) -> float:
        """Largest angle from any test direction to its closest axis."""
        u = directions / np.linalg.norm(directions, axis=1, keepdims=True)
        best = np.max(u @ self.axes.T, axis=1)
        return float(np.max(np.arccos(np.clip(best, -1.0, 1.0))))


def fibonacci_sphere(n: int) -> np.ndarray:
    """Quasi-uniform points on S^2."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    phi = math.pi * (1.0 + math.sqrt(5.0)) * i
    rho = np.sqrt(1.0 - z * z)
    return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])


def _sphere_grid(d: int, n: int, seed: int = 0) -> np.ndarray:
    if d == 3:
        return fibonacci_sphere(n)
    rng = np.random.default_rng([20240601, d, seed])
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _greedy_axes(grid: np.ndarray, radius: float) -> np.ndarray:
    covered = np.zeros(len(grid), dtype=bool)
    cos_r = math.cos(radius)
    axes = []
    for j in range(len(grid)):
        if covered[j]:
            continue
        axes.append(grid[j])
        covered |= grid @ grid[j] >= cos_r
    return np.array(axes)


@lru_cache(maxsize=None)
def cone_cover(d: int) -> ConeCover:
    """Deterministic cover of R^d by closed cones of half-angle pi/12."""
    if d < 1:
        raise ArgumentError("cone_cover needs d >= 1")
    if d == 1:
        return ConeCover(1, np.array([[1.0], [-1.0]]))
    if d == 2:
        ang = 2.0 * math.pi * np.arange(24) / 24
        return ConeCover(2, np.column_stack([np.cos(ang), np.sin(ang)]))
    # greedy cover of a fine grid by slightly shrunken caps; the shrink absorbs
    # the grid's own covering radius, so the pi/12 caps cover the whole sphere
    n_grid = 40000 if d == 3 else 200000
    grid = _sphere_grid(d, n_grid)
    probe = _sphere_grid(d, 4 * n_grid + 1, seed=1)
    chord, _ = cKDTree(grid).query(probe)
    mesh = float(2.0 * np.arcsin(min(1.0, np.max(chord) / 2.0)))
    axes = _greedy_axes(grid, CONE_HALF_ANGLE - 1.5 * mesh)
    return ConeCover(d, axes)
