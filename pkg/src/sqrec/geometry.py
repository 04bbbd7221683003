"""Superquadric parameterization and the implicit inside-outside function.

A superquadric is described by eight parameters: the half-extents
``a1, a2, a3`` along the coordinate axes (voxels), two dimensionless shape
exponents ``eps1, eps2``, and the geometric center ``x0, y0, z0`` (voxels).
The canonical vector order is ``[a1, a2, a3, eps1, eps2, x0, y0, z0]``.

The inside-outside function ``F`` evaluates to 0 at the center, 1 on the
surface, below 1 inside and above 1 outside.  Normalized coordinates are
taken in absolute value before exponentiation so the fractional powers are
defined everywhere and the surface keeps its octant symmetry.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

PARAM_NAMES = ("a1", "a2", "a3", "eps1", "eps2", "x0", "y0", "z0")

# Declared admissible range per parameter: dimensions and positions live in
# the 256-voxel frame, shape exponents in [0, 1].  These are the scaling
# ranges, deliberately wider than the dataset sampling ranges.
PARAM_LOW = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
PARAM_HIGH = np.array([256.0, 256.0, 256.0, 1.0, 1.0, 256.0, 256.0, 256.0])

FRAME_SIZE = 256.0

DEFAULT_SURFACE_TOL = 1e-6


class EvaluationError(ArithmeticError):
    """The implicit function produced a non-finite value (exponent overflow)."""


class RangeViolation(ValueError):
    """A parameter fell outside its declared range; the message names it."""


class Region(enum.Enum):
    INSIDE = "inside"
    SURFACE = "surface"
    OUTSIDE = "outside"


@dataclass(frozen=True)
class SuperquadricParams:
    """Eight-parameter description of one unrotated superquadric."""

    a1: float
    a2: float
    a3: float
    eps1: float
    eps2: float
    x0: float
    y0: float
    z0: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite parameter in {vals}")
        for name in ("a1", "a2", "a3", "eps1", "eps2"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"degenerate parameter {name}={getattr(self, name)!r}; must be > 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3, self.eps1, self.eps2,
                         self.x0, self.y0, self.z0], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "SuperquadricParams":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (8,):
            raise ValueError(f"expected 8 parameters, got shape {values.shape}")
        return cls(*(float(v) for v in values))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x0, self.y0, self.z0])

    @property
    def extents(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3])

    def bounding_radius(self) -> float:
        """Radius of the center-anchored sphere that encloses the surface.

        For eps <= 1 the surface lies inside the axis-aligned box of
        half-extents (a1, a2, a3), hence inside its circumscribed sphere.
        """
        return float(np.sqrt(self.a1 ** 2 + self.a2 ** 2 + self.a3 ** 2))


def implicit_values(params: SuperquadricParams, points) -> np.ndarray:
    """Evaluate the inside-outside function on an (..., 3) array of points."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise ValueError(f"points must have a trailing dimension of 3, got {pts.shape}")
    xn = np.abs((pts[..., 0] - params.x0) / params.a1)
    yn = np.abs((pts[..., 1] - params.y0) / params.a2)
    zn = np.abs((pts[..., 2] - params.z0) / params.a3)
    with np.errstate(over="ignore"):
        lateral = xn ** (2.0 / params.eps2) + yn ** (2.0 / params.eps2)
        f = lateral ** (params.eps2 / params.eps1) + zn ** (2.0 / params.eps1)
    if not np.all(np.isfinite(f)):
        raise EvaluationError(
            f"implicit function overflowed for params {params} "
            f"(max normalized offset {max(xn.max(), yn.max(), zn.max()):.3g})")
    return f


def evaluate_implicit(params: SuperquadricParams, point) -> float:
    """Inside-outside value at a single point: 0 at the center, 1 on the surface."""
    return float(implicit_values(params, np.asarray(point, dtype=np.float64)))


def classify(params: SuperquadricParams, point, tol: float = DEFAULT_SURFACE_TOL) -> Region:
    """Classify a point as inside, on, or outside the surface within ``tol``."""
    if tol <= 0.0:
        raise ValueError(f"tol must be > 0, got {tol}")
    f = evaluate_implicit(params, point)
    if abs(f - 1.0) <= tol:
        return Region.SURFACE
    return Region.INSIDE if f < 1.0 else Region.OUTSIDE


def scale_params(params: SuperquadricParams) -> np.ndarray:
    """Map each parameter affinely from its declared range onto [0, 1]."""
    raw = params.as_array()
    for i, name in enumerate(PARAM_NAMES):
        if not (PARAM_LOW[i] <= raw[i] <= PARAM_HIGH[i]):
            raise RangeViolation(
                f"parameter {name}={raw[i]!r} outside declared range "
                f"[{PARAM_LOW[i]}, {PARAM_HIGH[i]}]")
    return (raw - PARAM_LOW) / (PARAM_HIGH - PARAM_LOW)


def unscale_params(scaled) -> SuperquadricParams:
    """Exact inverse of :func:`scale_params`."""
    s = np.asarray(scaled, dtype=np.float64)
    if s.shape != (8,):
        raise ValueError(f"expected 8 scaled values, got shape {s.shape}")
    for i, name in enumerate(PARAM_NAMES):
        if not (0.0 <= s[i] <= 1.0):
            raise RangeViolation(f"scaled parameter {name}={s[i]!r} outside [0, 1]")
    return SuperquadricParams.from_array(PARAM_LOW + s * (PARAM_HIGH - PARAM_LOW))


def implicit_gradient(params: SuperquadricParams, points, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of F, one (dx, dy, dz) row per point."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    grad = np.empty_like(pts)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        grad[:, axis] = (implicit_values(params, pts + step)
                         - implicit_values(params, pts - step)) / (2.0 * h)
    return grad


def parametric_surface_points(params: SuperquadricParams, eta, omega) -> np.ndarray:
    """Points on the surface from latitude/longitude angles.

    eta in [-pi/2, pi/2], omega in [-pi, pi]; the signed-power construction
    keeps F exactly 1 on the returned points.
    """
    eta = np.asarray(eta, dtype=np.float64)
    omega = np.asarray(omega, dtype=np.float64)

    def spow(base, expo):
        return np.sign(base) * np.abs(base) ** expo

    ce = spow(np.cos(eta), params.eps1)
    se = spow(np.sin(eta), params.eps1)
    co = spow(np.cos(omega), params.eps2)
    so = spow(np.sin(omega), params.eps2)
    x = params.x0 + params.a1 * ce * co
    y = params.y0 + params.a2 * ce * so
    z = params.z0 + params.a3 * se
    return np.stack([x, y, z], axis=-1)


def random_surface_points(params: SuperquadricParams, count: int, rng,
                          facing=None) -> np.ndarray:
    """Draw surface points from random parameter angles.

    With ``facing`` (a 3-vector) only points whose outward normal has a
    positive component along it are kept, i.e. the half of the surface
    visible from that direction for these convex shapes.
    """
    pts = np.empty((0, 3))
    while len(pts) < count:
        n = max(4 * (count - len(pts)), 64)
        eta = rng.uniform(-np.pi / 2, np.pi / 2, size=n)
        omega = rng.uniform(-np.pi, np.pi, size=n)
        cand = parametric_surface_points(params, eta, omega)
        if facing is not None:
            normal = implicit_gradient(params, cand)
            cand = cand[normal @ np.asarray(facing, dtype=np.float64) > 0.0]
        pts = np.concatenate([pts, cand])
    return pts[:count]
