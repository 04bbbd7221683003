"""Iterative superquadric recovery by damped least squares.

The objective is the classic volume-weighted implicit residual per point,

    r_i = sqrt(a1*a2*a3) * (F(p_i)**(eps1/2) - 1),

minimized over all 8 parameters with Levenberg-Marquardt: a diagonal-scaled
damping term that shrinks after accepted steps and grows after rejected
ones, a central-difference Jacobian, and box constraints applied by
clamping each candidate step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import EvaluationError, SuperquadricParams, implicit_values
from .rendering import RangeImage, RenderConfig, range_image_to_points

MIN_POINTS = 8  # one per free parameter

DEFAULT_BOUNDS_LOW = np.array([1.0, 1.0, 1.0, 0.05, 0.05, 0.0, 0.0, 0.0])
DEFAULT_BOUNDS_HIGH = np.array([256.0, 256.0, 256.0, 1.0, 1.0, 256.0, 256.0, 256.0])

_DEFAULT_VIEW = (-1.0 / np.sqrt(3.0),) * 3


class FitError(RuntimeError):
    """Input unusable for fitting (too few points, empty image)."""


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 200
    param_tol: float = 1e-6          # infinity norm of the applied step
    cost_tol: float = 1e-8           # relative drop of the squared residual
    gradient_tol: float = 1e-8       # infinity norm of J^T r, scaled by points
    damping_init: float = 1e-3
    damping_increase: float = 10.0
    damping_decrease: float = 0.1
    jacobian_rel_step: float = 1e-6
    bounds_low: tuple = tuple(DEFAULT_BOUNDS_LOW)
    bounds_high: tuple = tuple(DEFAULT_BOUNDS_HIGH)

    def __post_init__(self):
        lo, hi = np.asarray(self.bounds_low), np.asarray(self.bounds_high)
        if lo.shape != (8,) or hi.shape != (8,) or np.any(lo >= hi):
            raise ValueError("bounds must be 8 low values strictly below 8 high values")
        if self.max_iters < 1 or self.damping_init <= 0:
            raise ValueError("invalid iteration or damping settings")


@dataclass
class FitResult:
    params: SuperquadricParams
    residual: float                  # final squared-residual sum
    iterations: int
    converged: bool
    wall_s: float
    initial: SuperquadricParams = None
    cost_history: list = field(default_factory=list)


def fit_residuals(theta: np.ndarray, points: np.ndarray) -> np.ndarray:
    a1, a2, a3, eps1 = theta[0], theta[1], theta[2], theta[3]
    f = implicit_values(SuperquadricParams.from_array(theta), points)
    return np.sqrt(a1 * a2 * a3) * (f ** (eps1 / 2.0) - 1.0)


def _cost(theta, points):
    # overflow at extreme trial parameters counts as an unusable (rejected) step
    try:
        r = fit_residuals(theta, points)
    except EvaluationError:
        return np.inf, None
    if not np.all(np.isfinite(r)):
        return np.inf, None
    return float(r @ r), r


def _jacobian(theta, points, rel_step):
    n = points.shape[0]
    jac = np.empty((n, 8))
    for j in range(8):
        h = rel_step * max(abs(theta[j]), 1.0)
        plus, minus = theta.copy(), theta.copy()
        plus[j] += h
        minus[j] -= h
        jac[:, j] = (fit_residuals(plus, points) - fit_residuals(minus, points)) / (2.0 * h)
    return jac


def initial_estimate(points: np.ndarray, view_dir=_DEFAULT_VIEW) -> SuperquadricParams:
    """Starting guess from the cloud alone.

    Center: the centroid pushed half the depth extent away from the viewer,
    since visible points cover only the near side of the surface.  Sizes:
    axis-aligned bounding-box half extents.  Shape: ellipsoid (1, 1).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise FitError(f"expected (N,3) points, got shape {points.shape}")
    if points.shape[0] < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} points, got {points.shape[0]}")
    toward_viewer = -np.asarray(view_dir, dtype=np.float64)
    toward_viewer /= np.linalg.norm(toward_viewer)
    w = points @ toward_viewer
    center = points.mean(axis=0) - 0.5 * (w.max() - w.min()) * toward_viewer
    dims = np.maximum((points.max(axis=0) - points.min(axis=0)) / 2.0, 1.0)
    return SuperquadricParams(dims[0], dims[1], dims[2], 1.0, 1.0,
                              center[0], center[1], center[2])


def fit_iterative(points: np.ndarray, cfg: FitConfig = FitConfig(),
                  init: SuperquadricParams = None,
                  view_dir=_DEFAULT_VIEW) -> FitResult:
    """Recover parameters from a 3-d point cloud."""
    t0 = time.perf_counter()
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise FitError(f"expected (N,3) points, got shape {points.shape}")
    if points.shape[0] < MIN_POINTS:
        raise FitError(f"need at least {MIN_POINTS} points, got {points.shape[0]}")
    if not np.all(np.isfinite(points)):
        raise FitError("point cloud contains non-finite coordinates")

    lo = np.asarray(cfg.bounds_low)
    hi = np.asarray(cfg.bounds_high)
    start = init if init is not None else initial_estimate(points, view_dir)
    theta = np.clip(start.as_array(), lo, hi)
    cost, r = _cost(theta, points)
    if not np.isfinite(cost):
        raise FitError("initial estimate evaluates to a non-finite residual")
    history = [cost]
    lam = cfg.damping_init
    gtol = cfg.gradient_tol * points.shape[0]
    converged = False
    iterations = 0

    for _ in range(cfg.max_iters):
        if cost <= 1e-16:
            converged = True
            break
        jac = _jacobian(theta, points, cfg.jacobian_rel_step)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        if np.max(np.abs(jtr)) <= gtol:
            converged = True
            break
        diag = np.maximum(np.diag(jtj), 1e-12)

        accepted = False
        theta_new, cost_new, r_new = theta, cost, r
        while lam <= 1e12:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -jtr)
            except np.linalg.LinAlgError:
                delta, *_ = np.linalg.lstsq(jtj + lam * np.diag(diag), -jtr, rcond=None)
            theta_new = np.clip(theta + delta, lo, hi)
            cost_new, r_new = _cost(theta_new, points)
            if cost_new < cost:
                accepted = True
                lam = max(lam * cfg.damping_decrease, 1e-12)
                break
            lam *= cfg.damping_increase
        iterations += 1
        if not accepted:
            break

        step_inf = np.max(np.abs(theta_new - theta))
        rel_drop = (cost - cost_new) / max(cost, np.finfo(float).tiny)
        theta, cost, r = theta_new, cost_new, r_new
        history.append(cost)
        if step_inf <= cfg.param_tol or rel_drop <= cfg.cost_tol:
            converged = True
            break

    return FitResult(SuperquadricParams.from_array(theta), cost, iterations,
                     converged, time.perf_counter() - t0, start, history)


def fit_range_image(img: RangeImage, render_cfg: RenderConfig,
                    cfg: FitConfig = FitConfig(),
                    init: SuperquadricParams = None) -> FitResult:
    """Back-project a range image and fit; wall time covers both stages."""
    t0 = time.perf_counter()
    points = range_image_to_points(img, render_cfg)
    if points.shape[0] == 0:
        raise FitError("range image has no foreground pixels")
    result = fit_iterative(points, cfg, init=init, view_dir=render_cfg.view_dir)
    result.wall_s = time.perf_counter() - t0
    return result
