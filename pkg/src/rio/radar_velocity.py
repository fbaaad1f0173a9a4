"""Ego-velocity of a radar from the Doppler speeds of one scan.

For a static point at unit direction ``u`` the radar measures
``d = -v_s . u``. Stacking all points gives a linear model in the sensor
velocity ``v_s``, which is solved with a Cauchy-robustified
Levenberg-Marquardt loop so that points on moving objects are down-weighted.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import DegenerateGeometry, InsufficientPoints, NonConvergence

DOPPLER_SIGMA = 0.124  # m/s


class RadarPoint(NamedTuple):
    position: np.ndarray  # (3,) metres, sensor frame
    doppler: float  # m/s
    snr: float = 0.0  # dB


@dataclass(frozen=True)
class RadarScan:
    """One radar frame. Arrays are row-aligned; ``positions`` is ``(N, 3)``."""

    timestamp: float
    sensor_id: str
    positions: np.ndarray
    doppler: np.ndarray
    snr: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        dop = np.asarray(self.doppler, dtype=float).reshape(-1)
        snr = np.asarray(self.snr, dtype=float).reshape(-1)
        if not (len(pos) == len(dop) == len(snr)):
            raise ValueError("positions, doppler and snr must have the same length")
        if np.any(np.linalg.norm(pos, axis=1) == 0.0):
            raise ValueError("radar point at the sensor origin")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "doppler", dop)
        object.__setattr__(self, "snr", snr)

    @classmethod
    def from_points(cls, timestamp, sensor_id, points):
        pts = list(points)
        if not pts:
            return cls(timestamp, sensor_id, np.zeros((0, 3)), np.zeros(0), np.zeros(0))
        return cls(timestamp, sensor_id,
                   np.array([p.position for p in pts], dtype=float),
                   np.array([p.doppler for p in pts], dtype=float),
                   np.array([p.snr for p in pts], dtype=float))

    def __len__(self):
        return len(self.doppler)

    def points(self):
        return [RadarPoint(p, d, s) for p, d, s in zip(self.positions, self.doppler, self.snr)]


@dataclass(frozen=True)
class RadarExtrinsics:
    """Body-from-sensor transform. ``rotation`` maps sensor vectors to body."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(frozen=True)
class VelocityEstimate:
    frame: str  # "sensor" or "body"
    v: np.ndarray
    cov: np.ndarray
    inlier_count: int
    total_count: int
    timestamp: float
    sensor_id: str = ""


@dataclass(frozen=True)
class RobustSolveConfig:
    doppler_sigma: float = DOPPLER_SIGMA
    min_points: int = 10
    cauchy_scale: float = 3.0  # in units of doppler_sigma
    inlier_weight: float = 0.5
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 10.0
    max_iterations: int = 25
    gradient_tolerance: float = 1e-10
    degeneracy_factor: float = 0.05
    lever_arm_correction: bool = False

    @property
    def doppler_variance(self) -> float:
        return self.doppler_sigma**2


def unit_directions(positions: np.ndarray) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    return positions / np.linalg.norm(positions, axis=-1, keepdims=True)


def doppler_residual(v_s, position, doppler):
    """``v_s . r/|r| + d``; zero for a static point. Broadcasts over points."""
    u = unit_directions(position)
    return u @ np.asarray(v_s, dtype=float) + np.asarray(doppler, dtype=float)


def _check_geometry(A: np.ndarray, factor: float) -> None:
    n = A.shape[0]
    if n < 3:
        raise DegenerateGeometry(f"need at least 3 directions, got {n}")
    smallest = np.linalg.svd(A, compute_uv=False)[-1]
    if smallest < factor * np.sqrt(n):
        raise DegenerateGeometry(
            f"direction matrix nearly rank deficient (smallest singular value "
            f"{smallest:.3g} < {factor * np.sqrt(n):.3g})")


def marginal_covariance(positions, sigma_d: float, degeneracy_factor: float = 0.05) -> np.ndarray:
    """``(A^T A / sigma_d)^-1`` with ``A`` the unit directions of ``positions``.

    ``sigma_d`` is the Doppler *variance* in (m/s)^2.
    """
    if isinstance(positions, (list, tuple)) and positions and isinstance(positions[0], RadarPoint):
        positions = np.array([p.position for p in positions])
    A = unit_directions(np.asarray(positions, dtype=float).reshape(-1, 3))
    _check_geometry(A, degeneracy_factor)
    info = A.T @ A / sigma_d
    cov = np.linalg.inv(info)
    return 0.5 * (cov + cov.T)


def _grad_norm(A, r, c2, inv_var) -> float:
    return float(np.linalg.norm(A.T @ (r / (1.0 + r * r / c2)) * inv_var))


def estimate_sensor_velocity(scan: RadarScan, initial_guess=None,
                             config: RobustSolveConfig = RobustSolveConfig()) -> VelocityEstimate:
    """Robust sensor-frame velocity of one scan.

    ``initial_guess`` should be the IMU-predicted velocity rotated into the
    sensor frame; the Cauchy kernel is not convex, so a poor guess can lock
    onto a moving object instead of the static scene. Without a guess the
    least-squares solution is used.
    """
    n = len(scan)
    if n < config.min_points:
        raise InsufficientPoints(f"scan has {n} points, need {config.min_points}")
    A = unit_directions(scan.positions)
    d = scan.doppler
    _check_geometry(A, config.degeneracy_factor)

    inv_var = 1.0 / config.doppler_variance
    c2 = (config.cauchy_scale * config.doppler_sigma) ** 2
    if initial_guess is None:
        # without a prediction, start from the ordinary least-squares fit
        x = np.linalg.lstsq(A, -d, rcond=None)[0]
    else:
        x = np.array(initial_guess, dtype=float)

    def cost(r):
        return 0.5 * c2 * inv_var * np.sum(np.log1p(r * r / c2))

    r = A @ x + d
    f = cost(r)
    lam = config.initial_damping
    grad_norm = np.inf
    for _ in range(config.max_iterations):
        u = r * r / c2
        w = 1.0 / (1.0 + u)
        g = A.T @ (w * r) * inv_var
        grad_norm = np.linalg.norm(g)
        if grad_norm < config.gradient_tolerance:
            break
        # exact Hessian of the Cauchy cost, damped with the diagonal of the
        # reweighted Gauss-Newton one; where points sit beyond the scale the
        # exact curvature turns negative and the reweighted (IRLS) Hessian,
        # whose steps never increase the cost, takes over
        H_gn = (A.T * w) @ A * inv_var
        scale = np.diag(H_gn)
        H = (A.T * (w * w * (1.0 - u))) @ A * inv_var
        try:
            L = np.linalg.cholesky(H + lam * np.diag(scale))
        except np.linalg.LinAlgError:
            try:
                L = np.linalg.cholesky(H_gn + lam * np.diag(scale))
            except np.linalg.LinAlgError:
                lam *= config.damping_up
                continue
        step = -np.linalg.solve(L.T, np.linalg.solve(L, g))
        x_new = x + step
        r_new = A @ x_new + d
        f_new = cost(r_new)
        # Close to the optimum the cost decrease drops below its rounding
        # error, so a step that holds the cost and shrinks the gradient counts.
        level = f_new <= f + 1e-13 * (abs(f) + 1.0)
        if f_new < f or (level and _grad_norm(A, r_new, c2, inv_var) < grad_norm):
            x, r, f = x_new, r_new, f_new
            lam = max(lam / config.damping_down, 1e-12)
        elif np.linalg.norm(step) <= 1e-15 * (1.0 + np.linalg.norm(x)):
            break
        else:
            lam *= config.damping_up
    else:
        grad_norm = _grad_norm(A, r, c2, inv_var)
        if grad_norm >= config.gradient_tolerance:
            raise NonConvergence(
                f"robust solve stopped after {config.max_iterations} iterations "
                f"with gradient norm {grad_norm:.3g}")

    w = 1.0 / (1.0 + r * r / c2)
    inliers = w >= config.inlier_weight
    cov = marginal_covariance(scan.positions[inliers], config.doppler_variance,
                              config.degeneracy_factor)
    return VelocityEstimate("sensor", x, cov, int(inliers.sum()), n,
                            scan.timestamp, scan.sensor_id)


def to_body_frame(est: VelocityEstimate, extrinsics: RadarExtrinsics,
                  omega=None) -> VelocityEstimate:
    """Rotate a sensor-frame estimate into the body (IMU) frame.

    With ``omega`` (body angular rate) the lever-arm term ``omega x t`` is
    removed as well; by default only the rotation is applied.
    """
    if est.frame != "sensor":
        raise ValueError(f"expected a sensor-frame estimate, got {est.frame!r}")
    Rr = np.asarray(extrinsics.rotation, dtype=float)
    v = Rr @ est.v
    if omega is not None:
        v = v - np.cross(np.asarray(omega, dtype=float), extrinsics.translation)
    cov = Rr @ est.cov @ Rr.T
    return replace(est, frame="body", v=v, cov=0.5 * (cov + cov.T))
