"""Synthetic ground truth, IMU streams and radar scans.

A :class:`TrajectoryModel` moves the body along an analytic path with a smooth
start (C^2 speed ramp after an initial static period), keeping the body level
and heading along the horizontal direction of travel. Sensors are synthesized
from that truth, so every estimator output has an exact reference.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import OutOfRange
from .imu import GRAVITY, ImuNoiseModel, ImuStream
from .manifold import rot_x, rot_z, so3_log
from .radar_velocity import DOPPLER_SIGMA, RadarExtrinsics, RadarScan
from .state import ImuBias
from .trajectory import Trajectory

KINDS = ("line", "circle", "figure8", "helix", "stair", "spline")

# closed loop used by the "spline" kind when no waypoints are given, metres
DEFAULT_WAYPOINTS = ((0.0, 0.0, 0.0), (6.0, 0.0, 0.0), (10.0, 3.0, 0.6), (9.0, 8.0, 1.2),
                     (3.0, 9.0, 0.8), (-1.0, 5.0, 0.2))


class TruthSample(NamedTuple):
    R: np.ndarray  # body to world
    p: np.ndarray
    v: np.ndarray
    a: np.ndarray
    omega: np.ndarray  # body frame


@dataclass(frozen=True)
class TrajectoryModel:
    kind: str = "line"
    speed: float = 1.0  # horizontal speed after the ramp, m/s
    radius: float = 5.0  # circle/helix/stair radius, figure-eight half-width, m
    climb_rate: float = 0.0  # mean vertical speed for helix/stair, m/s
    stair_period: float = 8.0  # horizontal metres per flight+landing (stair)
    duration: float = 30.0
    static_time: float = 3.0
    ramp_time: float = 2.0
    # "spline": closed loop through these points, traversed repeatedly
    waypoints: tuple = DEFAULT_WAYPOINTS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}; expected one of {KINDS}")
        if self.duration <= 0 or self.ramp_time <= 0 or self.static_time < 0:
            raise ValueError("duration and ramp_time must be positive, static_time >= 0")
        if self.kind == "spline":
            object.__setattr__(self, "_spline", _loop_spline(self.waypoints))
        d = self._path(0.0)[1]
        object.__setattr__(self, "_yaw0", float(np.arctan2(d[1], d[0])))

    # path parameter tau (metres of horizontal travel) as a function of time
    def _warp(self, t):
        x = (t - self.static_time) / self.ramp_time
        if x <= 0.0:
            return 0.0, 0.0, 0.0
        V, Tr = self.speed, self.ramp_time
        if x >= 1.0:
            return V * (0.5 * Tr + (t - self.static_time - Tr)), V, 0.0
        h = x**3 * (10 - 15 * x + 6 * x * x)
        H = x**4 * (2.5 - 3 * x + x * x)
        dh = 30 * x * x * (1 - x) ** 2
        return V * Tr * H, V * h, V * dh / Tr

    def _path(self, tau):
        """Position and first two derivatives with respect to tau."""
        k = self.kind
        if k == "line":
            return np.array([tau, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]), np.zeros(3)
        if k == "figure8":
            A = self.radius
            th = tau / A
            return (np.array([A * np.sin(th), 0.5 * A * np.sin(2 * th), 0.0]),
                    np.array([np.cos(th), np.cos(2 * th), 0.0]),
                    np.array([-np.sin(th), -2.0 * np.sin(2 * th), 0.0]) / A)
        if k == "spline":
            spline, length = self._spline
            tau = tau % length
            return spline(tau), spline(tau, 1), spline(tau, 2)
        r = self.radius
        th = tau / r
        P = np.array([r * np.sin(th), r * (1 - np.cos(th)), 0.0])
        dP = np.array([np.cos(th), np.sin(th), 0.0])
        ddP = np.array([-np.sin(th), np.cos(th), 0.0]) / r
        kappa = self.climb_rate / self.speed if self.speed > 0 else 0.0
        if k == "helix":
            P[2], dP[2] = kappa * tau, kappa
        elif k == "stair":
            L = self.stair_period
            w = 2 * np.pi / L
            P[2] = kappa * (tau - np.sin(w * tau) / w)
            dP[2] = kappa * (1 - np.cos(w * tau))
            ddP[2] = kappa * w * np.sin(w * tau)
        return P, dP, ddP

    def _eval(self, t: float) -> TruthSample:
        tau, dtau, ddtau = self._warp(t)
        P, dP, ddP = self._path(tau)
        Rz0 = rot_z(-self._yaw0)
        P, dP, ddP = Rz0 @ P, Rz0 @ dP, Rz0 @ ddP
        v = dP * dtau
        a = ddP * dtau**2 + dP * ddtau
        yaw = np.arctan2(dP[1], dP[0])
        h2 = dP[0] ** 2 + dP[1] ** 2
        yaw_rate = (dP[0] * ddP[1] - dP[1] * ddP[0]) / h2 * dtau
        return TruthSample(rot_z(yaw), P, v, a, np.array([0.0, 0.0, yaw_rate]))

    def path_length(self, t_end: float | None = None) -> float:
        t_end = self.duration if t_end is None else t_end
        ts = np.linspace(0.0, t_end, int(200 * t_end) + 2)
        p = np.array([self._eval(t).p for t in ts])
        return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def _loop_spline(waypoints):
    """Periodic cubic spline through ``waypoints`` (closed back to the first),
    parametrized by chord length so that tau stays close to arc length."""
    from scipy.interpolate import CubicSpline

    pts = np.asarray(waypoints, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise ValueError("a spline loop needs at least 3 waypoints")
    pts = np.vstack([pts - pts[0], [0.0, 0.0, 0.0]])
    chord = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(chord == 0.0):
        raise ValueError("consecutive waypoints must differ")
    knots = np.concatenate([[0.0], np.cumsum(chord)])
    return CubicSpline(knots, pts, bc_type="periodic", axis=0), float(knots[-1])


def eval_truth(model: TrajectoryModel, t: float) -> TruthSample:
    """World-frame pose, velocity and acceleration; body-frame angular rate."""
    if not 0.0 <= t <= model.duration:
        raise OutOfRange(f"t={t} outside [0, {model.duration}]")
    return model._eval(t)


def truth_trajectory(model: TrajectoryModel, rate: float = 200.0) -> Trajectory:
    n = int(round(model.duration * rate)) + 1
    ts = np.arange(n) / rate
    samples = [model._eval(t) for t in ts]
    return Trajectory.from_rotations(ts, [s.p for s in samples], [s.R for s in samples])


def _rng(seed, *stream):
    seed = [int(s) for s in np.atleast_1d(seed)]
    return np.random.default_rng(seed + [int(s) for s in stream])


def _sensor_key(sensor_id: str) -> int:
    return zlib.crc32(sensor_id.encode())


def synthesize_imu(model: TrajectoryModel, noise: ImuNoiseModel = ImuNoiseModel(),
                   rate: float = 200.0, seed=0, initial_bias: ImuBias = ImuBias(),
                   noiseless: bool = False, mode: str = "increment",
                   return_biases: bool = False):
    """IMU stream over ``[0, duration]`` at ``rate``.

    ``mode="increment"`` reports, at each sample, the mean specific force and
    rotation rate over the following sample interval, the way an integrating
    IMU does; zero-order-hold integration of such a stream reproduces the
    truth velocity and attitude at sample times. ``mode="instant"`` samples
    the analytic values directly.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    if mode not in ("increment", "instant"):
        raise ValueError(f"unknown mode {mode!r}")
    n = int(round(model.duration * rate)) + 1
    dt = 1.0 / rate
    ts = np.arange(n) / rate
    truth = [model._eval(t) for t in np.append(ts, ts[-1] + dt)]
    g = np.asarray(noise.gravity, dtype=float)
    acc = np.empty((n, 3))
    gyr = np.empty((n, 3))
    for k in range(n):
        Rk = truth[k].R
        if mode == "increment":
            acc[k] = Rk.T @ ((truth[k + 1].v - truth[k].v) / dt - g)
            gyr[k] = so3_log(Rk.T @ truth[k + 1].R) / dt
        else:
            acc[k] = Rk.T @ (truth[k].a - g)
            gyr[k] = truth[k].omega

    ba = np.tile(initial_bias.accel, (n, 1))
    bg = np.tile(initial_bias.gyro, (n, 1))
    if not noiseless:
        rng = _rng(seed, 1)
        white_a = rng.standard_normal((n, 3)) * noise.accel_noise_density * np.sqrt(rate)
        white_g = rng.standard_normal((n, 3)) * noise.gyro_noise_density * np.sqrt(rate)
        walk_a = rng.standard_normal((n, 3)) * noise.accel_bias_random_walk * np.sqrt(dt)
        walk_g = rng.standard_normal((n, 3)) * noise.gyro_bias_random_walk * np.sqrt(dt)
        walk_a[0] = walk_g[0] = 0.0
        ba = ba + np.cumsum(walk_a, axis=0)
        bg = bg + np.cumsum(walk_g, axis=0)
        acc = acc + ba + white_a
        gyr = gyr + bg + white_g
    else:
        acc = acc + ba
        gyr = gyr + bg
    stream = ImuStream(ts, acc, gyr)
    if return_biases:
        return stream, ba, bg
    return stream


@dataclass(frozen=True)
class RadarModel:
    sensor_id: str = "horizontal"
    extrinsics: RadarExtrinsics = field(default_factory=RadarExtrinsics)
    azimuth_fov_deg: float = 60.0  # half-angle
    elevation_fov_deg: float = 9.0  # half-angle
    points_per_scan: int = 200
    doppler_sigma: float = DOPPLER_SIGMA
    doppler_max: float = 1.76
    doppler_resolution: float = 0.055
    quantize: bool = False
    outlier_fraction: float = 0.0
    mover_speed: float = 1.0  # m/s
    # outlier points belong to one mover whose radial speed relative to the
    # static scene is mover_speed: "offset" always shifts their Doppler by
    # +mover_speed, "random_sign" draws an approaching or receding mover per scan
    mover_model: str = "random_sign"
    rate: float = 10.0
    time_offset: float = 0.0
    min_range: float = 1.0
    max_range: float = 30.0
    # angular measurement noise on reported point positions, one twelfth of
    # the 1.4 deg / 18 deg azimuth/elevation resolution
    azimuth_noise_deg: float = 0.12
    elevation_noise_deg: float = 1.5
    snr: float = 20.0

    def __post_init__(self):
        if not (0 < self.azimuth_fov_deg < 90 and 0 < self.elevation_fov_deg < 90):
            raise ValueError("FOV half-angles must lie in (0, 90) degrees")
        if self.rate <= 0 or self.points_per_scan <= 0:
            raise ValueError("rate and points_per_scan must be positive")
        if min(self.doppler_sigma, self.azimuth_noise_deg, self.elevation_noise_deg) < 0:
            raise ValueError("noise levels must be non-negative")
        if not 0.0 <= self.outlier_fraction <= 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1]")
        if self.mover_model not in ("random_sign", "offset"):
            raise ValueError(f"unknown mover_model {self.mover_model!r}")

    def noiseless(self) -> RadarModel:
        """Same geometry with every error source switched off."""
        return replace(self, doppler_sigma=0.0, outlier_fraction=0.0,
                       azimuth_noise_deg=0.0, elevation_noise_deg=0.0, quantize=False)

    def scan_times(self, duration: float) -> np.ndarray:
        n = int(np.floor((duration - self.time_offset) * self.rate + 1e-9)) + 1
        return np.round(self.time_offset + np.arange(max(n, 0)) / self.rate, 9)


def default_rig(**overrides) -> list[RadarModel]:
    """Forward-facing pair: one mounted flat, one rolled 90 degrees about x."""
    horizontal = RadarModel(sensor_id="horizontal", **overrides)
    vertical = RadarModel(sensor_id="vertical",
                          extrinsics=RadarExtrinsics(rot_x(np.pi / 2), np.zeros(3)),
                          time_offset=0.05, **overrides)
    return [horizontal, vertical]


def sensor_velocity(truth: TruthSample, extrinsics: RadarExtrinsics) -> np.ndarray:
    """True radar velocity in its own frame, lever arm included."""
    v_body = truth.R.T @ truth.v + np.cross(truth.omega, extrinsics.translation)
    return extrinsics.rotation.T @ v_body


def wrap_doppler(d, doppler_max: float):
    """Alias into ``[-doppler_max, doppler_max)``."""
    return np.mod(np.asarray(d) + doppler_max, 2.0 * doppler_max) - doppler_max


def synthesize_radar_scan(model: TrajectoryModel, radar: RadarModel, t: float, seed=0) -> RadarScan:
    if not 0.0 <= t <= model.duration:
        raise OutOfRange(f"t={t} outside [0, {model.duration}]")
    truth = model._eval(t)
    v_s = sensor_velocity(truth, radar.extrinsics)
    rng = _rng(seed, _sensor_key(radar.sensor_id), int(round(t * 1e6)))
    n = radar.points_per_scan
    az = np.deg2rad(rng.uniform(-radar.azimuth_fov_deg, radar.azimuth_fov_deg, n))
    el = np.deg2rad(rng.uniform(-radar.elevation_fov_deg, radar.elevation_fov_deg, n))
    rng_m = rng.uniform(radar.min_range, radar.max_range, n)
    u = np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    d = -u @ v_s + radar.doppler_sigma * rng.standard_normal(n)

    n_out = int(round(radar.outlier_fraction * n))
    if n_out:
        idx = rng.choice(n, n_out, replace=False)
        if radar.mover_model == "offset":
            d[idx] += radar.mover_speed
        else:
            d[idx] += radar.mover_speed * rng.choice((-1.0, 1.0))

    # reported positions carry angular error; the Doppler does not
    az_m = az + np.deg2rad(radar.azimuth_noise_deg) * rng.standard_normal(n)
    el_m = el + np.deg2rad(radar.elevation_noise_deg) * rng.standard_normal(n)
    pos = rng_m[:, None] * np.column_stack([np.cos(el_m) * np.cos(az_m),
                                            np.cos(el_m) * np.sin(az_m), np.sin(el_m)])
    if radar.quantize and radar.doppler_resolution > 0:
        d = np.round(d / radar.doppler_resolution) * radar.doppler_resolution
    d = wrap_doppler(d, radar.doppler_max)
    return RadarScan(float(t), radar.sensor_id, pos, d, np.full(n, radar.snr))


@dataclass(frozen=True)
class SimConfig:
    trajectory: TrajectoryModel = field(default_factory=TrajectoryModel)
    imu_noise: ImuNoiseModel = field(default_factory=ImuNoiseModel)
    imu_rate: float = 200.0
    imu_bias: ImuBias = field(default_factory=ImuBias)
    radars: tuple = field(default_factory=lambda: tuple(default_rig()))
    seed: int = 0
    noiseless: bool = False


def simulate(config: SimConfig):
    """Synthesize a full dataset and its ground-truth trajectory.

    Returns ``(dataset, truth)``.
    """
    from .dataset import Dataset

    radars = [r.noiseless() for r in config.radars] if config.noiseless else list(config.radars)
    imu = synthesize_imu(config.trajectory, config.imu_noise, config.imu_rate, config.seed,
                         config.imu_bias, noiseless=config.noiseless)
    scans = {}
    for radar in radars:
        ts = radar.scan_times(config.trajectory.duration)
        scans[radar.sensor_id] = [synthesize_radar_scan(config.trajectory, radar, t, config.seed)
                                  for t in ts]
    calibration = {r.sensor_id: r.extrinsics for r in radars}
    dataset = Dataset(imu, scans, calibration)
    return dataset, truth_trajectory(config.trajectory, config.imu_rate)
