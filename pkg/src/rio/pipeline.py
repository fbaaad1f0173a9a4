"""Dataset in, trajectory out.

Static initialization finds the end of the initial rest period, after which
every radar scan (from the selected sensors, merged by timestamp) becomes a
keyframe. Scans whose velocity cannot be estimated still create a keyframe,
bridged by the IMU factor alone.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RADAR_SELECTIONS, PipelineConfig
from .dataset import Dataset
from .errors import (CalibrationMissing, DegenerateGeometry, InitializationFailed,
                     InsufficientPoints, NonConvergence, NotStatic, RioError)
from .imu import ImuStream, detect_motion, static_initialize
from .radar_velocity import RadarExtrinsics, estimate_sensor_velocity, to_body_frame
from .smoother import FixedLagSmoother
from .state import NavState
from .trajectory import Trajectory

log = logging.getLogger(__name__)

_SKIPPABLE = (InsufficientPoints, DegenerateGeometry, NonConvergence)


@dataclass
class PipelineResult:
    trajectory: Trajectory
    t_init: float
    keyframes: int = 0
    velocity_factors: int = 0
    dropped_scans: list = field(default_factory=list)  # (timestamp, sensor_id, reason)


def find_static_start(imu: ImuStream, window_sec: float = 1.0, threshold: float = 0.05,
                      step: float | None = None):
    """Locate the initialization window.

    Two adjacent windows slide forward together; the first is averaged, the
    second watches for motion. Returns ``(averaging_window, t_init)`` where
    ``t_init`` is the end of the averaging window at the first detection, or
    of the very first window when the stream never moves.
    """
    step = window_sec / 20.0 if step is None else step
    t0 = imu.start
    if imu.end - t0 < window_sec:
        raise InitializationFailed(f"IMU stream shorter than the {window_sec} s init window")
    first = imu.window(t0, t0 + window_sec)
    if detect_motion(first, threshold):
        raise InitializationFailed("IMU is moving at the start of the stream")
    a = t0
    while a + 2.0 * window_sec <= imu.end + 1e-12:
        watch = imu.window(a + window_sec, a + 2.0 * window_sec)
        if detect_motion(watch, threshold):
            return imu.window(a, a + window_sec), a + window_sec
        a += step
    return first, t0 + window_sec


def _with_context(exc: RioError, where: str) -> RioError:
    new = type(exc)(f"{where}: {exc}")
    new.__cause__ = exc
    return new


def run(dataset: Dataset, config: PipelineConfig = PipelineConfig(),
        radars: str | None = None) -> PipelineResult:
    """Full pipeline with bookkeeping; see :func:`run_pipeline`."""
    selection = config.radars if radars is None else radars
    if selection not in RADAR_SELECTIONS:
        raise ValueError(f"radars must be one of {sorted(RADAR_SELECTIONS)}, got {selection!r}")
    sensor_ids = RADAR_SELECTIONS[selection]
    for sid in sensor_ids:
        if sid not in dataset.scans:
            raise CalibrationMissing(f"dataset has no radar {sid!r} (selection {selection!r})")

    imu = dataset.imu
    window, t_init = find_static_start(imu, config.init.window_sec, config.init.accel_var_threshold)
    try:
        R0, bias = static_initialize(window, config.imu, config.init.accel_var_threshold)
    except NotStatic as exc:
        raise InitializationFailed(str(exc)) from exc
    log.info("initialized at t=%.3f", t_init)

    smoother = FixedLagSmoother(config.smoother, config.imu)
    span = window.end - window.start
    sigmas = config.smoother.initial_sigmas(
        gyro_bias_sigma=config.imu.gyro_noise_density / np.sqrt(max(span, 1e-3)))
    smoother.initialize(NavState(R0, np.zeros(3), np.zeros(3), bias.accel, bias.gyro, t_init),
                        sigmas)
    result = PipelineResult(None, t_init)

    scans = [s for s in dataset.merged_scans(sensor_ids) if t_init < s.timestamp <= imu.end]
    for scan in scans:
        where = f"scan {scan.sensor_id!r} at t={scan.timestamp!r}"
        ext: RadarExtrinsics = dataset.calibration[scan.sensor_id]
        try:
            pred = smoother.predict(scan.timestamp, imu)
            omega = imu.interpolate(scan.timestamp).gyro - pred.bg
            v_body_pred = pred.R.T @ pred.v
            guess = ext.rotation.T @ (v_body_pred + np.cross(omega, ext.translation))
            try:
                est = estimate_sensor_velocity(scan, guess, config.radar)
            except _SKIPPABLE as exc:
                result.dropped_scans.append((scan.timestamp, scan.sensor_id, type(exc).__name__))
                smoother.add_keyframe(None, imu, timestamp=scan.timestamp)
            else:
                body = to_body_frame(est, ext, omega if config.radar.lever_arm_correction else None)
                smoother.add_keyframe(body, imu)
                result.velocity_factors += 1
            smoother.optimize_window()
            smoother.marginalize_old()
        except RioError as exc:
            raise _with_context(exc, where) from exc

    result.trajectory = smoother.export_trajectory()
    result.keyframes = len(result.trajectory)
    return result


def run_pipeline(dataset: Dataset, config: PipelineConfig = PipelineConfig(),
                 radars: str | None = None) -> Trajectory:
    """Estimate the trajectory of ``dataset`` with the radars in ``radars``
    (``"dual"``, ``"horizontal"`` or ``"vertical"``; default from config)."""
    return run(dataset, config, radars).trajectory
