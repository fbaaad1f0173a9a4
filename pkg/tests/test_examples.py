"""Worked examples with hand-derived or closed-form answers."""
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from rio.imu import GRAVITY, ImuStream, detect_motion, imu_residual, preintegrate
from rio.manifold import rot_z, skew, so3_exp, so3_log
from rio.radar_velocity import (RadarExtrinsics, RadarScan, VelocityEstimate,
                                doppler_residual, estimate_sensor_velocity, marginal_covariance,
                                to_body_frame)
from rio.sim import (RadarModel, TrajectoryModel, eval_truth, sensor_velocity,
                     synthesize_radar_scan)
from rio.smoother import FixedLagSmoother, WindowConfig
from rio.state import ImuBias, NavState

SIGMA_D = 0.124


# ---------------------------------------------------------------- manifold
def test_skew_layout():
    assert np.array_equal(skew([1.0, 2.0, 3.0]), [[0, -3, 2], [3, 0, -1], [-2, 1, 0]])
    assert np.array_equal(skew(np.zeros(3)), np.zeros((3, 3)))


def test_exp_quarter_turn_and_log_half_turn():
    R = so3_exp([0.0, 0.0, np.pi / 2])
    assert np.allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)
    assert np.linalg.norm(so3_log(rot_z(np.pi))) == pytest.approx(np.pi, abs=1e-6)
    assert np.array_equal(so3_log(np.eye(3)), np.zeros(3))


# ---------------------------------------------------------- radar velocity
def test_doppler_residual_examples():
    assert doppler_residual(np.zeros(3), np.array([[3.0, 1.0, 0.0]]), np.zeros(1))[0] == 0.0
    assert doppler_residual(np.array([1.0, 0, 0]), np.array([[10.0, 0, 0]]), np.array([-1.0]))[0] == 0.0
    assert doppler_residual(np.array([1.0, 0, 0]), np.array([[0.0, 5.0, 0]]), np.zeros(1))[0] == 0.0


def test_marginal_covariance_axis_examples():
    s2 = SIGMA_D**2
    assert np.allclose(marginal_covariance(10.0 * np.eye(3), s2), s2 * np.eye(3))
    six = np.vstack([np.eye(3), 4.0 * np.eye(3)])
    assert np.allclose(marginal_covariance(six, s2), 0.5 * s2 * np.eye(3))


def test_narrow_elevation_inflates_vertical_variance(rng):
    az = np.deg2rad(rng.uniform(-60, 60, 50))
    el = np.deg2rad(rng.uniform(-9, 9, 50))
    u = np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    cov = marginal_covariance(u * 10.0, SIGMA_D**2)
    assert cov[2, 2] > cov[0, 0]


def test_simulated_horizontal_radar_is_weak_vertically():
    model = TrajectoryModel("line", duration=20.0)
    radar = RadarModel()
    scan = synthesize_radar_scan(model, radar, 10.0, seed=3)
    sd = np.sqrt(np.diag(marginal_covariance(scan.positions, SIGMA_D**2)))
    assert sd[2] >= 3.0 * sd[0]


def test_body_frame_quarter_turn_swaps_covariance():
    est = VelocityEstimate("sensor", np.array([1.0, 0, 0]), np.diag([1.0, 2.0, 3.0]), 10, 10, 0.5)
    body = to_body_frame(est, RadarExtrinsics(rotation=rot_z(np.pi / 2)))
    assert np.allclose(body.v, [0, 1, 0], atol=1e-15)
    assert np.allclose(body.cov, np.diag([2.0, 1.0, 3.0]), atol=1e-15)
    assert (body.timestamp, body.inlier_count, body.total_count) == (0.5, 10, 10)
    same = to_body_frame(est, RadarExtrinsics())
    assert np.array_equal(same.v, est.v) and np.array_equal(same.cov, est.cov)


def test_body_frame_preserves_trace_and_spectrum(rng):
    for _ in range(20):
        A = rng.normal(size=(3, 3))
        est = VelocityEstimate("sensor", rng.normal(size=3), A @ A.T, 10, 10, 0.0)
        R = Rotation.random(random_state=rng).as_matrix()
        body = to_body_frame(est, RadarExtrinsics(rotation=R))
        assert np.trace(body.cov) == pytest.approx(np.trace(est.cov), abs=1e-10)
        assert np.allclose(np.linalg.eigvalsh(body.cov), np.linalg.eigvalsh(est.cov), atol=1e-10)


def _cone_scan(rng, v, n=100, sigma=SIGMA_D, outliers=0.0, offset=1.0):
    az = np.deg2rad(rng.uniform(-60, 60, n))
    el = np.deg2rad(rng.uniform(-30, 30, n))
    u = np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    d = -u @ v + sigma * rng.standard_normal(n)
    bad = rng.random(n) < outliers
    d[bad] += offset if np.isscalar(offset) else offset[bad]
    return RadarScan(0.0, "r", u * rng.uniform(1, 30, n)[:, None], d, np.zeros(n))


def test_estimate_is_invariant_to_point_order(rng):
    scan = _cone_scan(rng, np.array([0.8, -0.2, 0.1]), outliers=0.1)
    perm = rng.permutation(len(scan))
    shuffled = RadarScan(0.0, "r", scan.positions[perm], scan.doppler[perm], scan.snr[perm])
    a, b = estimate_sensor_velocity(scan), estimate_sensor_velocity(shuffled)
    assert np.allclose(a.v, b.v, atol=1e-9) and a.inlier_count == b.inlier_count


def _mover_hits(outlier_fraction, seed=0, trials=100):
    """Scans from the simulator with one mover offset by +1 m/s; counts
    estimates within three times the largest predicted standard deviation."""
    model = TrajectoryModel("line", speed=0.5, duration=100.0)
    radar = RadarModel(points_per_scan=100, outlier_fraction=outlier_fraction,
                       mover_model="offset", mover_speed=1.0, doppler_sigma=SIGMA_D,
                       doppler_max=100.0)
    hits = 0
    for k in range(trials):
        t = 10.0 + 0.1 * k
        est = estimate_sensor_velocity(synthesize_radar_scan(model, radar, t, seed=seed))
        v = sensor_velocity(model._eval(t), radar.extrinsics)
        hits += np.linalg.norm(est.v - v) <= 3.0 * np.sqrt(np.linalg.eigvalsh(est.cov).max())
    return hits


def test_covariance_bounds_error_without_mover():
    assert _mover_hits(0.0) >= 99


# With c = 3 sigma the Cauchy kernel still gives each mover point a weight of
# about 0.12, so 20% of points offset by 8 sigma bias the estimate while the
# inlier-only covariance does not grow. Over 2000 trials about 2.9% exceed the
# bound, so 99 of 100 holds for only a few seeds.
@pytest.mark.xfail(strict=True, reason="Cauchy bias under a 20% coherent mover: 97/100 at seed 0")
def test_moving_object_monte_carlo():
    assert _mover_hits(0.2) >= 99


def test_gross_outliers_move_the_estimate_little(rng):
    v = np.array([1.0, 0.3, -0.1])
    shifts = []
    for _ in range(100):
        seed = rng.integers(1 << 30)
        clean = estimate_sensor_velocity(_cone_scan(np.random.default_rng(seed), v))
        r = np.random.default_rng(seed)
        # same inliers, then 10% of points replaced by arbitrary Dopplers
        scan = _cone_scan(r, v, outliers=0.1, offset=rng.uniform(-8, 8, 100))
        dirty = estimate_sensor_velocity(scan)
        sd = np.sqrt(np.linalg.eigvalsh(clean.cov).max())
        shifts.append(np.linalg.norm(dirty.v - clean.v) / sd)
    assert np.percentile(shifts, 95) < 5.0


# --------------------------------------------------------------------- imu
def _stream(accel, gyro, dt=0.005, t0=0.0):
    accel, gyro = np.atleast_2d(accel), np.atleast_2d(gyro)
    n = max(len(accel), len(gyro))
    return ImuStream(t0 + dt * np.arange(n), np.broadcast_to(accel, (n, 3)).copy(),
                     np.broadcast_to(gyro, (n, 3)).copy())


def test_constant_acceleration_closed_form():
    dt, N = 0.01, 37
    pre = preintegrate(_stream(np.tile([1.0, 0, 0], (N + 1, 1)), np.zeros(3), dt=dt))
    assert np.allclose(pre.delta_R, np.eye(3), atol=0)
    assert np.allclose(pre.delta_v, [N * dt, 0, 0], atol=1e-14)
    assert np.allclose(pre.delta_p, [dt**2 * (N * (N - 1) / 2 + N / 2), 0, 0], atol=1e-14)


def test_constant_rate_closed_form():
    pre = preintegrate(_stream(np.zeros((201, 3)), [0.0, 0.0, 0.1 * np.pi]))
    assert pre.dt == pytest.approx(1.0)
    assert np.allclose(pre.delta_R, rot_z(0.1 * np.pi), atol=1e-6)


def test_adjacent_intervals_compose(rng):
    n, k = 121, 50
    stream = _stream(rng.normal([0, 0, 9.8], 1.0, (n, 3)), rng.normal(0, 0.5, (n, 3)))
    bias = ImuBias([0.05, -0.02, 0.01], [0.003, 0.0, -0.002])
    full = preintegrate(stream, bias)
    a = preintegrate(ImuStream(stream.t[:k + 1], stream.accel[:k + 1], stream.gyro[:k + 1]), bias)
    b = preintegrate(ImuStream(stream.t[k:], stream.accel[k:], stream.gyro[k:]), bias)
    assert np.allclose(a.delta_R @ b.delta_R, full.delta_R, atol=1e-6)
    assert np.allclose(a.delta_v + a.delta_R @ b.delta_v, full.delta_v, atol=1e-6)
    dp = a.delta_p + a.delta_v * b.dt + a.delta_R @ b.delta_p
    assert np.allclose(dp, full.delta_p, atol=1e-6)


def test_residual_examples(rng):
    stream = _stream(rng.normal([0, 0, 9.8], 0.5, (41, 3)), rng.normal(0, 0.2, (41, 3)))
    pre = preintegrate(stream)
    si = NavState(t=0.0, v=np.array([0.3, 0.0, 0.0]))
    sj = pre.predict(si)
    assert np.allclose(imu_residual(pre, si, sj), 0.0, atol=1e-8)
    moved = NavState(sj.R, sj.p, sj.v + [0.1, 0, 0], sj.ba, sj.bg, sj.t)
    assert np.allclose(imu_residual(pre, si, moved)[3:6], [0.1, 0, 0], atol=1e-12)
    drift = NavState(sj.R, sj.p, sj.v, sj.ba + [0.01, 0, 0], sj.bg, sj.t)
    assert np.allclose(imu_residual(pre, si, drift)[9:12], [0.01, 0, 0], atol=1e-15)


def test_detect_motion_examples(rng):
    window = np.tile([0.0, 0.0, 9.81], (100, 1))
    assert not detect_motion(_stream(window, np.zeros(3)), 0.01)
    step = window.copy()
    step[50:, 0] += 1.0
    assert detect_motion(_stream(step, np.zeros(3)), 0.01)
    quiet = [detect_motion(_stream(window + 0.01 * rng.standard_normal(window.shape),
                                   np.zeros(3)), 0.01)
             for _ in range(1000)]
    assert np.mean(quiet) < 0.01


# ---------------------------------------------------------------- smoother
def _static_imu(duration, noise=0.0, rng=None, rate=200.0):
    n = int(round(duration * rate)) + 1
    accel = np.tile(-GRAVITY, (n, 1))
    gyro = np.zeros((n, 3))
    if noise:
        accel += noise * rng.standard_normal((n, 3))
        gyro += 0.1 * noise * rng.standard_normal((n, 3))
    return ImuStream(np.arange(n) / rate, accel, gyro)


def _velocity(t, v, sigma=0.01):
    return VelocityEstimate("body", np.asarray(v, dtype=float), sigma**2 * np.eye(3), 50, 50, t)


def _straight_line(duration=10.0, p0=(0.0, 0.0, 0.0), noise=None, spike_at=None, lag=1.0):
    """Constant 1 m/s along x: the IMU sees only gravity."""
    imu = _static_imu(duration)
    s = FixedLagSmoother(WindowConfig(lag=lag))
    s.initialize(NavState(t=0.0, p=np.asarray(p0, dtype=float), v=np.array([1.0, 0.0, 0.0])))
    n = int(round(duration / 0.1))
    for k in range(1, n + 1):
        v = np.array([1.0, 0.0, 0.0])
        if noise is not None:
            v = v + noise[k - 1]
        if k == spike_at:
            v = v + np.array([10.0, 0.0, 0.0])
        s.add_keyframe(_velocity(0.1 * k, v), imu)
        s.optimize_window()
        s.marginalize_old()
    return s


def test_straight_line_final_position():
    s = _straight_line()
    assert np.linalg.norm(s.newest.p - [10.0, 0.0, 0.0]) < 1e-3


def test_gross_velocity_outlier_is_bounded():
    noise = 0.05 * np.random.default_rng(4).standard_normal((100, 3))
    clean = np.linalg.norm(_straight_line(noise=noise).newest.p - [10.0, 0, 0])
    spiked = np.linalg.norm(_straight_line(noise=noise, spike_at=50).newest.p - [10.0, 0, 0])
    assert spiked < 10.0 * clean


def test_gauge_follows_the_prior():
    shift = np.array([3.0, -2.0, 0.5])
    a = _straight_line(duration=3.0).export_trajectory()
    b = _straight_line(duration=3.0, p0=shift).export_trajectory()
    assert np.allclose(b.p - a.p, shift, atol=1e-9)
    assert np.allclose(b.q, a.q, atol=1e-12)


def test_stationary_velocities_stay_near_zero(rng):
    imu = _static_imu(10.0, noise=0.02, rng=rng)
    sigma = 0.01
    s = FixedLagSmoother(WindowConfig(lag=1.0))
    s.initialize(NavState(t=0.0))
    worst = 0.0
    for k in range(1, 101):
        s.add_keyframe(_velocity(0.1 * k, sigma * rng.standard_normal(3), sigma), imu)
        s.optimize_window()
        worst = max(worst, np.abs(s.newest.v).max())
        s.marginalize_old()
    assert worst < 3.0 * sigma


def test_marginalize_is_a_noop_inside_the_lag():
    s = FixedLagSmoother(WindowConfig(lag=5.0))
    s.initialize(NavState(t=0.0))
    imu = _static_imu(2.0)
    for k in range(1, 6):
        s.add_keyframe(_velocity(0.1 * k, np.zeros(3)), imu)
    s.optimize_window()
    prior = s.prior
    assert s.marginalize_old() is prior and len(s.window) == 6 and not s.marginalized


def test_single_keyframe_export():
    s = FixedLagSmoother()
    s.initialize(NavState(t=0.0))
    traj = s.export_trajectory()
    assert len(traj) == 1
    assert np.array_equal(traj.p[0], np.zeros(3))
    assert np.allclose(np.abs(traj.q[0]), [0, 0, 0, 1]) or np.allclose(np.abs(traj.q[0]), [1, 0, 0, 0])


# --------------------------------------------------------------------- sim
def test_circle_closes():
    model = TrajectoryModel("circle", radius=5.0, speed=1.0, duration=200.0,
                            static_time=0.0, ramp_time=1.0)
    # once at cruise speed, one lap later the pose repeats
    t0 = 10.0
    a, b = eval_truth(model, t0), eval_truth(model, t0 + 2 * np.pi * 5.0)
    assert np.allclose(a.p, b.p, atol=1e-9) and np.allclose(a.R, b.R, atol=1e-9)
