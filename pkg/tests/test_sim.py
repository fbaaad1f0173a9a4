import numpy as np
import pytest

from rio.errors import OutOfRange
from rio.imu import forward_integrate
from rio.manifold import so3_log
from rio.radar_velocity import unit_directions
from rio.sim import (KINDS, RadarModel, SimConfig, TrajectoryModel, default_rig, eval_truth,
                     sensor_velocity, simulate, synthesize_imu, synthesize_radar_scan,
                     wrap_doppler)
from rio.state import NavState

MODELS = [TrajectoryModel(k, speed=1.0, radius=4.0, climb_rate=0.2, duration=20.0) for k in KINDS]


def test_model_validation():
    with pytest.raises(ValueError):
        TrajectoryModel("spiral")
    with pytest.raises(ValueError):
        TrajectoryModel(duration=0.0)
    with pytest.raises(OutOfRange):
        eval_truth(TrajectoryModel(duration=5.0), 6.0)
    with pytest.raises(ValueError):
        RadarModel(mover_model="teleport")
    with pytest.raises(ValueError):
        RadarModel(outlier_fraction=1.5)


@pytest.mark.parametrize("model", MODELS, ids=KINDS)
def test_truth_derivatives_are_consistent(model):
    h = 1e-5
    for t in np.linspace(0.5, model.duration - 0.5, 23):
        a, b, c = eval_truth(model, t - h), eval_truth(model, t), eval_truth(model, t + h)
        assert np.allclose((c.p - a.p) / (2 * h), b.v, atol=1e-6)
        assert np.allclose((c.v - a.v) / (2 * h), b.a, atol=1e-5)
        assert np.allclose(so3_log(a.R.T @ c.R) / (2 * h), b.omega, atol=1e-5)
        # yaw follows the horizontal heading, body stays level
        assert np.allclose(b.R[2], [0.0, 0.0, 1.0])


@pytest.mark.parametrize("model", MODELS, ids=KINDS)
def test_acceleration_is_continuous(model):
    # the ramp end is where a C1-only warp would jump
    tb = model.static_time + model.ramp_time
    for t in (model.static_time, tb):
        lo, hi = eval_truth(model, t - 1e-7), eval_truth(model, t + 1e-7)
        assert np.allclose(lo.a, hi.a, atol=1e-5)


def test_starts_at_rest_at_the_origin():
    s = eval_truth(TrajectoryModel("figure8", radius=10.0), 1.0)
    assert np.allclose(s.p, 0.0) and np.allclose(s.v, 0.0) and np.allclose(s.R, np.eye(3))


@pytest.mark.parametrize("kind", ["circle", "stair"])
def test_increment_imu_reproduces_truth(kind):
    model = TrajectoryModel(kind, radius=3.0, climb_rate=0.3, duration=8.0)
    imu = synthesize_imu(model, noiseless=True)
    s0 = eval_truth(model, 0.0)
    out = forward_integrate(imu.window(0.0, 6.0 + 1e-9), NavState(s0.R, s0.p, s0.v, t=0.0))
    s1 = eval_truth(model, 6.0)
    assert np.allclose(out.v, s1.v, atol=1e-9)
    assert np.linalg.norm(so3_log(out.R.T @ s1.R)) < 1e-9
    assert np.linalg.norm(out.p - s1.p) < 1e-3


def test_imu_noise_statistics():
    model = TrajectoryModel(duration=50.0)
    clean = synthesize_imu(model, noiseless=True)
    noisy, ba, bg = synthesize_imu(model, seed=4, return_biases=True)
    white = noisy.gyro - clean.gyro - bg
    expected = 2.6e-4 * np.sqrt(200.0)
    assert np.std(white) == pytest.approx(expected, rel=0.03)
    assert np.all(ba[0] == 0.0) and np.any(ba[-1] != 0.0)


def test_wrap_doppler():
    d = np.array([-2.0, -1.76, 0.0, 1.7, 1.76, 2.0])
    w = wrap_doppler(d, 1.76)
    assert np.all((w >= -1.76) & (w < 1.76))
    assert np.allclose(w, [1.52, -1.76, 0.0, 1.7, -1.76, -1.52])


def test_noiseless_scan_matches_the_doppler_model():
    model = TrajectoryModel("circle", duration=10.0)
    radar = default_rig()[1].noiseless()
    scan = synthesize_radar_scan(model, radar, 6.0, seed=2)
    v_s = sensor_velocity(eval_truth(model, 6.0), radar.extrinsics)
    u = unit_directions(scan.positions)
    assert np.allclose(scan.doppler, -u @ v_s, atol=1e-12)
    r = np.linalg.norm(scan.positions, axis=1)
    assert np.all((r >= radar.min_range) & (r <= radar.max_range))
    assert np.all(np.abs(np.degrees(np.arcsin(u[:, 2]))) <= radar.elevation_fov_deg + 1e-9)
    assert np.all(np.abs(np.degrees(np.arctan2(u[:, 1], u[:, 0]))) <= radar.azimuth_fov_deg + 1e-9)


@pytest.mark.parametrize("mover", ["offset", "random_sign"])
def test_outlier_fraction(mover):
    model = TrajectoryModel(duration=10.0)
    radar = RadarModel(doppler_sigma=0.0, azimuth_noise_deg=0.0, elevation_noise_deg=0.0,
                       outlier_fraction=0.2, mover_model=mover, mover_speed=1.0)
    scan = synthesize_radar_scan(model, radar, 6.0)
    v_s = sensor_velocity(eval_truth(model, 6.0), radar.extrinsics)
    err = scan.doppler + unit_directions(scan.positions) @ v_s
    moved = np.abs(err) > 1e-9
    assert moved.sum() == 40
    assert np.allclose(np.abs(err[moved]), 1.0)
    if mover == "offset":
        assert np.allclose(err[moved], 1.0)
    else:
        assert len(np.unique(np.sign(err[moved]))) == 1  # one mover per scan


def test_simulation_is_deterministic():
    cfg = SimConfig(trajectory=TrajectoryModel(duration=6.0), seed=3)
    (a, ta), (b, tb) = simulate(cfg), simulate(cfg)
    assert np.array_equal(a.imu.accel, b.imu.accel)
    assert np.array_equal(a.scans["vertical"][10].doppler, b.scans["vertical"][10].doppler)
    assert np.array_equal(ta.p, tb.p)
    c, _ = simulate(SimConfig(trajectory=TrajectoryModel(duration=6.0), seed=4))
    assert not np.array_equal(a.imu.accel, c.imu.accel)
    assert a.sensor_ids == ["horizontal", "vertical"]
    assert len(a.scans["horizontal"]) == 61 and a.scans["vertical"][0].timestamp == 0.05
