"""On-disk dataset layout.

A dataset directory holds::

    imu.csv               t,ax,ay,az,wx,wy,wz   (s, m/s^2, rad/s)
    radar_<id>.jsonl      {"t": ..., "points": [[x, y, z, doppler, snr], ...]}
    calib.yaml            <id>: {quaternion: [w, x, y, z], translation: [x, y, z]}

Calibration is body-from-sensor. Floats are written with ``repr`` so that
write -> read -> write is byte-identical.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import CalibrationMissing, MissingFile, NonMonotoneTime, ParseError
from .imu import ImuStream
from .manifold import is_rotation, quat_to_rot, rot_to_quat
from .radar_velocity import RadarExtrinsics, RadarScan

IMU_HEADER = "t,ax,ay,az,wx,wy,wz"


@dataclass
class Dataset:
    imu: ImuStream
    scans: dict  # sensor_id -> list[RadarScan]
    calibration: dict  # sensor_id -> RadarExtrinsics
    metadata: dict = field(default_factory=dict)
    calib_quaternions: dict = field(default_factory=dict)  # sensor_id -> (w, x, y, z)

    def __post_init__(self):
        for sid, scans in self.scans.items():
            if sid not in self.calibration:
                raise CalibrationMissing(f"no calibration for radar {sid!r}")
            ts = [s.timestamp for s in scans]
            if any(b < a for a, b in zip(ts, ts[1:])):
                raise NonMonotoneTime(f"radar {sid!r} timestamps decrease")
            for s in scans:
                if s.sensor_id != sid:
                    raise ParseError(f"scan tagged {s.sensor_id!r} filed under {sid!r}")
        for sid, ext in self.calibration.items():
            if not is_rotation(ext.rotation, 1e-6):
                raise ParseError(f"calibration rotation for {sid!r} is not a rotation")
            if sid not in self.calib_quaternions:
                x, y, z, w = rot_to_quat(ext.rotation)
                self.calib_quaternions[sid] = (float(w), float(x), float(y), float(z))
        self.metadata.setdefault("sensor_ids", sorted(self.scans))
        if len(self.imu) > 1:
            self.metadata.setdefault("imu_rate", float((len(self.imu) - 1) / (self.imu.end - self.imu.start)))

    @property
    def sensor_ids(self) -> list[str]:
        return sorted(self.scans)

    def merged_scans(self, sensor_ids=None) -> list[RadarScan]:
        """Scans of the selected radars in timestamp order (ties by sensor id)."""
        ids = self.sensor_ids if sensor_ids is None else list(sensor_ids)
        for sid in ids:
            if sid not in self.scans:
                raise CalibrationMissing(f"dataset has no radar {sid!r}")
        out = [s for sid in ids for s in self.scans[sid]]
        return sorted(out, key=lambda s: (s.timestamp, s.sensor_id))


def _r(x) -> str:
    return repr(float(x))


def write_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [IMU_HEADER]
    imu = dataset.imu
    for k in range(len(imu)):
        vals = [imu.t[k], *imu.accel[k], *imu.gyro[k]]
        lines.append(",".join(_r(v) for v in vals))
    (path / "imu.csv").write_text("\n".join(lines) + "\n")

    for sid in dataset.sensor_ids:
        with open(path / f"radar_{sid}.jsonl", "w") as fh:
            for scan in dataset.scans[sid]:
                pts = np.column_stack([scan.positions, scan.doppler, scan.snr])
                rec = {"t": float(scan.timestamp), "points": pts.tolist()}
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")

    calib = {}
    for sid in sorted(dataset.calibration):
        ext = dataset.calibration[sid]
        calib[sid] = {"quaternion": [float(x) for x in dataset.calib_quaternions[sid]],
                      "translation": [float(x) for x in ext.translation]}
    (path / "calib.yaml").write_text(yaml.safe_dump(calib, sort_keys=True))
    return path


def _read_imu(file: Path) -> ImuStream:
    rows = []
    last_t = -math.inf
    with open(file) as fh:
        header = fh.readline().strip()
        if header.replace(" ", "") != IMU_HEADER:
            raise ParseError(f"{file}:1: expected header {IMU_HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise ParseError(f"{file}:{lineno}: expected 7 fields, got {len(parts)}")
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                bad = next(i for i, x in enumerate(parts) if not _is_float(x))
                raise ParseError(f"{file}:{lineno}: field {IMU_HEADER.split(',')[bad]!r} "
                                 f"is not a number: {parts[bad]!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError(f"{file}:{lineno}: non-finite value")
            if vals[0] <= last_t:
                kind = "repeated" if vals[0] == last_t else "decreasing"
                raise ParseError(f"{file}:{lineno}: {kind} timestamp {parts[0]}")
            last_t = vals[0]
            rows.append(vals)
    if not rows:
        raise ParseError(f"{file}: no IMU samples")
    arr = np.array(rows)
    return ImuStream(arr[:, 0], arr[:, 1:4], arr[:, 4:7])


def _is_float(x: str) -> bool:
    try:
        float(x)
        return True
    except ValueError:
        return False


def _read_radar(file: Path, sensor_id: str) -> list[RadarScan]:
    scans = []
    last_t = -math.inf
    with open(file) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                t = float(rec["t"])
                pts = np.array(rec["points"], dtype=float).reshape(-1, 5)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{file}:{lineno}: malformed scan record ({exc})") from None
            if t < last_t:
                raise ParseError(f"{file}:{lineno}: timestamp {t} precedes {last_t}")
            if not np.all(np.isfinite(pts)):
                raise ParseError(f"{file}:{lineno}: non-finite point value")
            origin = np.flatnonzero(np.linalg.norm(pts[:, :3], axis=1) == 0.0)
            if origin.size:
                raise ParseError(f"{file}:{lineno}: point {origin[0]} lies at the sensor origin")
            last_t = t
            scans.append(RadarScan(t, sensor_id, pts[:, :3], pts[:, 3], pts[:, 4]))
    return scans


def _read_calib(file: Path):
    try:
        raw = yaml.safe_load(file.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ParseError(f"{file}: {exc}") from None
    calibration, quats = {}, {}
    for sid, entry in raw.items():
        try:
            w, x, y, z = (float(v) for v in entry["quaternion"])
            t = np.array([float(v) for v in entry["translation"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{file}: bad entry for {sid!r} ({exc})") from None
        if t.shape != (3,) or abs(np.linalg.norm([w, x, y, z]) - 1.0) > 1e-6:
            raise ParseError(f"{file}: entry {sid!r} needs a unit quaternion and a 3-vector")
        sid = str(sid)
        calibration[sid] = RadarExtrinsics(quat_to_rot(np.array([x, y, z, w])), t)
        quats[sid] = (w, x, y, z)
    return calibration, quats


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.is_dir():
        raise MissingFile(f"dataset directory {path} not found")
    for name in ("imu.csv", "calib.yaml"):
        if not (path / name).is_file():
            raise MissingFile(f"{path / name} not found")
    radar_files = sorted(path.glob("radar_*.jsonl"))
    if not radar_files:
        raise MissingFile(f"no radar_<id>.jsonl files in {path}")
    imu = _read_imu(path / "imu.csv")
    calibration, quats = _read_calib(path / "calib.yaml")
    scans = {}
    for f in radar_files:
        sid = f.stem[len("radar_"):]
        if sid not in calibration:
            raise CalibrationMissing(f"{f.name}: sensor {sid!r} has no entry in calib.yaml")
        scans[sid] = _read_radar(f, sid)
    return Dataset(imu, scans, calibration, calib_quaternions=quats)
