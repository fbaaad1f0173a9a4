"""Timestamped pose sequences and the plain-text interchange format.

One pose per line: ``timestamp tx ty tz qx qy qz qw``. Every field is written
with the shortest exact repr, so files survive a read/write round trip
bit-for-bit and quaternions stay unit length to machine precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, RotationSpline, Slerp

from .errors import MissingFile, NoOverlap, ParseError
from .manifold import quat_to_rot, rot_to_quat


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray  # (N,)
    p: np.ndarray  # (N, 3)
    q: np.ndarray  # (N, 4) as (x, y, z, w)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        q = np.asarray(self.q, dtype=float).reshape(-1, 4)
        if not (len(t) == len(p) == len(q)):
            raise ValueError("t, p and q must have the same length")
        bad = np.flatnonzero(np.diff(t) <= 0.0)
        if bad.size:
            raise ValueError(f"trajectory timestamps not increasing at index {bad[0] + 1}")
        norms = np.linalg.norm(q, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("trajectory quaternions must be unit length")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_rotations(cls, t, p, R):
        return cls(t, p, rot_to_quat(np.asarray(R, dtype=float).reshape(-1, 3, 3)))

    @classmethod
    def from_states(cls, states):
        states = list(states)
        return cls.from_rotations([s.t for s in states], [s.p for s in states],
                                  [s.R for s in states])

    def __len__(self):
        return len(self.t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_rot(self.q)

    def path_length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.p, axis=0), axis=1)))

    def restrict(self, t0: float, t1: float) -> Trajectory:
        keep = (self.t >= t0) & (self.t <= t1)
        return Trajectory(self.t[keep], self.p[keep], self.q[keep])

    def interpolate(self, t_query):
        """Positions (linear) and rotations (slerp) at ``t_query``."""
        t_query = np.asarray(t_query, dtype=float)
        if np.any(t_query < self.t[0]) or np.any(t_query > self.t[-1]):
            raise NoOverlap("query times outside the trajectory span")
        p = np.column_stack([np.interp(t_query, self.t, self.p[:, k]) for k in range(3)])
        if len(self.t) == 1:
            return p, np.repeat(self.R, len(t_query), axis=0)
        R = Slerp(self.t, Rotation.from_quat(self.q))(t_query).as_matrix()
        return p, R

    def kinematics(self, t_query):
        """``(R, v_world, omega_body)`` from cubic splines of the poses."""
        from scipy.interpolate import CubicSpline

        t_query = np.asarray(t_query, dtype=float)
        if np.any(t_query < self.t[0]) or np.any(t_query > self.t[-1]):
            raise NoOverlap("query times outside the trajectory span")
        v_world = CubicSpline(self.t, self.p, axis=0)(t_query, 1)
        spline = RotationSpline(self.t, Rotation.from_quat(self.q))
        R = spline(t_query).as_matrix()
        omega_body = spline(t_query, 1)  # rotation-vector rate, body frame
        return R, v_world, omega_body


def write_trajectory(traj: Trajectory, path) -> None:
    lines = []
    for t, p, q in zip(traj.t, traj.p, traj.q):
        fields = [repr(float(x)) for x in (t, *p, *q)]
        lines.append(" ".join(fields))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_trajectory(path) -> Trajectory:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"trajectory file {path} not found")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ParseError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        try:
            rows.append([float(x) for x in parts])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        return Trajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)))
    arr = np.array(rows)
    try:
        return Trajectory(arr[:, 0], arr[:, 1:4], arr[:, 4:8])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
