"""IMU streams, preintegration between keyframes, and static initialization.

Preintegration follows the zeroth-order-hold sums: the sample at the left end
of each interval is held constant over it. Noise and bias covariance are
propagated jointly in a 15-dimensional error state ordered
``[dtheta, dv, dp, dba, dbg]``; the same ordering is used by the residuals
and their Jacobians.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateGravity, EmptyInterval, NonMonotoneTime, NotStatic, OutOfRange
from .manifold import orthonormalize, right_jacobian, right_jacobian_inv, skew, so3_exp, so3_log
from .state import ImuBias, NavState

GRAVITY = np.array([0.0, 0.0, -9.81])
_REORTHO_EVERY = 1000


class ImuSample(NamedTuple):
    t: float
    accel: np.ndarray
    gyro: np.ndarray


@dataclass(frozen=True)
class ImuStream:
    """Time-ordered IMU samples stored column-wise."""

    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float).reshape(-1)
        acc = np.asarray(self.accel, dtype=float).reshape(-1, 3)
        gyr = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        if not (len(t) == len(acc) == len(gyr)):
            raise ValueError("t, accel and gyro must have the same length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(acc)) and np.all(np.isfinite(gyr))):
            raise ValueError("IMU samples must be finite")
        bad = np.flatnonzero(np.diff(t) <= 0.0)
        if bad.size:
            raise NonMonotoneTime(f"IMU timestamps not strictly increasing at index {bad[0] + 1}")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "accel", acc)
        object.__setattr__(self, "gyro", gyr)

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        return cls(np.array([s.t for s in samples]),
                   np.array([s.accel for s in samples]).reshape(-1, 3),
                   np.array([s.gyro for s in samples]).reshape(-1, 3))

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return ImuStream(self.t[k], self.accel[k], self.gyro[k])
        return ImuSample(float(self.t[k]), self.accel[k].copy(), self.gyro[k].copy())

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    def interpolate(self, t: float) -> ImuSample:
        return interpolate(self, t)

    def between(self, t0: float, t1: float) -> ImuStream:
        """Samples on ``[t0, t1]`` with interpolated samples at both ends."""
        if t1 <= t0:
            raise EmptyInterval(f"empty interval [{t0}, {t1}]")
        a = interpolate(self, t0)
        b = interpolate(self, t1)
        lo = np.searchsorted(self.t, t0, side="right")
        hi = np.searchsorted(self.t, t1, side="left")
        t = np.concatenate([[t0], self.t[lo:hi], [t1]])
        acc = np.vstack([a.accel, self.accel[lo:hi], b.accel])
        gyr = np.vstack([a.gyro, self.gyro[lo:hi], b.gyro])
        return ImuStream(t, acc, gyr)

    def window(self, t0: float, t1: float) -> ImuStream:
        """Raw samples with ``t0 <= t < t1`` (no interpolation)."""
        lo = np.searchsorted(self.t, t0, side="left")
        hi = np.searchsorted(self.t, t1, side="left")
        return self[lo:hi]


@dataclass(frozen=True)
class ImuNoiseModel:
    accel_noise_density: float = 2.3e-3  # m/s^2/sqrt(Hz)
    gyro_noise_density: float = 2.6e-4  # rad/s/sqrt(Hz)
    accel_bias_random_walk: float = 1.0e-4  # m/s^3/sqrt(Hz)
    gyro_bias_random_walk: float = 1.0e-5  # rad/s^2/sqrt(Hz)
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    gravity_range: tuple = (9.7, 9.9)

    def __post_init__(self):
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).copy())
        densities = (self.accel_noise_density, self.gyro_noise_density,
                     self.accel_bias_random_walk, self.gyro_bias_random_walk)
        if min(densities) <= 0.0:
            raise ValueError("noise densities must be positive")
        if self.gravity_range is not None:
            lo, hi = self.gravity_range
            if not lo <= np.linalg.norm(self.gravity) <= hi:
                raise ValueError(f"|g| = {np.linalg.norm(self.gravity):.4f} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class PreintegratedImu:
    delta_R: np.ndarray
    delta_v: np.ndarray
    delta_p: np.ndarray
    dt: float
    bias_lin: ImuBias
    cov: np.ndarray
    dR_dbg: np.ndarray
    dv_dba: np.ndarray
    dv_dbg: np.ndarray
    dp_dba: np.ndarray
    dp_dbg: np.ndarray
    t_start: float = 0.0
    t_end: float = 0.0

    def corrected(self, bias: ImuBias):
        """First-order bias-corrected deltas ``(dR, dv, dp)`` for ``bias``."""
        dba = bias.accel - self.bias_lin.accel
        dbg = bias.gyro - self.bias_lin.gyro
        dR = self.delta_R @ so3_exp(self.dR_dbg @ dbg)
        dv = self.delta_v + self.dv_dba @ dba + self.dv_dbg @ dbg
        dp = self.delta_p + self.dp_dba @ dba + self.dp_dbg @ dbg
        return dR, dv, dp

    def predict(self, state: NavState, gravity=GRAVITY) -> NavState:
        """Propagate ``state`` through this interval (biases held)."""
        dR, dv, dp = self.corrected(state.bias)
        T = self.dt
        g = np.asarray(gravity, dtype=float)
        R = orthonormalize(state.R @ dR)
        v = state.v + g * T + state.R @ dv
        p = state.p + state.v * T + 0.5 * g * T * T + state.R @ dp
        return NavState(R, p, v, state.ba, state.bg, state.t + T)


def interpolate(samples: ImuStream, t: float) -> ImuSample:
    """Linear interpolation of accel and gyro at time ``t``."""
    ts = samples.t
    if not ts[0] <= t <= ts[-1]:
        raise OutOfRange(f"t={t} outside IMU span [{ts[0]}, {ts[-1]}]")
    k = int(np.searchsorted(ts, t, side="left"))
    if ts[k] == t:
        return samples[k]
    t0, t1 = ts[k - 1], ts[k]
    a = (t - t0) / (t1 - t0)
    return ImuSample(float(t),
                     (1 - a) * samples.accel[k - 1] + a * samples.accel[k],
                     (1 - a) * samples.gyro[k - 1] + a * samples.gyro[k])


def preintegrate(samples: ImuStream, bias: ImuBias = ImuBias(),
                 noise: ImuNoiseModel = ImuNoiseModel()) -> PreintegratedImu:
    """Preintegrate ``samples`` with biases held at ``bias``.

    The last sample only closes the final interval; its values are unused.
    """
    if not isinstance(samples, ImuStream):
        samples = ImuStream.from_samples(samples)
    n = len(samples)
    if n < 2:
        raise EmptyInterval(f"need at least 2 IMU samples, got {n}")
    dts = np.diff(samples.t)
    a = samples.accel[:-1] - bias.accel
    w = samples.gyro[:-1] - bias.gyro
    steps = w * dts[:, None]
    dRk_all = so3_exp(steps)
    Jr_all = right_jacobian(steps)
    a_skew_all = skew(a)

    qa = noise.accel_noise_density**2
    qg = noise.gyro_noise_density**2
    qba = noise.accel_bias_random_walk**2
    qbg = noise.gyro_bias_random_walk**2
    I3 = np.eye(3)

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    cov = np.zeros((15, 15))
    J_R_bg = np.zeros((3, 3))
    J_v_ba = np.zeros((3, 3))
    J_v_bg = np.zeros((3, 3))
    J_p_ba = np.zeros((3, 3))
    J_p_bg = np.zeros((3, 3))
    F = np.eye(15)
    Q = np.zeros((15, 15))
    for k in range(n - 1):
        dt = dts[k]
        dt2 = dt * dt
        dRk = dRk_all[k]
        Jr = Jr_all[k]
        dRa = dR @ a_skew_all[k]

        F[0:3, 0:3] = dRk.T
        F[0:3, 12:15] = -Jr * dt
        F[3:6, 0:3] = -dRa * dt
        F[3:6, 9:12] = -dR * dt
        F[6:9, 0:3] = -0.5 * dRa * dt2
        F[6:9, 3:6] = I3 * dt
        F[6:9, 9:12] = -0.5 * dR * dt2

        # white noise as discrete density^2/dt, random walk as density^2*dt
        Ga = np.vstack([dR * dt, 0.5 * dR * dt2])
        Q[0:3, 0:3] = (qg * dt) * (Jr @ Jr.T)
        Q[3:9, 3:9] = (qa / dt) * (Ga @ Ga.T)
        Q[9:12, 9:12] = qba * dt * I3
        Q[12:15, 12:15] = qbg * dt * I3
        cov = F @ cov @ F.T + Q

        J_p_ba = J_p_ba + J_v_ba * dt - 0.5 * dR * dt2
        J_p_bg = J_p_bg + J_v_bg * dt - 0.5 * dRa @ J_R_bg * dt2
        J_v_ba = J_v_ba - dR * dt
        J_v_bg = J_v_bg - dRa @ J_R_bg * dt
        J_R_bg = dRk.T @ J_R_bg - Jr * dt

        dp = dp + dv * dt + 0.5 * (dR @ a[k]) * dt2
        dv = dv + (dR @ a[k]) * dt
        dR = dR @ dRk
        if (k + 1) % _REORTHO_EVERY == 0:
            dR = orthonormalize(dR)

    cov = 0.5 * (cov + cov.T)
    return PreintegratedImu(dR, dv, dp, float(samples.t[-1] - samples.t[0]),
                            ImuBias(bias.accel, bias.gyro), cov,
                            J_R_bg, J_v_ba, J_v_bg, J_p_ba, J_p_bg,
                            float(samples.t[0]), float(samples.t[-1]))


def imu_residual_batch(pre, Ri, vi, pi, bai, bgi, Rj, vj, pj, baj, bgj,
                       gravity=GRAVITY, jacobians: bool = True):
    """Residuals (and Jacobians) of a stack of IMU factors.

    ``pre`` is a mapping of stacked preintegration fields (see
    :func:`stack_preintegrations`); state arrays carry a leading factor axis.
    Jacobians are with respect to right-perturbed rotations and additive
    position, velocity and biases, in ``[dtheta, dv, dp, dba, dbg]`` order.
    """
    g = np.asarray(gravity, dtype=float)
    T = pre["dt"][:, None]
    dba = bai - pre["ba_lin"]
    dbg = bgi - pre["bg_lin"]
    corr = np.einsum("nij,nj->ni", pre["dR_dbg"], dbg)
    exp_corr = so3_exp(corr)
    dR_c = pre["delta_R"] @ exp_corr
    dv_c = (pre["delta_v"] + np.einsum("nij,nj->ni", pre["dv_dba"], dba)
            + np.einsum("nij,nj->ni", pre["dv_dbg"], dbg))
    dp_c = (pre["delta_p"] + np.einsum("nij,nj->ni", pre["dp_dba"], dba)
            + np.einsum("nij,nj->ni", pre["dp_dbg"], dbg))
    RiT = np.swapaxes(Ri, -1, -2)
    E = np.swapaxes(dR_c, -1, -2) @ RiT @ Rj
    rR = so3_log(E)
    u = np.einsum("nij,nj->ni", RiT, vj - vi - g * T)
    w = np.einsum("nij,nj->ni", RiT, pj - pi - vi * T - 0.5 * g * T * T)
    r = np.concatenate([rR, u - dv_c, w - dp_c, baj - bai, bgj - bgi], axis=1)
    if not jacobians:
        return r

    m = r.shape[0]
    I3 = np.eye(3)
    Ji = np.zeros((m, 15, 15))
    Jj = np.zeros((m, 15, 15))
    Jri = right_jacobian_inv(rR)
    Ji[:, 0:3, 0:3] = -Jri @ np.swapaxes(Rj, -1, -2) @ Ri
    Ji[:, 0:3, 12:15] = (-Jri @ np.swapaxes(so3_exp(rR), -1, -2)
                         @ right_jacobian(corr) @ pre["dR_dbg"])
    Jj[:, 0:3, 0:3] = Jri

    Ji[:, 3:6, 0:3] = skew(u)
    Ji[:, 3:6, 3:6] = -RiT
    Ji[:, 3:6, 9:12] = -pre["dv_dba"]
    Ji[:, 3:6, 12:15] = -pre["dv_dbg"]
    Jj[:, 3:6, 3:6] = RiT

    Ji[:, 6:9, 0:3] = skew(w)
    Ji[:, 6:9, 3:6] = -RiT * T[:, :, None]
    Ji[:, 6:9, 6:9] = -RiT
    Ji[:, 6:9, 9:12] = -pre["dp_dba"]
    Ji[:, 6:9, 12:15] = -pre["dp_dbg"]
    Jj[:, 6:9, 6:9] = RiT

    Ji[:, 9:12, 9:12] = -I3
    Jj[:, 9:12, 9:12] = I3
    Ji[:, 12:15, 12:15] = -I3
    Jj[:, 12:15, 12:15] = I3
    return r, Ji, Jj


_STACK_FIELDS = ("delta_R", "delta_v", "delta_p", "dR_dbg", "dv_dba", "dv_dbg", "dp_dba", "dp_dbg")


def stack_preintegrations(items) -> dict:
    items = list(items)
    out = {name: np.stack([getattr(p, name) for p in items]) for name in _STACK_FIELDS}
    out["dt"] = np.array([p.dt for p in items])
    out["ba_lin"] = np.stack([p.bias_lin.accel for p in items])
    out["bg_lin"] = np.stack([p.bias_lin.gyro for p in items])
    return out


def _state_arrays(state: NavState):
    return (state.R[None], state.v[None], state.p[None], state.ba[None], state.bg[None])


def imu_residual(preint: PreintegratedImu, state_i: NavState, state_j: NavState,
                 g=GRAVITY) -> np.ndarray:
    """15-vector ``[r_R, r_v, r_p, r_ba, r_bg]`` between two keyframes."""
    Ri, vi, pi, bai, bgi = _state_arrays(state_i)
    Rj, vj, pj, baj, bgj = _state_arrays(state_j)
    return imu_residual_batch(stack_preintegrations([preint]), Ri, vi, pi, bai, bgi,
                              Rj, vj, pj, baj, bgj, g, jacobians=False)[0]


def imu_residual_jacobians(preint: PreintegratedImu, state_i: NavState, state_j: NavState,
                           g=GRAVITY):
    """``(r, J_i, J_j)`` for a single factor."""
    Ri, vi, pi, bai, bgi = _state_arrays(state_i)
    Rj, vj, pj, baj, bgj = _state_arrays(state_j)
    r, Ji, Jj = imu_residual_batch(stack_preintegrations([preint]), Ri, vi, pi, bai, bgi,
                                   Rj, vj, pj, baj, bgj, g)
    return r[0], Ji[0], Jj[0]


def detect_motion(window, accel_var_threshold: float) -> bool:
    """True iff the largest per-axis accel sample variance exceeds the threshold."""
    acc = window.accel if isinstance(window, ImuStream) else np.array([s.accel for s in window])
    acc = np.asarray(acc, dtype=float).reshape(-1, 3)
    if len(acc) == 0:
        raise ValueError("empty window")
    if len(acc) == 1:
        return False
    return bool(np.max(np.var(acc, axis=0, ddof=1)) > accel_var_threshold)


def gravity_aligned_rotation(accel_mean) -> np.ndarray:
    """Body-to-world rotation whose world z follows the measured specific force.

    Gram-Schmidt on the normalised specific force, seeded with the body x axis
    (body y when x is nearly vertical). Yaw is therefore fixed by convention.
    """
    z = np.asarray(accel_mean, dtype=float)
    z = z / np.linalg.norm(z)
    for seed in (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])):
        x = seed - (seed @ z) * z
        if np.linalg.norm(x) > 0.1:
            break
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    basis = np.column_stack([x, y, z])  # world axes in body coordinates
    return basis.T


def static_initialize(window, noise: ImuNoiseModel = ImuNoiseModel(),
                      accel_var_threshold: float = 0.05):
    """Initial attitude and biases from a window of static IMU data.

    Returns ``(R0, bias)`` where ``R0`` maps body to world.
    """
    if not isinstance(window, ImuStream):
        window = ImuStream.from_samples(window)
    if len(window) == 0:
        raise ValueError("empty window")
    if detect_motion(window, accel_var_threshold):
        raise NotStatic("motion detected in the initialization window")
    # averages about the first sample, so a constant signal is returned exactly
    a_mean = window.accel[0] + (window.accel - window.accel[0]).mean(axis=0)
    if np.linalg.norm(a_mean) < 1.0:
        raise DegenerateGravity(f"mean specific force {np.linalg.norm(a_mean):.3g} m/s^2 too small")
    R0 = gravity_aligned_rotation(a_mean)
    ba = a_mean - R0.T @ (-noise.gravity)
    bg = window.gyro[0] + (window.gyro - window.gyro[0]).mean(axis=0)
    return R0, ImuBias(ba, bg)


def forward_integrate(samples: ImuStream, state: NavState, gravity=GRAVITY) -> NavState:
    """Integrate world-frame kinematics sample by sample (no preintegration).

    Independent reference for preintegration; uses the same left-endpoint hold.
    """
    g = np.asarray(gravity, dtype=float)
    R, p, v = state.R.copy(), state.p.copy(), state.v.copy()
    for k in range(len(samples) - 1):
        dt = samples.t[k + 1] - samples.t[k]
        a_w = g + R @ (samples.accel[k] - state.ba)
        p = p + v * dt + 0.5 * a_w * dt * dt
        v = v + a_w * dt
        R = R @ so3_exp((samples.gyro[k] - state.bg) * dt)
    return NavState(R, p, v, state.ba, state.bg, float(samples.t[-1]))
