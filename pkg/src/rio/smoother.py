"""Fixed-lag smoother over keyframe states.

The window is a chain: consecutive keyframes are tied by a preintegrated IMU
factor, each keyframe may carry body-frame velocity factors from the radars,
and the oldest keyframe carries a prior (the initial one, or the result of
marginalizing its predecessors). Normal equations are therefore
block-tridiagonal with 15x15 blocks and are solved in banded form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular, solveh_banded

from .errors import MissingImu, OutOfOrder, SolverFailure
from .imu import GRAVITY, ImuNoiseModel, ImuStream, PreintegratedImu, imu_residual_batch, preintegrate, stack_preintegrations
from .manifold import orthonormalize, right_jacobian_inv, skew, so3_exp, so3_log
from .radar_velocity import VelocityEstimate
from .state import NavState
from .trajectory import Trajectory

DIM = 15


@dataclass(frozen=True)
class BodyVelocityFactor:
    keyframe: int
    v_body: np.ndarray
    cov: np.ndarray
    sensor_id: str = ""

    @property
    def sqrt_info(self) -> np.ndarray:
        L = self.__dict__.get("_sqrt_info")
        if L is None:
            L = sqrt_information(self.cov, jitter=0.0)
            object.__setattr__(self, "_sqrt_info", L)
        return L


@dataclass(frozen=True)
class MarginalPrior:
    """Gaussian prior ``0.5 |L (x - mean) + r0|^2`` on one keyframe.

    ``mean`` is the linearization point; the rotation part of ``x - mean`` is
    ``Log(mean.R^T R)``.
    """

    keyframe: int
    mean: NavState
    sqrt_info: np.ndarray
    r0: np.ndarray = field(default_factory=lambda: np.zeros(DIM))


@dataclass(frozen=True)
class WindowConfig:
    lag: float = 5.0  # s
    huber_delta: float = 1.345
    max_iterations: int = 10
    relative_tolerance: float = 1e-6
    initial_damping: float = 1e-10  # relative to diag(H); the window starts near its optimum
    damping_factor: float = 10.0
    # initial prior standard deviations
    prior_rotation_sigma: tuple = (0.02, 0.02, 1e-3)  # rad
    prior_velocity_sigma: float = 0.01  # m/s
    prior_position_sigma: float = 1e-3  # m
    prior_accel_bias_sigma: float = 0.1  # m/s^2
    # rad/s; None lets the caller derive it from the static-init window,
    # whose gyro average is only as good as the white noise allows
    prior_gyro_bias_sigma: float | None = None

    def __post_init__(self):
        if not self.lag > 0:
            raise ValueError("lag must be positive")

    def initial_sigmas(self, gyro_bias_sigma: float = 0.01) -> np.ndarray:
        """Prior standard deviations in state order; ``gyro_bias_sigma`` is
        used when the config leaves it unset."""
        bg = self.prior_gyro_bias_sigma if self.prior_gyro_bias_sigma is not None else gyro_bias_sigma
        return np.concatenate([np.broadcast_to(self.prior_rotation_sigma, 3),
                               np.full(3, self.prior_velocity_sigma),
                               np.full(3, self.prior_position_sigma),
                               np.full(3, self.prior_accel_bias_sigma),
                               np.full(3, bg)]).astype(float)


def body_velocity_residual(state: NavState, factor: BodyVelocityFactor) -> np.ndarray:
    return state.R.T @ state.v - factor.v_body


def body_velocity_jacobians(state: NavState):
    """``(J_R, J_v)`` of the body-velocity residual."""
    return skew(state.R.T @ state.v), state.R.T.copy()


def huber_weight(norm, delta):
    norm = np.asarray(norm, dtype=float)
    return np.where(norm <= delta, 1.0, delta / np.maximum(norm, 1e-300))


def huber_loss(norm, delta):
    """Huber of a whitened residual norm, scaled to match ``norm**2`` inside."""
    norm = np.asarray(norm, dtype=float)
    return np.where(norm <= delta, norm**2, 2.0 * delta * norm - delta**2)


def sqrt_information(cov: np.ndarray, jitter: float = 1e-9) -> np.ndarray:
    """``L`` with ``L^T L = cov^-1``; a relative diagonal jitter keeps rank-deficient
    covariances (single-sample IMU intervals) invertible."""
    cov = 0.5 * (cov + cov.T)
    cov = cov + np.diag(jitter * np.diag(cov) + 1e-300)
    C = cholesky(cov, lower=True)
    return solve_triangular(C, np.eye(len(cov)), lower=True)


@dataclass
class _Keyframe:
    id: int
    state: NavState
    velocity: list = field(default_factory=list)  # BodyVelocityFactor


class _BandIndex:
    """Index arrays scattering block-tridiagonal blocks into LAPACK upper band storage."""

    def __init__(self, n: int):
        u = 2 * DIM - 1
        a, b = np.triu_indices(DIM)
        k = np.arange(n)[:, None]
        self.diag_rows = (u + a - b)[None, :].repeat(n, 0).ravel()
        self.diag_cols = (DIM * k + b).ravel()
        self.diag_a, self.diag_b = a, b
        aa, bb = np.meshgrid(np.arange(DIM), np.arange(DIM), indexing="ij")
        aa, bb = aa.ravel(), bb.ravel()
        k = np.arange(max(n - 1, 0))[:, None]
        self.off_rows = (u + aa - bb - DIM)[None, :].repeat(max(n - 1, 0), 0).ravel()
        self.off_cols = (DIM * (k + 1) + bb).ravel()
        self.u = u
        self.n = n

    def assemble(self, D, O):
        ab = np.zeros((self.u + 1, self.n * DIM))
        ab[self.diag_rows, self.diag_cols] = D[:, self.diag_a, self.diag_b].ravel()
        if self.n > 1:
            ab[self.off_rows, self.off_cols] = O.reshape(self.n - 1, -1).ravel()
        return ab


class FixedLagSmoother:
    """Sliding-window estimator fed one keyframe per radar velocity estimate."""

    def __init__(self, config: WindowConfig = WindowConfig(),
                 noise: ImuNoiseModel = ImuNoiseModel()):
        self.config = config
        self.noise = noise
        self.gravity = np.asarray(noise.gravity, dtype=float)
        self.window: list[_Keyframe] = []
        self.preints: list[PreintegratedImu] = []
        self.prior: MarginalPrior | None = None
        self.history: dict[int, NavState] = {}
        self.marginalized: list[int] = []
        self.last_costs: list[float] = []
        self._next_id = 0
        self._band_cache: dict[int, _BandIndex] = {}
        self._imu_sqrt: list[np.ndarray] = []
        self._segment_cache = None  # predict() and add_keyframe() share a segment

    # ------------------------------------------------------------------ setup
    def initialize(self, state: NavState, sigmas=None) -> int:
        """Create the first keyframe anchored by a diagonal prior."""
        if self.window:
            raise RuntimeError("smoother already initialized")
        sig = self.config.initial_sigmas() if sigmas is None else np.asarray(sigmas, dtype=float)
        kid = self._new_id()
        self.window.append(_Keyframe(kid, state))
        self.prior = MarginalPrior(kid, state, np.diag(1.0 / sig))
        return kid

    def _new_id(self) -> int:
        kid = self._next_id
        self._next_id += 1
        return kid

    @property
    def newest(self) -> NavState:
        return self.window[-1].state

    @property
    def states(self) -> list[NavState]:
        return [kf.state for kf in self.window]

    @property
    def keyframe_ids(self) -> list[int]:
        return [kf.id for kf in self.window]

    # ---------------------------------------------------------------- keyframes
    def _segment(self, imu: ImuStream, t: float) -> PreintegratedImu:
        last = self.newest
        if len(imu) < 2 or last.t < imu.start or t > imu.end:
            raise MissingImu(f"IMU data does not span [{last.t}, {t}]")
        key = (self.window[-1].id, last.t, t, last.ba.tobytes(), last.bg.tobytes(), id(imu))
        if self._segment_cache is None or self._segment_cache[0] != key:
            pre = preintegrate(imu.between(last.t, t), last.bias, self.noise)
            self._segment_cache = (key, pre)
        return self._segment_cache[1]

    def predict(self, t: float, imu: ImuStream) -> NavState:
        """Newest state propagated to ``t`` through the IMU (no graph change)."""
        if t < self.newest.t:
            raise OutOfOrder(f"t={t} precedes newest keyframe at {self.newest.t}")
        if t == self.newest.t:
            return self.newest
        return self._segment(imu, t).predict(self.newest, self.gravity)

    def add_keyframe(self, velocity: VelocityEstimate | None, imu: ImuStream,
                     timestamp: float | None = None) -> int:
        """Append a keyframe at the velocity timestamp (or ``timestamp``).

        ``velocity`` must be body-frame; ``None`` adds an IMU-only keyframe.
        An estimate stamped exactly at the newest keyframe is attached to it.
        """
        if not self.window:
            raise RuntimeError("call initialize() first")
        if velocity is not None:
            if velocity.frame != "body":
                raise ValueError("velocity factors need a body-frame estimate")
            t = float(velocity.timestamp)
        elif timestamp is None:
            raise ValueError("timestamp required for an IMU-only keyframe")
        else:
            t = float(timestamp)
        last = self.window[-1]
        if t < last.state.t:
            raise OutOfOrder(f"keyframe at t={t} precedes newest keyframe at {last.state.t}")
        if t == last.state.t:
            if velocity is not None:
                last.velocity.append(self._velocity_factor(last.id, velocity))
            return last.id

        pre = self._segment(imu, t)
        state = pre.predict(last.state, self.gravity)
        kf = _Keyframe(self._new_id(), NavState(state.R, state.p, state.v, state.ba, state.bg, t))
        if velocity is not None:
            kf.velocity.append(self._velocity_factor(kf.id, velocity))
        self.window.append(kf)
        self.preints.append(pre)
        self._imu_sqrt.append(sqrt_information(pre.cov))
        return kf.id

    @staticmethod
    def _velocity_factor(kid: int, est: VelocityEstimate) -> BodyVelocityFactor:
        return BodyVelocityFactor(kid, np.asarray(est.v, dtype=float).copy(),
                                  np.asarray(est.cov, dtype=float).copy(), est.sensor_id)

    # ------------------------------------------------------------- evaluation
    def _arrays(self, states=None):
        states = self.states if states is None else states
        return (np.stack([s.R for s in states]), np.stack([s.v for s in states]),
                np.stack([s.p for s in states]), np.stack([s.ba for s in states]),
                np.stack([s.bg for s in states]))

    def _velocity_arrays(self):
        idx, vb, L = [], [], []
        for k, kf in enumerate(self.window):
            for f in kf.velocity:
                idx.append(k)
                vb.append(f.v_body)
                L.append(f.sqrt_info)
        if not idx:
            return np.zeros(0, dtype=int), np.zeros((0, 3)), np.zeros((0, 3, 3))
        return np.array(idx), np.array(vb), np.array(L)

    @staticmethod
    def _prior_terms(prior: MarginalPrior, R, v, p, ba, bg, jacobian=True):
        m = prior.mean
        dtheta = so3_log(m.R.T @ R)
        delta = np.concatenate([dtheta, v - m.v, p - m.p, ba - m.ba, bg - m.bg])
        r = prior.sqrt_info @ delta + prior.r0
        if not jacobian:
            return r
        J = prior.sqrt_info.copy()
        J[:, 0:3] = prior.sqrt_info[:, 0:3] @ right_jacobian_inv(dtheta)
        return r, J

    def _evaluate(self, X, pre, imu_L, vel, jacobians=True):
        """Total cost, plus block-tridiagonal normal equations when requested."""
        R, v, p, ba, bg = X
        n = len(R)
        huber = self.config.huber_delta
        cost = 0.0
        if jacobians:
            D = np.zeros((n, DIM, DIM))
            O = np.zeros((max(n - 1, 0), DIM, DIM))
            g = np.zeros((n, DIM))

        if n > 1:
            out = imu_residual_batch(pre, R[:-1], v[:-1], p[:-1], ba[:-1], bg[:-1],
                                     R[1:], v[1:], p[1:], ba[1:], bg[1:],
                                     self.gravity, jacobians=jacobians)
            r = out[0] if jacobians else out
            rw = np.einsum("nij,nj->ni", imu_L, r)
            cost += 0.5 * float(np.sum(rw * rw))
            if jacobians:
                Ji = imu_L @ out[1]
                Jj = imu_L @ out[2]
                JiT = np.swapaxes(Ji, 1, 2)
                JjT = np.swapaxes(Jj, 1, 2)
                D[:-1] += JiT @ Ji
                D[1:] += JjT @ Jj
                O += JiT @ Jj
                g[:-1] += np.einsum("nij,nj->ni", JiT, rw)
                g[1:] += np.einsum("nij,nj->ni", JjT, rw)

        idx, vb, Lv = vel
        if len(idx):
            Rk, vk = R[idx], v[idx]
            RkT = np.swapaxes(Rk, 1, 2)
            vbody = np.einsum("nij,nj->ni", RkT, vk)
            e = np.einsum("nij,nj->ni", Lv, vbody - vb)
            norm = np.linalg.norm(e, axis=1)
            cost += 0.5 * float(np.sum(huber_loss(norm, huber)))
            if jacobians:
                w = huber_weight(norm, huber)
                J = np.concatenate([Lv @ skew(vbody), Lv @ RkT], axis=2)  # (K, 3, 6)
                JT = np.swapaxes(J, 1, 2)
                # Past delta the loss is linear in |e|: its curvature along e
                # vanishes, so the exact Gauss-Newton weight is w (I - e e^T/|e|^2).
                # Plain reweighting (w I) converges only linearly here.
                unit = e / np.maximum(norm, 1e-300)[:, None]
                outer = np.where((norm > huber)[:, None, None],
                                 unit[:, :, None] * unit[:, None, :], 0.0)
                W = w[:, None, None] * (np.eye(3) - outer)
                np.add.at(D, (idx, slice(0, 6), slice(0, 6)), JT @ W @ J)
                np.add.at(g, (idx, slice(0, 6)), w[:, None] * np.einsum("nij,nj->ni", JT, e))

        out = self._prior_terms(self.prior, R[0], v[0], p[0], ba[0], bg[0], jacobian=jacobians)
        r = out[0] if jacobians else out
        cost += 0.5 * float(r @ r)
        if jacobians:
            Jp = out[1]
            D[0] += Jp.T @ Jp
            g[0] += Jp.T @ r
            return cost, D, O, g
        return cost

    def _band(self, n: int) -> _BandIndex:
        if n not in self._band_cache:
            self._band_cache[n] = _BandIndex(n)
        return self._band_cache[n]

    @staticmethod
    def _retract(X, dx):
        R, v, p, ba, bg = X
        dx = dx.reshape(-1, DIM)
        R_new = R @ so3_exp(dx[:, 0:3])
        err = np.abs(R_new @ np.swapaxes(R_new, 1, 2) - np.eye(3)).max()
        if err > 1e-9:
            R_new = orthonormalize(R_new)
        return (R_new, v + dx[:, 3:6], p + dx[:, 6:9], ba + dx[:, 9:12], bg + dx[:, 12:15])

    # ------------------------------------------------------------ optimization
    def optimize_window(self, max_iterations: int | None = None) -> list[NavState]:
        """Levenberg-Marquardt over every state in the window."""
        if not self.window:
            raise RuntimeError("call initialize() first")
        cfg = self.config
        iters = cfg.max_iterations if max_iterations is None else max_iterations
        n = len(self.window)
        X = self._arrays()
        pre = stack_preintegrations(self.preints) if n > 1 else None
        imu_L = np.stack(self._imu_sqrt) if n > 1 else None
        vel = self._velocity_arrays()
        band = self._band(n)

        cost, D, O, g = self._evaluate(X, pre, imu_L, vel)
        if not np.isfinite(cost):
            raise SolverFailure(f"non-finite cost {cost} at window start (t={self.newest.t:.3f})")
        self.last_costs = [cost]
        lam = cfg.initial_damping
        for _ in range(iters):
            ab = band.assemble(D, O)
            diag = ab[band.u].copy()
            ab[band.u] = diag + lam * np.maximum(diag, 1e-12)
            try:
                dx = solveh_banded(ab, -g.ravel(), lower=False, check_finite=False)
            except (LinAlgError, ValueError):
                lam *= cfg.damping_factor
                if lam > 1e8:
                    raise SolverFailure(f"normal equations not positive definite (t={self.newest.t:.3f})")
                continue
            if not np.all(np.isfinite(dx)):
                raise SolverFailure("non-finite update")
            X_new = self._retract(X, dx)
            trial = self._evaluate(X_new, pre, imu_L, vel)
            new_cost = trial[0]
            if not np.isfinite(new_cost):
                raise SolverFailure(f"non-finite cost after update (t={self.newest.t:.3f})")
            if new_cost < cost:
                rel = (cost - new_cost) / max(cost, 1e-300)
                X = X_new
                cost, D, O, g = trial
                self.last_costs.append(cost)
                lam = max(lam / cfg.damping_factor, 1e-12)
                if rel < cfg.relative_tolerance:
                    break
            else:
                if (cost - new_cost) >= -1e-12 * max(cost, 1.0) and np.max(np.abs(dx)) < 1e-12:
                    break
                lam *= cfg.damping_factor

        R, v, p, ba, bg = X
        for k, kf in enumerate(self.window):
            kf.state = NavState(R[k], p[k], v[k], ba[k], bg[k], kf.state.t)
        return self.states

    def cost(self) -> float:
        n = len(self.window)
        pre = stack_preintegrations(self.preints) if n > 1 else None
        imu_L = np.stack(self._imu_sqrt) if n > 1 else None
        return self._evaluate(self._arrays(), pre, imu_L, self._velocity_arrays(), jacobians=False)

    # ---------------------------------------------------------- marginalization
    def marginalize_old(self, cutoff: float | None = None) -> MarginalPrior:
        """Schur-complement every keyframe older than ``cutoff`` into a prior.

        ``cutoff`` defaults to ``newest - lag``. The newest keyframe is never
        removed.
        """
        if cutoff is None:
            cutoff = self.newest.t - self.config.lag
        while len(self.window) > 1 and self.window[0].state.t < cutoff:
            self._marginalize_oldest()
        return self.prior

    def _marginalize_oldest(self):
        k0, k1 = self.window[0], self.window[1]
        X = self._arrays([k0.state, k1.state])
        pre = stack_preintegrations(self.preints[:1])
        imu_L = self._imu_sqrt[0][None]
        vel_idx, vb, Lv = [], [], []
        for f in k0.velocity:
            vel_idx.append(0)
            vb.append(f.v_body)
            Lv.append(f.sqrt_info)
        vel = (np.array(vel_idx, dtype=int), np.array(vb).reshape(-1, 3),
               np.array(Lv).reshape(-1, 3, 3))
        _, D, O, g = self._evaluate(X, pre, imu_L, vel)
        H00, H01, H11 = D[0], O[0], D[1]
        g0, g1 = g[0], g[1]
        c = cho_factor(0.5 * (H00 + H00.T))
        H = H11 - H01.T @ cho_solve(c, H01)
        b = g1 - H01.T @ cho_solve(c, g0)
        H = 0.5 * (H + H.T)
        try:
            U = cholesky(H, lower=False)
        except LinAlgError:
            U = cholesky(H + np.diag(1e-12 * np.diag(H) + 1e-300), lower=False)
        r0 = solve_triangular(U, b, trans="T", lower=False)
        self.prior = MarginalPrior(k1.id, k1.state, U, r0)

        self.history[k0.id] = k0.state
        self.marginalized.append(k0.id)
        self.window.pop(0)
        self.preints.pop(0)
        self._imu_sqrt.pop(0)

    # ----------------------------------------------------------------- output
    def all_states(self) -> list[NavState]:
        states = dict(self.history)
        states.update({kf.id: kf.state for kf in self.window})
        return [states[k] for k in sorted(states)]

    def export_trajectory(self) -> Trajectory:
        states = self.all_states()
        if not states:
            raise RuntimeError("no keyframes to export")
        return Trajectory.from_states(states)
