"""Trajectory error metrics and the Doppler noise study.

APE compares poses directly, without any alignment, so both trajectories
must share a world frame. RPE uses segments of a fixed travelled distance
along the reference: translation drift in percent of segment length and
rotation drift in degrees per metre.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import NoOverlap
from .manifold import so3_log
from .trajectory import Trajectory


@dataclass(frozen=True)
class ErrorReport:
    ape_trans_rmse: float  # m
    ape_rot_rmse: float  # deg
    rpe_trans: float  # percent of segment length (RMSE over segments)
    rpe_rot: float  # deg per metre (RMSE over segments)
    rpe_delta: float  # m
    t: np.ndarray = field(repr=False)
    ape_trans: np.ndarray = field(repr=False)  # per-pose position error, m
    ape_rot: np.ndarray = field(repr=False)  # per-pose rotation error, deg
    rpe_segments: int = 0

    def summary(self) -> dict:
        return {"ape_trans_rmse_m": self.ape_trans_rmse, "ape_rot_rmse_deg": self.ape_rot_rmse,
                "rpe_trans_pct": self.rpe_trans, "rpe_rot_deg_per_m": self.rpe_rot,
                "rpe_delta_m": self.rpe_delta, "rpe_segments": self.rpe_segments,
                "poses": int(len(self.t))}


def _rmse(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(np.mean(x * x))) if x.size else float("nan")


def _angle_deg(R) -> np.ndarray:
    return np.degrees(np.linalg.norm(so3_log(R), axis=-1))


def evaluate(gt: Trajectory, est: Trajectory, rpe_delta: float = 1.0) -> ErrorReport:
    """APE and RPE of ``est`` against ``gt`` at the estimate's timestamps."""
    if rpe_delta <= 0:
        raise ValueError("rpe_delta must be positive")
    if len(gt) == 0 or len(est) == 0:
        raise NoOverlap("empty trajectory")
    inside = (est.t >= gt.t[0]) & (est.t <= gt.t[-1])
    if not inside.any():
        raise NoOverlap(f"estimate [{est.t[0]}, {est.t[-1]}] and reference "
                        f"[{gt.t[0]}, {gt.t[-1]}] do not overlap")
    t = est.t[inside]
    p_est, R_est = est.p[inside], est.R[inside]
    p_gt, R_gt = gt.interpolate(t)

    ape_trans = np.linalg.norm(p_est - p_gt, axis=1)
    ape_rot = _angle_deg(np.swapaxes(R_gt, 1, 2) @ R_est)

    # distance along the reference, segment end = first pose >= rpe_delta further on
    dist = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p_gt, axis=0), axis=1))])
    j = np.searchsorted(dist, dist + rpe_delta, side="left")
    i = np.flatnonzero(j < len(t))
    j = j[i]
    trans_pct = rot_per_m = np.zeros(0)
    if i.size:
        seg = dist[j] - dist[i]
        RgiT = np.swapaxes(R_gt[i], 1, 2)
        ReiT = np.swapaxes(R_est[i], 1, 2)
        dR_gt = RgiT @ R_gt[j]
        dR_est = ReiT @ R_est[j]
        dp_gt = np.einsum("nij,nj->ni", RgiT, p_gt[j] - p_gt[i])
        dp_est = np.einsum("nij,nj->ni", ReiT, p_est[j] - p_est[i])
        # E = dT_gt^-1 dT_est
        dR_gtT = np.swapaxes(dR_gt, 1, 2)
        e_trans = np.einsum("nij,nj->ni", dR_gtT, dp_est - dp_gt)
        e_rot = _angle_deg(dR_gtT @ dR_est)
        trans_pct = 100.0 * np.linalg.norm(e_trans, axis=1) / seg
        rot_per_m = e_rot / seg

    return ErrorReport(_rmse(ape_trans), _rmse(ape_rot), _rmse(trans_pct), _rmse(rot_per_m),
                       float(rpe_delta), t, ape_trans, ape_rot, int(i.size))


def write_report(report: ErrorReport, directory) -> Path:
    """``summary.yaml`` plus a per-pose ``ape.csv`` in ``directory``."""
    import yaml

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "summary.yaml").write_text(yaml.safe_dump(report.summary(), sort_keys=False))
    rows = np.column_stack([report.t, report.ape_trans, report.ape_rot])
    np.savetxt(directory / "ape.csv", rows, delimiter=",", header="t,trans_m,rot_deg",
               comments="", fmt="%.9f")
    return directory


# --------------------------------------------------------------------- Doppler
@dataclass(frozen=True)
class DopplerAnalysis:
    errors: np.ndarray = field(repr=False)  # per point, m/s
    counts: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    sigma_mad: float  # robust first guess
    sigma: float  # Gaussian fit after excluding outliers
    mean: float
    excluded: int
    cutoff: float  # |error - median| above this was excluded

    @property
    def kept(self) -> int:
        return int(self.errors.size - self.excluded)


def histogram(errors, bin_width: float = 0.02):
    """Counts on a grid of ``bin_width`` bins anchored at zero."""
    errors = np.asarray(errors, dtype=float)
    lo = np.floor(errors.min() / bin_width) if errors.size else 0.0
    hi = np.ceil(errors.max() / bin_width) if errors.size else 1.0
    edges = np.arange(lo, max(hi, lo + 1) + 1) * bin_width
    counts, edges = np.histogram(errors, bins=edges)
    return counts, edges


def truncated_sigma(sample_std: float, cutoff: float, iterations: int = 50) -> float:
    """Standard deviation of a zero-mean Gaussian whose samples, truncated to
    ``|x| <= cutoff``, have standard deviation ``sample_std``."""
    if sample_std <= 0.0 or cutoff <= 0.0:
        return float(sample_std)
    sigma = sample_std
    for _ in range(iterations):
        a = cutoff / sigma
        shrink = 1.0 - 2.0 * a * norm.pdf(a) / (2.0 * norm.cdf(a) - 1.0)
        new = sample_std / np.sqrt(shrink)
        if abs(new - sigma) <= 1e-12 * sigma:
            return float(new)
        sigma = new
    return float(sigma)


def fit_doppler_sigma(errors, exclusion: float = 3.0):
    """``(sigma, sigma_mad, mean, excluded_mask, cutoff)`` with outliers beyond
    ``exclusion`` robust sigmas removed before the fit."""
    errors = np.asarray(errors, dtype=float)
    med = np.median(errors)
    sigma_mad = 1.4826 * np.median(np.abs(errors - med))
    cutoff = exclusion * sigma_mad
    if sigma_mad > 0:
        excluded = np.abs(errors - med) > cutoff
    else:
        excluded = np.zeros(errors.shape, dtype=bool)
    kept = errors[~excluded]
    mean = float(kept.mean())
    sigma = truncated_sigma(float(kept.std()), cutoff) if sigma_mad > 0 else float(kept.std())
    return sigma, float(sigma_mad), mean, excluded, float(cutoff)


def doppler_errors(dataset, reference: Trajectory, sensor_ids=None) -> np.ndarray:
    """``d_n + v_ref . u_n`` for every point of every scan inside the reference span."""
    ids = dataset.sensor_ids if sensor_ids is None else list(sensor_ids)
    out = []
    for sid in ids:
        ext = dataset.calibration[sid]
        scans = [s for s in dataset.scans[sid]
                 if reference.t[0] <= s.timestamp <= reference.t[-1] and len(s)]
        if not scans:
            continue
        ts = np.array([s.timestamp for s in scans])
        R, v_world, omega = reference.kinematics(ts)
        v_body = np.einsum("nji,nj->ni", R, v_world) + np.cross(omega, ext.translation)
        v_sensor = v_body @ ext.rotation  # rows: R_r^T v_body
        for scan, vs in zip(scans, v_sensor):
            u = scan.positions / np.linalg.norm(scan.positions, axis=1, keepdims=True)
            out.append(scan.doppler + u @ vs)
    if not out:
        raise NoOverlap("no radar scan falls inside the reference trajectory")
    return np.concatenate(out)


def doppler_error_analysis(dataset, reference: Trajectory, sensor_ids=None,
                           bin_width: float = 0.02, exclusion: float = 3.0) -> DopplerAnalysis:
    """Histogram of per-point Doppler errors and the fitted Gaussian sigma."""
    errors = doppler_errors(dataset, reference, sensor_ids)
    counts, edges = histogram(errors, bin_width)
    sigma, sigma_mad, mean, excluded, cutoff = fit_doppler_sigma(errors, exclusion)
    return DopplerAnalysis(errors, counts, edges, sigma_mad, sigma, mean,
                           int(excluded.sum()), cutoff)


def write_doppler_analysis(result: DopplerAnalysis, directory) -> Path:
    """``histogram.csv`` (bin edges and counts) and ``fit.yaml``."""
    import yaml

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = np.column_stack([result.edges[:-1], result.edges[1:], result.counts])
    np.savetxt(directory / "histogram.csv", rows, delimiter=",", header="lo,hi,count",
               comments="", fmt=["%.6f", "%.6f", "%d"])
    fit = {"sigma": result.sigma, "sigma_mad": result.sigma_mad, "mean": result.mean,
           "points": int(result.errors.size), "excluded": result.excluded,
           "cutoff": result.cutoff}
    (directory / "fit.yaml").write_text(yaml.safe_dump(fit, sort_keys=False))
    return directory
