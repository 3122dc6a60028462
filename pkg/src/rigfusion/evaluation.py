"""Accuracy and convergence reporting against ground truth.

Trajectories interchange as plain text: one pose per line,
``stamp tx ty tz qx qy qz qw`` (space separated, unit quaternion).  Accuracy
is computed on nearest-stamp pairs after aligning the starting pose only,
which mirrors comparing against an absolute reference in a fixed world
frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import InvalidArgumentError
from .geometry import BodyPose


@dataclass
class TrajectoryFile:
    stamps: np.ndarray            # (n,)
    positions: np.ndarray         # (n, 3)
    quaternions: np.ndarray       # (n, 4), [qx, qy, qz, qw]

    def __post_init__(self):
        self.stamps = np.asarray(self.stamps, dtype=float).reshape(-1)
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.quaternions = np.asarray(self.quaternions, dtype=float).reshape(-1, 4)
        n = len(self.stamps)
        if len(self.positions) != n or len(self.quaternions) != n:
            raise InvalidArgumentError("trajectory arrays disagree in length")
        if n and np.any(np.diff(self.stamps) <= 0.0):
            raise InvalidArgumentError("stamps must be strictly increasing")
        if n:
            norms = np.linalg.norm(self.quaternions, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise InvalidArgumentError("quaternions must be unit norm")

    def __len__(self):
        return len(self.stamps)

    def pose(self, i: int) -> BodyPose:
        return BodyPose(geometry.quat_to_rotvec(self.quaternions[i]),
                        self.positions[i])


def load_trajectory(path) -> TrajectoryFile:
    stamps, pos, quat = [], [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise InvalidArgumentError(
                    f"trajectory rows need 8 fields, got {len(parts)}")
            vals = [float(p) for p in parts]
            stamps.append(vals[0])
            pos.append(vals[1:4])
            quat.append(vals[4:8])
    return TrajectoryFile(np.array(stamps), np.array(pos), np.array(quat))


def save_trajectory(path, stamps, rotvecs, positions):
    rows = []
    for s, r, t in zip(stamps, rotvecs, positions):
        q = geometry.rotvec_to_quat(r)
        rows.append(" ".join(repr(float(v))
                             for v in (s, t[0], t[1], t[2], q[0], q[1], q[2], q[3])))
    with open(path, "w") as f:
        f.write("\n".join(rows) + "\n")


@dataclass
class AccuracyReport:
    max_abs_error: float          # m
    max_rel_error: float          # fraction of path length
    rmse: float                   # m
    per_axis_max: np.ndarray      # (3,)
    path_length: float            # m, from ground-truth chords
    final_drift: float            # m, error at the last associated pair
    n_pairs: int

    def as_text(self) -> str:
        lines = [
            f"pairs:            {self.n_pairs}",
            f"path length [m]:  {self.path_length:.3f}",
            f"max abs err [m]:  {self.max_abs_error:.4f}",
            f"max rel err [%]:  {100.0 * self.max_rel_error:.4f}",
            f"rmse [m]:         {self.rmse:.4f}",
            f"final drift [m]:  {self.final_drift:.4f}",
            f"per-axis max [m]: {self.per_axis_max[0]:.4f} "
            f"{self.per_axis_max[1]:.4f} {self.per_axis_max[2]:.4f}",
        ]
        return "\n".join(lines)

    def as_kv(self) -> str:
        items = [
            ("pairs", self.n_pairs),
            ("path_length_m", self.path_length),
            ("max_abs_error_m", self.max_abs_error),
            ("max_rel_error", self.max_rel_error),
            ("rmse_m", self.rmse),
            ("final_drift_m", self.final_drift),
            ("per_axis_max_x_m", self.per_axis_max[0]),
            ("per_axis_max_y_m", self.per_axis_max[1]),
            ("per_axis_max_z_m", self.per_axis_max[2]),
        ]
        return "\n".join(f"{k}={repr(float(v)) if isinstance(v, float) else v}"
                         for k, v in items)


def compute_accuracy(est: TrajectoryFile, gt: TrajectoryFile,
                     max_dt: float = 0.05,
                     min_overlap: float = 0.9) -> AccuracyReport:
    """Position error report on nearest-stamp pairs after start alignment.

    The very first associated pair defines a rigid transform mapping the
    estimate into the ground-truth frame; errors are measured after applying
    it, so a common offset of the whole run does not count as error.
    """
    if len(est) == 0 or len(gt) == 0:
        raise InvalidArgumentError("empty trajectory")
    idx = np.searchsorted(gt.stamps, est.stamps)
    idx = np.clip(idx, 1, len(gt) - 1)
    left = gt.stamps[idx - 1]
    right = gt.stamps[idx]
    nearest = np.where(est.stamps - left <= right - est.stamps, idx - 1, idx)
    dt = np.abs(gt.stamps[nearest] - est.stamps)
    ok = dt <= max_dt
    if ok.sum() < min_overlap * len(est):
        raise InvalidArgumentError(
            f"temporal overlap {ok.sum()}/{len(est)} below "
            f"{min_overlap:.0%} of the estimate")

    e_idx = np.flatnonzero(ok)
    g_idx = nearest[ok]
    T_align = geometry.compose(gt.pose(int(g_idx[0])),
                               geometry.inverse(est.pose(int(e_idx[0]))))
    est_aligned = T_align.apply(est.positions[e_idx])
    diff = est_aligned - gt.positions[g_idx]
    err = np.linalg.norm(diff, axis=1)

    chords = np.linalg.norm(np.diff(gt.positions, axis=0), axis=1)
    path_length = float(chords.sum())
    max_abs = float(err.max())
    return AccuracyReport(
        max_abs_error=max_abs,
        max_rel_error=max_abs / path_length if path_length > 0 else np.inf,
        rmse=float(np.sqrt(np.mean(err**2))),
        per_axis_max=np.abs(diff).max(axis=0),
        path_length=path_length,
        final_drift=float(err[-1]),
        n_pairs=int(ok.sum()),
    )


@dataclass
class ConvergenceReport:
    """Per-sensor extrinsic error histories and settling times."""

    stamps: np.ndarray                    # (steps,)
    rotation_error_deg: np.ndarray        # (steps, N)
    translation_error_m: np.ndarray       # (steps, N)
    settling_time: np.ndarray             # (N,), nan when never settled
    band_rot_deg: float
    band_trans_m: float
    hold: float

    def as_text(self) -> str:
        lines = [f"settling band: {self.band_rot_deg} deg / "
                 f"{self.band_trans_m} m held {self.hold} s"]
        for i, s in enumerate(self.settling_time):
            final_r = self.rotation_error_deg[-1, i]
            final_t = self.translation_error_m[-1, i]
            s_txt = f"{s:.1f} s" if np.isfinite(s) else "never"
            lines.append(f"sensor {i}: settled {s_txt}, final "
                         f"{final_r:.3f} deg / {final_t:.4f} m")
        return "\n".join(lines)


def extrinsic_convergence_report(stamps, extrinsics, true_extrinsics,
                                 band_rot_deg: float = 0.5,
                                 band_trans_m: float = 0.02,
                                 hold: float = 30.0) -> ConvergenceReport:
    """Extrinsic error vs truth over time, plus per-sensor settling times.

    ``extrinsics`` is (steps, N, 6); settling is the first time the error
    stays inside the band for ``hold`` seconds (through the end of the run
    if less than ``hold`` remains).
    """
    stamps = np.asarray(stamps, dtype=float)
    extrinsics = np.asarray(extrinsics, dtype=float)
    truth = np.asarray(true_extrinsics, dtype=float)
    order = np.argsort(stamps, kind="stable")
    stamps = stamps[order]
    extrinsics = extrinsics[order]
    n = extrinsics.shape[1]

    rot_err = np.empty(extrinsics.shape[:2])
    for i in range(n):
        R_true = geometry.exp_so3(truth[i, :3])
        for k in range(extrinsics.shape[0]):
            R_est = geometry.exp_so3(extrinsics[k, i, :3])
            rot_err[k, i] = np.linalg.norm(geometry.log_so3(R_true.T @ R_est))
    trn_err = np.linalg.norm(extrinsics[:, :, 3:] - truth[None, :, 3:], axis=2)

    rot_deg = np.degrees(rot_err)
    settle = np.full(n, np.nan)
    inside = (rot_deg < band_rot_deg) & (trn_err < band_trans_m)
    for i in range(n):
        for k in range(len(stamps)):
            if not inside[k, i]:
                continue
            window = (stamps >= stamps[k]) & (stamps <= stamps[k] + hold)
            if inside[window, i].all():
                settle[i] = stamps[k]
                break
    return ConvergenceReport(stamps, rot_deg, trn_err, settle,
                             band_rot_deg, band_trans_m, hold)


def report_from_runlog(runlog, band_rot_deg: float = 0.5,
                       band_trans_m: float = 0.02,
                       hold: float = 30.0) -> ConvergenceReport:
    return extrinsic_convergence_report(
        runlog.stamps(), runlog.extrinsic_series(), runlog.true_extrinsics,
        band_rot_deg=band_rot_deg, band_trans_m=band_trans_m, hold=hold)
