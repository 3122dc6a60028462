"""Per-node extended Kalman filter over the augmented rig state.

Every node carries the same state: the 12-dim center block (pose +
velocities) followed by one 6-dim extrinsic block per sensor, giving
``12 + 6N`` numbers.  Prediction advances the center with the
constant-velocity model and copies the extrinsics.  The measurement is the
registration error pose of the node's own scan, stacked with two soft
constraint outputs that pin the reference frame to the rig's virtual
center: the sums of all extrinsic rotation vectors and of all extrinsic
translations are measured as zero.  Without those rows the split between
the center pose and a common offset absorbed into every extrinsic is
unobservable and the filter drifts along that gauge freedom.

The update is the standard EKF form

    z  = [delta_x_hat, -sum_r, -sum_t]
    S  = H P H^T + blkdiag(sigma_delta, s I6)
    K  = P H^T S^-1
    x' = x + K z,   P' = (I - K H) P

with the state's rotation-vector blocks re-canonicalized after the additive
correction.  A chi-square gate on z protects the shared state from diverged
registrations; gated updates return the prior with a rejection flag.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from . import geometry
from .errors import (
    InvalidArgumentError,
    NumericalFailureError,
    RegistrationError,
    StaleStateError,
)
from .geometry import BodyPose
from .motion import CenterState, ProcessNoise, jacobian_F, jacobian_G, predict_center
from .registration import (
    LocalMap,
    RegistrationConfig,
    RegistrationResult,
    ScanFrame,
    register,
    update_local_map,
)


@dataclass
class FullState:
    """Augmented state: center block plus one 6-vector [r, t] per sensor."""

    center: CenterState
    extrinsics: np.ndarray        # (N, 6)
    stamp: float = 0.0

    def __post_init__(self):
        self.extrinsics = np.asarray(self.extrinsics, dtype=float).reshape(-1, 6)
        if not np.all(np.isfinite(self.extrinsics)):
            raise InvalidArgumentError("extrinsics must be finite")

    @property
    def n_sensors(self) -> int:
        return len(self.extrinsics)

    @property
    def dim(self) -> int:
        return 12 + 6 * self.n_sensors

    def pack(self) -> np.ndarray:
        return np.concatenate([self.center.pack(), self.extrinsics.ravel()])

    @staticmethod
    def unpack(x, stamp: float = 0.0) -> "FullState":
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size < 12 or (x.size - 12) % 6 != 0:
            raise InvalidArgumentError(f"cannot unpack state of size {x.shape}")
        return FullState(CenterState.unpack(x[:12]),
                         x[12:].reshape(-1, 6).copy(), stamp)

    def extrinsic_pose(self, i: int) -> BodyPose:
        if not 0 <= i < self.n_sensors:
            raise InvalidArgumentError(f"sensor id {i} out of range")
        return geometry.pose_from_x(self.extrinsics[i])

    def copy(self) -> "FullState":
        return FullState(self.center.copy(), self.extrinsics.copy(), self.stamp)


@dataclass
class StateCovariance:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise InvalidArgumentError("covariance must be square")
        self.matrix = m

    def validate(self, tol: float = 1e-9):
        m = self.matrix
        if np.abs(m - m.T).max() > tol:
            raise InvalidArgumentError("covariance is not symmetric")
        if np.linalg.eigvalsh(m).min() < -tol:
            raise InvalidArgumentError("covariance is not PSD")

    def copy(self) -> "StateCovariance":
        return StateCovariance(self.matrix.copy())


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


@dataclass
class MeasurementBundle:
    """Registration measurement stacked with the frame-anchoring outputs."""

    delta_x_hat: np.ndarray       # 6
    sigma_delta: np.ndarray       # 6x6
    r_re_bar: np.ndarray          # 3, predicted sum of extrinsic rotations
    t_re_bar: np.ndarray          # 3, predicted sum of extrinsic translations

    def residual(self) -> np.ndarray:
        z = np.concatenate([self.delta_x_hat, -self.r_re_bar, -self.t_re_bar])
        assert z.shape == (12,)
        return z

    def noise(self, s: float) -> np.ndarray:
        Sz = np.zeros((12, 12))
        Sz[:6, :6] = self.sigma_delta
        Sz[6:, 6:] = s * np.eye(6)
        return Sz


class MessageFlags(enum.IntFlag):
    NONE = 0
    PREDICTED_ONLY = 1
    REJECTED_MEASUREMENT = 2


@dataclass
class StateMessage:
    """Broadcast payload: one node's freshest state estimate."""

    sender: int
    stamp: float
    state: FullState
    cov: StateCovariance
    flags: MessageFlags = MessageFlags.NONE


@dataclass
class FilterConfig:
    max_dt: float = 1.0
    process_noise: ProcessNoise = field(default_factory=ProcessNoise)
    s: float = 1.0                    # constraint pseudo-measurement variance
    gate_enabled: bool = True
    gate_prob: float = 0.999          # chi-square mass kept by the gate
    gate_max_consecutive: int = 5     # rejections in a row before one passes;
                                      # keeps a model transient (sharp maneuver)
                                      # from starving the filter forever
    joseph: bool = False
    jacobian_method: str = "fd"
    min_map_landmarks: int = 30       # map smaller than this -> bootstrap insert

    def gate_threshold(self) -> float:
        return float(chi2.ppf(self.gate_prob, 12))


def predict(state: FullState, cov: StateCovariance, dt: float,
            noise: ProcessNoise, cfg: FilterConfig | None = None):
    """EKF prediction: advance the center, copy extrinsics, propagate P."""
    cfg = cfg or FilterConfig()
    n = state.n_sensors
    center_next = predict_center(state.center, dt, max_dt=cfg.max_dt)
    F = jacobian_F(state.center, dt, n, method=cfg.jacobian_method,
                   max_dt=cfg.max_dt)
    G = jacobian_G(state.center, dt, n, max_dt=cfg.max_dt)
    P = _symmetrize(F @ cov.matrix @ F.T + G @ noise.sigma_w @ G.T)
    next_state = FullState(center_next, state.extrinsics.copy(),
                           state.stamp + dt)
    return next_state, StateCovariance(P)


def predict_sensor_pose(state: FullState, i: int) -> BodyPose:
    """World pose of sensor i: center pose composed with its extrinsic."""
    return geometry.compose(state.center.pose(), state.extrinsic_pose(i))


def constraint_outputs(state: FullState):
    """Sums of extrinsic rotation vectors and translations (should be ~0)."""
    r_re = state.extrinsics[:, :3].sum(axis=0)
    t_re = state.extrinsics[:, 3:].sum(axis=0)
    return r_re, t_re


def measurement_function(x_packed: np.ndarray, i: int, T_bar_i: BodyPose) -> np.ndarray:
    """h(x): error pose of sensor i against T_bar_i, then the two sums.

    Used by the finite-difference oracle for the measurement Jacobian.
    """
    state = FullState.unpack(x_packed)
    M = geometry.compose(
        geometry.inverse(T_bar_i),
        geometry.compose(state.center.pose(), state.extrinsic_pose(i)))
    r_re, t_re = constraint_outputs(state)
    return np.concatenate([geometry.x_from_pose(M), r_re, t_re])


def build_H(state: FullState, i: int, T_bar_i: BodyPose) -> np.ndarray:
    """12 x (12+6N) measurement Jacobian at the given linearization point.

    Rows 0-5 differentiate the error pose w.r.t. the center pose and the
    i-th extrinsic; rows 6-11 are the constant constraint rows (identity in
    every extrinsic's rotation / translation sub-block).
    """
    n = state.n_sensors
    if not 0 <= i < n:
        raise InvalidArgumentError(f"sensor id {i} out of range")
    H = np.zeros((12, 12 + 6 * n))

    A = geometry.inverse(T_bar_i)
    P_pose = state.center.pose()
    E = state.extrinsic_pose(i)
    R_A, R_P = A.R, P_pose.R
    M = geometry.compose(A, geometry.compose(P_pose, E))
    Jr_inv = geometry.right_jacobian_inv_so3(M.rotation)
    Jr_rc = geometry.right_jacobian_so3(state.center.r)
    Jr_rei = geometry.right_jacobian_so3(E.rotation)
    col = 12 + 6 * i

    H[0:3, 0:3] = Jr_inv @ E.R.T @ Jr_rc
    H[0:3, col:col + 3] = Jr_inv @ Jr_rei
    H[3:6, 0:3] = -R_A @ R_P @ geometry.hat(E.translation) @ Jr_rc
    H[3:6, 3:6] = R_A
    H[3:6, col + 3:col + 6] = R_A @ R_P

    for j in range(n):
        cj = 12 + 6 * j
        H[6:9, cj:cj + 3] = np.eye(3)
        H[9:12, cj + 3:cj + 6] = np.eye(3)
    return H


def apply_gauge(state: FullState, C: BodyPose) -> FullState:
    """Slide the reference frame by C without moving any sensor.

    The center pose is right-composed with C and every extrinsic is
    left-composed with C^-1, so the products center * extrinsic (the
    physical sensor poses) are untouched.  Velocities are re-expressed for
    the new center frame.
    """
    center_pose = geometry.compose(state.center.pose(), C)
    R_C = C.R
    omega = R_C.T @ state.center.omega
    v = state.center.v + state.center.pose().R @ np.cross(state.center.omega,
                                                          C.translation)
    C_inv = geometry.inverse(C)
    extr = np.array([
        geometry.x_from_pose(geometry.compose(C_inv, state.extrinsic_pose(i)))
        for i in range(state.n_sensors)
    ]).reshape(-1, 6)
    center = CenterState(center_pose.rotation, center_pose.translation, omega, v)
    return FullState(center, extr, state.stamp)


def regauge_zero_sum(state: FullState, iters: int = 100,
                     tol: float = 1e-13) -> FullState:
    """Move the reference frame so the extrinsic sums vanish.

    Iteratively removes the mean extrinsic pose; sensor poses and the
    physical motion are preserved exactly (see apply_gauge).
    """
    out = state
    for _ in range(iters):
        r_re, t_re = constraint_outputs(out)
        n = max(out.n_sensors, 1)
        m_r = r_re / n
        m_t = t_re / n
        if np.linalg.norm(m_r) < tol and np.linalg.norm(m_t) < tol:
            break
        out = apply_gauge(out, BodyPose(m_r, m_t))
    return out


@dataclass
class UpdateInfo:
    rejected: bool = False
    mahalanobis: float = 0.0


def update(state: FullState, cov: StateCovariance, i: int,
           reg: RegistrationResult, cfg: FilterConfig | None = None,
           bypass_gate: bool = False):
    """EKF measurement update for sensor i's registration result.

    Returns (state, cov, info); when the innovation fails the chi-square
    gate the prior is returned unchanged with ``info.rejected`` set.
    """
    cfg = cfg or FilterConfig()
    if not reg.converged:
        raise InvalidArgumentError("update requires a converged registration")

    T_bar = predict_sensor_pose(state, i)
    H = build_H(state, i, T_bar)
    r_re, t_re = constraint_outputs(state)
    bundle = MeasurementBundle(np.asarray(reg.delta_x, dtype=float),
                               np.asarray(reg.sigma_delta, dtype=float),
                               r_re, t_re)
    z = bundle.residual()
    Sz = bundle.noise(cfg.s)

    P = cov.matrix
    S = H @ P @ H.T + Sz
    try:
        S_inv_z = np.linalg.solve(S, z)
        K = np.linalg.solve(S, H @ P).T
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"innovation not invertible: {exc}") from exc

    d2 = float(z @ S_inv_z)
    if cfg.gate_enabled and not bypass_gate and d2 > cfg.gate_threshold():
        return state, cov, UpdateInfo(rejected=True, mahalanobis=d2)

    x = state.pack() + K @ z
    # Re-wrap every rotation-vector block after the additive correction.
    x[0:3] = geometry.canonicalize_rotvec(x[0:3])
    for j in range(state.n_sensors):
        cj = 12 + 6 * j
        x[cj:cj + 3] = geometry.canonicalize_rotvec(x[cj:cj + 3])
    new_state = FullState.unpack(x, stamp=state.stamp)

    IKH = np.eye(state.dim) - K @ H
    if cfg.joseph:
        P_new = IKH @ P @ IKH.T + K @ Sz @ K.T
    else:
        P_new = IKH @ P
    return new_state, StateCovariance(_symmetrize(P_new)), UpdateInfo(False, d2)


@dataclass
class StepRecord:
    """One row of the per-step structured log."""

    stamp: float
    sensor_id: int
    state: np.ndarray             # packed posterior
    cov_diag: np.ndarray
    r_re_norm: float
    t_re_norm: float
    reg_cost: float
    reg_iterations: int
    reg_correspondences: int
    flags: int
    reason: str
    gt_center: np.ndarray | None = None   # filled in by the simulator


class FilterNode:
    """One sensor's filter instance plus its private local map.

    The node keeps the newest-stamped state message it has seen (its own
    updates included) and runs the per-scan cycle: predict from the cached
    state, register the scan against its own map, update, fold the scan into
    the map at the corrected pose, and hand back a message for broadcast.

    Registration is seeded from the node's own scan-to-map odometry chain,
    which stays inside the solver's convergence basin even while the
    extrinsic estimates (and therefore the predicted sensor pose) are far
    off; the measurement handed to the filter is always the error pose of
    the solved pose relative to the prediction.
    """

    def __init__(self, sensor_id: int, n_sensors: int,
                 filter_cfg: FilterConfig | None = None,
                 reg_cfg: RegistrationConfig | None = None):
        self.sensor_id = sensor_id
        self.n_sensors = n_sensors
        self.filter_cfg = filter_cfg or FilterConfig()
        self.reg_cfg = reg_cfg or RegistrationConfig()
        self.local_map = LocalMap(voxel=self.reg_cfg.voxel,
                                  window=self.reg_cfg.map_window)
        self.cached_state: FullState | None = None
        self.cached_cov: StateCovariance | None = None
        self._consecutive_rejects = 0
        self.odom_pose: BodyPose | None = None
        self.odom_increment: BodyPose = BodyPose.identity()
        self._odom_stamp: float | None = None

    def seed(self, state: FullState, cov: StateCovariance):
        self.cached_state = state.copy()
        self.cached_cov = cov.copy()

    def receive(self, msg: StateMessage):
        """Last-writer-wins cache; strictly older-stamped arrivals are
        dropped, equal stamps defer to the newer arrival."""
        if msg.state.n_sensors != self.n_sensors:
            raise InvalidArgumentError("message dimension mismatch")
        if self.cached_state is None or msg.stamp >= self.cached_state.stamp:
            self.cached_state = msg.state.copy()
            self.cached_cov = msg.cov.copy()

    def step(self, scan: ScanFrame):
        """Algorithm cycle for one scan; returns (message | None, record).

        A None message means the node could not even predict (no cached
        state, or the cached state is too stale to trust) and must wait for
        the next network message.
        """
        if self.cached_state is None:
            return None, StepRecord(scan.stamp, self.sensor_id,
                                    np.zeros(12 + 6 * self.n_sensors),
                                    np.zeros(12 + 6 * self.n_sensors),
                                    0.0, 0.0, 0.0, 0, 0,
                                    int(MessageFlags.PREDICTED_ONLY),
                                    "uninitialized")
        dt = scan.stamp - self.cached_state.stamp
        try:
            x_bar, P_bar = predict(self.cached_state, self.cached_cov, dt,
                                   self.filter_cfg.process_noise,
                                   self.filter_cfg)
        except StaleStateError:
            # Fell too far behind; drop the cache and re-seed from the next
            # message that arrives.
            self.cached_state = None
            self.cached_cov = None
            return None, StepRecord(scan.stamp, self.sensor_id,
                                    np.zeros(12 + 6 * self.n_sensors),
                                    np.zeros(12 + 6 * self.n_sensors),
                                    0.0, 0.0, 0.0, 0, 0,
                                    int(MessageFlags.PREDICTED_ONLY), "stale")

        T_bar = predict_sensor_pose(x_bar, self.sensor_id)
        guess = T_bar
        if self.odom_pose is not None:
            guess = geometry.compose(self.odom_pose, self.odom_increment)
        flags = MessageFlags.NONE
        reason = ""
        reg = None
        T_solved = None
        if self.local_map.n_landmarks >= self.filter_cfg.min_map_landmarks:
            try:
                reg = register(scan, self.local_map, guess, self.reg_cfg)
                T_solved = geometry.compose(
                    guess, geometry.pose_from_x(reg.delta_x))
            except RegistrationError as exc:
                reason = type(exc).__name__
        else:
            reason = "map-bootstrap"

        if reg is not None and reg.converged:
            # Express the measurement relative to the prediction (it is the
            # same pose the solver found; only the reference changes) and
            # carry the covariance into that chart.
            delta_bar = geometry.compose(geometry.inverse(T_bar), T_solved)
            J = np.zeros((6, 6))
            J[:3, :3] = geometry.right_jacobian_inv_so3(delta_bar.rotation)
            J[3:, 3:] = delta_bar.R
            reg_bar = RegistrationResult(
                delta_x=geometry.x_from_pose(delta_bar),
                sigma_delta=_symmetrize(J @ reg.sigma_delta @ J.T),
                iterations=reg.iterations,
                final_cost=reg.final_cost,
                converged=True,
                n_correspondences=reg.n_correspondences,
            )
            bypass = (0 < self.filter_cfg.gate_max_consecutive
                      <= self._consecutive_rejects)
            x_new, P_new, info = update(x_bar, P_bar, self.sensor_id, reg_bar,
                                        self.filter_cfg, bypass_gate=bypass)
            if info.rejected:
                self._consecutive_rejects += 1
                flags |= MessageFlags.REJECTED_MEASUREMENT
                reason = "gated"
            else:
                self._consecutive_rejects = 0
        else:
            if reg is not None and not reg.converged:
                reason = "no-convergence"
            flags |= MessageFlags.PREDICTED_ONLY
            x_new, P_new = x_bar, P_bar

        # Advance the node's own odometry chain.
        if T_solved is not None and reg.converged:
            if self.odom_pose is not None and self._odom_stamp is not None \
                    and scan.stamp > self._odom_stamp:
                self.odom_increment = geometry.compose(
                    geometry.inverse(self.odom_pose), T_solved)
            self.odom_pose = T_solved
            self._odom_stamp = scan.stamp
        elif self.odom_pose is not None:
            # Dead-reckon the chain through a failed solve.
            self.odom_pose = guess
            self._odom_stamp = scan.stamp
        else:
            self.odom_pose = T_bar
            self._odom_stamp = scan.stamp

        # Fold the scan into the map unless the solver flagged the pose as
        # inconsistent (a gated or non-converged solve would smear the map
        # with a pose the evidence just disputed).  Inserts use the solved
        # pose when there is one and the odometry-consistent guess otherwise,
        # never the raw prediction, so a miscalibrated extrinsic cannot
        # poison the map.
        if reason not in ("gated", "no-convergence"):
            T_ins = T_solved if (T_solved is not None and reg.converged) else guess
            update_local_map(self.local_map, scan, T_ins, self.reg_cfg)

        msg = StateMessage(self.sensor_id, scan.stamp, x_new.copy(),
                           P_new.copy(), flags)
        # A node's own update is immediately its freshest knowledge.
        self.cached_state = x_new
        self.cached_cov = P_new

        r_re, t_re = constraint_outputs(x_new)
        record = StepRecord(
            stamp=scan.stamp,
            sensor_id=self.sensor_id,
            state=x_new.pack(),
            cov_diag=np.diag(P_new.matrix).copy(),
            r_re_norm=float(np.linalg.norm(r_re)),
            t_re_norm=float(np.linalg.norm(t_re)),
            reg_cost=float(reg.final_cost) if reg is not None else np.nan,
            reg_iterations=reg.iterations if reg is not None else 0,
            reg_correspondences=reg.n_correspondences if reg is not None else 0,
            flags=int(flags),
            reason=reason,
        )
        return msg, record
