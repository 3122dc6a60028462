"""Constant-velocity process model of the rig's virtual center.

The center state is ``[r, t, omega, v]`` (12 numbers): attitude as a rotation
vector, position in meters, body-frame angular rate, world-frame linear
velocity.  Over a step of ``dt`` seconds the pose integrates the velocities
and the velocities stay put; random force / torque impulses ``w = [e_w, e_v]``
land on the velocities:

    r'     = log(exp(r) @ exp(hat(omega) * dt))
    t'     = t + v * dt
    omega' = omega + e_w
    v'     = v + e_v

The full filter state appends one 6-vector of extrinsic parameters per sensor
after the center block; prediction leaves those untouched, so the process
Jacobian is block diagonal with an identity over the extrinsic blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, StaleStateError
from . import geometry

DEFAULT_MAX_DT = 1.0
FD_STEP = 1e-6


@dataclass
class CenterState:
    """Pose + velocities of the virtual geometric center."""

    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("r", "t", "omega", "v"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != (3,):
                raise InvalidArgumentError(f"{name} must have shape (3,)")
            if not np.all(np.isfinite(a)):
                raise InvalidArgumentError(f"{name} must be finite")
            setattr(self, name, a)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.r, self.t, self.omega, self.v])

    @staticmethod
    def unpack(x) -> "CenterState":
        x = np.asarray(x, dtype=float)
        if x.shape != (12,):
            raise InvalidArgumentError(f"center state must pack to 12, got {x.shape}")
        return CenterState(x[0:3].copy(), x[3:6].copy(), x[6:9].copy(), x[9:12].copy())

    def pose(self) -> geometry.BodyPose:
        return geometry.BodyPose(self.r.copy(), self.t.copy())

    def copy(self) -> "CenterState":
        return CenterState(self.r.copy(), self.t.copy(), self.omega.copy(), self.v.copy())


@dataclass
class ProcessNoise:
    """Covariance of the velocity impulses [e_w (rad/s), e_v (m/s)]."""

    sigma_w: np.ndarray = field(
        default_factory=lambda: np.diag([0.05**2] * 3 + [0.1**2] * 3)
    )

    def __post_init__(self):
        m = np.asarray(self.sigma_w, dtype=float)
        if m.shape != (6, 6):
            raise InvalidArgumentError("sigma_w must be 6x6")
        if np.abs(m - m.T).max() > 1e-12:
            raise InvalidArgumentError("sigma_w must be symmetric")
        if np.linalg.eigvalsh(m).min() < -1e-12:
            raise InvalidArgumentError("sigma_w must be positive semidefinite")
        self.sigma_w = m

    @staticmethod
    def from_stds(std_omega: float, std_v: float) -> "ProcessNoise":
        return ProcessNoise(np.diag([std_omega**2] * 3 + [std_v**2] * 3))


def _check_dt(dt: float, max_dt: float):
    if not np.isfinite(dt) or dt < 0.0:
        raise InvalidArgumentError(f"dt must be >= 0, got {dt}")
    if dt > max_dt:
        raise StaleStateError(f"dt {dt:.3f}s exceeds max_dt {max_dt:.3f}s")


def predict_center(x_c: CenterState, dt: float, w=None,
                   max_dt: float = DEFAULT_MAX_DT) -> CenterState:
    """Advance the center state by dt seconds.

    ``w`` is the 6-vector of velocity impulses; omit it for the noise-free
    evaluation the filter prediction uses.
    """
    _check_dt(dt, max_dt)
    if w is None:
        w = np.zeros(6)
    else:
        w = np.asarray(w, dtype=float)
        if w.shape != (6,):
            raise InvalidArgumentError("w must have shape (6,)")
    if dt == 0.0 and not w.any():
        return x_c.copy()
    R_next = geometry.exp_so3(x_c.r) @ geometry.exp_so3(x_c.omega * dt)
    return CenterState(
        geometry.log_so3(R_next),
        x_c.t + x_c.v * dt,
        x_c.omega + w[:3],
        x_c.v + w[3:],
    )


def _center_jacobian_fd(x_c: CenterState, dt: float, max_dt: float) -> np.ndarray:
    """12x12 d f / d x_c by central differences."""
    J = np.zeros((12, 12))
    x0 = x_c.pack()
    for j in range(12):
        dx = np.zeros(12)
        dx[j] = FD_STEP
        fp = predict_center(CenterState.unpack(x0 + dx), dt, max_dt=max_dt).pack()
        fm = predict_center(CenterState.unpack(x0 - dx), dt, max_dt=max_dt).pack()
        J[:, j] = (fp - fm) / (2.0 * FD_STEP)
    return J


def _center_jacobian_analytic(x_c: CenterState, dt: float, max_dt: float) -> np.ndarray:
    """12x12 d f / d x_c via the right Jacobian of SO(3)."""
    _check_dt(dt, max_dt)
    J = np.eye(12)
    x_next = predict_center(x_c, dt, max_dt=max_dt)
    Jr_inv_next = geometry.right_jacobian_inv_so3(x_next.r)
    E = geometry.exp_so3(x_c.omega * dt)
    # exp(r + d) ~ exp(r) exp((Jr(r) d)^), pushed through the right increment.
    J[0:3, 0:3] = Jr_inv_next @ E.T @ geometry.right_jacobian_so3(x_c.r)
    J[0:3, 6:9] = Jr_inv_next @ geometry.right_jacobian_so3(x_c.omega * dt) * dt
    J[3:6, 9:12] = dt * np.eye(3)
    return J


def jacobian_F(x_c: CenterState, dt: float, n_sensors: int,
               method: str = "fd", max_dt: float = DEFAULT_MAX_DT) -> np.ndarray:
    """Process Jacobian over the full (12 + 6N)-state.

    Top-left 12x12 block is d f / d x_c at w = 0; the extrinsic blocks carry
    an identity.  ``method`` selects central differences ("fd", default) or
    the closed form ("analytic"); the two agree to ~1e-7.
    """
    if n_sensors < 0:
        raise InvalidArgumentError("n_sensors must be >= 0")
    if method == "fd":
        block = _center_jacobian_fd(x_c, dt, max_dt)
    elif method == "analytic":
        block = _center_jacobian_analytic(x_c, dt, max_dt)
    else:
        raise InvalidArgumentError(f"unknown jacobian method {method!r}")
    n = 12 + 6 * n_sensors
    F = np.eye(n)
    F[:12, :12] = block
    return F


def jacobian_G(x_c: CenterState, dt: float, n_sensors: int,
               max_dt: float = DEFAULT_MAX_DT) -> np.ndarray:
    """(12 + 6N) x 6 noise Jacobian d f / d w.

    The impulses land directly on the velocity entries, so the block is a
    constant identity over the (omega, v) rows regardless of dt.
    """
    _check_dt(dt, max_dt)
    if n_sensors < 0:
        raise InvalidArgumentError("n_sensors must be >= 0")
    G = np.zeros((12 + 6 * n_sensors, 6))
    G[6:12, :] = np.eye(6)
    return G
