"""Decentralized filtering for a rig of field-of-view-limited range sensors.

The package couples five pieces:

- ``geometry``: rotation-vector / rigid-transform algebra,
- ``motion``: the constant-velocity process model and its Jacobians,
- ``registration``: point-to-plane / point-to-edge scan matching with a
  Hessian-derived measurement covariance,
- ``ekf``: the per-node filter over the augmented center + extrinsics state,
- ``network`` / ``world``: a deterministic event-driven simulator with
  synthetic scenes that exercises the whole stack at desk scale,
- ``evaluation``: trajectory accuracy and extrinsic-convergence reports.
"""

from .geometry import BodyPose, compose, exp_so3, hat, inverse, log_so3
from .motion import CenterState, ProcessNoise
from .registration import LocalMap, RegistrationConfig, RegistrationResult, ScanFrame
from .ekf import (
    FilterConfig,
    FilterNode,
    FullState,
    MessageFlags,
    StateCovariance,
    StateMessage,
)

__version__ = "0.1.0"

__all__ = [
    "BodyPose",
    "CenterState",
    "FilterConfig",
    "FilterNode",
    "FullState",
    "LocalMap",
    "MessageFlags",
    "ProcessNoise",
    "RegistrationConfig",
    "RegistrationResult",
    "ScanFrame",
    "StateCovariance",
    "StateMessage",
    "compose",
    "exp_so3",
    "hat",
    "inverse",
    "log_so3",
]
