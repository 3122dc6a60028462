"""Point-to-plane / point-to-edge registration against a local landmark map.

A scan is registered by solving a small right-multiplicative error pose:
the solver returns ``delta_x`` such that the sensor pose is
``T_init @ T(delta_x)``.  Residuals are the signed distance to plane
landmarks and the perpendicular displacement from edge landmarks; the
Gauss-Newton Hessian of the cost at the last iteration, scaled by the
per-point measurement noise, doubles as the measurement covariance handed
to the filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import geometry
from .errors import (
    DegenerateGeometryError,
    InsufficientOverlapError,
    InsufficientPointsError,
    InvalidArgumentError,
)
from .geometry import BodyPose


@dataclass
class RegistrationConfig:
    min_points: int = 30          # scan points below this -> no solve
    max_iters: int = 30
    grad_tol: float = 1e-4        # gradient inf-norm that counts as converged
    step_tol: float = 1e-12      # step norm that triggers a final gradient check
    freeze_tol: float = 2e-3      # step norm below which pairs stop refreshing
                                  # (association jitter scale; must exceed the
                                  # per-pair noise-driven optimum wobble)
    cond_max: float = 1e6         # Hessian condition number -> degenerate
    corr_radius: float = 1.0      # m, nearest-landmark rejection
    min_normal_dot: float = 0.85  # pair compatibility when the scan carries
                                  # normals; rejects cross-surface pairings
    meas_noise: float = 0.1       # m, per-pair std scaling the covariance.
                                  # Deliberately conservative: landmarks are
                                  # reused across scans, so per-pair errors
                                  # are correlated over time, and an honest
                                  # white-noise scale makes the filter chase
                                  # its own map feedback.
    voxel: float = 0.2            # m, map down-sampling cell
    map_window: float = 80.0      # m, sliding spatial window radius
    normal_neighbors: int = 6     # scan neighbors for landmark normals
    min_overlap: float = 0.2      # inlier fraction needed by align_maps


@dataclass
class ScanFrame:
    """One sensor's labeled points, in the sensor frame.

    When the feature labels carry geometry (synthetic scans know their source
    primitive), ``plane_normals`` / ``edge_dirs`` hold one sensor-frame unit
    vector per point; otherwise they are None and map insertion falls back to
    estimating them from neighborhoods.
    """

    sensor_id: int
    stamp: float
    plane_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    edge_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    plane_normals: np.ndarray | None = None
    edge_dirs: np.ndarray | None = None

    def __post_init__(self):
        self.plane_points = np.asarray(self.plane_points, dtype=float).reshape(-1, 3)
        self.edge_points = np.asarray(self.edge_points, dtype=float).reshape(-1, 3)
        if not (np.all(np.isfinite(self.plane_points)) and np.all(np.isfinite(self.edge_points))):
            raise InvalidArgumentError("scan points must be finite")
        if self.plane_normals is not None:
            self.plane_normals = np.asarray(self.plane_normals, dtype=float).reshape(-1, 3)
            if self.plane_normals.shape != self.plane_points.shape:
                raise InvalidArgumentError("plane_normals must match plane_points")
        if self.edge_dirs is not None:
            self.edge_dirs = np.asarray(self.edge_dirs, dtype=float).reshape(-1, 3)
            if self.edge_dirs.shape != self.edge_points.shape:
                raise InvalidArgumentError("edge_dirs must match edge_points")

    @property
    def n_points(self) -> int:
        return len(self.plane_points) + len(self.edge_points)


@dataclass
class RegistrationResult:
    delta_x: np.ndarray           # 6-vector [dr, dt], right perturbation of T_init
    sigma_delta: np.ndarray       # 6x6 covariance from the scaled Hessian inverse
    iterations: int
    final_cost: float
    converged: bool
    n_correspondences: int = 0


class LocalMap:
    """Plane (point + unit normal) and edge (point + unit direction) landmarks.

    Landmarks are voxel-deduplicated on insert (first occupant of a cell
    wins) and pruned to a sliding window around the most recent insert pose.
    Nearest-neighbor queries go through lazily rebuilt KD-trees.
    """

    def __init__(self, voxel: float = 0.2, window: float = 80.0):
        self.voxel = float(voxel)
        self.window = float(window)
        self.plane_pts = np.zeros((0, 3))
        self.plane_normals = np.zeros((0, 3))
        self.edge_pts = np.zeros((0, 3))
        self.edge_dirs = np.zeros((0, 3))
        self._plane_cells: set = set()
        self._edge_cells: set = set()
        self._plane_tree = None
        self._edge_tree = None

    @property
    def n_landmarks(self) -> int:
        return len(self.plane_pts) + len(self.edge_pts)

    def _cells(self, pts: np.ndarray):
        return np.floor_divide(pts, self.voxel).astype(np.int64)

    def _insert(self, pts, vecs, kind: str):
        if len(pts) == 0:
            return
        cells = self._cells(pts)
        occupied = self._plane_cells if kind == "plane" else self._edge_cells
        keep = []
        for i in range(len(pts)):
            key = (cells[i, 0], cells[i, 1], cells[i, 2])
            if key not in occupied:
                occupied.add(key)
                keep.append(i)
        if not keep:
            return
        if kind == "plane":
            self.plane_pts = np.vstack([self.plane_pts, pts[keep]])
            self.plane_normals = np.vstack([self.plane_normals, vecs[keep]])
            self._plane_tree = None
        else:
            self.edge_pts = np.vstack([self.edge_pts, pts[keep]])
            self.edge_dirs = np.vstack([self.edge_dirs, vecs[keep]])
            self._edge_tree = None

    def insert_landmarks(self, plane_pts, plane_normals, edge_pts, edge_dirs):
        self._insert(np.asarray(plane_pts, dtype=float).reshape(-1, 3),
                     np.asarray(plane_normals, dtype=float).reshape(-1, 3), "plane")
        self._insert(np.asarray(edge_pts, dtype=float).reshape(-1, 3),
                     np.asarray(edge_dirs, dtype=float).reshape(-1, 3), "edge")

    def prune(self, center):
        """Drop landmarks farther than the window radius from ``center``."""
        center = np.asarray(center, dtype=float)
        changed = False
        if len(self.plane_pts):
            m = np.linalg.norm(self.plane_pts - center, axis=1) <= self.window
            if not m.all():
                self.plane_pts = self.plane_pts[m]
                self.plane_normals = self.plane_normals[m]
                self._plane_cells = set(map(tuple, self._cells(self.plane_pts)))
                self._plane_tree = None
                changed = True
        if len(self.edge_pts):
            m = np.linalg.norm(self.edge_pts - center, axis=1) <= self.window
            if not m.all():
                self.edge_pts = self.edge_pts[m]
                self.edge_dirs = self.edge_dirs[m]
                self._edge_cells = set(map(tuple, self._cells(self.edge_pts)))
                self._edge_tree = None
                changed = True
        return changed

    def plane_tree(self):
        if self._plane_tree is None and len(self.plane_pts):
            self._plane_tree = cKDTree(self.plane_pts)
        return self._plane_tree

    def edge_tree(self):
        if self._edge_tree is None and len(self.edge_pts):
            self._edge_tree = cKDTree(self.edge_pts)
        return self._edge_tree

    def all_points(self) -> np.ndarray:
        return np.vstack([self.plane_pts, self.edge_pts])

    def transformed(self, T) -> "LocalMap":
        """New map with every landmark carried through the rigid transform."""
        out = LocalMap(voxel=self.voxel, window=self.window)
        R = T.R
        out.insert_landmarks(T.apply(self.plane_pts) if len(self.plane_pts)
                             else self.plane_pts,
                             self.plane_normals @ R.T,
                             T.apply(self.edge_pts) if len(self.edge_pts)
                             else self.edge_pts,
                             self.edge_dirs @ R.T)
        return out

    def save(self, path):
        """Debug dump: raw float64 rows of [kind, x, y, z, vx, vy, vz]."""
        rows = np.vstack([
            np.hstack([np.zeros((len(self.plane_pts), 1)), self.plane_pts,
                       self.plane_normals]).reshape(-1, 7),
            np.hstack([np.ones((len(self.edge_pts), 1)), self.edge_pts,
                       self.edge_dirs]).reshape(-1, 7),
        ])
        with open(path, "wb") as f:
            f.write(np.ascontiguousarray(rows, dtype=np.float64).tobytes())

    @staticmethod
    def load(path, voxel: float = 0.2, window: float = 80.0) -> "LocalMap":
        raw = np.fromfile(path, dtype=np.float64).reshape(-1, 7)
        m = LocalMap(voxel=voxel, window=window)
        planes = raw[raw[:, 0] == 0.0]
        edges = raw[raw[:, 0] == 1.0]
        m.insert_landmarks(planes[:, 1:4], planes[:, 4:7], edges[:, 1:4], edges[:, 4:7])
        return m


def _hat_batch(v: np.ndarray) -> np.ndarray:
    """(n, 3) -> (n, 3, 3) stack of skew matrices."""
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1] = -v[:, 2]
    out[:, 0, 2] = v[:, 1]
    out[:, 1, 0] = v[:, 2]
    out[:, 1, 2] = -v[:, 0]
    out[:, 2, 0] = -v[:, 1]
    out[:, 2, 1] = v[:, 0]
    return out


def residual_point_to_plane(T: BodyPose, p, point, normal):
    """Signed distance of the transformed point to the plane, plus its
    1x6 Jacobian w.r.t. a right perturbation [dr, dt] of T."""
    p = np.asarray(p, dtype=float)
    n = np.asarray(normal, dtype=float)
    q = np.asarray(point, dtype=float)
    R = T.R
    r = float(n @ (T.apply(p) - q))
    J_point = np.hstack([-R @ geometry.hat(p), R])   # d(T p)/d[dr, dt]
    return r, n @ J_point


def residual_point_to_edge(T: BodyPose, p, point, direction):
    """Perpendicular displacement of the transformed point from the line,
    plus its 3x6 Jacobian w.r.t. a right perturbation [dr, dt] of T."""
    p = np.asarray(p, dtype=float)
    d = np.asarray(direction, dtype=float)
    q = np.asarray(point, dtype=float)
    R = T.R
    P = np.eye(3) - np.outer(d, d)
    r = P @ (T.apply(p) - q)
    J_point = np.hstack([-R @ geometry.hat(p), R])
    return r, P @ J_point


class _Association:
    """Matched pairs frozen for one solver iteration."""

    __slots__ = ("plane_p", "plane_n", "plane_q", "edge_p", "edge_d", "edge_q")

    def __init__(self, plane_p, plane_n, plane_q, edge_p, edge_d, edge_q):
        self.plane_p = plane_p
        self.plane_n = plane_n
        self.plane_q = plane_q
        self.edge_p = edge_p
        self.edge_d = edge_d
        self.edge_q = edge_q

    @property
    def n_corr(self) -> int:
        return len(self.plane_p) + len(self.edge_p)

    def cost(self, T: BodyPose) -> float:
        """Cost at T over the frozen pairs (no re-association)."""
        R = T.R
        c = 0.0
        if len(self.plane_p):
            pw = self.plane_p @ R.T + T.translation
            res = np.einsum("ij,ij->i", self.plane_n, pw - self.plane_q)
            c += 0.5 * float(res @ res)
        if len(self.edge_p):
            pw = self.edge_p @ R.T + T.translation
            diff = pw - self.edge_q
            res = diff - self.edge_d * np.einsum("ij,ij->i", self.edge_d,
                                                 diff)[:, None]
            c += 0.5 * float(np.sum(res * res))
        return c


def _pick_compatible(tree, pts_w, vecs_w, map_pts, map_vecs, radius, min_dot):
    """Nearest landmark per point among the k nearest whose orientation
    agrees; plain nearest when no orientation is supplied."""
    if vecs_w is None:
        dist, idx = tree.query(pts_w)
        keep = dist <= radius
        return keep, idx
    k = min(4, len(map_pts))
    dist, idx = tree.query(pts_w, k=k)
    dist = np.atleast_2d(dist.reshape(len(pts_w), -1))
    idx = np.atleast_2d(idx.reshape(len(pts_w), -1))
    compat = (np.abs(np.einsum("nkj,nj->nk", map_vecs[idx], vecs_w))
              >= min_dot) & (dist <= radius)
    first = np.argmax(compat, axis=1)
    rows = np.arange(len(pts_w))
    keep = compat[rows, first]
    return keep, idx[rows, first]


def _associate(scan: ScanFrame, local_map: LocalMap, T: BodyPose,
               corr_radius: float, min_dot: float = 0.85) -> _Association:
    """Single nearest compatible landmark per point, rejected beyond the
    radius."""
    R = T.R
    plane_p = plane_n = plane_q = np.zeros((0, 3))
    edge_p = edge_d = edge_q = np.zeros((0, 3))
    if len(scan.plane_points) and len(local_map.plane_pts):
        pw = scan.plane_points @ R.T + T.translation
        nw = scan.plane_normals @ R.T if scan.plane_normals is not None else None
        keep, idx = _pick_compatible(local_map.plane_tree(), pw, nw,
                                     local_map.plane_pts,
                                     local_map.plane_normals,
                                     corr_radius, min_dot)
        if keep.any():
            plane_p = scan.plane_points[keep]
            plane_n = local_map.plane_normals[idx[keep]]
            plane_q = local_map.plane_pts[idx[keep]]
    if len(scan.edge_points) and len(local_map.edge_pts):
        pw = scan.edge_points @ R.T + T.translation
        dw = scan.edge_dirs @ R.T if scan.edge_dirs is not None else None
        keep, idx = _pick_compatible(local_map.edge_tree(), pw, dw,
                                     local_map.edge_pts, local_map.edge_dirs,
                                     corr_radius, min_dot)
        if keep.any():
            edge_p = scan.edge_points[keep]
            edge_d = local_map.edge_dirs[idx[keep]]
            edge_q = local_map.edge_pts[idx[keep]]
    return _Association(plane_p, plane_n, plane_q, edge_p, edge_d, edge_q)


def _normal_equations(assoc: _Association, T: BodyPose):
    """H = J^T J, b = J^T r and cost over the frozen pairs at T."""
    R = T.R
    H = np.zeros((6, 6))
    b = np.zeros(6)
    cost = 0.0
    if len(assoc.plane_p):
        pw = assoc.plane_p @ R.T + T.translation
        res = np.einsum("ij,ij->i", assoc.plane_n, pw - assoc.plane_q)
        # Row of J: [p x (R^T n), R^T n]
        nR = assoc.plane_n @ R
        J = np.hstack([np.cross(assoc.plane_p, nR), nR])
        H += J.T @ J
        b += J.T @ res
        cost += 0.5 * float(res @ res)
    if len(assoc.edge_p):
        pw = assoc.edge_p @ R.T + T.translation
        dd = assoc.edge_d
        diff = pw - assoc.edge_q
        res = diff - dd * np.einsum("ij,ij->i", dd, diff)[:, None]
        # Per point A = [-R hat(p), R]; rows J = P A with P = I - d d^T.
        n = len(assoc.edge_p)
        A = np.empty((n, 3, 6))
        A[:, :, :3] = -np.matmul(R[None, :, :], _hat_batch(assoc.edge_p))
        A[:, :, 3:] = R
        P = np.eye(3)[None, :, :] - dd[:, :, None] * dd[:, None, :]
        PA = np.matmul(P, A)
        # A^T P A summed (P idempotent), and A^T P diff = A^T res.
        H += np.einsum("nij,nik->jk", A, PA)
        b += np.einsum("nij,ni->j", A, res)
        cost += 0.5 * float(np.sum(res * res))
    return H, b, cost


def register(scan: ScanFrame, local_map: LocalMap, T_init: BodyPose,
             cfg: RegistrationConfig | None = None) -> RegistrationResult:
    """Solve the error pose of a scan against a local map.

    Gauss-Newton with a Levenberg damping fallback; correspondences are
    refreshed every iteration.  Raises InsufficientPointsError when the scan
    or the matched set is too small, DegenerateGeometryError when the Hessian
    condition number exceeds ``cfg.cond_max``.  A result that ran out of
    iterations (or stalled) is returned with ``converged=False``.
    """
    cfg = cfg or RegistrationConfig()
    if scan.n_points < cfg.min_points:
        raise InsufficientPointsError(
            f"scan has {scan.n_points} points, needs {cfg.min_points}")
    if local_map.n_landmarks == 0:
        raise InsufficientPointsError("map is empty")

    delta = BodyPose.identity()
    H = np.zeros((6, 6))
    cost = np.inf
    n_corr = 0
    converged = False
    it = 0
    assoc = None
    frozen = False

    for it in range(1, cfg.max_iters + 1):
        T_cur = geometry.compose(T_init, delta)
        if not frozen:
            assoc = _associate(scan, local_map, T_cur, cfg.corr_radius,
                               cfg.min_normal_dot)
            n_corr = assoc.n_corr
            if n_corr < cfg.min_points:
                raise InsufficientPointsError(
                    f"{n_corr} correspondences within {cfg.corr_radius} m, "
                    f"needs {cfg.min_points}")
        H, b, cost = _normal_equations(assoc, T_cur)
        cond = np.linalg.cond(H)
        if not np.isfinite(cond) or cond > cfg.cond_max:
            raise DegenerateGeometryError(
                f"Hessian condition number {cond:.3e} exceeds {cfg.cond_max:.1e}")
        if np.abs(b).max() < cfg.grad_tol:
            converged = True
            break

        # Gauss-Newton step; Levenberg damping against the frozen pairs if
        # the undamped step would raise their cost.
        step = np.linalg.solve(H, -b)
        lam = 0.0
        improved = False
        while True:
            T_try = geometry.compose(T_cur, geometry.pose_from_x(step))
            if assoc.cost(T_try) <= cost + 1e-15:
                improved = True
                break
            if lam > 1e7:
                break
            lam = max(10.0 * lam, 1e-6)
            step = np.linalg.solve(H + lam * np.diag(np.diag(H)), -b)
        if not improved:
            break
        delta = geometry.compose(delta, geometry.pose_from_x(step))
        step_norm = float(np.linalg.norm(step))
        # Once steps are tiny the pairing has settled; stop refreshing it so
        # boundary points cannot flip-flop the optimum forever.
        if step_norm < cfg.freeze_tol:
            frozen = True
        if step_norm < cfg.step_tol:
            T_cur = geometry.compose(T_init, delta)
            H, b, cost = _normal_equations(assoc, T_cur)
            converged = bool(np.abs(b).max() < cfg.grad_tol)
            break

    sigma = cfg.meas_noise**2 * np.linalg.inv(H)
    sigma = 0.5 * (sigma + sigma.T)
    return RegistrationResult(
        delta_x=geometry.x_from_pose(delta),
        sigma_delta=sigma,
        iterations=it,
        final_cost=float(cost),
        converged=converged,
        n_correspondences=n_corr,
    )


def estimate_scan_landmarks(scan: ScanFrame, T: BodyPose, k: int = 6):
    """World-frame landmarks from a scan: per-point normals from plane-point
    neighborhoods, per-point directions from edge-point neighborhoods.

    Neighborhoods that are not convincingly flat / linear are dropped so that
    patch borders do not seed bogus landmarks.
    """
    origin = T.translation
    plane_pts = np.zeros((0, 3))
    plane_normals = np.zeros((0, 3))
    edge_pts = np.zeros((0, 3))
    edge_dirs = np.zeros((0, 3))

    R = T.R

    if len(scan.plane_points):
        pw = T.apply(scan.plane_points)
        if scan.plane_normals is not None:
            plane_pts = pw
            plane_normals = scan.plane_normals @ R.T
        elif len(pw) >= k + 1:
            tree = cKDTree(pw)
            _, idx = tree.query(pw, k=k + 1)
            nb = pw[idx]                              # (n, k+1, 3)
            c = nb - nb.mean(axis=1, keepdims=True)
            covs = np.einsum("nki,nkj->nij", c, c)
            w, V = np.linalg.eigh(covs)               # ascending eigenvalues
            # Flat and genuinely two-dimensional; quasi-collinear
            # neighborhoods (scan rings seen at grazing angles) have no
            # usable normal.
            flat = ((w[:, 2] > 0.0) & (w[:, 0] <= 0.2 * w[:, 2])
                    & (w[:, 1] > 9.0 * w[:, 0]))
            if flat.any():
                normals = V[flat][:, :, 0]
                pts = pw[flat]
                sign = np.einsum("ij,ij->i", normals, origin[None, :] - pts)
                normals = np.where(sign[:, None] < 0.0, -normals, normals)
                plane_pts = pts
                plane_normals = normals

    if len(scan.edge_points):
        ew = T.apply(scan.edge_points)
        if scan.edge_dirs is not None:
            edge_pts = ew
            edge_dirs = scan.edge_dirs @ R.T
        elif len(ew) >= 3:
            tree = cKDTree(ew)
            kk = min(4, len(ew))
            _, idx = tree.query(ew, k=kk)
            nb = ew[idx].reshape(len(ew), kk, 3)
            c = nb - nb.mean(axis=1, keepdims=True)
            covs = np.einsum("nki,nkj->nij", c, c)
            w, V = np.linalg.eigh(covs)
            linear = (w[:, 2] > 0.0) & (w[:, 1] <= 0.2 * w[:, 2])
            if linear.any():
                edge_pts = ew[linear]
                edge_dirs = V[linear][:, :, 2]

    return plane_pts, plane_normals, edge_pts, edge_dirs


def update_local_map(local_map: LocalMap, scan: ScanFrame, T: BodyPose,
                     cfg: RegistrationConfig | None = None) -> LocalMap:
    """Insert a registered scan into the map (in place) and slide the window."""
    cfg = cfg or RegistrationConfig()
    pp, pn, ep, ed = estimate_scan_landmarks(scan, T, k=cfg.normal_neighbors)
    local_map.insert_landmarks(pp, pn, ep, ed)
    local_map.prune(T.translation)
    return local_map


def _icp_point_to_point(src: np.ndarray, dst_tree: cKDTree, dst: np.ndarray,
                        T: BodyPose, radius: float, iters: int = 40):
    """Rigid alignment of src onto dst by SVD over nearest-point pairs."""
    T = T.copy()
    for _ in range(iters):
        moved = T.apply(src)
        dist, idx = dst_tree.query(moved)
        keep = dist <= radius
        if keep.sum() < 3:
            return T, 0.0
        a = src[keep]
        b = dst[idx[keep]]
        ca = T.apply(a)
        mu_a = ca.mean(axis=0)
        mu_b = b.mean(axis=0)
        W = (b - mu_b).T @ (ca - mu_a)
        U, _, Vt = np.linalg.svd(W)
        D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
        R_inc = U @ D @ Vt
        t_inc = mu_b - R_inc @ mu_a
        T_inc = BodyPose(geometry.log_so3(R_inc), t_inc)
        T_new = geometry.compose(T_inc, T)
        shift = np.linalg.norm(T_new.translation - T.translation)
        rot = np.linalg.norm(T_inc.rotation)
        T = T_new
        if shift < 1e-9 and rot < 1e-9:
            break
    moved = T.apply(src)
    dist, _ = dst_tree.query(moved)
    fitness = float(np.mean(dist <= radius))
    return T, fitness


def align_maps(map_a: LocalMap, map_b: LocalMap, T_guess: BodyPose,
               cfg: RegistrationConfig | None = None):
    """Rigid transform carrying map_b into map_a, refined by ICP.

    Returns (pose, fitness); fitness is the matched fraction of the smaller
    map at the correspondence radius.  Raises InsufficientOverlapError when
    the overlap at the initial guess is below ``cfg.min_overlap`` or when
    the matched geometry fails to pin all six degrees of freedom (e.g. two
    maps that only share floor can slide on each other and must not count
    as aligned).
    """
    cfg = cfg or RegistrationConfig()
    pts_a = map_a.all_points()
    pts_b = map_b.all_points()
    if len(pts_a) == 0 or len(pts_b) == 0:
        raise InsufficientOverlapError("cannot align an empty map")
    # Deterministic stride subsampling keeps the ICP cost bounded.
    cap = 4000
    stride_a = max(1, len(pts_a) // cap)
    stride_b = max(1, len(pts_b) // cap)
    idx_a = np.arange(0, len(pts_a), stride_a)
    idx_b = np.arange(0, len(pts_b), stride_b)
    pts_a = pts_a[idx_a]
    pts_b = pts_b[idx_b]
    n_a_all = np.vstack([map_a.plane_normals, map_a.edge_dirs])[idx_a]
    n_b_all = np.vstack([map_b.plane_normals, map_b.edge_dirs])[idx_b]
    n_planes_a = int((idx_a < len(map_a.plane_pts)).sum())
    n_planes_b = int((idx_b < len(map_b.plane_pts)).sum())
    tree_a = cKDTree(pts_a)

    def smaller_side_overlap(T: BodyPose) -> float:
        """Matched fraction of the smaller map, counting only pairs of the
        same landmark kind whose orientations agree under T; a wall sliding
        onto a perpendicular wall does not score."""
        R = T.R
        moved = T.apply(pts_b)
        dist, idx = tree_a.query(moved)
        close = dist <= cfg.corr_radius
        same_kind = (idx < n_planes_a) == (np.arange(len(moved)) < n_planes_b)
        compat = np.abs(np.einsum("nj,nj->n", n_a_all[idx],
                                  n_b_all @ R.T)) >= 0.7
        good = float(np.sum(close & same_kind & compat))
        return min(1.0, good / float(min(len(pts_a), len(pts_b))))

    overlap = smaller_side_overlap(T_guess)
    if overlap < cfg.min_overlap:
        raise InsufficientOverlapError(
            f"overlap {overlap:.2f} below required {cfg.min_overlap:.2f}")
    T, _ = _icp_point_to_point(pts_b, tree_a, pts_a, T_guess, cfg.corr_radius)

    # Point-to-plane polish: point-to-point stops at the sampling pattern's
    # optimum, which can sit a few centimeters off the true surfaces.
    for _ in range(12):
        R = T.R
        moved = T.apply(pts_b)
        dist, idx = tree_a.query(moved)
        close = dist <= cfg.corr_radius
        plane_pair = close & (idx < n_planes_a) & (np.arange(len(moved))
                                                   < n_planes_b)
        if plane_pair.sum() < 10:
            break
        x = moved[plane_pair]
        nn = n_a_all[idx[plane_pair]]
        qq = pts_a[idx[plane_pair]]
        compat = np.abs(np.einsum("nj,nj->n",
                                  n_b_all[plane_pair] @ R.T, nn)) >= 0.7
        if compat.sum() < 10:
            break
        x, nn, qq = x[compat], nn[compat], qq[compat]
        res = np.einsum("nj,nj->n", nn, x - qq)
        J = np.hstack([np.cross(x, nn), nn])
        Hp = J.T @ J
        if np.linalg.cond(Hp) > cfg.cond_max:
            break
        step = np.linalg.solve(Hp, -(J.T @ res))
        T = geometry.compose(geometry.pose_from_x(step), T)
        if np.linalg.norm(step) < 1e-10:
            break

    moved = T.apply(pts_b)
    dist, idx = tree_a.query(moved)
    keep = dist <= cfg.corr_radius
    if keep.sum() < 3:
        raise InsufficientOverlapError("alignment kept too few pairs")
    # Point-to-plane observability over the matched pairs: using the target
    # map's normals exposes sliding directions that point-to-point residual
    # counting cannot see.
    q_idx = idx[keep]
    is_plane = q_idx < n_planes_a
    H = np.zeros((6, 6))
    mp = moved[keep][is_plane]
    if len(mp):
        nn = n_a_all[q_idx[is_plane]]
        J = np.hstack([np.cross(mp, nn), nn])
        H += J.T @ J
    me = moved[keep][~is_plane]
    if len(me):
        dd = n_a_all[q_idx[~is_plane]]
        A = np.empty((len(me), 3, 6))
        A[:, :, :3] = -_hat_batch(me)
        A[:, :, 3:] = np.eye(3)
        P = np.eye(3)[None, :, :] - dd[:, :, None] * dd[:, None, :]
        H += np.einsum("nij,nik->jk", A, np.matmul(P, A))
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > cfg.cond_max:
        raise InsufficientOverlapError(
            f"alignment under-constrained (condition {cond:.2e})")
    return T, smaller_side_overlap(T)
