import numpy as np
import pytest

from rigfusion import geometry
from rigfusion.errors import (
    DegenerateGeometryError,
    InsufficientOverlapError,
    InsufficientPointsError,
)
from rigfusion.geometry import BodyPose, compose, pose_from_x
from rigfusion.registration import (
    LocalMap,
    RegistrationConfig,
    ScanFrame,
    align_maps,
    register,
    residual_point_to_edge,
    residual_point_to_plane,
    update_local_map,
)

# Three mutually orthogonal plane patches around the origin; together they
# pin all six degrees of freedom.
PLANES = [
    # (anchor point, normal, in-plane axes)
    (np.array([5.0, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]),
     np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])),
    (np.array([0.0, 5.0, 0.0]), np.array([0.0, -1.0, 0.0]),
     np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])),
    (np.array([0.0, 0.0, -1.0]), np.array([0.0, 0.0, 1.0]),
     np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])),
]


def grid_on_plane(anchor, u, v, half=4.0, step=0.5):
    a = np.arange(-half, half + 1e-9, step)
    uu, vv = np.meshgrid(a, a)
    return anchor + uu.reshape(-1, 1) * u + vv.reshape(-1, 1) * v


def make_map(step=0.25):
    m = LocalMap(voxel=0.05)
    for anchor, n, u, v in PLANES:
        pts = grid_on_plane(anchor, u, v, step=step)
        m.insert_landmarks(pts, np.tile(n, (len(pts), 1)),
                           np.zeros((0, 3)), np.zeros((0, 3)))
    return m


def make_scan(T_true: BodyPose, n_per_plane=170, seed=0, planes=PLANES):
    """Sensor-frame points sampled on the world planes, seen from T_true."""
    rng = np.random.default_rng(seed)
    T_inv = geometry.inverse(T_true)
    pts = []
    for anchor, n, u, v in planes:
        uu = rng.uniform(-3.5, 3.5, size=(n_per_plane, 1))
        vv = rng.uniform(-3.5, 3.5, size=(n_per_plane, 1))
        pts.append(T_inv.apply(anchor + uu * u + vv * v))
    return ScanFrame(0, 0.0, np.vstack(pts), np.zeros((0, 3)))


class TestResidualPointToPlane:
    def test_point_on_plane(self):
        r, _ = residual_point_to_plane(BodyPose.identity(), [5.0, 1.0, 2.0],
                                       [5.0, 0.0, 0.0], [-1.0, 0.0, 0.0])
        assert r == pytest.approx(0.0, abs=1e-15)

    def test_point_one_meter_along_normal(self):
        r, _ = residual_point_to_plane(BodyPose.identity(), [4.0, 0.0, 0.0],
                                       [5.0, 0.0, 0.0], [-1.0, 0.0, 0.0])
        assert r == pytest.approx(1.0)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        T = BodyPose(0.3 * rng.normal(size=3), rng.normal(size=3))
        p = rng.normal(size=3) * 2.0
        q = rng.normal(size=3) * 2.0
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        _, J = residual_point_to_plane(T, p, q, n)
        step = 1e-7
        for j in range(6):
            d = np.zeros(6)
            d[j] = step
            rp, _ = residual_point_to_plane(compose(T, pose_from_x(d)), p, q, n)
            rm, _ = residual_point_to_plane(compose(T, pose_from_x(-d)), p, q, n)
            assert J[j] == pytest.approx((rp - rm) / (2 * step), abs=1e-6)


class TestResidualPointToEdge:
    LINE_Q = np.array([1.0, 1.0, 0.0])
    LINE_D = np.array([0.0, 0.0, 1.0])

    def test_point_on_line(self):
        r, _ = residual_point_to_edge(BodyPose.identity(), [1.0, 1.0, 3.0],
                                      self.LINE_Q, self.LINE_D)
        assert np.linalg.norm(r) == pytest.approx(0.0, abs=1e-15)

    def test_perpendicular_offset(self):
        r, _ = residual_point_to_edge(BodyPose.identity(), [1.5, 1.0, 2.0],
                                      self.LINE_Q, self.LINE_D)
        assert np.linalg.norm(r) == pytest.approx(0.5)

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        T = BodyPose(0.3 * rng.normal(size=3), rng.normal(size=3))
        p = rng.normal(size=3) * 2.0
        _, J = residual_point_to_edge(T, p, self.LINE_Q, self.LINE_D)
        step = 1e-7
        for j in range(6):
            d = np.zeros(6)
            d[j] = step
            rp, _ = residual_point_to_edge(compose(T, pose_from_x(d)), p,
                                           self.LINE_Q, self.LINE_D)
            rm, _ = residual_point_to_edge(compose(T, pose_from_x(-d)), p,
                                           self.LINE_Q, self.LINE_D)
            assert np.allclose(J[:, j], (rp - rm) / (2 * step), atol=1e-6)


class TestRegister:
    def test_zero_error_scan(self):
        m = make_map()
        T_init = BodyPose([0.0, 0.0, 0.1], [0.5, -0.3, 0.2])
        scan = make_scan(T_init)
        res = register(scan, m, T_init)
        assert res.converged
        assert np.linalg.norm(res.delta_x) < 1e-9
        assert res.final_cost < 1e-16

    def test_recovers_known_perturbation(self):
        m = make_map()
        T_init = BodyPose([0.0, 0.0, 0.05], [0.2, 0.1, 0.0])
        rng = np.random.default_rng(7)
        dr = rng.normal(size=3)
        dr = 0.02 * dr / np.linalg.norm(dr)
        dt = rng.normal(size=3)
        dt = 0.05 * dt / np.linalg.norm(dt)
        delta_true = np.concatenate([dr, dt])
        scan = make_scan(compose(T_init, pose_from_x(delta_true)))
        res = register(scan, m, T_init)
        assert res.converged
        assert np.abs(res.delta_x - delta_true).max() < 1e-6
        assert res.sigma_delta.shape == (6, 6)
        assert np.linalg.eigvalsh(res.sigma_delta).min() > 0.0

    def test_single_plane_is_degenerate(self):
        m = LocalMap(voxel=0.05)
        anchor, n, u, v = PLANES[2]
        pts = grid_on_plane(anchor, u, v, step=0.25)
        m.insert_landmarks(pts, np.tile(n, (len(pts), 1)),
                           np.zeros((0, 3)), np.zeros((0, 3)))
        scan = make_scan(BodyPose.identity(), planes=[PLANES[2]])
        with pytest.raises(DegenerateGeometryError):
            register(scan, m, BodyPose.identity())

    def test_too_few_points(self):
        m = make_map()
        scan = ScanFrame(0, 0.0, np.zeros((5, 3)), np.zeros((0, 3)))
        with pytest.raises(InsufficientPointsError):
            register(scan, m, BodyPose.identity())

    def test_empty_map(self):
        scan = make_scan(BodyPose.identity())
        with pytest.raises(InsufficientPointsError):
            register(scan, LocalMap(), BodyPose.identity())

    def test_cost_contraction_inside_basin(self):
        # Quadratic convergence shows up as cost dropping by far more than
        # half per sweep; final_cost with max_iters=k is the cost after k-1
        # steps.
        m = make_map()
        T_init = BodyPose.identity()
        delta_true = np.array([0.01, -0.008, 0.012, 0.03, -0.02, 0.025])
        scan = make_scan(compose(T_init, pose_from_x(delta_true)))
        costs = []
        for k in range(1, 6):
            cfg = RegistrationConfig(max_iters=k)
            costs.append(register(scan, m, T_init, cfg).final_cost)
        for a, b in zip(costs, costs[1:]):
            if a < 1e-15:   # machine floor reached
                break
            assert b <= 0.5 * a

    def test_covariance_shrinks_with_point_count(self):
        m = make_map()
        T = BodyPose.identity()
        small = register(make_scan(T, n_per_plane=60, seed=3), m, T)
        big = register(make_scan(T, n_per_plane=240, seed=3), m, T)
        assert np.trace(big.sigma_delta) < np.trace(small.sigma_delta)

    def test_left_invariance(self):
        m = make_map()
        T_init = BodyPose([0.0, 0.0, 0.05], [0.2, 0.1, 0.0])
        delta_true = np.array([0.005, 0.01, -0.007, 0.02, -0.03, 0.01])
        scan = make_scan(compose(T_init, pose_from_x(delta_true)))
        res = register(scan, m, T_init)

        rng = np.random.default_rng(11)
        W = BodyPose(0.8 * rng.normal(size=3), 4.0 * rng.normal(size=3))
        RW = W.R
        moved = LocalMap(voxel=0.05)
        moved.insert_landmarks(W.apply(m.plane_pts), m.plane_normals @ RW.T,
                               np.zeros((0, 3)), np.zeros((0, 3)))
        res_moved = register(scan, moved, compose(W, T_init))
        assert np.abs(res.delta_x - res_moved.delta_x).max() < 1e-8


class TestLocalMap:
    def test_insert_into_empty_map(self):
        m = LocalMap()
        scan = make_scan(BodyPose.identity())
        update_local_map(m, scan, BodyPose.identity())
        assert m.n_landmarks > 0

    def test_duplicate_insert_is_stable(self):
        m = LocalMap()
        scan = make_scan(BodyPose.identity())
        update_local_map(m, scan, BodyPose.identity())
        size = m.n_landmarks
        update_local_map(m, scan, BodyPose.identity())
        assert m.n_landmarks == size

    def test_register_against_own_insert(self):
        m = LocalMap(voxel=0.1)
        T = BodyPose([0.0, 0.0, 0.2], [1.0, 0.5, 0.0])
        scan = make_scan(T, n_per_plane=200)
        update_local_map(m, scan, T)
        res = register(scan, m, T)
        assert res.converged
        assert np.linalg.norm(res.delta_x) < 1e-8

    def test_window_prune(self):
        m = LocalMap(window=10.0)
        pts = np.array([[0.0, 0.0, 0.0], [50.0, 0.0, 0.0]])
        normals = np.tile([0.0, 0.0, 1.0], (2, 1))
        m.insert_landmarks(pts, normals, np.zeros((0, 3)), np.zeros((0, 3)))
        m.prune([0.0, 0.0, 0.0])
        assert len(m.plane_pts) == 1

    def test_save_load_round_trip(self, tmp_path):
        m = make_map(step=0.5)
        m.insert_landmarks(np.zeros((0, 3)), np.zeros((0, 3)),
                           np.array([[1.0, 1.0, 0.0]]),
                           np.array([[0.0, 0.0, 1.0]]))
        path = tmp_path / "map.bin"
        m.save(path)
        m2 = LocalMap.load(path)
        assert m2.n_landmarks == m.n_landmarks
        assert np.allclose(np.sort(m2.plane_pts, axis=0),
                           np.sort(m.plane_pts, axis=0))


class TestAlignMaps:
    def test_identity_alignment(self):
        m = make_map(step=0.5)
        T, fitness = align_maps(m, m, BodyPose.identity())
        assert np.linalg.norm(T.rotation) < 1e-9
        assert np.linalg.norm(T.translation) < 1e-9
        assert fitness == pytest.approx(1.0)

    def test_recovers_known_transform(self):
        m = make_map(step=0.5)
        T_true = BodyPose([0.0, 0.0, 0.08], [0.3, -0.2, 0.1])
        moved = LocalMap(voxel=0.05)
        T_inv = geometry.inverse(T_true)
        moved.insert_landmarks(T_inv.apply(m.plane_pts),
                               m.plane_normals @ T_inv.R.T,
                               np.zeros((0, 3)), np.zeros((0, 3)))
        T_est, fitness = align_maps(m, moved, BodyPose.identity())
        assert fitness > 0.9
        assert np.abs(geometry.x_from_pose(T_est)
                      - geometry.x_from_pose(T_true)).max() < 1e-4

    def test_disjoint_maps(self):
        m = make_map(step=0.5)
        far = LocalMap()
        far.insert_landmarks(m.plane_pts + np.array([500.0, 0.0, 0.0]),
                             m.plane_normals, np.zeros((0, 3)), np.zeros((0, 3)))
        with pytest.raises(InsufficientOverlapError):
            align_maps(m, far, BodyPose.identity())
