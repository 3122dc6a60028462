import numpy as np
import pytest

from rigfusion import geometry
from rigfusion.errors import InvalidArgumentError
from rigfusion.geometry import (
    BodyPose,
    compose,
    exp_so3,
    hat,
    inverse,
    log_so3,
    pose_from_x,
    x_from_pose,
)


def matrix_exp_series(r, terms=20):
    """Truncated matrix-exponential series, the independent oracle for exp_so3."""
    K = hat(r)
    acc = np.eye(3)
    term = np.eye(3)
    for n in range(1, terms + 1):
        term = term @ K / n
        acc = acc + term
    return acc


def axis_angle_from_eigen(R):
    """Axis from the +1 eigenvector, angle from the trace; sign fixed by
    checking which of +/- axis reproduces R."""
    w, V = np.linalg.eig(R)
    i = int(np.argmin(np.abs(w - 1.0)))
    axis = np.real(V[:, i])
    axis = axis / np.linalg.norm(axis)
    angle = np.arccos(np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0))
    if np.linalg.norm(exp_so3(angle * axis) - R) > np.linalg.norm(exp_so3(-angle * axis) - R):
        axis = -axis
    return angle, axis


class TestExpSo3:
    def test_zero_rotation_is_identity(self):
        assert np.allclose(exp_so3([0.0, 0.0, 0.0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        R = exp_so3([0.0, 0.0, np.pi / 2])
        assert np.allclose(R @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12)

    def test_matches_series_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            r = rng.normal(size=3)
            r = 0.3 * r / np.linalg.norm(r)
            assert np.abs(exp_so3(r) - matrix_exp_series(r)).max() < 1e-12

    def test_orthonormal_det_one(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            R = exp_so3(rng.normal(size=3))
            assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
            assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-10)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidArgumentError):
            exp_so3([np.nan, 0.0, 0.0])


class TestLogSo3:
    def test_identity(self):
        assert np.allclose(log_so3(np.eye(3)), np.zeros(3))

    def test_round_trip_below_pi(self):
        r = np.array([0.1, 0.2, 0.3])
        assert np.allclose(log_so3(exp_so3(r)), r, atol=1e-12)

    def test_near_pi_against_eigen_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            axis = rng.normal(size=3)
            axis = axis / np.linalg.norm(axis)
            r = (np.pi - 1e-4) * axis
            R = exp_so3(r)
            angle_o, axis_o = axis_angle_from_eigen(R)
            got = log_so3(R)
            assert np.linalg.norm(got - angle_o * axis_o) < 1e-6

    def test_angle_canonical_range(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            r = rng.normal(size=3) * 2.0
            got = log_so3(exp_so3(r))
            assert 0.0 <= np.linalg.norm(got) <= np.pi + 1e-12

    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidArgumentError):
            log_so3(np.eye(3) + 1e-3)

    def test_exp_log_round_trip_property(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            R = exp_so3(rng.normal(size=3))
            assert np.abs(exp_so3(log_so3(R)) - R).max() < 1e-9

    def test_log_exp_round_trip_property(self):
        rng = np.random.default_rng(14)
        for _ in range(100):
            r = rng.normal(size=3)
            n = np.linalg.norm(r)
            if n >= np.pi - 1e-6:
                r = r / n * (np.pi - 1e-3)
            assert np.allclose(log_so3(exp_so3(r)), r, atol=1e-9)


class TestHat:
    def test_matches_cross_product(self):
        rng = np.random.default_rng(15)
        for _ in range(50):
            r = rng.normal(size=3)
            v = rng.normal(size=3)
            assert np.allclose(hat(r) @ v, np.cross(r, v), atol=1e-15)


def random_pose(rng, rot_scale=1.0, trans_scale=5.0):
    r = rng.normal(size=3)
    n = np.linalg.norm(r)
    if n > np.pi - 0.1:
        r = r / n * (np.pi - 0.1)
    return BodyPose(rot_scale * r, trans_scale * rng.normal(size=3))


class TestPoseAlgebra:
    def test_compose_with_inverse_is_identity(self):
        rng = np.random.default_rng(20)
        T = random_pose(rng)
        I = compose(T, inverse(T))
        assert np.linalg.norm(I.rotation) < 1e-10
        assert np.linalg.norm(I.translation) < 1e-10

    def test_compose_identity_left(self):
        rng = np.random.default_rng(21)
        T = random_pose(rng)
        got = compose(BodyPose.identity(), T)
        assert np.allclose(got.rotation, T.rotation, atol=1e-12)
        assert np.allclose(got.translation, T.translation, atol=1e-12)

    def test_compose_matches_matrix_product(self):
        rng = np.random.default_rng(22)
        for _ in range(20):
            a, b = random_pose(rng), random_pose(rng)
            got = compose(a, b).matrix()
            want = a.matrix() @ b.matrix()
            assert np.abs(got - want).max() < 1e-12

    def test_inverse_matches_matrix_inverse(self):
        rng = np.random.default_rng(23)
        for _ in range(20):
            T = random_pose(rng)
            assert np.abs(inverse(T).matrix() - np.linalg.inv(T.matrix())).max() < 1e-12

    def test_inverse_of_pure_translation(self):
        T = BodyPose([0.0, 0.0, 0.0], [1.0, 2.0, 3.0])
        Ti = inverse(T)
        assert np.allclose(Ti.translation, [-1.0, -2.0, -3.0])
        assert np.allclose(Ti.rotation, 0.0)

    def test_compose_associative(self):
        rng = np.random.default_rng(24)
        for _ in range(20):
            a, b, c = (random_pose(rng, 0.5) for _ in range(3))
            left = compose(compose(a, b), c).matrix()
            right = compose(a, compose(b, c)).matrix()
            assert np.abs(left - right).max() < 1e-10

    def test_pose_matrix_is_valid_se3(self):
        rng = np.random.default_rng(25)
        T = random_pose(rng).matrix()
        R = T[:3, :3]
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-10
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-10)
        assert np.allclose(T[3], [0.0, 0.0, 0.0, 1.0])


class TestPackedForm:
    def test_zero_vector_is_identity(self):
        T = pose_from_x(np.zeros(6))
        assert np.linalg.norm(T.rotation) == 0.0
        assert np.linalg.norm(T.translation) == 0.0
        assert np.allclose(x_from_pose(BodyPose.identity()), np.zeros(6))

    def test_round_trip_moderate_angle(self):
        rng = np.random.default_rng(30)
        r = rng.normal(size=3)
        r = 0.5 * r / np.linalg.norm(r)
        x = np.concatenate([r, rng.normal(size=3)])
        assert np.allclose(x_from_pose(pose_from_x(x)), x, atol=1e-10)

    def test_round_trip_near_pi(self):
        rng = np.random.default_rng(31)
        axis = rng.normal(size=3)
        axis = axis / np.linalg.norm(axis)
        x = np.concatenate([(np.pi - 1e-3) * axis, rng.normal(size=3)])
        T = pose_from_x(x)
        # Through the matrix view and back, staying within the boundary band.
        T2 = geometry.pose_from_matrix(T.matrix())
        assert np.allclose(x_from_pose(T2), x, atol=1e-6)


class TestQuaternionBoundary:
    def test_round_trip(self):
        rng = np.random.default_rng(40)
        for _ in range(50):
            r = rng.normal(size=3)
            n = np.linalg.norm(r)
            if n > np.pi - 1e-3:
                r = r / n * (np.pi - 1e-3)
            q = geometry.rotvec_to_quat(r)
            assert abs(np.linalg.norm(q) - 1.0) < 1e-12
            assert np.allclose(geometry.quat_to_rotvec(q), r, atol=1e-9)

    def test_rejects_unnormalized(self):
        with pytest.raises(InvalidArgumentError):
            geometry.quat_to_rotvec([1.0, 1.0, 0.0, 0.0])
