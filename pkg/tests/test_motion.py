import numpy as np
import pytest

from rigfusion import geometry
from rigfusion.errors import InvalidArgumentError, StaleStateError
from rigfusion.motion import (
    CenterState,
    ProcessNoise,
    jacobian_F,
    jacobian_G,
    predict_center,
)


def random_center(rng):
    r = rng.normal(size=3) * 0.5
    return CenterState(r, rng.normal(size=3) * 3.0,
                       rng.normal(size=3) * 0.4, rng.normal(size=3) * 1.5)


def fd_jacobian_state(x_c, dt, step=1e-6):
    """Central differences of the noise-free step w.r.t. the center state."""
    x0 = x_c.pack()
    J = np.zeros((12, 12))
    for j in range(12):
        d = np.zeros(12)
        d[j] = step
        fp = predict_center(CenterState.unpack(x0 + d), dt).pack()
        fm = predict_center(CenterState.unpack(x0 - d), dt).pack()
        J[:, j] = (fp - fm) / (2.0 * step)
    return J


def fd_jacobian_noise(x_c, dt, step=1e-6):
    """Central differences of the step w.r.t. the velocity impulses."""
    J = np.zeros((12, 6))
    for j in range(6):
        w = np.zeros(6)
        w[j] = step
        fp = predict_center(x_c, dt, w=w).pack()
        fm = predict_center(x_c, dt, w=-w).pack()
        J[:, j] = (fp - fm) / (2.0 * step)
    return J


class TestPredictCenter:
    def test_pure_linear_motion(self):
        x = CenterState(np.zeros(3), np.zeros(3), np.zeros(3), [1.0, 0.0, 0.0])
        out = predict_center(x, 0.5)
        assert np.allclose(out.t, [0.5, 0.0, 0.0])
        assert np.allclose(out.r, 0.0)
        assert np.allclose(out.v, x.v)

    def test_dt_zero_returns_input(self):
        rng = np.random.default_rng(0)
        x = random_center(rng)
        out = predict_center(x, 0.0)
        assert np.array_equal(out.pack(), x.pack())

    def test_coaxial_rotations_add(self):
        x = CenterState([0.0, 0.0, 0.1], np.zeros(3), [0.0, 0.0, 0.2], np.zeros(3))
        out = predict_center(x, 0.5)
        assert np.allclose(out.r, [0.0, 0.0, 0.2], atol=1e-12)

    def test_negative_dt_rejected(self):
        with pytest.raises(InvalidArgumentError):
            predict_center(CenterState(), -0.1)

    def test_stale_dt_rejected(self):
        with pytest.raises(StaleStateError):
            predict_center(CenterState(), 1.5)

    def test_semigroup_property(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = random_center(rng)
            ab = predict_center(predict_center(x, 0.3), 0.45)
            once = predict_center(x, 0.75)
            assert np.abs(ab.pack() - once.pack()).max() < 1e-10

    def test_rotation_update_matches_group_product(self):
        rng = np.random.default_rng(2)
        x = random_center(rng)
        out = predict_center(x, 0.2)
        want = geometry.log_so3(geometry.exp_so3(x.r) @ geometry.exp_so3(x.omega * 0.2))
        assert np.allclose(out.r, want, atol=1e-12)


class TestJacobianF:
    def test_dt_zero_is_identity(self):
        rng = np.random.default_rng(3)
        x = random_center(rng)
        for n in (0, 2, 5):
            F = jacobian_F(x, 0.0, n)
            assert F.shape == (12 + 6 * n, 12 + 6 * n)
            assert np.abs(F - np.eye(12 + 6 * n)).max() < 1e-9

    def test_velocity_block_is_dt_identity(self):
        x = CenterState(np.zeros(3), np.zeros(3), np.zeros(3), [1.0, 2.0, 3.0])
        F = jacobian_F(x, 0.25, 0)
        assert np.allclose(F[3:6, 9:12], 0.25 * np.eye(3), atol=1e-9)

    def test_extrinsic_blocks_untouched(self):
        rng = np.random.default_rng(4)
        x = random_center(rng)
        F = jacobian_F(x, 0.1, 3)
        assert np.allclose(F[12:, 12:], np.eye(18))
        assert np.allclose(F[:12, 12:], 0.0)
        assert np.allclose(F[12:, :12], 0.0)

    @pytest.mark.parametrize("method", ["fd", "analytic"])
    def test_matches_finite_differences(self, method):
        rng = np.random.default_rng(5)
        for _ in range(25):
            x = random_center(rng)
            F = jacobian_F(x, 0.1, 0, method=method)
            J = fd_jacobian_state(x, 0.1)
            scale = max(1.0, np.abs(J).max())
            assert np.abs(F[:12, :12] - J).max() / scale < 1e-5

    def test_fd_and_analytic_agree(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            x = random_center(rng)
            Fa = jacobian_F(x, 0.2, 0, method="analytic")
            Fn = jacobian_F(x, 0.2, 0, method="fd")
            assert np.abs(Fa - Fn).max() < 1e-5

    def test_unknown_method_rejected(self):
        with pytest.raises(InvalidArgumentError):
            jacobian_F(CenterState(), 0.1, 0, method="symbolic")


class TestJacobianG:
    def test_velocity_rows_identity(self):
        rng = np.random.default_rng(7)
        x = random_center(rng)
        G = jacobian_G(x, 0.0, 2)
        assert np.allclose(G[6:12], np.eye(6))
        assert np.allclose(G[:6], 0.0)
        assert np.allclose(G[12:], 0.0)

    def test_degenerate_no_sensor_shape(self):
        G = jacobian_G(CenterState(), 0.1, 0)
        assert G.shape == (12, 6)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            x = random_center(rng)
            G = jacobian_G(x, 0.1, 0)
            J = fd_jacobian_noise(x, 0.1)
            assert np.abs(G - J).max() < 1e-5


class TestProcessNoise:
    def test_default_is_valid(self):
        pn = ProcessNoise()
        assert pn.sigma_w.shape == (6, 6)
        assert np.allclose(pn.sigma_w, np.diag([0.0025] * 3 + [0.01] * 3))

    def test_rejects_asymmetric(self):
        m = np.eye(6)
        m[0, 1] = 0.5
        with pytest.raises(InvalidArgumentError):
            ProcessNoise(m)

    def test_rejects_indefinite(self):
        with pytest.raises(InvalidArgumentError):
            ProcessNoise(-np.eye(6))

    def test_from_stds(self):
        pn = ProcessNoise.from_stds(0.02, 0.3)
        assert pn.sigma_w[0, 0] == pytest.approx(4e-4)
        assert pn.sigma_w[5, 5] == pytest.approx(0.09)


class TestPacking:
    def test_center_state_round_trip(self):
        rng = np.random.default_rng(9)
        x = random_center(rng)
        assert np.array_equal(CenterState.unpack(x.pack()).pack(), x.pack())

    def test_ordering_r_t_omega_v(self):
        x = CenterState([1, 2, 3], [4, 5, 6], [7, 8, 9], [10, 11, 12])
        assert np.array_equal(x.pack(), np.arange(1.0, 13.0))
