import numpy as np
import pytest

from uorolab.noise import GAUSSIAN, SIGN, episode_noise


class TestEpisodeNoise:
    def test_bit_identical_replay(self):
        a = episode_noise(123, 7, length=5, dim=3)
        b = episode_noise(123, 7, length=5, dim=3)
        np.testing.assert_array_equal(a.tau, b.tau)
        np.testing.assert_array_equal(a.nu, b.nu)
        np.testing.assert_array_equal(a.sigma, b.sigma)
        np.testing.assert_array_equal(a.mu, b.mu)

    def test_episodes_differ(self):
        a = episode_noise(123, 7, length=5, dim=3)
        b = episode_noise(123, 8, length=5, dim=3)
        assert not np.array_equal(a.nu, b.nu)

    def test_streams_differ(self):
        n = episode_noise(123, 0, length=64, dim=4)
        assert not np.array_equal(n.nu, n.mu)
        assert not np.array_equal(n.tau, n.sigma)

    def test_sign_tau_values(self):
        n = episode_noise(5, 0, length=1000, dim=1, tau_kind=SIGN)
        assert set(np.unique(n.tau)) == {-1.0, 1.0}
        # fair coin: mean within 5 sigma of zero
        assert abs(n.tau.mean()) < 5 / np.sqrt(1000)

    def test_gaussian_tau(self):
        n = episode_noise(5, 0, length=20000, dim=1, tau_kind=GAUSSIAN)
        assert abs(n.tau.mean()) < 0.05
        assert n.tau.var() == pytest.approx(1.0, abs=0.05)

    def test_u_has_unit_covariance(self):
        n = episode_noise(9, 0, length=50000, dim=3, tau_kind=SIGN)
        cov = n.u.T @ n.u / n.length
        np.testing.assert_allclose(cov, np.eye(3), atol=0.05)

    def test_unknown_tau_kind(self):
        with pytest.raises(ValueError):
            episode_noise(1, 0, length=2, dim=2, tau_kind="uniform")
