import numpy as np
import pytest
from scipy import stats

from darb.exceptions import DomainError
from darb.models.schemas import Seed, UserLayout
from darb.services.channel import (
    PATH_LOSS_GAIN, draw_channels, draw_user_channels, nested_layout, path_loss, place_users, uniform_layout,
)


class TestPathLoss:
    def test_reference_distances(self):
        assert path_loss(1.0) == pytest.approx(2.951e-4, rel=1e-3)
        assert path_loss(30.0) == pytest.approx(8.24e-10, rel=0.01)

    def test_array_input(self):
        betas = path_loss(np.array([1.0, 30.0]))
        assert betas.shape == (2,)
        assert betas[0] > betas[1]

    def test_clamps_below_d_min(self, caplog):
        with caplog.at_level("WARNING", logger="darb.services.channel"):
            assert path_loss(0.0) == pytest.approx(PATH_LOSS_GAIN)
        assert "Clamping" in caplog.text

    def test_invalid_floor(self):
        with pytest.raises(DomainError):
            path_loss(10.0, d_min=0.0)


class TestPlaceUsers:
    def test_positions_inside_square(self, seed):
        layout = place_users(seed, 5, 60.0)
        assert layout.positions.shape == (5, 2)
        assert np.all((layout.positions >= 0) & (layout.positions <= 60.0))
        assert np.allclose(layout.betas, path_loss(layout.distances))

    def test_deterministic(self, seed):
        a = place_users(seed, 20, 60.0)
        b = place_users(seed, 20, 60.0)
        assert np.array_equal(a.positions, b.positions)

    def test_center_placement(self, seed):
        layout = place_users(seed, 200, 60.0, placement="center")
        assert np.all(np.abs(layout.positions) <= 30.0)

    def test_corner_second_moment(self, seed):
        # E[d^2] = 2 * side^2 / 3 with the transmitter at a corner
        layout = place_users(seed, 10_000, 60.0)
        assert np.mean(layout.distances ** 2) == pytest.approx(2400.0, rel=0.02)

    def test_rejects_bad_inputs(self, seed):
        with pytest.raises(DomainError):
            place_users(seed, 0, 60.0)
        with pytest.raises(DomainError):
            place_users(seed, 3, -1.0)
        with pytest.raises(DomainError):
            place_users(seed, 3, 60.0, placement="ring")


class TestLayouts:
    def test_nested_prefix(self, seed):
        big = place_users(seed, 50, 60.0)
        small = nested_layout(big, 10)
        assert small.k_users == 10
        assert np.array_equal(small.betas, big.betas[:10])

    def test_nested_too_many(self, seed):
        with pytest.raises(DomainError):
            nested_layout(place_users(seed, 5, 60.0), 6)

    def test_uniform(self):
        layout = uniform_layout(4, 0.5)
        assert np.all(layout.betas == 0.5)


class TestDrawChannels:
    def test_shape_and_variance(self, seed):
        layout = uniform_layout(3, 2.0)
        h = draw_channels(seed, layout, 4, trials=20_000).h
        assert h.shape == (20_000, 3, 4)
        assert np.mean(np.abs(h) ** 2) == pytest.approx(2.0, rel=0.02)

    def test_gain_normalised_norm_is_chi_square(self, seed):
        # ||h_k||^2 / beta_k ~ Gamma(L, 1), half a chi-square with 2L degrees of freedom
        betas = np.array([0.5, 1.0, 4.0])
        h = draw_user_channels(seed, betas, 4, 20_000)
        normalised = (np.sum(np.abs(h) ** 2, axis=-1) / betas).ravel()
        assert stats.kstest(normalised, stats.gamma(a=4).cdf).statistic < 0.01

    def test_users_are_uncorrelated(self, seed):
        betas = np.array([0.5, 1.0, 4.0])
        h = draw_user_channels(seed, betas, 4, 50_000)
        for a, b in ((0, 1), (0, 2), (1, 2)):
            corr = np.mean(h[:, a, :] * np.conj(h[:, b, :])) / np.sqrt(betas[a] * betas[b])
            assert abs(corr) < 0.01

    def test_mean_norm_per_user(self, seed):
        betas = np.array([0.5, 1.0, 4.0])
        layout = UserLayout(positions=np.zeros((3, 2)), distances=np.ones(3), betas=betas)
        h = draw_channels(seed, layout, 4, trials=20_000).h
        mean_norm = np.mean(np.sum(np.abs(h) ** 2, axis=-1), axis=0)
        assert mean_norm == pytest.approx(4 * betas, rel=0.02)

    def test_single_draw(self, seed):
        realization = draw_channels(seed, uniform_layout(3), 5)
        assert realization.k_users == 3
        assert realization.l_beams == 5

    def test_zero_gain_gives_zero_channel(self, seed):
        layout = UserLayout(positions=np.zeros((2, 2)), distances=np.zeros(2), betas=np.zeros(2))
        assert np.all(draw_channels(seed, layout, 3).h == 0)

    def test_user_draws_do_not_depend_on_k(self, seed):
        # common random numbers across a K sweep
        few = draw_user_channels(seed, np.ones(3), 4, 10)
        many = draw_user_channels(seed, np.ones(8), 4, 10)
        assert np.array_equal(few, many[:, :3, :])

    def test_streams_differ(self):
        a = draw_user_channels(Seed(1, 0), np.ones(2), 4, 5)
        b = draw_user_channels(Seed(1, 1), np.ones(2), 4, 5)
        assert not np.allclose(a, b)
