import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gmlab import analytic, schedule
from gmlab.analytic import GaussianMixture, GaussianPath
from gmlab.errors import ConfigError, EvaluationError, ValidationError

from conftest import two_bumps_1d, two_bumps_2d

STD = GaussianMixture.standard(1)
SYM = GaussianMixture(np.array([0.5, 0.5]), np.array([[-2.0, 0.0], [2.0, 0.0]]), np.array([0.1, 0.1]))
SCHEDULES = ["flow_matching", "variance_preserving", "variance_exploding"]


def test_density_single_gaussian(fm):
    assert float(analytic.marginal_density(STD, fm, [0.0], 0.5)) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-12)


def test_density_at_t0_is_data_density(fm):
    gm = two_bumps_1d()
    x = np.linspace(-3, 3, 7)[:, None]
    direct = sum(w * np.exp(-(x[:, 0] - m[0]) ** 2 / (2 * v)) / np.sqrt(2 * np.pi * v)
                 for w, m, v in zip(gm.weights, gm.means, gm.variances))
    np.testing.assert_allclose(analytic.marginal_density(gm, fm, x, 0.0), direct, rtol=1e-12)


def test_density_tails_vanish(fm):
    assert float(analytic.marginal_density(two_bumps_1d(), fm, [40.0], 0.3)) < 1e-100


@pytest.mark.parametrize("gm", [two_bumps_1d(), two_bumps_2d()])
def test_density_integrates_to_one(gm, vp):
    if gm.dim == 1:
        x = np.linspace(-12, 12, 4001)
        assert np.trapezoid(analytic.marginal_density(gm, vp, x[:, None], 0.4), x) == pytest.approx(1, abs=1e-4)
    else:
        g = np.linspace(-8, 8, 401)
        X, Y = np.meshgrid(g, g, indexing="ij")
        p = analytic.marginal_density(gm, vp, np.stack([X.ravel(), Y.ravel()], 1), 0.4).reshape(X.shape)
        assert np.trapezoid(np.trapezoid(p, g, axis=1), g) == pytest.approx(1, abs=1e-4)


def test_score_single_gaussian(fm):
    assert float(analytic.score(STD, fm, [1.0], 0.5)[0]) == pytest.approx(-2.0, rel=1e-12)


def test_score_zero_at_symmetric_mean(fm):
    np.testing.assert_allclose(analytic.score(SYM, fm, [0.0, 0.0], 0.3), 0.0, atol=1e-15)


@pytest.mark.parametrize("name", SCHEDULES)
@pytest.mark.parametrize("gm", [two_bumps_1d(), two_bumps_2d(), SYM])
def test_score_matches_log_density_differences(name, gm):
    ns = schedule.BUILTIN[name]()
    rng = np.random.default_rng(1)
    t = 0.35
    law = analytic.marginal_law(gm, ns, t)
    x = law.sample(100, rng)
    h = 1e-5
    fd = np.stack([(law.log_density(x + h * e) - law.log_density(x - h * e)) / (2 * h)
                   for e in np.eye(gm.dim)], axis=1)
    s = analytic.score(gm, ns, x, t)
    assert np.max(np.abs(s - fd)) / np.max(np.abs(fd)) < 1e-4


def test_posterior_weights_examples(fm):
    assert analytic.posterior_weights(STD, fm, [0.3], 0.4) == pytest.approx([1.0])
    np.testing.assert_allclose(analytic.posterior_weights(SYM, fm, [0.0, 1.3], 0.4), [0.5, 0.5], atol=1e-15)
    gm = GaussianMixture(np.array([0.5, 0.5]), np.array([[-1.0], [1.0]]), np.array([0.01, 0.01]))
    assert analytic.posterior_weights(gm, fm, [0.9], 1e-3)[1] > 0.999


@given(st.floats(-6, 6), st.floats(-6, 6), st.floats(0.01, 0.99))
def test_posterior_weights_sum_to_one(a, b, t):
    w = analytic.posterior_weights(two_bumps_2d(), schedule.flow_matching(), [a, b], t)
    assert abs(w.sum() - 1.0) < 1e-9 and np.all(w >= 0)


def test_underflow_is_reported():
    gm = GaussianMixture(np.ones(1), np.zeros((1, 1)), np.array([1e-4]))
    with pytest.raises(EvaluationError, match="probe"):
        analytic.posterior_weights(gm, schedule.identity(), [500.0], 0.0)


def test_velocity_single_gaussian_midpoint(fm):
    assert float(analytic.marginal_velocity(STD, fm, [1.0], 0.5)[0]) == pytest.approx(0.0, abs=1e-14)


def test_velocity_point_mass_at_origin(fm):
    gm = GaussianMixture(np.ones(1), np.zeros((1, 1)), np.array([1e-6]))
    assert float(analytic.marginal_velocity(gm, fm, [0.0], 0.0)[0]) == pytest.approx(0.0, abs=1e-12)


def test_velocity_symmetry_plane(fm):
    u = analytic.marginal_velocity(SYM, fm, [0.0, 0.7], 0.4)
    assert u[0] == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("name", SCHEDULES)
@pytest.mark.parametrize("gm", [STD, two_bumps_1d(), two_bumps_2d(), SYM])
def test_velocity_score_identity(name, gm):
    ns = schedule.BUILTIN[name]()
    rng = np.random.default_rng(2)
    for t in (0.1, 0.5, 0.9):
        x = analytic.marginal_law(gm, ns, t).sample(50, rng)
        u = analytic.marginal_velocity(gm, ns, x, t)
        v = analytic.velocity_from_score(ns, x, analytic.score(gm, ns, x, t), t)
        assert np.max(np.abs(u - v)) <= 1e-8 * max(1.0, np.max(np.abs(u)))


def test_velocity_is_posterior_mean_of_conditionals(fm):
    gm = two_bumps_2d()
    x = np.random.default_rng(3).normal(size=(20, 2))
    w = analytic.posterior_weights(gm, fm, x, 0.3)
    cond = np.stack([analytic.conditional_velocity(gm, fm, x, 0.3, k) for k in range(2)], axis=1)
    np.testing.assert_allclose(analytic.marginal_velocity(gm, fm, x, 0.3),
                               np.einsum("nk,nkd->nd", w, cond), rtol=1e-12)


def test_gaussian_path_reversal(fm):
    gm = two_bumps_1d()
    fwd, rev = GaussianPath(gm, fm), GaussianPath(gm, fm).reversed()
    x = np.array([[0.2], [1.1]])
    np.testing.assert_array_equal(rev.velocity(x, 0.3), -fwd.velocity(x, 0.7))
    np.testing.assert_array_equal(rev.law(0.3).variances, fwd.law(0.7).variances)


def test_mixture_moments_and_sampling():
    gm = two_bumps_2d()
    pts = gm.sample(200_000, np.random.default_rng(4))
    np.testing.assert_allclose(pts.mean(0), gm.mean(), atol=0.01)
    np.testing.assert_allclose(np.cov(pts.T), gm.covariance(), atol=0.02)


class TestValidation:
    def test_bad_weights(self):
        with pytest.raises(ValidationError):
            GaussianMixture(np.array([0.5, 0.6]), np.zeros((2, 1)), np.ones(2))

    def test_bad_variance(self):
        with pytest.raises(ValidationError):
            GaussianMixture(np.ones(1), np.zeros((1, 1)), np.zeros(1))

    def test_config_round_trip(self):
        gm = two_bumps_2d()
        back = GaussianMixture.from_config(gm.to_config())
        np.testing.assert_array_equal(back.means, gm.means)

    @pytest.mark.parametrize("comps", [[], [{"weight": 1, "mean": [0]}],
                                       [{"weight": 1, "mean": [0], "variance": 1, "x": 2}],
                                       [{"weight": 0.5, "mean": [0], "variance": 1},
                                        {"weight": 0.5, "mean": [0, 1], "variance": 1}]])
    def test_config_errors(self, comps):
        with pytest.raises(ConfigError):
            GaussianMixture.from_config(comps)
