import logging

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gmlab.discrete import (DiscreteDistribution, MixturePath, RateMatrix, TimeRates, apply_jump_generator,
                            clamp_horizon, conditional_rates, ctmc_simulate, histogram, marginal_rates,
                            master_equation_solve, mixed_path_probs, multinomial_band, total_variation)
from gmlab.errors import ConfigError, SingularityError, ValidationError


def two_state(a=1.0, b=2.0):
    return RateMatrix([[-a, a], [b, -b]])


class TestTypes:
    @pytest.mark.parametrize("q", [[[0, 1], [1, 0]], [[1, -1], [0, 0]], [[-1, 1, 0]]])
    def test_rate_matrix_rejects(self, q):
        with pytest.raises(ValidationError):
            RateMatrix(q)

    def test_from_offdiagonal_ignores_diagonal(self):
        q = RateMatrix.from_offdiagonal([[9, 1], [2, 9]])
        np.testing.assert_array_equal(q.rates, two_state().rates)

    def test_distribution_rejects(self):
        with pytest.raises(ValidationError):
            DiscreteDistribution([0.5, 0.6])

    def test_total_variation(self):
        assert total_variation([1, 0], [0, 1]) == 1.0
        assert total_variation([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_apply_jump_generator(self):
        f = np.array([0.0, 1.0])
        assert apply_jump_generator(two_state(), f, 0) == 1.0
        assert apply_jump_generator(two_state(), f, 1) == -2.0


class TestMixturePath:
    def test_endpoints(self):
        path = MixturePath.build(4, 2)
        np.testing.assert_allclose(path.probs(0.0), 0.25)
        np.testing.assert_allclose(path.probs(1.0), [0, 0, 1, 0])

    def test_singular_rate(self):
        with pytest.raises(SingularityError):
            MixturePath.build(3, 0).jump_rate(1.0)

    def test_bad_target_and_kappa(self):
        with pytest.raises(ValidationError):
            MixturePath.build(3, 3)
        with pytest.raises(ConfigError):
            MixturePath.build(3, 0, kappa="cubic")

    @given(st.integers(2, 8), st.data(), st.floats(0.0, 0.99), st.sampled_from(["linear", "cosine"]))
    def test_conditional_rates_satisfy_kfe(self, n, data, t, kappa):
        z = data.draw(st.integers(0, n - 1))
        p0 = np.asarray(data.draw(st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n)))
        path = MixturePath.build(n, z, kappa, p0 / p0.sum())
        q = conditional_rates(path, t).rates
        np.testing.assert_allclose(q.T @ path.probs(t), path.probs_dot(t), atol=1e-8)

    @given(st.floats(0.01, 0.95), st.floats(0.05, 0.95))
    def test_marginal_rates_satisfy_kfe(self, t, w):
        paths = [MixturePath.build(5, 1, "cosine"), MixturePath.build(5, 3, "cosine")]
        weights = [w, 1 - w]
        q = marginal_rates(paths, weights)(t).rates
        dp = sum(wi * p.probs_dot(t) for wi, p in zip(weights, paths))
        np.testing.assert_allclose(q.T @ mixed_path_probs(paths, weights, t), dp, atol=1e-8)

    def test_vectorised_rows_match_matrix(self):
        paths = [MixturePath.build(4, 0), MixturePath.build(4, 2)]
        for rates in (TimeRates.mixture(paths[0]), marginal_rates(paths, [0.3, 0.7]),
                      TimeRates.superposed([(0.5, TimeRates.mixture(p)) for p in paths])):
            ts, xs = np.array([0.1, 0.5, 0.9, 0.5]), np.array([0, 1, 2, 3])
            expect = np.stack([rates(t).rates[x] for t, x in zip(ts, xs)])
            np.testing.assert_allclose(rates.rows(ts, xs), expect, atol=1e-12)


class TestMaster:
    def test_two_state_equilibrium(self):
        sol = master_equation_solve(two_state(), DiscreteDistribution([1.0, 0.0]), 0.0, 30.0)
        assert sol.method == "expm"
        np.testing.assert_allclose(sol.dist.probs, [2 / 3, 1 / 3], atol=1e-12)

    def test_two_state_closed_form(self):
        t = 0.7
        sol = master_equation_solve(two_state(), DiscreteDistribution([1.0, 0.0]), 0.0, t)
        p1 = (1 / 3) * (1 - np.exp(-3 * t))
        np.testing.assert_allclose(sol.dist.probs, [1 - p1, p1], atol=1e-12)

    @pytest.mark.parametrize("kappa", ["linear", "cosine"])
    def test_tracks_mixture_path(self, kappa):
        path = MixturePath.build(6, 4, kappa)
        sol = master_equation_solve(TimeRates.mixture(path), path.p0, 0.0, 0.99)
        assert total_variation(sol.dist.probs, path.probs(0.99)) < 1e-3
        assert sol.renormalization_drift < 1e-9

    def test_unstable_step_count(self):
        path = MixturePath.build(3, 0)
        with pytest.raises(ConfigError, match="n_steps"):
            master_equation_solve(TimeRates.mixture(path), path.p0, 0.0, 0.99, n_steps=5)

    def test_superposition_needs_posterior_weights(self):
        paths = [MixturePath.build(4, 0, "linear"), MixturePath.build(4, 3, "cosine")]
        w = [0.25, 0.75]
        target = mixed_path_probs(paths, w, 0.9)
        good = master_equation_solve(marginal_rates(paths, w), paths[0].p0, 0.0, 0.9)
        assert total_variation(good.dist.probs, target) < 1e-3
        naive = TimeRates.superposed([(wi, TimeRates.mixture(p)) for wi, p in zip(w, paths)])
        bad = master_equation_solve(naive, paths[0].p0, 0.0, 0.9)
        assert total_variation(bad.dist.probs, target) > 1e-2

    def test_fixed_weights_exact_for_shared_schedule(self):
        paths = [MixturePath.build(4, 0), MixturePath.build(4, 3)]
        w = [0.25, 0.75]
        naive = TimeRates.superposed([(wi, TimeRates.mixture(p)) for wi, p in zip(w, paths)])
        sol = master_equation_solve(naive, paths[0].p0, 0.0, 0.9)
        assert total_variation(sol.dist.probs, mixed_path_probs(paths, w, 0.9)) < 1e-3


class TestSimulation:
    def test_two_state_histogram_in_band(self):
        n = 20000
        states = ctmc_simulate(two_state(), 0, 0.0, 0.7, seed=1, n_runs=n)
        p1 = (1 / 3) * (1 - np.exp(-2.1))
        expect = np.array([1 - p1, p1])
        assert np.all(np.abs(histogram(states, 2) - expect) <= multinomial_band(expect, n, k=4))

    @pytest.mark.parametrize("scheme", ["exact_clock", "euler_h"])
    def test_mixture_path_terminal_law(self, scheme):
        path = MixturePath.build(4, 2)
        n = 20000
        states = ctmc_simulate(TimeRates.mixture(path), path.p0, 0.0, 0.9, seed=3, scheme=scheme,
                               n_runs=n, h=1e-3)
        expect = path.probs(0.9)
        assert np.all(np.abs(histogram(states, 4) - expect) <= multinomial_band(expect, n, k=4))

    def test_zero_rates_never_move(self):
        states = ctmc_simulate(RateMatrix.zeros(3), 1, 0.0, 1.0, seed=0, n_runs=100)
        assert np.all(states == 1)

    def test_thread_invariance(self):
        path = MixturePath.build(5, 1)
        args = (TimeRates.mixture(path), path.p0, 0.0, 0.9, 7)
        a = ctmc_simulate(*args, n_runs=3000, threads=1)
        b = ctmc_simulate(*args, n_runs=3000, threads=4)
        assert a.tobytes() == b.tobytes()

    def test_horizon_past_singularity(self):
        with pytest.raises(ConfigError):
            ctmc_simulate(TimeRates.mixture(MixturePath.build(3, 0)), 0, 0.0, 1.0, seed=0)

    def test_euler_step_too_large(self):
        with pytest.raises(ConfigError, match="euler_h"):
            ctmc_simulate(two_state(50, 50), 0, 0.0, 1.0, seed=0, scheme="euler_h", h=0.1)

    def test_unknown_scheme(self):
        with pytest.raises(ConfigError):
            ctmc_simulate(two_state(), 0, 0.0, 1.0, seed=0, scheme="tau_leap")


def test_clamp_horizon_warns(caplog):
    with caplog.at_level(logging.WARNING, logger="gmlab.discrete"):
        assert clamp_horizon(1.0) == pytest.approx(0.999)
    assert "clamped" in caplog.text
    assert clamp_horizon(0.5) == 0.5
