from __future__ import annotations

import math

import numpy as np
import pytest

import noisesearch as ns


def _schedule(steps=64):
    return ns.VpSchedule(beta_min=0.1, beta_max=20.0, steps=steps, t_min=1e-3)


class TestMixtureConstruction:
    def test_from_components_scalar_diag_matrix_cov(self):
        mix = ns.GaussianMixture.from_components([
            (0.5, [0.0, 0.0], 0.25),
            (0.25, [1.0, 1.0], [0.2, 0.3]),
            (0.25, [-1.0, 2.0], [[0.3, 0.1], [0.1, 0.3]]),
        ])
        assert mix.n_components == 3 and mix.dim == 2
        assert np.allclose(mix.covs[0], 0.25 * np.eye(2))
        assert np.allclose(mix.covs[1], np.diag([0.2, 0.3]))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ns.InvalidParameterError):
            ns.GaussianMixture.from_components([(0.6, [0.0], 1.0), (0.6, [1.0], 1.0)])

    def test_weights_must_be_positive(self):
        with pytest.raises(ns.InvalidParameterError):
            ns.GaussianMixture.from_components([(1.2, [0.0], 1.0), (-0.2, [1.0], 1.0)])

    def test_covariance_must_be_symmetric(self):
        with pytest.raises(ns.InvalidParameterError):
            ns.GaussianMixture.from_components([(1.0, [0.0, 0.0], [[1.0, 0.2], [0.0, 1.0]])])

    def test_covariance_must_be_positive_definite(self):
        with pytest.raises(ns.InvalidParameterError):
            ns.GaussianMixture.from_components([(1.0, [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])])

    def test_default_mixture_shape(self, mixture):
        assert mixture.n_components == 4 and mixture.dim == 2
        assert np.allclose(np.abs(mixture.means), 3.0)

    def test_component_sampler_deterministic(self, mixture):
        a = mixture.component_sampler(0, 42)
        b = mixture.component_sampler(0, 42)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, mixture.component_sampler(1, 42))

    def test_component_sampler_moments(self, mixture):
        draws = np.stack([mixture.component_sampler(2, ns.derive_seed(5, i))
                          for i in range(20000)])
        assert np.allclose(draws.mean(axis=0), mixture.means[2], atol=0.05)
        assert np.allclose(np.cov(draws.T), mixture.covs[2], atol=0.05)


class TestScheduleValidation:
    def test_alpha_bar_endpoints(self):
        sched = _schedule()
        assert sched.alpha_bar(0.0) == 1.0
        assert sched.alpha_bar(1.0) == pytest.approx(math.exp(-(0.1 + 0.5 * 19.9)), rel=1e-12)

    def test_invalid_parameters(self):
        with pytest.raises(ns.InvalidParameterError):
            ns.VpSchedule(beta_min=0.0, beta_max=20.0)
        with pytest.raises(ns.InvalidParameterError):
            ns.VpSchedule(beta_min=1.0, beta_max=0.5)
        with pytest.raises(ns.InvalidParameterError):
            ns.VpSchedule(steps=0)
        with pytest.raises(ns.InvalidParameterError):
            ns.VpSchedule(t_min=0.0)


class TestScore:
    def test_standard_normal_score_is_negative_x(self):
        mix = ns.GaussianMixture.from_components([(1.0, [0.0, 0.0, 0.0], 1.0)])
        sched = _schedule()
        for seed, t in ((0, 0.0), (1, 0.33), (2, 1.0)):
            x = np.random.default_rng(seed).standard_normal(3) * 2
            assert np.allclose(ns.score(mix, x, t, sched), -x, atol=1e-12)

    def test_shifted_component_score(self):
        mu = np.array([1.5, -0.5])
        mix = ns.GaussianMixture.from_components([(1.0, mu, 1.0)])
        sched = _schedule()
        t = 0.4
        x = np.array([0.3, 0.9])
        expected = math.sqrt(sched.alpha_bar(t)) * mu - x
        assert np.allclose(ns.score(mix, x, t, sched), expected, atol=1e-12)

    def test_matches_finite_difference_of_log_density(self, mixture):
        sched = _schedule()
        rng = np.random.default_rng(31)
        h = 1e-6
        for _ in range(100):
            x = rng.uniform(-6.0, 6.0, 2)
            t = rng.uniform(1e-3, 1.0)
            got = ns.score(mixture, x, t, sched)
            fd = np.empty(2)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd[i] = (ns.log_density(mixture, x + e, t, sched)
                         - ns.log_density(mixture, x - e, t, sched)) / (2 * h)
            assert np.all(np.abs(got - fd) <= 1e-5 * np.maximum(1.0, np.abs(fd)))

    def test_input_validation(self, mixture):
        sched = _schedule()
        with pytest.raises(ns.InvalidDimensionError):
            ns.score(mixture, np.zeros(3), 0.5, sched)
        with pytest.raises(ns.InvalidParameterError):
            ns.score(mixture, np.array([0.0, np.inf]), 0.5, sched)
        with pytest.raises(ns.InvalidParameterError):
            ns.score(mixture, np.zeros(2), 1.5, sched)


class TestDenoise:
    def test_charges_exactly_steps(self, mixture):
        led = ns.NfeLedger(64)
        ns.denoise(mixture, ns.sample_prior(0, 2), _schedule(64), led)
        assert led.spent == 64
        assert led.per_call == (("denoise", 64),)

    def test_batch_charges_per_latent(self, mixture):
        led = ns.NfeLedger(3 * 16)
        ns.denoise_batch(mixture, ns.prior_batch([0, 1, 2], 2), _schedule(16), led)
        assert led.spent == 48
        assert led.per_call == (("denoise", 16),) * 3

    def test_budget_refusal_leaves_ledger_untouched(self, mixture):
        led = ns.NfeLedger(100)
        latents = ns.prior_batch([0, 1], 2)
        with pytest.raises(ns.BudgetExhaustedError):
            ns.denoise_batch(mixture, latents, _schedule(64), led)
        assert led.spent == 0 and led.per_call == ()

    def test_deterministic_and_batch_consistent(self, mixture):
        sched = _schedule(32)
        latents = ns.prior_batch(range(5), 2)
        batch = ns.denoise_batch(mixture, latents, sched, ns.NfeLedger(5 * 32))
        for lat, out in zip(latents, batch):
            single = ns.denoise(mixture, lat, sched, ns.NfeLedger(32))
            assert np.array_equal(single.values, out.values)

    def test_dimension_mismatch(self, mixture):
        with pytest.raises(ns.InvalidDimensionError):
            ns.denoise(mixture, ns.sample_prior(0, 3), _schedule(8), ns.NfeLedger(8))

    def test_empty_batch(self, mixture):
        led = ns.NfeLedger(0)
        assert ns.denoise_batch(mixture, [], _schedule(8), led) == []
        assert led.spent == 0

    def test_sampler_adapter_matches_module_functions(self, mixture, sampler):
        lat = ns.sample_prior(9, 2)
        a = sampler.denoise(lat, 16, ns.NfeLedger(16))
        b = ns.denoise(mixture, lat, _schedule(16), ns.NfeLedger(16))
        assert np.array_equal(a.values, b.values)
        assert a.producer == "toy-gmm"


class TestSampledDistribution:
    def test_two_mode_balance(self):
        # symmetric two-mode problem: denoised mass splits about evenly
        mix = ns.GaussianMixture.from_components([
            (0.5, [3.0, 0.0], 0.25),
            (0.5, [-3.0, 0.0], 0.25),
        ])
        n = 10000
        latents = ns.prior_batch(range(n), 2)
        sched = _schedule(64)
        samples = ns.denoise_batch(mix, latents, sched, ns.NfeLedger(n * 64))
        xs = np.stack([s.values for s in samples])
        frac_right = float(np.mean(xs[:, 0] > 0))
        assert abs(frac_right - 0.5) < 0.03

    def test_four_mode_marginals(self, mixture):
        n = 2000
        latents = ns.prior_batch(range(n), 2)
        samples = ns.denoise_batch(mixture, latents, _schedule(64), ns.NfeLedger(n * 64))
        xs = np.stack([s.values for s in samples])
        dists = np.linalg.norm(xs[:, None, :] - mixture.means[None, :, :], axis=2)
        assign = np.argmin(dists, axis=1)
        for k in range(4):
            cluster = xs[assign == k]
            share = len(cluster) / n
            assert 0.15 < share < 0.35
            assert np.allclose(cluster.mean(axis=0), mixture.means[k], atol=0.15)


class TestLogDensity:
    def test_matches_scipy_at_diffused_parameters(self, mixture):
        scipy_stats = pytest.importorskip("scipy.stats")
        sched = _schedule()
        rng = np.random.default_rng(13)
        for _ in range(25):
            x = rng.uniform(-5.0, 5.0, 2)
            t = rng.uniform(0.0, 1.0)
            ab = sched.alpha_bar(t)
            parts = [
                math.log(mixture.weights[k]) + scipy_stats.multivariate_normal.logpdf(
                    x, mean=math.sqrt(ab) * mixture.means[k],
                    cov=ab * mixture.covs[k] + (1 - ab) * np.eye(2))
                for k in range(mixture.n_components)
            ]
            amax = max(parts)
            expected = amax + math.log(sum(math.exp(p - amax) for p in parts))
            assert ns.log_density(mixture, x, t, sched) == pytest.approx(expected, rel=1e-10)
