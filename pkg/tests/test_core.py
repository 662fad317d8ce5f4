from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import noisesearch as ns
from noisesearch.core import MASK64


class TestSeedDerivation:
    def test_deterministic(self):
        assert ns.derive_seed(1, 2, 3) == ns.derive_seed(1, 2, 3)

    def test_order_sensitive(self):
        assert ns.derive_seed(1, 2, 3) != ns.derive_seed(1, 3, 2)

    def test_chained_definition(self):
        assert ns.derive_seed(1, 2) == ns.splitmix64(ns.splitmix64(1) ^ 2)
        assert ns.derive_seed(1) == ns.splitmix64(1)

    def test_range(self):
        for base in (0, 1, 2**63, MASK64):
            s = ns.derive_seed(base, 5, 7)
            assert 0 <= s <= MASK64

    def test_no_collisions_small_grid(self):
        seen = set()
        for a in range(40):
            for b in range(40):
                seen.add(ns.derive_seed(9, a, b))
        assert len(seen) == 1600

    @given(st.integers(min_value=0, max_value=MASK64))
    def test_splitmix_bijective_range(self, x):
        y = ns.splitmix64(x)
        assert 0 <= y <= MASK64


class TestPrior:
    def test_same_seed_same_draw(self):
        a = ns.sample_prior(7, 8)
        b = ns.sample_prior(7, 8)
        assert np.array_equal(a.values, b.values)
        assert a.seed == b.seed == 7

    def test_different_seeds_differ(self):
        a = ns.sample_prior(7, 8)
        b = ns.sample_prior(8, 8)
        assert not np.array_equal(a.values, b.values)

    def test_origin_and_dim(self):
        lat = ns.sample_prior(3, 5)
        assert isinstance(lat.origin, ns.PriorOrigin)
        assert lat.dim == 5

    def test_invalid_dim(self):
        with pytest.raises(ns.InvalidDimensionError):
            ns.sample_prior(0, 0)

    def test_moments(self):
        # cross-seed independence: pooled draws look standard normal
        n_seeds, d = 20000, 16
        draws = np.stack([ns.sample_prior(s, d).values for s in range(n_seeds)])
        flat = draws.ravel()
        assert abs(flat.mean()) < 0.02
        assert abs(flat.var() - 1.0) < 0.05

    def test_prior_batch_matches_singles(self):
        batch = ns.prior_batch([4, 5, 6], 3)
        for seed, lat in zip([4, 5, 6], batch):
            assert np.array_equal(lat.values, ns.sample_prior(seed, 3).values)


class TestPerturb:
    def test_deterministic(self):
        pivot = ns.sample_prior(0, 6)
        a = ns.perturb(pivot, 0.25, 99)
        b = ns.perturb(pivot, 0.25, 99)
        assert np.array_equal(a.values, b.values)

    def test_distinct_stream_from_prior(self):
        # same 64-bit seed, different domain: draws must not coincide
        pivot = ns.Latent(values=np.zeros(8), seed=0, origin=ns.PriorOrigin())
        eps = ns.perturb(pivot, 0.5, 123).values / 0.5
        assert not np.allclose(eps, ns.sample_prior(123, 8).values)

    def test_origin_records_parent_and_lambda(self):
        pivot = ns.sample_prior(11, 4)
        nb = ns.perturb(pivot, 0.3, 77)
        assert isinstance(nb.origin, ns.NeighborhoodOrigin)
        assert nb.origin.parent_seed == 11
        assert nb.origin.lam == 0.3
        assert nb.seed == 77

    def test_small_lambda_limit(self):
        pivot = ns.sample_prior(2, 8)
        nb = ns.perturb(pivot, 1e-9, 5)
        assert np.max(np.abs(nb.values - pivot.values)) < 1e-6

    def test_noise_depends_only_on_seed(self):
        # recovering eps from two different step sizes gives the same noise
        pivot = ns.sample_prior(3, 4)
        recovered = []
        for lam in (0.6, 0.3):
            nb = ns.perturb(pivot, lam, 42)
            recovered.append((nb.values - math.sqrt(1.0 - lam * lam) * pivot.values) / lam)
        assert np.allclose(recovered[0], recovered[1], atol=1e-12)

    def test_variance_preserved_unconditionally(self):
        # pivot and noise both random: the perturbed marginal stays N(0, 1)
        lam, d, n = 0.6, 4, 20000
        vals = np.empty((n, d))
        for s in range(n):
            pivot = ns.sample_prior(ns.derive_seed(1, s), d)
            vals[s] = ns.perturb(pivot, lam, ns.derive_seed(2, s)).values
        flat = vals.ravel()
        assert abs(flat.mean()) < 0.02
        assert abs(flat.var() - 1.0) < 0.05

    @pytest.mark.parametrize("lam", [0.0, 1.0, -0.5, 1.5])
    def test_lambda_out_of_range(self, lam):
        pivot = ns.sample_prior(0, 2)
        with pytest.raises(ns.InvalidParameterError):
            ns.perturb(pivot, lam, 1)


class TestLatentAndSample:
    def test_latent_values_read_only(self):
        lat = ns.sample_prior(0, 3)
        with pytest.raises(ValueError):
            lat.values[0] = 1.0

    def test_latent_round_trip(self):
        lat = ns.perturb(ns.sample_prior(5, 4), 0.25, 9)
        back = ns.Latent.from_dict(lat.to_dict())
        assert np.array_equal(back.values, lat.values)
        assert back.seed == lat.seed
        assert back.origin == lat.origin

    def test_latent_rejects_matrix(self):
        with pytest.raises(ns.InvalidDimensionError):
            ns.Latent(values=np.zeros((2, 2)), seed=0, origin=ns.PriorOrigin())

    def test_vector_sample_rejects_non_finite(self):
        with pytest.raises(ns.InvalidParameterError):
            ns.Sample.vector(np.array([1.0, np.nan]), producer="t")

    def test_image_sample_range(self):
        ok = ns.Sample.image(np.full((4, 4), 0.5), producer="t")
        assert ok.is_image
        with pytest.raises(ns.InvalidParameterError):
            ns.Sample.image(np.full((4, 4), 1.5), producer="t")

    def test_sample_round_trip(self):
        vec = ns.Sample.vector(np.array([0.1, 1 / 3, -2.5]), producer="p")
        back = ns.Sample.from_dict(vec.to_dict())
        assert np.array_equal(back.values, vec.values)
        img = ns.Sample.image(np.linspace(0, 1, 12).reshape(3, 4), producer="p")
        back = ns.Sample.from_dict(img.to_dict())
        assert back.is_image and np.array_equal(back.values, img.values)

    def test_trace_requires_positive_cost(self):
        lat = ns.sample_prior(0, 2)
        smp = ns.Sample.vector(np.zeros(2), producer="t")
        with pytest.raises(ns.InvalidParameterError):
            ns.SampleTrace(latent=lat, sample=smp, scores={"combined": 0.0}, nfe_cost=0)


class TestLedger:
    def test_charge_and_remaining(self):
        led = ns.NfeLedger(10)
        led.charge("denoise", 4)
        assert led.spent == 4 and led.remaining() == 6
        led.charge("denoise", 6)
        assert led.spent == 10 and led.remaining() == 0

    def test_refusal_is_atomic(self):
        led = ns.NfeLedger(5)
        led.charge("denoise", 3)
        before = (led.spent, led.per_call)
        with pytest.raises(ns.BudgetExhaustedError):
            led.charge("denoise", 3)
        assert (led.spent, led.per_call) == before

    def test_note_is_free(self):
        led = ns.NfeLedger(0)
        led.note("verify")
        assert led.spent == 0
        assert led.per_call == (("verify", 0),)

    def test_invalid_budget_and_counts(self):
        with pytest.raises(ns.InvalidParameterError):
            ns.NfeLedger(-1)
        led = ns.NfeLedger(5)
        with pytest.raises(ns.InvalidParameterError):
            led.charge("x", 0)
        with pytest.raises(ns.InvalidParameterError):
            led.charge("x", -2)

    def test_to_dict(self):
        led = ns.NfeLedger(3)
        led.charge("denoise", 2)
        led.note("verify")
        assert led.to_dict() == {"budget": 3, "spent": 2,
                                 "per_call": [["denoise", 2], ["verify", 0]]}

    @given(st.lists(st.integers(min_value=1, max_value=20), max_size=30),
           st.integers(min_value=0, max_value=200))
    def test_spent_equals_sum_of_accepted(self, counts, budget):
        led = ns.NfeLedger(budget)
        accepted = []
        for c in counts:
            try:
                led.charge("op", c)
                accepted.append(c)
            except ns.BudgetExhaustedError:
                pass
        assert led.spent == sum(accepted) <= budget
        assert led.per_call == tuple(("op", c) for c in accepted)
