"""Mask engine: Gumbel statistics, marginals, equivalence, thresholding."""

import math

import numpy as np
import pytest

from gumbelmask.autodiff import Tensor, backward, mul
from gumbelmask.errors import ConfigError, ContractError
from gumbelmask.masks import (
    MaskParameters,
    keep_probability,
    pruning_rate,
    sample_gumbel,
    seed_stream,
    stgs_sample,
    stgs_sample_sigmoid_param,
    threshold_mask,
)
from gumbelmask.verification import monte_carlo_keep_rate


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestGumbelNoise:
    def test_moments_match_standard_gumbel(self):
        g = sample_gumbel((1_000_000,), np.random.default_rng(0)).astype(np.float64)
        assert abs(g.mean() - 0.5772156649) < 0.01
        assert abs(g.var() - math.pi ** 2 / 6.0) < 0.02

    def test_fixed_seed_is_bit_identical(self):
        a = sample_gumbel((1000,), np.random.default_rng(42))
        b = sample_gumbel((1000,), np.random.default_rng(42))
        assert a.tobytes() == b.tobytes()

    def test_values_always_finite(self):
        g = sample_gumbel((100_000,), np.random.default_rng(1))
        assert np.all(np.isfinite(g))

    def test_seed_stream_is_stable_per_label(self):
        a = seed_stream(7, "gumbel-layer-0").random(4)
        b = seed_stream(7, "gumbel-layer-0").random(4)
        c = seed_stream(7, "gumbel-layer-1").random(4)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)


class TestSampling:
    def test_saturated_latent_always_keeps(self):
        freq = monte_carlo_keep_rate(20.0, 10_000, np.random.default_rng(0))
        assert freq == 1.0

    @pytest.mark.parametrize("m_hat", [-3.0, -1.0, 0.0, 1.0, 1.5, 3.0])
    def test_keep_marginal_is_sigmoid(self, m_hat):
        freq = monte_carlo_keep_rate(m_hat, 100_000, np.random.default_rng(3))
        assert abs(freq - sigmoid(m_hat)) < 0.01

    def test_temperature_must_be_positive(self):
        m = MaskParameters.constant((4,))
        with pytest.raises(ConfigError):
            stgs_sample(m, 0.0, np.random.default_rng(0))

    def test_hard_mask_matches_noise_comparison(self):
        m = MaskParameters(np.random.default_rng(5).normal(size=256).astype(np.float32))
        topo = stgs_sample(m, 1.0, np.random.default_rng(6))
        g_keep, g_drop = topo.noise[0]
        expect = (m.m_hat.data + g_keep - g_drop >= 0).astype(np.float32)
        np.testing.assert_array_equal(topo.hard_masks[0].data, expect)
        assert set(np.unique(topo.hard_masks[0].data)) <= {0.0, 1.0}
        assert np.all((topo.soft_surrogates[0].data > 0) & (topo.soft_surrogates[0].data < 1))

    def test_replay_reproduces_masks(self):
        m = MaskParameters.constant((64,), 0.3)
        topo = stgs_sample(m, 1.0, np.random.default_rng(9))
        again = stgs_sample(m, 1.0, noise=topo.noise)
        np.testing.assert_array_equal(topo.hard_masks[0].data, again.hard_masks[0].data)

    def test_straight_through_gradient_value(self):
        # dL/dm_hat = downstream * soft * (1 - soft) / temperature
        m = MaskParameters(np.random.default_rng(11).normal(size=32).astype(np.float32))
        tau = 0.5
        topo = stgs_sample(m, tau, np.random.default_rng(12))
        down = np.random.default_rng(13).normal(size=32).astype(np.float32)
        backward(mul(topo.hard_masks[0], Tensor(down)).sum())
        soft = topo.soft_surrogates[0].data
        np.testing.assert_allclose(m.m_hat.grad, down * soft * (1 - soft) / tau, rtol=1e-5)

    def test_gradient_alive_over_wide_latent_range(self):
        m = MaskParameters(np.linspace(-10, 10, 64).astype(np.float32))
        topo = stgs_sample(m, 1.0, np.random.default_rng(17))
        backward(mul(topo.hard_masks[0], Tensor(np.ones(64, np.float32))).sum())
        assert np.all(m.m_hat.grad != 0.0)


class TestShiftInvariance:
    @pytest.mark.parametrize("shift", [-100.0, 0.37, 1e3])
    def test_both_samplers_ignore_a_common_logit_shift(self, shift):
        rng = np.random.default_rng(23)
        m = MaskParameters(rng.normal(size=256).astype(np.float32))
        state = rng.bit_generator.state
        base = stgs_sample(m, 1.0, rng)
        rng.bit_generator.state = state
        shifted = stgs_sample(m, 1.0, rng, logit_shift=shift)
        assert base.hard_masks[0].data.tobytes() == shifted.hard_masks[0].data.tobytes()
        assert (
            base.soft_surrogates[0].data.tobytes()
            == shifted.soft_surrogates[0].data.tobytes()
        )


class TestParametrizationEquivalence:
    def _paired_topologies(self, temperature=1.0, size=512, span=5.0):
        rng = np.random.default_rng(29)
        m_vals = rng.uniform(-span, span, size=size).astype(np.float32)
        state = rng.bit_generator.state
        a = MaskParameters(m_vals.copy())
        topo_a = stgs_sample(a, temperature, rng)
        rng.bit_generator.state = state
        b = MaskParameters(m_vals.copy())
        topo_b = stgs_sample_sigmoid_param(b, temperature, rng)
        return a, topo_a, b, topo_b

    def test_hard_masks_identical(self):
        _, topo_a, _, topo_b = self._paired_topologies()
        np.testing.assert_array_equal(topo_a.hard_masks[0].data, topo_b.hard_masks[0].data)

    def test_soft_surrogates_match(self):
        _, topo_a, _, topo_b = self._paired_topologies()
        np.testing.assert_allclose(
            topo_a.soft_surrogates[0].data, topo_b.soft_surrogates[0].data, atol=1e-5
        )

    def test_latent_gradients_match(self):
        a, topo_a, b, topo_b = self._paired_topologies()
        down = Tensor(np.random.default_rng(31).normal(size=512).astype(np.float32))
        backward(mul(topo_a.hard_masks[0], down).sum())
        backward(mul(topo_b.hard_masks[0], down).sum())
        np.testing.assert_allclose(a.m_hat.grad, b.m_hat.grad, atol=1e-5)


class TestThresholdAndRates:
    def test_threshold_drops_exact_half_probability(self):
        m = MaskParameters(np.array([-1.0, 0.0, 2.0], dtype=np.float32))
        np.testing.assert_array_equal(threshold_mask(m).data, [0.0, 0.0, 1.0])

    def test_threshold_idempotent_and_rng_free(self):
        m = MaskParameters(np.random.default_rng(37).normal(size=100).astype(np.float32))
        a = threshold_mask(m).data
        b = threshold_mask(m).data
        np.testing.assert_array_equal(a, b)
        assert not threshold_mask(m).requires_grad

    def test_keep_probability_values(self):
        m = MaskParameters(np.array([0.0, 1e4], dtype=np.float32))
        p = keep_probability(m)
        assert p[0] == 0.5
        assert abs(p[1] - 1.0) < 1e-6

    def test_empirical_rate_converges_to_keep_probability(self):
        freq = monte_carlo_keep_rate(0.8, 100_000, np.random.default_rng(41))
        assert abs(freq - sigmoid(0.8)) < 0.01

    def test_pruning_rate_counts_zeros(self):
        m = MaskParameters(np.array([-1.0, -2.0, 0.0, 3.0], dtype=np.float32))
        mask = threshold_mask(m)
        assert pruning_rate(mask) == 0.75  # fraction with m_hat <= 0

    def test_pruning_rate_rejects_non_binary(self):
        with pytest.raises(ContractError):
            pruning_rate(np.array([0.0, 0.5, 1.0]))
