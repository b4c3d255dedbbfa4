"""Quantizer contracts and the factorized prior's distribution laws."""

import math

import numpy as np
import pytest

from decompress import tensor as T
from decompress.entropy import (PMF_FLOOR, FactorizedPrior, QuantizerMode,
                                quantize, rate_bits_per_pixel,
                                round_half_away_from_zero)
from decompress.errors import GraphError
from decompress.rng import Rng
from decompress.tensor import Tensor

from conftest import central_difference, relative_error


def logistic_prior(channels: int) -> FactorizedPrior:
    """Single-factor prior pinned to cdf(x) = sigmoid(x) per channel."""
    prior = FactorizedPrior(channels, widths=(), rng=Rng(0))
    prior.matrices[0].data[:] = math.log(math.e - 1.0)  # softplus -> 1
    prior.biases[0].data[:] = 0.0
    return prior


def logistic_pmf(v: float) -> float:
    """Closed-form unit-bin mass of the standard logistic."""
    def sigma(t):
        return 1.0 / (1.0 + math.exp(-t))
    return sigma(v + 0.5) - sigma(v - 0.5)


class TestQuantizer:
    def test_eval_rounds_ties_away_from_zero(self):
        vals = np.array([0.0, 0.4, 0.5, 0.6, -0.5, -1.5, 2.5, -2.4, 3.0])
        want = np.array([0.0, 0.0, 1.0, 1.0, -1.0, -2.0, 3.0, -2.0, 3.0])
        out = quantize(Tensor(vals), QuantizerMode.EVAL)
        np.testing.assert_array_equal(out.data, want)
        np.testing.assert_array_equal(round_half_away_from_zero(vals), want)

    def test_eval_fixes_integers(self):
        vals = np.arange(-5.0, 6.0)
        out = quantize(Tensor(vals), QuantizerMode.EVAL)
        np.testing.assert_array_equal(out.data, vals)

    def test_train_noise_stays_in_half_open_unit_band(self):
        c = Tensor(np.zeros(100_000))
        out = quantize(c, QuantizerMode.TRAIN, rng=Rng(1))
        noise = out.data
        assert noise.min() >= -0.5 and noise.max() < 0.5

    def test_train_noise_is_uniform(self):
        # chi-square over 20 bins, 1e6 draws, 0.999 quantile of
        # chi-square(19) is 43.8.
        out = quantize(Tensor(np.zeros(1_000_000)), QuantizerMode.TRAIN,
                       rng=Rng(2))
        counts, _ = np.histogram(out.data, bins=20, range=(-0.5, 0.5))
        expected = 1_000_000 / 20
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 < 43.8

    def test_train_passes_gradients_through(self):
        c = Tensor(np.ones(8), requires_grad=True)
        out = quantize(c, QuantizerMode.TRAIN, rng=Rng(3))
        T.reduce_sum(out).backward()
        np.testing.assert_array_equal(c.grad, np.ones(8))

    def test_train_requires_rng(self):
        with pytest.raises(ValueError):
            quantize(Tensor(np.zeros(4)), QuantizerMode.TRAIN)

    def test_eval_refuses_live_graphs(self):
        c = Tensor(np.zeros(4), requires_grad=True)
        with pytest.raises(GraphError):
            quantize(c, QuantizerMode.EVAL)
        with T.no_grad():
            out = quantize(c, QuantizerMode.EVAL)
        assert not out.requires_grad

    def test_same_seed_same_noise(self):
        c = Tensor(np.zeros(64))
        a = quantize(c, QuantizerMode.TRAIN, rng=Rng(9)).data
        b = quantize(c, QuantizerMode.TRAIN, rng=Rng(9)).data
        np.testing.assert_array_equal(a, b)


class TestFactorizedPrior:
    def test_logistic_configuration_cdf_midpoint(self):
        prior = logistic_prior(1)
        v = Tensor(np.zeros((1, 1, 1)))
        assert prior.cumulative(v).item() == 0.5

    def test_logistic_configuration_unit_bin_mass(self):
        prior = logistic_prior(1)
        got = prior.pmf(Tensor(np.zeros((1, 1, 1)))).item()
        np.testing.assert_allclose(got, logistic_pmf(0.0), rtol=0, atol=1e-12)
        np.testing.assert_allclose(got, 0.244919, rtol=0, atol=5e-7)

    def test_pmf_is_floored(self):
        prior = logistic_prior(1)
        far = prior.pmf(Tensor(np.full((1, 1, 1), 1e6))).item()
        assert far == PMF_FLOOR
        # A floored bin can never cost more than -log2(1e-9) bits.
        assert -math.log2(far) < 29.9

    def test_default_initialization_masses_cover_the_integer_range(self):
        prior = FactorizedPrior(16, rng=Rng(5))
        table = prior.pmf_table(-100, 100)
        assert table.shape == (16, 201)
        totals = table.sum(axis=1)
        assert np.all(totals >= 0.999) and np.all(totals <= 1.0 + 1e-12)

    def test_pmf_positive_everywhere(self, rng64):
        prior = FactorizedPrior(4, rng=Rng(6))
        # Randomize all parameters; monotonicity is structural, so the
        # masses stay nonnegative for any parameter values.
        for _, p in prior.parameters():
            p.data += rng64.normal(size=p.shape)
        table = prior.pmf_table(-50, 50)
        assert np.all(table >= PMF_FLOOR)

    def test_cumulative_is_monotone_on_a_fine_grid(self, rng64):
        prior = FactorizedPrior(3, rng=Rng(7))
        for _, p in prior.parameters():
            p.data += rng64.normal(size=p.shape) * 0.7
        grid = np.arange(-10.0, 10.0, 0.01)
        v = np.broadcast_to(grid, (3, 1, grid.size)).copy()
        with T.no_grad():
            cdf = prior.cumulative(Tensor(v)).data
        assert np.all(np.diff(cdf, axis=-1) >= 0.0)
        assert cdf.min() >= 0.0 and cdf.max() <= 1.0

    def test_factor_shapes_follow_width_schedule(self):
        prior = FactorizedPrior(5, widths=(3, 3, 3), rng=Rng(8))
        shapes = [tuple(m.shape) for m in prior.matrices]
        assert shapes == [(5, 3, 1), (5, 3, 3), (5, 3, 3), (5, 1, 3)]
        assert len(prior.mixers) == 3
        assert prior.factors == 4


class TestRate:
    def test_all_zero_latent_logistic_length(self):
        # 16 channels x 2 x 2 latent, every element costs
        # -log2(sigma(1/2) - sigma(-1/2)) bits, normalized by 256 pixels.
        prior = logistic_prior(16)
        latent = Tensor(np.zeros((1, 16, 2, 2)))
        rate = rate_bits_per_pixel(prior, latent, pixels_per_patch=256)
        per_element = -math.log2(logistic_pmf(0.0))
        np.testing.assert_allclose(per_element, 2.0296, rtol=0, atol=5e-5)
        np.testing.assert_allclose(rate.item(), 64.0 * per_element / 256.0,
                                   rtol=1e-12)
        np.testing.assert_allclose(rate.item(), 0.5074, rtol=0, atol=5e-5)

    def test_rate_is_invariant_under_batch_duplication(self):
        prior = FactorizedPrior(4, rng=Rng(10))
        vals = Rng(11).normal(2 * 4 * 2 * 2).reshape(2, 4, 2, 2) * 3.0
        single = rate_bits_per_pixel(prior, Tensor(vals), 256)
        doubled = rate_bits_per_pixel(
            prior, Tensor(np.concatenate([vals, vals], axis=0)), 256)
        np.testing.assert_allclose(doubled.item(), single.item(), rtol=1e-12)

    def test_rate_is_nonnegative_and_capped_by_the_floor(self):
        prior = logistic_prior(2)
        wild = Tensor(np.full((1, 2, 2, 2), 1e7))
        rate = rate_bits_per_pixel(prior, wild, pixels_per_patch=4)
        per_element = rate.item() * 4 / 8
        np.testing.assert_allclose(per_element, -math.log2(PMF_FLOOR), rtol=1e-9)
        assert per_element < 29.9

    def test_monte_carlo_code_length_matches_entropy(self):
        # Draw 1e5 integers from the discretized logistic and check the
        # empirical mean of -log2 pmf against the exact entropy of the
        # (truncated) distribution; the tail mass beyond +-30 is ~1e-13.
        support = np.arange(-30, 31)
        probs = np.array([logistic_pmf(float(v)) for v in support])
        entropy = float(-(probs * np.log2(probs)).sum())
        cum = np.cumsum(probs) / probs.sum()
        draws = Rng(12).uniform(100_000)
        samples = support[np.searchsorted(cum, draws)]
        prior = logistic_prior(1)
        with T.no_grad():
            pm = prior.pmf(Tensor(samples.astype(np.float64).reshape(1, 1, -1)))
            mean_bits = float(-np.log2(pm.data).mean())
        assert abs(mean_bits - entropy) / entropy < 0.02

    def test_rate_gradients_match_finite_differences(self, rng64):
        prior = FactorizedPrior(2, rng=Rng(13))
        vals = rng64.normal(size=(2, 2, 1, 1)) * 2.0

        def rate_of(arr):
            return rate_bits_per_pixel(prior, Tensor(arr), 64)

        vt = Tensor(vals.copy(), requires_grad=True)
        rate = rate_bits_per_pixel(prior, vt, 64)
        for _, p in prior.parameters():
            p.zero_grad()
        rate.backward()

        numeric_v = central_difference(lambda: rate_of(vals).item(), vals)
        assert relative_error(numeric_v, vt.grad) < 1e-5
        for name, p in prior.parameters():
            numeric = central_difference(lambda: rate_of(vals).item(), p.data)
            assert relative_error(numeric, p.grad) < 1e-5, name
