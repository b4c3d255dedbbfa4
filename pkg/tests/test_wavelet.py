"""Haar pyramid, BayesShrink thresholds, and the classical denoiser."""

import numpy as np
import pytest

from decompress.denoiser import NoiseSpec, add_awgn, psnr
from decompress.errors import GeometryError, ShapeError
from decompress.wavelet import (WaveletPyramid, bayes_shrink_denoise,
                                bayes_shrink_threshold, haar_forward,
                                haar_inverse, soft_threshold)


def phantom(n=128):
    """Piecewise-constant test scene: flat background, a bright square,
    and a dark disk, the kind of content wavelet shrinkage likes."""
    img = np.full((n, n), 96.0)
    img[n // 8:n // 2, n // 8:n // 2] = 200.0
    yy, xx = np.mgrid[:n, :n]
    img[(yy - 3 * n // 4) ** 2 + (xx - 5 * n // 8) ** 2 < (n // 6) ** 2] = 40.0
    return img


class TestHaarTransform:
    def test_two_by_two_ones_concentrates_into_ll(self):
        pyr = haar_forward(np.ones((2, 2)), levels=1)
        np.testing.assert_allclose(pyr.ll, [[2.0]], rtol=0, atol=1e-15)
        for band in pyr.details[0]:
            np.testing.assert_allclose(band, 0.0, rtol=0, atol=1e-15)

    def test_constant_image_scales_by_two_per_level(self):
        pyr = haar_forward(np.full((8, 8), 3.0), levels=3)
        np.testing.assert_allclose(pyr.ll, [[3.0 * 8]], rtol=1e-12)
        for triple in pyr.details:
            for band in triple:
                np.testing.assert_allclose(band, 0.0, atol=1e-12)

    def test_orthonormality_preserves_energy(self, rng64):
        # Parseval: an orthonormal transform keeps the sum of squares.
        img = rng64.normal(size=(32, 48))
        pyr = haar_forward(img, levels=3)
        coeff_energy = float(np.sum(pyr.ll ** 2)) + sum(
            float(np.sum(band ** 2))
            for triple in pyr.details for band in triple)
        np.testing.assert_allclose(coeff_energy, float(np.sum(img ** 2)),
                                   rtol=1e-9)

    def test_coefficient_count_equals_pixel_count(self, rng64):
        img = rng64.normal(size=(16, 40))
        assert haar_forward(img, levels=2).coefficient_count() == img.size

    def test_perfect_reconstruction(self, rng64):
        for shape, levels in (((8, 8), 3), ((32, 16), 2), ((64, 64), 3),
                              ((16, 48), 4)):
            img = rng64.normal(size=shape) * 100.0
            recon = haar_inverse(haar_forward(img, levels=levels))
            err = np.max(np.abs(recon - img)) / max(1.0, np.max(np.abs(img)))
            assert err <= 1e-9, (shape, levels, err)

    def test_levels_structure(self, rng64):
        pyr = haar_forward(rng64.normal(size=(32, 32)), levels=3)
        assert pyr.levels == 3 and len(pyr.details) == 3
        assert pyr.ll.shape == (4, 4)
        assert [t[0].shape for t in pyr.details] == [(16, 16), (8, 8), (4, 4)]

    def test_strict_transform_rejects_non_dyadic_extents(self):
        with pytest.raises(GeometryError):
            haar_forward(np.zeros((20, 24)), levels=3)
        with pytest.raises(ValueError):
            haar_forward(np.zeros((8, 8)), levels=0)
        with pytest.raises(ShapeError):
            haar_forward(np.zeros(64), levels=1)


class TestShrinkage:
    def test_soft_threshold_closed_form(self):
        got = soft_threshold(np.array([3.0, -3.0, 0.5, -0.2, 0.0]), 1.0)
        np.testing.assert_array_equal(got, [2.0, -2.0, 0.0, 0.0, 0.0])

    def test_soft_threshold_is_a_contraction(self, rng64):
        c = rng64.normal(size=200) * 10.0
        out = soft_threshold(c, 2.5)
        assert np.all(np.abs(out) <= np.abs(c))
        assert np.all(np.sign(out[out != 0.0]) == np.sign(c[out != 0.0]))

    def test_soft_threshold_rejects_negative_threshold(self):
        with pytest.raises(ValueError):
            soft_threshold(np.ones(3), -0.5)

    def test_bayes_shrink_closed_form(self):
        # E[c^2] = 25, sigma = 3: signal var 16, T = 9 / 4.
        band = np.full((4, 4), 5.0)
        np.testing.assert_allclose(bayes_shrink_threshold(band, 3.0), 2.25,
                                   rtol=1e-12)

    def test_bayes_shrink_wipes_bands_without_signal(self):
        # E[c^2] below sigma^2 means everything is noise: T = max |c|
        # removes the band entirely under soft thresholding.
        band = np.array([[0.5, -1.5], [0.25, 1.0]])
        assert bayes_shrink_threshold(band, 10.0) == 1.5
        np.testing.assert_array_equal(
            soft_threshold(band, bayes_shrink_threshold(band, 10.0)) != 0.0,
            False)


class TestBayesShrinkDenoise:
    def test_zero_sigma_is_identity_on_dyadic_extents(self, rng64):
        img = rng64.uniform(0.0, 255.0, size=(32, 32))
        np.testing.assert_allclose(bayes_shrink_denoise(img, 0.0), img,
                                   rtol=0, atol=1e-9)

    def test_zero_sigma_is_identity_through_the_pad_path(self, rng64):
        img = rng64.uniform(0.0, 255.0, size=(50, 46))
        out = bayes_shrink_denoise(img, 0.0)
        assert out.shape == (50, 46)
        np.testing.assert_allclose(out, img, rtol=0, atol=1e-9)

    def test_shrinkage_grows_with_assumed_noise(self):
        noisy = add_awgn(phantom(64), NoiseSpec(sigma=20.0, seed=8))
        moved = [float(np.mean((bayes_shrink_denoise(noisy, s) - noisy) ** 2))
                 for s in (1.0, 5.0, 10.0, 20.0)]
        assert all(b >= a for a, b in zip(moved, moved[1:]))
        assert moved[-1] > moved[0]

    def test_output_range_and_shape(self):
        noisy = add_awgn(phantom(64), NoiseSpec(sigma=50.0, seed=1))
        out = bayes_shrink_denoise(noisy, 50.0)
        assert out.shape == noisy.shape
        assert out.min() >= 0.0 and out.max() <= 255.0

    def test_phantom_gain_at_sigma_25(self):
        clean = phantom(128)
        noisy = add_awgn(clean, NoiseSpec(sigma=25.0, seed=3))
        restored = bayes_shrink_denoise(noisy, 25.0, levels=3)
        gain = psnr(clean, restored) - psnr(clean, noisy)
        assert gain >= 2.0, gain

    def test_input_validation(self):
        with pytest.raises(ValueError):
            bayes_shrink_denoise(np.zeros((8, 8)), -1.0)
        with pytest.raises(ShapeError):
            bayes_shrink_denoise(np.zeros(64), 1.0)

    def test_pyramid_dataclass_round_trip(self, rng64):
        img = rng64.normal(size=(16, 16))
        pyr = haar_forward(img, levels=2)
        rebuilt = WaveletPyramid(ll=pyr.ll, details=pyr.details,
                                 levels=pyr.levels)
        np.testing.assert_allclose(haar_inverse(rebuilt), img, atol=1e-12)
