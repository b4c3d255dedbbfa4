"""Noise synthesis, fidelity scoring, and overlapping-patch assembly."""

import numpy as np
import pytest

from decompress.codec import NeuralCodec
from decompress.denoiser import (PSNR_CAP, DenoiseReport, NoiseSpec, add_awgn,
                                 denoise, evaluate, psnr, reconstruct_average,
                                 window_counts, write_report)
from decompress.errors import GeometryError, ShapeError


class IdentityCodec:
    """Stand-in codec whose round trip returns each patch unchanged.

    Exercises the assembly path in isolation: with every window exact,
    the overlap average must reproduce the input bit for bit whenever
    the pixel values are float32-representable.
    """

    patch_size = 16
    pixels_per_patch = 256

    def cast(self, dtype):
        return self

    def reconstruct_eval(self, patches):
        return patches.astype(np.float64), 0.0


def brute_counts(h, w, size, stride):
    out = np.zeros((h, w))
    for r in range(0, h - size + 1, stride):
        for c in range(0, w - size + 1, stride):
            out[r:r + size, c:c + size] += 1.0
    return out


class TestAwgn:
    def test_zero_sigma_is_identity(self, rng64):
        clean = rng64.uniform(0.0, 255.0, size=(9, 7))
        np.testing.assert_array_equal(add_awgn(clean, NoiseSpec(0.0)), clean)

    def test_noise_statistics(self):
        clean = np.full((300, 300), 128.0)
        noisy = add_awgn(clean, NoiseSpec(sigma=25.0, seed=4))
        delta = noisy - clean
        assert abs(delta.mean()) < 0.5
        assert abs(delta.std() - 25.0) < 0.5

    def test_seeded_determinism(self):
        clean = np.zeros((20, 20))
        a = add_awgn(clean, NoiseSpec(sigma=10.0, seed=1))
        b = add_awgn(clean, NoiseSpec(sigma=10.0, seed=1))
        c = add_awgn(clean, NoiseSpec(sigma=10.0, seed=2))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_output_is_deliberately_unclipped(self):
        noisy = add_awgn(np.zeros((50, 50)), NoiseSpec(sigma=30.0, seed=0))
        assert noisy.min() < 0.0

    def test_negative_sigma_is_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec(sigma=-1.0)


class TestPsnr:
    def test_constant_offset_closed_form(self):
        # MSE 16^2 against peak 255: 20 log10(255 / 16) = 24.048404 dB.
        a = np.zeros((8, 8))
        b = np.full((8, 8), 16.0)
        np.testing.assert_allclose(psnr(a, b), 24.048404, atol=1e-6)

    def test_perfect_match_hits_the_cap(self, rng64):
        x = rng64.uniform(0.0, 255.0, size=(5, 5))
        assert psnr(x, x) == PSNR_CAP == 99.0

    def test_tiny_error_is_capped(self):
        a = np.zeros((4, 4))
        b = np.full((4, 4), 1e-9)
        assert psnr(a, b) == PSNR_CAP

    def test_custom_peak(self):
        # Peak 1 with MSE 0.01 is exactly 20 dB.
        a = np.zeros((3, 3))
        b = np.full((3, 3), 0.1)
        np.testing.assert_allclose(psnr(a, b, peak=1.0), 20.0, rtol=1e-12)

    def test_shape_mismatch_is_rejected(self):
        with pytest.raises(ShapeError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))


class TestWindowCounts:
    def test_46x46_interior_saturates_at_256(self):
        counts = window_counts(46, 46)
        assert counts[0, 0] == 1.0
        assert counts[-1, -1] == 1.0
        assert counts[23, 23] == 256.0
        assert counts.max() == 256.0
        # The interior block where all 16x16 offsets fit.
        np.testing.assert_array_equal(counts[15:31, 15:31], 256.0)

    def test_matches_brute_force_over_random_geometries(self, rng64):
        for _ in range(50):
            size = int(rng64.integers(1, 9))
            h = int(rng64.integers(size, size + 30))
            w = int(rng64.integers(size, size + 30))
            stride = int(rng64.integers(1, 4))
            got = window_counts(h, w, size=size, stride=stride)
            np.testing.assert_array_equal(got, brute_counts(h, w, size, stride),
                                          err_msg=str((h, w, size, stride)))

    def test_undersized_image_is_rejected(self):
        with pytest.raises(GeometryError):
            window_counts(15, 40)


class TestAssembly:
    def test_identity_codec_reproduces_integer_images_exactly(self, rng64):
        # Integer samples are exact in float32, every partial sum of
        # n <= 256 equal addends is exact in float64, and n*v/n divides
        # back out, so the average equals the input bit for bit.
        img = rng64.integers(0, 256, size=(25, 21)).astype(np.float64)
        average, counts, bits, n_patches = reconstruct_average(
            img, IdentityCodec())
        np.testing.assert_array_equal(average, img)
        np.testing.assert_array_equal(counts, window_counts(25, 21))
        assert bits == 0.0
        assert n_patches == (25 - 15) * (21 - 15)

    def test_identity_codec_preserves_out_of_range_values_before_clamp(self):
        img = np.full((18, 18), -5.0)
        img[0, 0] = 300.0
        average, _, _, _ = reconstruct_average(img, IdentityCodec())
        np.testing.assert_array_equal(average, img)
        clamped = denoise(img, IdentityCodec())
        assert clamped[0, 0] == 255.0
        assert clamped[1, 1] == 0.0

    def test_batch_size_does_not_change_the_result(self, rng64):
        codec = NeuralCodec(hidden_channels=8, latent_channels=4, seed=2)
        noisy = rng64.uniform(0.0, 255.0, size=(20, 22))
        a = denoise(noisy, codec, batch_size=3)
        b = denoise(noisy, codec, batch_size=512)
        np.testing.assert_array_equal(a, b)

    def test_output_is_clamped_and_finite(self, rng64):
        codec = NeuralCodec(hidden_channels=8, latent_channels=4, seed=2)
        noisy = rng64.uniform(-40.0, 295.0, size=(18, 18))
        out = denoise(noisy, codec)
        assert np.all(np.isfinite(out))
        assert out.min() >= 0.0 and out.max() <= 255.0

    def test_geometry_and_shape_errors(self):
        codec = IdentityCodec()
        with pytest.raises(GeometryError):
            reconstruct_average(np.zeros((10, 40)), codec)
        with pytest.raises(ShapeError):
            reconstruct_average(np.zeros(400), codec)


class TestEvaluate:
    def test_report_fields_and_patch_count(self, rng64):
        codec = NeuralCodec(hidden_channels=8, latent_channels=4, seed=2)
        clean = rng64.uniform(0.0, 255.0, size=(18, 18))
        noisy = add_awgn(clean, NoiseSpec(sigma=25.0, seed=3))
        report = evaluate(clean, noisy, codec, image="probe", sigma=25.0)
        assert report.image == "probe"
        assert report.sigma == 25.0
        assert report.method == "decompress"
        assert report.patches == 9
        assert report.rate_bpp >= 0.0
        assert report.seconds >= 0.0
        assert np.isfinite(report.psnr_noisy)
        assert np.isfinite(report.psnr_denoised)

    def test_shape_mismatch_is_rejected(self):
        codec = IdentityCodec()
        with pytest.raises(ShapeError):
            evaluate(np.zeros((18, 18)), np.zeros((18, 19)), codec)

    def test_report_csv_shape(self, tmp_path):
        rows = [DenoiseReport(image="a", sigma=25.0, method="decompress",
                              psnr_noisy=20.0, psnr_denoised=24.5,
                              rate_bpp=0.3, seconds=1.25),
                DenoiseReport(image="b", sigma=15.0, method="wavelet",
                              psnr_noisy=24.6, psnr_denoised=28.0,
                              rate_bpp=float("nan"), seconds=0.01)]
        path = tmp_path / "report.csv"
        write_report(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == ("image,sigma,method,psnr_noisy,psnr_denoised,"
                            "rate_bpp,seconds")
        assert len(lines) == 3
        fields = lines[1].split(",")
        assert fields[0] == "a" and fields[2] == "decompress"
        assert float(fields[4]) == 24.5
