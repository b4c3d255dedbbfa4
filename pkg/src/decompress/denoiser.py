"""Whole-image denoising by overlapping-patch compression.

Every 16x16 window of the noisy image (stride 1) is pushed through the
trained codec in eval mode: analyze, round the bottleneck, synthesize.
Reconstructions are accumulated into a sum buffer, a count buffer
tracks how many windows cover each pixel (256 in the interior, down to
1 at the corners), and the pixelwise quotient is the output, clamped to
[0, 255] once at the very end.

Inference always runs in float32 with parameters snapped to float32,
matching what a checkpoint stores, so denoising before a save and
after the matching load produces identical bytes.
"""

import dataclasses
import time

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .codec import NeuralCodec
from .errors import GeometryError, ShapeError
from .rng import Rng

PSNR_CAP = 99.0


@dataclasses.dataclass
class NoiseSpec:
    """Additive white Gaussian noise at a given strength, seeded."""
    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError("sigma must be >= 0, got %r" % (self.sigma,))


def add_awgn(clean: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """clean + sigma * N(0, 1), float64, deliberately unclipped: the
    denoiser consumes real-valued sensor data, not quantized pixels."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = Rng(spec.seed).normal(clean.size).reshape(clean.shape)
    return clean + spec.sigma * noise


def psnr(reference: np.ndarray, test: np.ndarray, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE), capped at 99 dB (and exactly 99 for a
    perfect match)."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ShapeError("psnr needs matching shapes, got %r and %r"
                         % (reference.shape, test.shape))
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(peak * peak / mse), PSNR_CAP))


def window_counts(h: int, w: int, size: int = 16, stride: int = 1) -> np.ndarray:
    """How many stride-`stride` windows of extent `size` cover each
    pixel; separable, so an outer product of the per-axis counts."""

    def axis_counts(n):
        idx = np.arange(n)
        starts = np.arange(0, n - size + 1, stride)
        lo = np.searchsorted(starts, idx - size, side="right")
        hi = np.searchsorted(starts, idx, side="right")
        return (hi - lo).astype(np.float64)

    if h < size or w < size:
        raise GeometryError("image %dx%d is smaller than the %d window"
                            % (h, w, size))
    return np.outer(axis_counts(h), axis_counts(w))


def reconstruct_average(noisy: np.ndarray, codec: NeuralCodec,
                        batch_size: int = 512):
    """Overlapping-window codec reconstruction before the final clamp.

    Returns (average, counts, total_bits, n_patches).  The average is
    float64; total_bits is the eval-mode code length summed over all
    windows.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    if noisy.ndim != 2:
        raise ShapeError("denoiser input must be 2-d grayscale, got %r"
                         % (noisy.shape,))
    ps = codec.patch_size
    h, w = noisy.shape
    if h < ps or w < ps:
        raise GeometryError("image %dx%d is smaller than the %dx%d patch"
                            % (h, w, ps, ps))
    codec32 = codec.cast(np.float32)
    windows = sliding_window_view(noisy.astype(np.float32), (ps, ps))
    rows = np.arange(h - ps + 1)
    cols = np.arange(w - ps + 1)
    rg, cg = np.meshgrid(rows, cols, indexing="ij")
    rg = rg.reshape(-1)
    cg = cg.reshape(-1)
    n_patches = rg.size

    acc = np.zeros((h, w), dtype=np.float64)
    total_bits = 0.0
    for start in range(0, n_patches, batch_size):
        rb = rg[start:start + batch_size]
        cb = cg[start:start + batch_size]
        batch = windows[rb, cb][:, None, :, :]
        recon, bits = codec32.reconstruct_eval(batch)
        total_bits += bits
        recon64 = recon[:, 0].astype(np.float64)
        for k in range(rb.size):
            acc[rb[k]:rb[k] + ps, cb[k]:cb[k] + ps] += recon64[k]
    counts = window_counts(h, w, size=ps, stride=1)
    return acc / counts, counts, total_bits, n_patches


def denoise(noisy: np.ndarray, codec: NeuralCodec,
            batch_size: int = 512) -> np.ndarray:
    """Denoised image on [0, 255] (float64)."""
    average, _, _, _ = reconstruct_average(noisy, codec, batch_size)
    return np.clip(average, 0.0, 255.0)


@dataclasses.dataclass
class DenoiseReport:
    """One evaluation row: identification, fidelity before and after,
    mean code length of the rounded bottleneck, and wall time."""
    image: str
    sigma: float
    method: str
    psnr_noisy: float
    psnr_denoised: float
    rate_bpp: float
    seconds: float
    patches: int = 0


def evaluate(clean: np.ndarray, noisy: np.ndarray, codec: NeuralCodec,
             image: str = "image", sigma: float = float("nan"),
             batch_size: int = 512) -> DenoiseReport:
    """Denoise and summarize against the held-back clean reference."""
    clean = np.asarray(clean, dtype=np.float64)
    noisy = np.asarray(noisy, dtype=np.float64)
    if clean.shape != noisy.shape:
        raise ShapeError("clean and noisy shapes differ: %r vs %r"
                         % (clean.shape, noisy.shape))
    start = time.perf_counter()
    average, _, total_bits, n_patches = reconstruct_average(noisy, codec,
                                                            batch_size)
    denoised = np.clip(average, 0.0, 255.0)
    seconds = time.perf_counter() - start
    rate_bpp = total_bits / (n_patches * codec.pixels_per_patch)
    return DenoiseReport(image=image, sigma=sigma, method="decompress",
                         psnr_noisy=psnr(clean, noisy),
                         psnr_denoised=psnr(clean, denoised),
                         rate_bpp=rate_bpp, seconds=seconds,
                         patches=n_patches)


def write_report(reports, path):
    """Evaluation rows as CSV.  Numeric cells are written as python
    float reprs (full round-trip precision, no numpy scalar wrappers)."""
    with open(path, "w") as f:
        f.write("image,sigma,method,psnr_noisy,psnr_denoised,rate_bpp,seconds\n")
        for r in reports:
            f.write("%s,%r,%s,%r,%r,%r,%.3f\n"
                    % (r.image, float(r.sigma), r.method, float(r.psnr_noisy),
                       float(r.psnr_denoised), float(r.rate_bpp), r.seconds))
