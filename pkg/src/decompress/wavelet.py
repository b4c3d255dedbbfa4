"""Orthonormal Haar pyramid with BayesShrink soft thresholding.

A classical, training-free denoiser used as the reference point: the
image goes through a 3-level 2-D Haar transform (1/sqrt(2) scaling, so
the transform is orthonormal and white noise keeps its variance in
every subband), each detail subband is soft-thresholded at the
BayesShrink level T = sigma^2 / sigma_x, and the inverse transform
returns to pixels.  Non-dyadic extents are handled by symmetric
padding up to the next multiple of 2^levels and cropping afterwards.
"""

import dataclasses
import math

import numpy as np

from .errors import GeometryError, ShapeError

_SQRT2 = math.sqrt(2.0)


@dataclasses.dataclass
class WaveletPyramid:
    """Coarse approximation plus per-level (lh, hl, hh) detail triples,
    finest level first.  Total coefficient count equals the pixel
    count of the analyzed image."""
    ll: np.ndarray
    details: list
    levels: int

    def coefficient_count(self) -> int:
        return self.ll.size + sum(a.size + b.size + c.size
                                  for a, b, c in self.details)


def _split(a: np.ndarray, axis: int):
    lo = (a.take(np.arange(0, a.shape[axis], 2), axis=axis)
          + a.take(np.arange(1, a.shape[axis], 2), axis=axis)) / _SQRT2
    hi = (a.take(np.arange(0, a.shape[axis], 2), axis=axis)
          - a.take(np.arange(1, a.shape[axis], 2), axis=axis)) / _SQRT2
    return lo, hi


def _merge(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.float64)
    even = (lo + hi) / _SQRT2
    odd = (lo - hi) / _SQRT2
    sl = [slice(None)] * out.ndim
    sl[axis] = slice(0, None, 2)
    out[tuple(sl)] = even
    sl[axis] = slice(1, None, 2)
    out[tuple(sl)] = odd
    return out


def haar_forward(image: np.ndarray, levels: int = 3) -> WaveletPyramid:
    """Strict transform: extents must be divisible by 2**levels."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError("wavelet transform expects a 2-d image, got %r"
                         % (image.shape,))
    if levels < 1:
        raise ValueError("levels must be >= 1")
    h, w = image.shape
    factor = 1 << levels
    if h % factor or w % factor or h == 0 or w == 0:
        raise GeometryError(
            "extents %dx%d are not divisible by 2^%d; pad first"
            % (h, w, levels))
    cur = image
    details = []
    for _ in range(levels):
        low, high = _split(cur, axis=0)
        ll, lh = _split(low, axis=1)
        hl, hh = _split(high, axis=1)
        details.append((lh, hl, hh))
        cur = ll
    return WaveletPyramid(ll=cur, details=details, levels=levels)


def haar_inverse(pyramid: WaveletPyramid) -> np.ndarray:
    cur = pyramid.ll
    for lh, hl, hh in reversed(pyramid.details):
        low = _merge(cur, lh, axis=1)
        high = _merge(hl, hh, axis=1)
        cur = _merge(low, high, axis=0)
    return cur


def soft_threshold(coeffs: np.ndarray, threshold: float) -> np.ndarray:
    """Shrink toward zero: sign(c) * max(|c| - t, 0)."""
    if threshold < 0.0:
        raise ValueError("threshold must be >= 0")
    return np.sign(coeffs) * np.maximum(np.abs(coeffs) - threshold, 0.0)


def bayes_shrink_threshold(band: np.ndarray, sigma: float) -> float:
    """T = sigma^2 / sigma_x with sigma_x^2 = max(E[c^2] - sigma^2, 0);
    a band with no estimated signal is wiped entirely (T = max |c|)."""
    signal_var = max(float(np.mean(band * band)) - sigma * sigma, 0.0)
    if signal_var == 0.0:
        return float(np.max(np.abs(band))) if band.size else 0.0
    return sigma * sigma / math.sqrt(signal_var)


def bayes_shrink_denoise(noisy: np.ndarray, sigma: float,
                         levels: int = 3) -> np.ndarray:
    """Blind wavelet denoiser given the noise strength.

    Pads symmetrically to a multiple of 2**levels, thresholds every
    detail subband at its BayesShrink level (approximation untouched),
    inverts, crops, and clamps to [0, 255].
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    if noisy.ndim != 2:
        raise ShapeError("denoiser input must be 2-d grayscale, got %r"
                         % (noisy.shape,))
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    h, w = noisy.shape
    factor = 1 << levels
    pad_h = (-h) % factor
    pad_w = (-w) % factor
    padded = np.pad(noisy, ((0, pad_h), (0, pad_w)), mode="symmetric") \
        if (pad_h or pad_w) else noisy
    pyramid = haar_forward(padded, levels=levels)
    shrunk = [tuple(soft_threshold(band, bayes_shrink_threshold(band, sigma))
                    for band in triple)
              for triple in pyramid.details]
    restored = haar_inverse(WaveletPyramid(ll=pyramid.ll, details=shrunk,
                                           levels=levels))
    return np.clip(restored[:h, :w], 0.0, 255.0)
