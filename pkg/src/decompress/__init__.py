"""Image denoising through a learned lossy compression code.

Train a small convolutional autoencoder with a quantized, entropy-coded
bottleneck on patches of a noisy image (no clean data involved), then
denoise by compressing and decompressing every overlapping patch and
averaging: what the rate constraint refuses to spend bits on is, by
construction, mostly the noise.
"""

from .codec import NeuralCodec
from .denoiser import (DenoiseReport, NoiseSpec, add_awgn, denoise, evaluate,
                       psnr, reconstruct_average, window_counts, write_report)
from .entropy import (FactorizedPrior, QuantizerMode, quantize,
                      rate_bits_per_pixel, round_half_away_from_zero)
from .errors import (FormatError, GeometryError, GraphError,
                     NumericGuardError, ShapeError)
from .layers import AnalysisTransform, GdnLayer, SynthesisTransform
from .rng import Rng
from .tensor import Tensor, no_grad
from .training import (Adam, LossBreakdown, PatchDataset, TrainConfig,
                       extract_patches, load_checkpoint, rd_loss,
                       save_checkpoint, train, write_training_log)
from .wavelet import (WaveletPyramid, bayes_shrink_denoise, haar_forward,
                      haar_inverse, soft_threshold)

__version__ = "0.1.0"

__all__ = [
    "Adam", "AnalysisTransform", "DenoiseReport", "FactorizedPrior",
    "FormatError", "GdnLayer", "GeometryError", "GraphError",
    "LossBreakdown", "NeuralCodec", "NoiseSpec", "NumericGuardError",
    "PatchDataset", "QuantizerMode", "Rng", "ShapeError",
    "SynthesisTransform", "Tensor", "TrainConfig", "WaveletPyramid",
    "add_awgn", "bayes_shrink_denoise", "denoise", "evaluate",
    "extract_patches", "haar_forward", "haar_inverse", "load_checkpoint",
    "no_grad", "psnr", "quantize", "rate_bits_per_pixel",
    "reconstruct_average", "rd_loss", "round_half_away_from_zero",
    "save_checkpoint", "soft_threshold", "train", "window_counts",
    "write_report", "write_training_log",
]
