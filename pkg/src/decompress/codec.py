"""The complete compression model: transforms plus entropy prior.

NeuralCodec owns the analysis transform, the synthesis transform, and
the factorized prior over the bottleneck, exposes their parameters
under stable dotted names (checkpoint and optimizer order), and
provides the batched eval-mode reconstruction path the denoiser runs:
analyze, hard-round, synthesize, and price the rounded latent.
"""

import numpy as np

from . import tensor as T
from .entropy import FactorizedPrior, QuantizerMode, quantize, rate_bits_per_pixel
from .errors import ShapeError
from .layers import AnalysisTransform, SynthesisTransform
from .rng import Rng
from .tensor import Tensor


def _as_dtype(dtype):
    d = np.dtype(dtype)
    if d not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError("codec dtype must be float32 or float64, got %r" % (dtype,))
    return d.type


class NeuralCodec:
    """Convolutional autoencoder with a quantized, entropy-modeled
    bottleneck.

    Construction is fully determined by (hyperparameters, seed): the
    seed feeds one stream that initializes analysis, synthesis, and
    prior in that fixed order.
    """

    def __init__(self, patch_size: int = 16, hidden_channels: int = 256,
                 latent_channels: int = 16, prior_widths: tuple = (3, 3, 3),
                 seed: int = 0, dtype=np.float64):
        dtype = _as_dtype(dtype)
        self.patch_size = int(patch_size)
        self.hidden_channels = int(hidden_channels)
        self.latent_channels = int(latent_channels)
        self.prior_widths = tuple(int(w) for w in prior_widths)
        self.seed = int(seed)
        self.dtype = dtype
        rng = Rng(self.seed)
        self.analysis = AnalysisTransform(
            patch_size=self.patch_size, hidden_channels=self.hidden_channels,
            latent_channels=self.latent_channels, rng=rng, dtype=dtype)
        self.synthesis = SynthesisTransform(
            patch_size=self.patch_size, hidden_channels=self.hidden_channels,
            latent_channels=self.latent_channels, rng=rng, dtype=dtype)
        self.prior = FactorizedPrior(self.latent_channels, self.prior_widths,
                                     rng=rng, dtype=dtype)

    @property
    def latent_grid(self) -> int:
        return self.patch_size // 8

    @property
    def pixels_per_patch(self) -> int:
        return self.patch_size * self.patch_size

    def analyze(self, y: Tensor) -> Tensor:
        return self.analysis(y)

    def synthesize(self, c: Tensor) -> Tensor:
        return self.synthesis(c)

    def project(self):
        """GDN constraint projection; run after every optimizer step."""
        self.analysis.project()
        self.synthesis.project()

    def parameters(self):
        out = []
        for name, p in self.analysis.parameters():
            out.append(("analysis." + name, p))
        for name, p in self.synthesis.parameters():
            out.append(("synthesis." + name, p))
        for name, p in self.prior.parameters():
            out.append(("prior." + name, p))
        return out

    def hyperparams(self) -> dict:
        return {
            "patch_size": self.patch_size,
            "hidden_channels": self.hidden_channels,
            "latent_channels": self.latent_channels,
            "prior_widths": ",".join(str(w) for w in self.prior_widths),
            "seed": self.seed,
        }

    def cast(self, dtype) -> "NeuralCodec":
        """A copy of this codec with every parameter cast to dtype.

        Casting float64 weights to float32 snaps them to exactly the
        values a checkpoint stores, which is what makes denoising
        before a save and after the matching load bit-identical.
        """
        dtype = _as_dtype(dtype)
        twin = NeuralCodec(patch_size=self.patch_size,
                           hidden_channels=self.hidden_channels,
                           latent_channels=self.latent_channels,
                           prior_widths=self.prior_widths,
                           seed=self.seed, dtype=dtype)
        ours = dict(self.parameters())
        for name, p in twin.parameters():
            p.data = ours[name].data.astype(dtype)
        return twin

    def load_state(self, arrays: dict):
        """Overwrite parameters from a {name: array} mapping in place."""
        params = dict(self.parameters())
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise ShapeError("parameter set mismatch: missing %r, unexpected %r"
                             % (missing, extra))
        for name, p in params.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ShapeError("parameter %s has shape %r, expected %r"
                                 % (name, arr.shape, p.shape))
            p.data = np.ascontiguousarray(arr, dtype=self.dtype)

    def reconstruct_eval(self, patches: np.ndarray):
        """Eval-mode round trip for a batch of patches.

        patches: (B, 1, ps, ps) array.  Returns (reconstruction array,
        total code length in bits for the batch), both computed outside
        any gradient graph with hard rounding at the bottleneck.
        """
        if patches.ndim != 4 or patches.shape[2] != self.patch_size \
                or patches.shape[3] != self.patch_size:
            raise ShapeError("reconstruct_eval expects (B, 1, %d, %d), got %r"
                             % (self.patch_size, self.patch_size, patches.shape))
        with T.no_grad():
            x = Tensor(np.ascontiguousarray(patches, dtype=self.dtype))
            c_hat = quantize(self.analyze(x), QuantizerMode.EVAL)
            recon = self.synthesize(c_hat)
            rate = rate_bits_per_pixel(self.prior, c_hat, self.pixels_per_patch)
        total_bits = rate.item() * patches.shape[0] * self.pixels_per_patch
        return recon.data, total_bits
