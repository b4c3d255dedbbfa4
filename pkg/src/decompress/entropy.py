"""Quantization and the learned factorized entropy model.

The bottleneck is quantized to integers at test time; training replaces
rounding with additive uniform noise on [-1/2, 1/2) so gradients exist.
Code lengths come from a per-channel learned cumulative distribution: a
chain of tiny monotone maps (softplus-positive matrices, biases, and
bounded tanh mixers, closed by a sigmoid) whose increments over unit
bins give probability masses.  Monotonicity holds by construction, so
masses are nonnegative; a 1e-9 floor keeps logs finite.
"""

import enum

import numpy as np

from . import tensor as T
from .errors import GraphError, ShapeError
from .rng import Rng
from .tensor import Tensor

PMF_FLOOR = 1e-9


class QuantizerMode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"


def round_half_away_from_zero(arr: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero."""
    return np.copysign(np.floor(np.abs(arr) + 0.5), arr)


def quantize(c: Tensor, mode: QuantizerMode, rng: Rng | None = None) -> Tensor:
    """Bottleneck quantizer.

    TRAIN adds iid uniform noise on [-1/2, 1/2); the noise is a
    constant, so gradients pass straight through to c.  EVAL hard
    rounds and is inference-only: calling it where the result could
    feed a recorded graph is a contract violation, not a silent
    gradient stop.
    """
    if mode is QuantizerMode.TRAIN:
        if rng is None:
            raise ValueError("TRAIN quantization needs an rng for the noise draw")
        u = (rng.uniform(c.size) - 0.5).reshape(c.shape).astype(c.dtype)
        return T.add(c, Tensor(u))
    if mode is QuantizerMode.EVAL:
        if T.grad_enabled() and c.requires_grad:
            raise GraphError(
                "EVAL quantization is inference-only; wrap the call in no_grad()")
        return Tensor(round_half_away_from_zero(c.data))
    raise ValueError("unknown quantizer mode %r" % (mode,))


class FactorizedPrior:
    """Per-channel cumulative distribution built from K monotone factors.

    Factor k applies h -> g_k(softplus(H_k) @ h + b_k) where g_k adds a
    tanh-bounded correction tanh(a_k) * tanh(t) for the inner factors
    and is a sigmoid for the last.  Every factor is nondecreasing in h,
    so the composition is a valid cumulative distribution and
    pmf(v) = cdf(v + 1/2) - cdf(v - 1/2) is nonnegative before the
    floor.  Channels are independent; all factor parameters are learned
    jointly with the transforms.
    """

    def __init__(self, channels: int, widths: tuple = (3, 3, 3),
                 init_scale: float = 10.0, rng: Rng | None = None,
                 dtype=np.float64):
        rng = rng if rng is not None else Rng(0)
        self.channels = channels
        self.widths = tuple(int(w) for w in widths)
        self.init_scale = float(init_scale)
        dims = (1,) + self.widths + (1,)
        self.factors = len(dims) - 1
        step = self.init_scale ** (1.0 / self.factors)
        self.matrices = []
        self.biases = []
        self.mixers = []
        for k in range(self.factors):
            d_in, d_out = dims[k], dims[k + 1]
            raw = np.log(np.expm1(1.0 / (step * d_out)))
            self.matrices.append(Tensor(
                np.full((channels, d_out, d_in), raw, dtype=dtype),
                requires_grad=True))
            b = (rng.uniform(channels * d_out) - 0.5).reshape(channels, d_out, 1)
            self.biases.append(Tensor(b.astype(dtype), requires_grad=True))
            if k < self.factors - 1:
                self.mixers.append(Tensor(
                    np.zeros((channels, d_out, 1), dtype=dtype),
                    requires_grad=True))

    def cumulative(self, v: Tensor) -> Tensor:
        """cdf evaluated elementwise; v has shape (channels, 1, N)."""
        if v.ndim != 3 or v.shape[0] != self.channels or v.shape[1] != 1:
            raise ShapeError("cumulative expects (%d, 1, N), got %r"
                             % (self.channels, v.shape))
        h = v
        for k in range(self.factors):
            h = T.add(T.matmul(T.softplus(self.matrices[k]), h), self.biases[k])
            if k < self.factors - 1:
                h = T.add(h, T.mul(T.tanh(self.mixers[k]), T.tanh(h)))
            else:
                h = T.sigmoid(h)
        return h

    def pmf(self, v: Tensor) -> Tensor:
        """Mass of the unit bin centered on v, floored at 1e-9."""
        upper = self.cumulative(T.add(v, 0.5))
        lower = self.cumulative(T.add(v, -0.5))
        return T.clamp_min(T.sub(upper, lower), PMF_FLOOR)

    def pmf_table(self, lo: int, hi: int) -> np.ndarray:
        """pmf over the integer grid lo..hi, as (channels, hi-lo+1)."""
        grid = np.arange(lo, hi + 1, dtype=np.float64)
        v = np.broadcast_to(grid, (self.channels, 1, grid.size)).copy()
        with T.no_grad():
            return self.pmf(Tensor(v)).data.reshape(self.channels, grid.size)

    def parameters(self):
        out = []
        for k, (m, b) in enumerate(zip(self.matrices, self.biases)):
            out.append(("matrix%d" % k, m))
            out.append(("bias%d" % k, b))
        for k, a in enumerate(self.mixers):
            out.append(("mixer%d" % k, a))
        return out


def rate_bits_per_pixel(prior: FactorizedPrior, c_tilde: Tensor,
                        pixels_per_patch: int) -> Tensor:
    """Mean code length of the (noisy or rounded) latent in bits per
    source pixel: total -log2 pmf over all latent elements, divided by
    batch size times the pixel count of one patch."""
    if c_tilde.ndim != 4:
        raise ShapeError("rate expects a (B, C, H, W) latent, got %r"
                         % (c_tilde.shape,))
    b, c, h, w = c_tilde.shape
    if c != prior.channels:
        raise ShapeError("latent has %d channels, prior models %d"
                         % (c, prior.channels))
    v = T.reshape(T.transpose(c_tilde, (1, 0, 2, 3)), (c, 1, b * h * w))
    bits = T.mul(T.reduce_sum(T.log2(prior.pmf(v))), -1.0)
    return T.div(bits, float(b * pixels_per_patch))
