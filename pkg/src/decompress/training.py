"""Rate-distortion training on noisy patches, plus checkpoints.

The model never sees clean data: patches cut from the noisy image(s)
are both input and target.  Each step minimizes D + lambda * R where D
is mean squared error on the reconstruction and R the mean code length
of the noise-quantized bottleneck in bits per pixel.  Everything random
(init, patch order, quantizer noise, subsampling) derives from one run
seed, so a (corpus, config) pair reproduces its checkpoint bit for bit.

Checkpoints are a small binary container: magic, format version, a
key = value text header with the architecture and run metadata, then
the parameter tensors as float32 blobs in parameter order.
"""

import dataclasses
import logging
import time

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import tensor as T
from .codec import NeuralCodec
from .entropy import QuantizerMode, quantize, rate_bits_per_pixel
from .errors import FormatError, GeometryError, ShapeError
from .rng import Rng
from .tensor import Tensor, array_to_blob, blob_to_array

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DCMP"
CHECKPOINT_VERSION = 1


@dataclasses.dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    lam is the rate weight (must be positive: with it at zero the rate
    term is dead weight and the run is a plain autoencoder).  sigma and
    intensity_scale are metadata carried into the checkpoint; patches
    always keep their native [0, 255] intensity scale.  dtype selects
    the arithmetic width: float64 is the reference configuration,
    float32 trades about a digit of gradient accuracy for speed.
    """

    lam: float
    sigma: float = float("nan")
    learning_rate: float = 2e-4
    batch_size: int = 64
    steps: int = 50_000
    seed: int = 0
    patch_size: int = 16
    patch_stride: int = 1
    max_patches: int | None = None
    intensity_scale: float = 255.0
    hidden_channels: int = 256
    latent_channels: int = 16
    prior_widths: tuple = (3, 3, 3)
    dtype: str = "float64"
    log_interval: int = 100

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ValueError("lam must be positive, got %r" % (self.lam,))
        if self.patch_size != 16:
            raise ValueError("the codec topology fixes patch_size at 16")
        if self.batch_size < 1 or self.steps < 1 or self.patch_stride < 1:
            raise ValueError("batch_size, steps, and patch_stride must be >= 1")
        if self.log_interval < 1:
            raise ValueError("log_interval must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be 'float32' or 'float64'")
        if self.max_patches is not None and self.max_patches < 1:
            raise ValueError("max_patches must be >= 1 when given")

    @property
    def numpy_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


class PatchDataset:
    """All overlapping patches of a corpus, indexed by top-left corner.

    Corners are enumerated image by image in row-major order at the
    given stride; an optional seeded uniform subsample caps the count.
    Patches are materialized lazily through gather(), never all at
    once.
    """

    def __init__(self, images, size: int = 16, stride: int = 1,
                 max_patches: int | None = None, seed: int = 0):
        if isinstance(images, np.ndarray):
            images = [images]
        if not images:
            raise GeometryError("patch dataset needs at least one image")
        self.size = int(size)
        self.stride = int(stride)
        self._images = []
        self._windows = []
        img_ids, rows, cols = [], [], []
        for idx, img in enumerate(images):
            arr = np.asarray(img, dtype=np.float64)
            if arr.ndim != 2:
                raise ShapeError("corpus images must be 2-d grayscale, got %r"
                                 % (arr.shape,))
            h, w = arr.shape
            if h < size or w < size:
                raise GeometryError(
                    "image %d is %dx%d, smaller than the %d patch extent"
                    % (idx, h, w, size))
            self._images.append(arr)
            self._windows.append(sliding_window_view(arr, (size, size)))
            r = np.arange(0, h - size + 1, stride)
            c = np.arange(0, w - size + 1, stride)
            rg, cg = np.meshgrid(r, c, indexing="ij")
            img_ids.append(np.full(rg.size, idx, dtype=np.int64))
            rows.append(rg.reshape(-1))
            cols.append(cg.reshape(-1))
        self.img_ids = np.concatenate(img_ids)
        self.rows = np.concatenate(rows)
        self.cols = np.concatenate(cols)
        if max_patches is not None and len(self.img_ids) > max_patches:
            keep = np.sort(Rng(seed).permutation(len(self.img_ids))[:max_patches])
            self.img_ids = self.img_ids[keep]
            self.rows = self.rows[keep]
            self.cols = self.cols[keep]

    def __len__(self) -> int:
        return len(self.img_ids)

    def gather(self, indices) -> np.ndarray:
        """Patches for the given dataset indices as (B, 1, size, size)."""
        out = np.empty((len(indices), 1, self.size, self.size))
        for slot, i in enumerate(indices):
            out[slot, 0] = self._windows[self.img_ids[i]][self.rows[i], self.cols[i]]
        return out


def extract_patches(image: np.ndarray, size: int = 16,
                    stride: int = 1) -> PatchDataset:
    """Every patch of a single image at the given stride."""
    return PatchDataset([image], size=size, stride=stride)


class Adam:
    """Adam with bias correction over named parameters.

    step() refuses to apply an update containing non-finite gradients:
    the moments and counter stay untouched and the offending parameter
    names come back as diagnostics.
    """

    def __init__(self, params, learning_rate: float = 2e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params}

    def zero_grads(self):
        """Drop accumulated gradients (step treats None as zero)."""
        for _, p in self.params:
            p.grad = None

    def step(self):
        """Apply one update; returns the names whose gradients were
        non-finite (and in that case applies nothing)."""
        grads = {}
        bad = []
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            # A finite sum certifies every element finite (inf/nan is
            # absorbing); a non-finite sum may just be f32 overflow, so
            # only then pay for the elementwise check.
            if not np.isfinite(g.sum()) and not np.all(np.isfinite(g)):
                bad.append(name)
            grads[name] = g
        if bad:
            return bad
        self.step_count += 1
        c1 = 1.0 - self.beta1 ** self.step_count
        c2 = 1.0 - self.beta2 ** self.step_count
        # Fold the bias corrections into two scalars:
        # lr * (m/c1) / (sqrt(v/c2) + eps) == scale * m / (sqrt(v) + epsc)
        # with scale = lr*sqrt(c2)/c1 and epsc = eps*sqrt(c2).
        scale = self.learning_rate * np.sqrt(c2) / c1
        epsc = self.eps * np.sqrt(c2)
        for name, p in self.params:
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += g * (1.0 - self.beta1)
            v *= self.beta2
            gg = g * g
            gg *= 1.0 - self.beta2
            v += gg
            u = np.sqrt(v)
            u += epsc
            np.divide(m, u, out=u)
            u *= scale
            p.data -= u
        return []


@dataclasses.dataclass
class LossBreakdown:
    """One objective evaluation.  total is distortion + lam * rate by
    construction (bit-exact in the float64 configuration); loss is the
    live scalar graph node to call backward() on."""
    distortion: float
    rate: float
    lam: float
    total: float
    loss: Tensor = dataclasses.field(repr=False)


def rd_loss(batch: Tensor, codec: NeuralCodec, lam: float,
            mode: QuantizerMode, rng: Rng | None = None) -> LossBreakdown:
    """Rate-distortion objective on one batch of (noisy) patches."""
    c = codec.analyze(batch)
    c_tilde = quantize(c, mode, rng)
    recon = codec.synthesize(c_tilde)
    dist = T.reduce_mean(T.square(T.sub(recon, batch)))
    rate = rate_bits_per_pixel(codec.prior, c_tilde, codec.pixels_per_patch)
    total = T.add(dist, T.mul(rate, lam))
    return LossBreakdown(distortion=dist.item(), rate=rate.item(),
                         lam=lam, total=total.item(), loss=total)


@dataclasses.dataclass
class LogRecord:
    step: int
    distortion: float
    rate: float
    total: float
    wall_ms: float


def derive_streams(seed: int) -> dict:
    """Per-purpose seeds of one run, drawn from the run seed in a fixed
    order, so any consumer can rebuild an identical sub-stream (for
    example the exact patch subsample a training run used)."""
    master = Rng(seed)
    return {"init": master.next_u64(),
            "subsample": master.next_u64(),
            "shuffle": master.next_u64(),
            "noise": master.next_u64()}


def evaluate_objective(dataset: PatchDataset, codec: NeuralCodec, lam: float,
                       batch_size: int = 512):
    """Deterministic eval-mode objective over every patch of a dataset.

    Hard rounding at the bottleneck, no gradient graph, fixed dataset
    order: the returned (distortion, rate) pair is a pure function of
    (dataset, codec), unlike the noise-quantized per-batch training
    loss.
    """
    total_dist = 0.0
    total_rate = 0.0
    count = len(dataset)
    with T.no_grad():
        for start in range(0, count, batch_size):
            idx = np.arange(start, min(start + batch_size, count))
            batch = Tensor(dataset.gather(idx).astype(codec.dtype))
            breakdown = rd_loss(batch, codec, lam, QuantizerMode.EVAL)
            total_dist += breakdown.distortion * len(idx)
            total_rate += breakdown.rate * len(idx)
    return total_dist / count, total_rate / count


class _BatchCursor:
    """Deterministic endless batch indices: one Fisher-Yates permutation
    per epoch, batches straddling epoch boundaries without drops."""

    def __init__(self, count: int, rng: Rng):
        self.count = count
        self.rng = rng
        self.order = rng.permutation(count)
        self.pos = 0

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        filled = 0
        while filled < n:
            if self.pos == self.count:
                self.order = self.rng.permutation(self.count)
                self.pos = 0
            take = min(n - filled, self.count - self.pos)
            out[filled:filled + take] = self.order[self.pos:self.pos + take]
            self.pos += take
            filled += take
        return out


def train(images, cfg: TrainConfig, on_record=None):
    """Fit a fresh codec to the noisy corpus; returns (codec, records).

    Sub-streams for initialization, subsampling, shuffling, and
    quantizer noise all derive from cfg.seed, so the result depends
    only on (corpus, cfg).  on_record, if given, is called with each
    LogRecord as it is produced.
    """
    streams = derive_streams(cfg.seed)
    codec = NeuralCodec(patch_size=cfg.patch_size,
                        hidden_channels=cfg.hidden_channels,
                        latent_channels=cfg.latent_channels,
                        prior_widths=cfg.prior_widths,
                        seed=streams["init"], dtype=cfg.numpy_dtype)
    dataset = PatchDataset(images, size=cfg.patch_size, stride=cfg.patch_stride,
                           max_patches=cfg.max_patches, seed=streams["subsample"])
    cursor = _BatchCursor(len(dataset), Rng(streams["shuffle"]))
    noise_rng = Rng(streams["noise"])
    adam = Adam(codec.parameters(), learning_rate=cfg.learning_rate)
    dtype = cfg.numpy_dtype

    records = []
    skipped = 0
    tick = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        batch = Tensor(dataset.gather(cursor.take(cfg.batch_size)).astype(dtype))
        breakdown = rd_loss(batch, codec, cfg.lam, QuantizerMode.TRAIN, noise_rng)
        adam.zero_grads()
        breakdown.loss.backward()
        bad = adam.step()
        if bad:
            skipped += 1
            logger.warning("step %d skipped: non-finite gradients in %s",
                           step, ", ".join(bad))
        else:
            codec.project()
        if step % cfg.log_interval == 0:
            now = time.perf_counter()
            record = LogRecord(step=step, distortion=breakdown.distortion,
                               rate=breakdown.rate, total=breakdown.total,
                               wall_ms=(now - tick) * 1000.0)
            tick = now
            records.append(record)
            if on_record is not None:
                on_record(record)
    if skipped:
        logger.warning("%d of %d steps were skipped", skipped, cfg.steps)
    return codec, records


def write_training_log(records, path):
    with open(path, "w") as f:
        f.write("step,distortion,rate,total,wall_ms\n")
        for r in records:
            f.write("%d,%r,%r,%r,%.3f\n"
                    % (r.step, r.distortion, r.rate, r.total, r.wall_ms))


# -- checkpoints ------------------------------------------------------


def save_checkpoint(path, codec: NeuralCodec, lam: float,
                    sigma: float = float("nan"),
                    intensity_scale: float = 255.0,
                    steps_trained: int = 0, run_seed: int = 0):
    """Serialize parameters (as float32) plus run metadata."""
    meta = dict(codec.hyperparams())
    meta["seed"] = run_seed
    meta.update({
        "lambda": repr(float(lam)),
        "sigma": repr(float(sigma)),
        "intensity_scale": repr(float(intensity_scale)),
        "steps_trained": int(steps_trained),
    })
    header = "".join("%s = %s\n" % (k, v) for k, v in meta.items()).encode()
    params = codec.parameters()
    pieces = [CHECKPOINT_MAGIC,
              np.asarray([CHECKPOINT_VERSION, len(header)], dtype="<u4").tobytes(),
              header,
              np.asarray([len(params)], dtype="<u4").tobytes()]
    for name, p in params:
        encoded = name.encode()
        pieces.append(np.asarray([len(encoded)], dtype="<u4").tobytes())
        pieces.append(encoded)
        pieces.append(array_to_blob(p.data))
    with open(path, "wb") as f:
        f.write(b"".join(pieces))


def load_checkpoint(path):
    """Rebuild the codec (float32) and metadata from a checkpoint file.

    Returns (codec, meta) where meta holds lambda, sigma,
    intensity_scale, steps_trained, and seed.
    """
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic at offset 0: %r (want %r)"
                          % (bytes(buf[:4]), CHECKPOINT_MAGIC))
    if len(buf) < 12:
        raise FormatError("truncated checkpoint: %d bytes is too short for "
                          "the fixed header" % len(buf))
    version, header_len = (int(v) for v in np.frombuffer(buf[4:12], dtype="<u4"))
    if version != CHECKPOINT_VERSION:
        raise FormatError("unsupported checkpoint version %d (this build "
                          "reads version %d)" % (version, CHECKPOINT_VERSION))
    offset = 12
    if offset + header_len + 4 > len(buf):
        raise FormatError("truncated checkpoint: header claims %d bytes at "
                          "offset 12 but the file ends at %d"
                          % (header_len, len(buf)))
    fields = {}
    for line in buf[offset:offset + header_len].decode().splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError("malformed checkpoint header line %r" % line)
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    offset += header_len
    try:
        widths = tuple(int(w) for w in fields["prior_widths"].split(",") if w)
        codec = NeuralCodec(patch_size=int(fields["patch_size"]),
                            hidden_channels=int(fields["hidden_channels"]),
                            latent_channels=int(fields["latent_channels"]),
                            prior_widths=widths,
                            seed=int(fields["seed"]),
                            dtype=np.float32)
        meta = {
            "lambda": float(fields["lambda"]),
            "sigma": float(fields["sigma"]),
            "intensity_scale": float(fields["intensity_scale"]),
            "steps_trained": int(fields["steps_trained"]),
            "seed": int(fields["seed"]),
        }
    except KeyError as exc:
        raise FormatError("checkpoint header is missing field %s" % exc) from exc
    count = int(np.frombuffer(buf[offset:offset + 4], dtype="<u4")[0])
    offset += 4
    arrays = {}
    for _ in range(count):
        if offset + 4 > len(buf):
            raise FormatError("truncated checkpoint: expected a tensor name "
                              "length at offset %d" % offset)
        name_len = int(np.frombuffer(buf[offset:offset + 4], dtype="<u4")[0])
        offset += 4
        if offset + name_len > len(buf):
            raise FormatError("truncated checkpoint: tensor name of %d bytes "
                              "at offset %d runs past the end"
                              % (name_len, offset))
        name = buf[offset:offset + name_len].decode()
        offset += name_len
        arr, offset = blob_to_array(buf, offset)
        arrays[name] = arr
    if offset != len(buf):
        raise FormatError("checkpoint has %d trailing bytes after the last "
                          "tensor" % (len(buf) - offset))
    codec.load_state(arrays)
    return codec, meta
