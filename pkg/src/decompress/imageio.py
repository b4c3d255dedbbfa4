"""Grayscale image files: PGM (P5), PNG, and a raw float32 map.

8-bit formats quantize on write (clamp to [0, 255], round half up).
The float map format ("DCF32") carries unquantized real-valued images,
e.g. noisy inputs whose values fall outside [0, 255]: a 16-byte header
(magic "DCF32", three zero pad bytes, height and width as uint32
little-endian) followed by row-major float32 little-endian samples.
"""

import numpy as np
from PIL import Image

from .errors import FormatError, ShapeError

DCF32_MAGIC = b"DCF32"


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half up to 8-bit."""
    arr = np.asarray(image, dtype=np.float64)
    return np.floor(np.clip(arr, 0.0, 255.0) + 0.5).clip(0, 255).astype(np.uint8)


def _require_2d(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ShapeError("grayscale image expected, got shape %r" % (arr.shape,))
    return arr


def write_pgm(path, image: np.ndarray):
    arr = to_uint8(_require_2d(image))
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(arr.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary PGM with maxval 255; returns float64 on [0, 255]."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"P5":
        raise FormatError("%s: not a binary PGM (magic %r)" % (path, buf[:2]))

    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(buf):
            raise FormatError("%s: PGM header ended before width, height, "
                              "and maxval" % path)
        ch = buf[pos:pos + 1]
        if ch == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(buf) and not buf[pos:pos + 1].isspace():
                pos += 1
            tokens.append(buf[start:pos])
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("%s: non-numeric PGM header fields %r" % (path, tokens))
    if maxval != 255:
        raise FormatError("%s: only maxval 255 is supported, got %d"
                          % (path, maxval))
    pos += 1  # single whitespace byte separates header from samples
    data = buf[pos:pos + w * h]
    if len(data) != w * h:
        raise FormatError("%s: expected %d sample bytes, found %d"
                          % (path, w * h, len(data)))
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.float64)


def write_png(path, image: np.ndarray):
    Image.fromarray(to_uint8(_require_2d(image)), mode="L").save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        gray = img.convert("L")
        return np.asarray(gray, dtype=np.float64)


def write_dcf32(path, image: np.ndarray):
    arr = np.ascontiguousarray(_require_2d(image), dtype="<f4")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(DCF32_MAGIC + b"\0\0\0")
        f.write(np.asarray([h, w], dtype="<u4").tobytes())
        f.write(arr.tobytes())


def read_dcf32(path) -> np.ndarray:
    """Returns the stored float32 samples widened to float64."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:5] != DCF32_MAGIC:
        raise FormatError("%s: bad float-map magic %r at offset 0"
                          % (path, buf[:5]))
    if len(buf) < 16:
        raise FormatError("%s: truncated float-map header (%d bytes)"
                          % (path, len(buf)))
    h, w = (int(v) for v in np.frombuffer(buf[8:16], dtype="<u4"))
    expected = 16 + 4 * h * w
    if len(buf) != expected:
        raise FormatError("%s: float map %dx%d needs %d bytes, file has %d"
                          % (path, h, w, expected, len(buf)))
    return np.frombuffer(buf[16:], dtype="<f4").reshape(h, w).astype(np.float64)


def read_image(path) -> np.ndarray:
    """Dispatch on extension: .pgm, .png, or .dcf32."""
    name = str(path).lower()
    if name.endswith(".pgm"):
        return read_pgm(path)
    if name.endswith(".png"):
        return read_png(path)
    if name.endswith(".dcf32"):
        return read_dcf32(path)
    raise FormatError("%s: unsupported image extension (use .pgm, .png, "
                      "or .dcf32)" % path)


def write_image(path, image: np.ndarray):
    """Dispatch on extension; 8-bit formats quantize, .dcf32 does not."""
    name = str(path).lower()
    if name.endswith(".pgm"):
        write_pgm(path, image)
    elif name.endswith(".png"):
        write_png(path, image)
    elif name.endswith(".dcf32"):
        write_dcf32(path, image)
    else:
        raise FormatError("%s: unsupported image extension (use .pgm, .png, "
                          "or .dcf32)" % path)
