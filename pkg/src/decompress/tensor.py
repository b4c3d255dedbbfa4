"""Dense tensors with reverse-mode automatic differentiation.

Data lives in numpy arrays (float64 by default, float32 supported for
speed); every differentiable operation records its inputs and a local
backward rule, so calling backward() on a scalar loss walks the tape in
reverse topological order and accumulates dloss/dt into t.grad for every
tensor that requires gradients.  Gradient accumulation is additive:
backward twice without zero_grad sums contributions.

Convolutions are lowered to matrix multiplies through im2col; their
backward passes reuse the same lowering (col2im is a sum of nine strided
slice adds for a 3x3 kernel), so forward and backward share one GEMM
shape family and the transpose convolution is the exact adjoint of the
strided convolution with the same weights.
"""

import contextlib

import numpy as np

from .errors import (FormatError, GeometryError, GraphError,
                     NumericGuardError, ShapeError)

_DIV_GUARD = 1e-12

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Context manager that suspends graph recording.

    Operations run inside produce detached tensors; use it for
    inference and for parameter updates.
    """
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy array plus an optional gradient accumulator.

    grad stays None until the first accumulation (or zero_grad); after
    zero_grad every element is exactly 0.  Data is treated as read-only
    once the tensor participates in a graph; the optimizer, which owns
    the parameters, is the only sanctioned in-place writer.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None
        self._op = ""

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() needs a single-element tensor, got shape %r"
                             % (self.shape,))
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's array, outside any graph."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray):
        # Never mutate in place: stored gradients may alias arrays the
        # backward pass still holds (reshape/transpose hand out views).
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Accumulate dself/dt into t.grad for every tensor t in the
        graph below self that requires gradients.

        self must hold a single element (a scalar loss).
        """
        if self.data.size != 1:
            raise GraphError(
                "backward() starts from a scalar; this tensor has shape %r"
                % (self.shape,))
        order = _toposort(self)
        flows = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = flows.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.accumulate_grad(g)
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                held = flows.get(id(parent))
                flows[id(parent)] = pg if held is None else held + pg

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def mean(self):
        return reduce_mean(self)

    def sum(self):
        return reduce_sum(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return "Tensor(shape=%r, dtype=%s%s)" % (self.shape, self.data.dtype, flag)


def _toposort(root: Tensor):
    """Parents-first ordering of the graph below root (iterative DFS)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _as_operands(a, b):
    """Wrap a binary op's operands, giving bare python numbers the
    companion tensor's dtype so scalar constants never promote a
    float32 graph to float64."""
    if isinstance(a, Tensor):
        if isinstance(b, Tensor):
            return a, b
        if isinstance(b, (int, float)) and not isinstance(b, bool):
            return a, Tensor(np.asarray(b, dtype=a.data.dtype))
        return a, Tensor(b)
    if isinstance(b, Tensor) and isinstance(a, (int, float)) \
            and not isinstance(a, bool):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return _as_tensor(a), _as_tensor(b)


def _make(data, parents, backward_fn, op: str) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    return out


def custom_op(data: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    """Record a fused operation with a hand-written backward rule.

    backward_fn(upstream) must return one gradient array (or None) per
    parent, in order.  Meant for composites whose analytic gradient is
    cheaper than the composed primitives; correctness stays on the
    author, so pair every use with a finite-difference test.
    """
    return _make(data, tuple(parents), backward_fn, op)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce an upstream gradient to the shape of a broadcast operand."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic -------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _as_operands(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_operands(a, b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _as_operands(a, b)
    if np.min(np.abs(b.data)) < _DIV_GUARD:
        raise NumericGuardError(
            "division by a value smaller than %g; the caller must clamp first"
            % _DIV_GUARD)
    inv = 1.0 / b.data

    def backward(g):
        ga = g * inv
        return (_unbroadcast(ga, a.shape),
                _unbroadcast(-ga * a.data * inv, b.shape))

    return _make(a.data * inv, (a, b), backward, "div")


def square(x) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        return (g * (2.0 * x.data),)

    return _make(x.data * x.data, (x,), backward, "square")


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    if np.min(x.data) <= 0.0:
        raise NumericGuardError("sqrt needs strictly positive input; clamp first")
    root = np.sqrt(x.data)

    def backward(g):
        return (g * (0.5 / root),)

    return _make(root, (x,), backward, "sqrt")


def absolute(x) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        return (g * np.sign(x.data),)

    return _make(np.abs(x.data), (x,), backward, "abs")


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - t * t),)

    return _make(t, (x,), backward, "tanh")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # 0.5 * (1 + tanh(x/2)) is the overflow-free logistic.
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * s * (1.0 - s),)

    return _make(s, (x,), backward, "sigmoid")


def softplus(x) -> Tensor:
    """log(1 + exp(x)) without overflow (logaddexp form)."""
    x = _as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward(g):
        return (g * s,)

    return _make(out, (x,), backward, "softplus")


def log2(x) -> Tensor:
    x = _as_tensor(x)
    if np.min(x.data) <= 0.0:
        raise NumericGuardError("log2 needs strictly positive input; clamp first")
    inv = 1.0 / (x.data * float(np.log(2.0)))

    def backward(g):
        return (g * inv,)

    return _make(np.log2(x.data), (x,), backward, "log2")


def clamp_min(x, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x > floor."""
    x = _as_tensor(x)
    mask = x.data > floor

    def backward(g):
        return (g * mask,)

    return _make(np.maximum(x.data, floor), (x,), backward, "clamp_min")


# -- shape and reduction ----------------------------------------------


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _make(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(x.data, axes), (x,), backward, "transpose")


def reduce_sum(x) -> Tensor:
    x = _as_tensor(x)

    def backward(g):
        return (np.broadcast_to(g, x.shape).astype(x.data.dtype),)

    return _make(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,), backward, "sum")


def reduce_mean(x) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    scale = 1.0 / n

    def backward(g):
        return (np.broadcast_to(g * scale, x.shape).astype(x.data.dtype),)

    return _make(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,), backward, "mean")


def matmul(a, b) -> Tensor:
    """Batched matrix product along the last two axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul inner extents differ: %r vs %r"
                         % (a.shape, b.shape))

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast_batch(ga, a.shape), _unbroadcast_batch(gb, b.shape)

    return _make(np.matmul(a.data, b.data), (a, b), backward, "matmul")


def _unbroadcast_batch(g: np.ndarray, shape) -> np.ndarray:
    """Like _unbroadcast but leaves the trailing matrix axes alone."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i in range(len(shape) - 2) if shape[i] == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- convolution ------------------------------------------------------


def _conv_out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _to_channel_major(x: np.ndarray) -> np.ndarray:
    """NCHW -> contiguous (C, B, H, W); a cheap outer-axis block copy."""
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3))


def _from_channel_major(x: np.ndarray) -> np.ndarray:
    """(C, B, H, W) -> contiguous NCHW."""
    return np.ascontiguousarray(x.transpose(1, 0, 2, 3))


def _im2col(xc: np.ndarray, k: int, stride: int):
    """Lower channel-major padded input (C, B, Hp, Wp) to patch columns.

    Returns (C*k*k, B*Ho*Wo): row index orders as (channel, ku, kv) and
    column index as (batch, out_row, out_col), so a conv weight reshaped
    to (Cout, Cin*k*k) multiplies it directly.
    """
    c, b, hp, wp = xc.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    if k == 1 and stride == 1:
        return xc.reshape(c, b * hp * wp), ho, wo
    buf = np.empty((c, k, k, b, ho, wo), dtype=xc.dtype)
    for u in range(k):
        for v in range(k):
            buf[:, u, v] = xc[:, :, u:u + stride * ho:stride,
                              v:v + stride * wo:stride]
    return buf.reshape(c * k * k, b * ho * wo), ho, wo


def _col2im(cols: np.ndarray, b: int, c: int, hp: int, wp: int,
            k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch columns back onto the grid.

    Takes (C*k*k, B*Ho*Wo) and returns channel-major (C, B, Hp, Wp).
    Each of the k*k kernel offsets contributes one strided slice add;
    the loop order is fixed, so the accumulation is deterministic.
    """
    if k == 1 and stride == 1:
        return cols.reshape(c, b, hp, wp)
    g6 = cols.reshape(c, k, k, b, ho, wo)
    out = np.zeros((c, b, hp, wp), dtype=cols.dtype)
    for u in range(k):
        for v in range(k):
            out[:, :, u:u + stride * ho:stride,
                v:v + stride * wo:stride] += g6[:, u, v]
    return out


def _pad_channel_major(x: np.ndarray, pad: int) -> np.ndarray:
    """NCHW -> contiguous channel-major (C, B, H+2p, W+2p) in one copy."""
    xt = x.transpose(1, 0, 2, 3)
    if pad == 0:
        return np.ascontiguousarray(xt)
    return np.pad(xt, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x, weight, bias, stride: int = 1, pad: int = 0) -> Tensor:
    """Strided 2-D convolution (cross-correlation), NCHW layout.

    x: (B, Cin, H, W); weight: (Cout, Cin, k, k); bias: (Cout,).
    Output extent per axis is floor((S + 2*pad - k)/stride) + 1.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and weight, got %r and %r"
                         % (x.shape, weight.shape))
    cout, cin, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError("conv2d kernels must be square, got %r" % (weight.shape,))
    if bias.shape != (cout,):
        raise ShapeError("conv2d bias must have shape (%d,), got %r"
                         % (cout, bias.shape))
    if x.shape[1] != cin:
        raise ShapeError("conv2d channel mismatch: input has %d, weight expects %d"
                         % (x.shape[1], cin))
    if stride < 1 or pad < 0 or kh < 1:
        raise GeometryError("conv2d needs stride >= 1, pad >= 0, kernel >= 1")
    b, _, h, w = x.shape
    k = kh
    ho = _conv_out_extent(h, k, stride, pad)
    wo = _conv_out_extent(w, k, stride, pad)
    if ho < 1 or wo < 1:
        raise GeometryError(
            "conv2d output would be empty for input %dx%d, kernel %d, stride %d, pad %d"
            % (h, w, k, stride, pad))

    xc = _pad_channel_major(x.data, pad)
    cols, _, _ = _im2col(xc, k, stride)
    w2d = weight.data.reshape(cout, cin * k * k)
    outc = (w2d @ cols).reshape(cout, b, ho, wo)
    outc += bias.data[:, None, None, None]
    out = _from_channel_major(outc)

    hp, wp = xc.shape[2], xc.shape[3]

    def backward(g):
        gc = _to_channel_major(g).reshape(cout, b * ho * wo)
        gw = (gc @ cols.T).reshape(cout, cin, k, k) if weight.requires_grad else None
        gb = gc.sum(axis=1) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            gxc = _col2im(w2d.T @ gc, b, cin, hp, wp, k, stride, ho, wo)
            if pad:
                gxc = gxc[:, :, pad:pad + h, pad:pad + w]
            gx = _from_channel_major(gxc)
        return gx, gw, gb

    return _make(out, (x, weight, bias), backward, "conv2d")


def conv_transpose2d(x, weight, bias, stride: int = 1, pad: int = 0,
                     output_pad: int = 0) -> Tensor:
    """Transposed 2-D convolution, the adjoint of conv2d in x.

    x: (B, Cin, H, W); weight: (Cin, Cout, k, k); bias: (Cout,).
    Output extent per axis is (S - 1)*stride - 2*pad + k + output_pad,
    with 0 <= output_pad < stride resolving the strided-conv extent
    ambiguity.  With matching geometry and shared weights,
    <conv2d(x, w), y> == <x, conv_transpose2d(y, w)> holds exactly up
    to rounding.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError("conv_transpose2d expects 4-d input and weight, got %r and %r"
                         % (x.shape, weight.shape))
    cin, cout, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError("conv_transpose2d kernels must be square, got %r"
                         % (weight.shape,))
    if bias.shape != (cout,):
        raise ShapeError("conv_transpose2d bias must have shape (%d,), got %r"
                         % (cout, bias.shape))
    if x.shape[1] != cin:
        raise ShapeError(
            "conv_transpose2d channel mismatch: input has %d, weight expects %d"
            % (x.shape[1], cin))
    if stride < 1 or pad < 0 or not (0 <= output_pad < stride):
        raise GeometryError(
            "conv_transpose2d needs stride >= 1, pad >= 0, 0 <= output_pad < stride")
    b, _, h, w = x.shape
    k = kh
    hout = (h - 1) * stride - 2 * pad + k + output_pad
    wout = (w - 1) * stride - 2 * pad + k + output_pad
    if hout < 1 or wout < 1:
        raise GeometryError(
            "conv_transpose2d output would be empty for input %dx%d with "
            "kernel %d, stride %d, pad %d, output_pad %d"
            % (h, w, k, stride, pad, output_pad))

    # Full (uncropped) canvas spans the strided window span plus the
    # output_pad margin; cropping by pad on each side yields the output.
    hb = (h - 1) * stride + k + output_pad
    wb = (w - 1) * stride + k + output_pad
    xc = _to_channel_major(x.data).reshape(cin, b * h * w)
    w2d = weight.data.reshape(cin, cout * k * k)
    buf = _col2im(w2d.T @ xc, b, cout, hb, wb, k, stride, h, w)
    out = _from_channel_major(buf[:, :, pad:pad + hout, pad:pad + wout])
    out += bias.data[None, :, None, None]

    def backward(g):
        # Embed the cropped gradient back onto the full canvas, then the
        # adjoint of col2im is im2col with the same geometry.
        gbuf = np.zeros((cout, b, hb, wb), dtype=g.dtype)
        gbuf[:, :, pad:pad + hout, pad:pad + wout] = g.transpose(1, 0, 2, 3)
        gcols, _, _ = _im2col(gbuf, k, stride)
        gx = None
        if x.requires_grad:
            gx = _from_channel_major((w2d @ gcols).reshape(cin, b, h, w))
        gw = (xc @ gcols.T).reshape(cin, cout, k, k) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return gx, gw, gb

    return _make(out, (x, weight, bias), backward, "conv_transpose2d")


# -- serialization ----------------------------------------------------


def array_to_blob(arr: np.ndarray) -> bytes:
    """Rank, extents (uint32 LE), then row-major float32 LE payload."""
    header = np.asarray((arr.ndim,) + arr.shape, dtype="<u4").tobytes()
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def blob_to_array(buf: bytes, offset: int = 0):
    """Decode one blob; returns (float32 array, offset past the blob)."""

    def take(n_bytes: int, what: str) -> bytes:
        if offset_box[0] + n_bytes > len(buf):
            raise FormatError(
                "truncated tensor blob: need %d bytes for %s at offset %d, "
                "only %d remain" % (n_bytes, what, offset_box[0],
                                    len(buf) - offset_box[0]))
        piece = buf[offset_box[0]:offset_box[0] + n_bytes]
        offset_box[0] += n_bytes
        return piece

    offset_box = [offset]
    rank = int(np.frombuffer(take(4, "rank"), dtype="<u4")[0])
    if rank > 8:
        raise FormatError("implausible tensor rank %d in blob" % rank)
    shape = tuple(int(v) for v in
                  np.frombuffer(take(4 * rank, "extents"), dtype="<u4"))
    count = 1
    for s in shape:
        count *= s
    data = np.frombuffer(take(4 * count, "payload"), dtype="<f4")
    return data.reshape(shape).copy(), offset_box[0]
