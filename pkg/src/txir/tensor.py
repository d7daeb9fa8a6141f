"""Dense tensors with reverse-mode automatic differentiation.

The operator set is exactly what the cross-modal decoder needs: 2-d
convolution (plain and depthwise), fully connected layers, global average
pooling, sigmoid/relu, elementwise add/mul with a restricted broadcast rule,
channel concat/split, bilinear 2x upsampling and full-tensor sum.

Data layout is batch-major N,C,H,W stored as a C-contiguous (row-major)
float array; feature maps are rank 4, embeddings and weight matrices rank 2.
Computation runs in float32 by default; ``float64_mode()`` switches new
tensors to float64 for gradient checking.

Every executed op is recorded on a thread-local tape in execution order;
``backward`` replays the tape in exact reverse, accumulates gradients into
per-node buffers, writes ``.grad`` on ``requires_grad`` leaves, then clears
the tape. Tensors are never mutated by ops, so independent tapes on
different threads may run concurrently.
"""

from __future__ import annotations

import struct
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class TxirError(Exception):
    """Base class for all package errors."""


class ShapeError(TxirError, ValueError):
    """Operand shapes violate an op contract."""


class NumericsError(TxirError, ArithmeticError):
    """An op produced NaN or Inf."""


# --------------------------------------------------------------------------
# dtype mode
# --------------------------------------------------------------------------

_default_dtype = np.float32


def default_dtype():
    return _default_dtype


@contextmanager
def float64_mode():
    """Create new tensors in float64 until the context exits (gradcheck mode)."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.float64
    try:
        yield
    finally:
        _default_dtype = prev


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

class _Node:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op, inputs, output, backward_fn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Graph:
    """Ordered record of executed ops; backward visits it in exact reverse."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def record(self, node: _Node):
        self.nodes.append(node)

    def clear(self):
        self.nodes.clear()


_tls = threading.local()


def _graph() -> Graph:
    g = getattr(_tls, "graph", None)
    if g is None:
        g = Graph()
        _tls.graph = g
    return g


def _recording() -> bool:
    return getattr(_tls, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording (inference paths)."""
    prev = getattr(_tls, "grad_enabled", True)
    _tls.grad_enabled = False
    try:
        yield
    finally:
        _tls.grad_enabled = prev


def clear_graph():
    _graph().clear()


# --------------------------------------------------------------------------
# Tensor
# --------------------------------------------------------------------------

def _check_finite(arr: np.ndarray, op: str):
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{op} produced non-finite values")


class Tensor:
    """Immutable dense array; ops return new tensors and record the tape."""

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = _default_dtype
        arr = np.ascontiguousarray(data, dtype=dtype)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True

    # -- basic views ------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def backward(self):
        backward(self)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


def _result(op: str, out_data: np.ndarray, inputs: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    _check_finite(out_data, op)
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(out_data)
    out.grad = None
    if _recording() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        _graph().record(_Node(op, tuple(inputs), out, backward_fn))
    else:
        out.requires_grad = False
        out.is_leaf = True
    return out


def _check_same_dtype(op: str, *ts: Tensor):
    dtypes = {t.dtype for t in ts}
    if len(dtypes) > 1:
        raise ShapeError(f"{op}: mixed dtypes {sorted(str(d) for d in dtypes)}; "
                         f"use float64_mode() consistently")


# --------------------------------------------------------------------------
# broadcast rules: scalar, [C], and [N,C,1,1] against [N,C,H,W]
# --------------------------------------------------------------------------

def _broadcast_view(small: Tensor, big_shape: tuple[int, ...], op: str) -> np.ndarray | None:
    """Return a broadcastable view of ``small.data`` against ``big_shape``,
    or None if the pair is not one of the supported patterns."""
    s = small.shape
    if s == big_shape:
        return small.data
    if small.size == 1:
        return small.data.reshape((1,) * len(big_shape))
    if len(big_shape) == 4:
        n, c = big_shape[0], big_shape[1]
        if s == (c,):
            return small.data.reshape(1, c, 1, 1)
        if s == (n, c, 1, 1):
            return small.data
    return None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a full-shape gradient back down to the broadcast operand's shape."""
    if grad.shape == shape:
        return grad
    size = 1
    for d in shape:
        size *= d
    if size == 1:
        return grad.sum().reshape(shape)
    if len(shape) == 1:  # [C] against [N,C,H,W]
        return grad.sum(axis=(0, 2, 3)).reshape(shape)
    # [N,C,1,1] against [N,C,H,W]
    return grad.sum(axis=(2, 3), keepdims=True)


def _binary_views(a: Tensor, b: Tensor, op: str):
    av = _broadcast_view(a, b.shape, op)
    if av is not None:
        return av, b.data, b.shape
    bv = _broadcast_view(b, a.shape, op)
    if bv is not None:
        return a.data, bv, a.shape
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible "
                     f"(allowed: equal shapes, scalar, [C] or [N,C,1,1] against [N,C,H,W])")


# --------------------------------------------------------------------------
# elementwise ops
# --------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("add", a, b)
    av, bv, _ = _binary_views(a, b, "add")
    out = av + bv

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("sub", a, b)
    av, bv, _ = _binary_views(a, b, "sub")
    out = av - bv

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("mul", a, b)
    av, bv, _ = _binary_views(a, b, "mul")
    with np.errstate(over="ignore"):  # overflow surfaces as NumericsError below
        out = av * bv

    def bwd(g):
        return _unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)

    return _result("mul", out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("div", a, b)
    av, bv, _ = _binary_views(a, b, "div")
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = av / bv

    def bwd(g):
        ga = _unbroadcast(g / bv, a.shape)
        gb = _unbroadcast(-g * av / (bv * bv), b.shape)
        return ga, gb

    return _result("div", out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        return (-g,)

    return _result("neg", -a.data, (a,), bwd)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)

    def bwd(g):
        return (g * (x.data > 0),)

    return _result("relu", out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    # tanh form is numerically stable for large |x|; saturates to the
    # representable 0.0/1.0 limits instead of overflowing.
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _result("sigmoid", out, (x,), bwd)


def tensor_sum(x: Tensor) -> Tensor:
    out = x.data.sum(dtype=x.dtype).reshape(())

    def bwd(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _result("sum", out, (x,), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    size = 1
    for d in shape:
        size *= d
    if size != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return _result("reshape", out, (x,), bwd)


def broadcast_hw(x: Tensor, height: int, width: int) -> Tensor:
    """Tile a [N,C,1,1] map over spatial positions to [N,C,H,W]."""
    if x.ndim != 4 or x.shape[2] != 1 or x.shape[3] != 1:
        raise ShapeError(f"broadcast_hw expects [N,C,1,1], got {x.shape}")
    n, c = x.shape[0], x.shape[1]
    out = np.broadcast_to(x.data, (n, c, height, width)).copy()

    def bwd(g):
        return (g.sum(axis=(2, 3), keepdims=True),)

    return _result("broadcast_hw", out, (x,), bwd)


# --------------------------------------------------------------------------
# concat / split along the channel axis
# --------------------------------------------------------------------------

def concat(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ShapeError("concat of an empty list")
    _check_same_dtype("concat", *xs)
    base = xs[0].shape
    for t in xs[1:]:
        if t.ndim != len(base) or t.shape[0] != base[0] or t.shape[2:] != base[2:]:
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}")
    out = np.concatenate([t.data for t in xs], axis=1)
    sizes = [t.shape[1] for t in xs]

    def bwd(g):
        grads = []
        start = 0
        for c in sizes:
            grads.append(g[:, start:start + c])
            start += c
        return grads

    return _result("concat", out, tuple(xs), bwd)


def split(x: Tensor) -> tuple[Tensor, Tensor]:
    """Split into two equal groups along the channel dimension."""
    c = x.shape[1]
    if c % 2 != 0:
        raise ShapeError(f"split needs an even channel count, got {c}")
    half = c // 2

    def bwd_a(g):
        full = np.zeros_like(x.data)
        full[:, :half] = g
        return (full,)

    def bwd_b(g):
        full = np.zeros_like(x.data)
        full[:, half:] = g
        return (full,)

    a = _result("split.0", x.data[:, :half].copy(), (x,), bwd_a)
    b = _result("split.1", x.data[:, half:].copy(), (x,), bwd_b)
    return a, b


# --------------------------------------------------------------------------
# linear / conv / pooling
# --------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map: x [N,Din] -> [N,Dout] with w [Dout,Din], b [Dout]."""
    _check_same_dtype("linear", x, w, b)
    if x.ndim != 2 or w.ndim != 2 or b.ndim != 1:
        raise ShapeError(f"linear: ranks must be (2,2,1), got {x.shape}, {w.shape}, {b.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: inner dims differ, x {x.shape} vs w {w.shape}")
    if b.shape[0] != w.shape[0]:
        raise ShapeError(f"linear: bias {b.shape} does not match w {w.shape}")
    out = x.data @ w.data.T + b.data

    def bwd(g):
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    return _result("linear", out, (x, w, b), bwd)


def _conv_out_size(h: int, k: int, stride: int, pad: int, op: str) -> int:
    # floor semantics: trailing rows/columns that do not fit a full stride
    # step are dropped, matching the encoder's H/2-per-stage contract
    span = h + 2 * pad - k
    if span < 0:
        raise ShapeError(f"{op}: size {h} too small for kernel {k} with pad {pad}")
    return span // stride + 1


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """(N,C,H,W) -> (N, C*k*k, Ho*Wo) patch matrix."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]          # (N, C, Ho, Wo, k, k)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    return np.ascontiguousarray(cols)


def _col2im(dcols: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add transpose of _im2col."""
    n, c, h, w = x_shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d6 = dcols.reshape(n, c, k, k, ho, wo)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += d6[:, :, ki, kj]
    if pad:
        return dxp[:, :, pad:h + pad, pad:w + pad]
    return dxp


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of x [N,Cin,H,W] with w [Cout,Cin,k,k] plus bias [Cout]."""
    _check_same_dtype("conv2d", x, w, b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: ranks must be 4, got x {x.shape}, w {w.shape}")
    n, cin, h, wd = x.shape
    cout, win, kh, kw = w.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if win != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but kernel expects {win}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {cout} output channels")
    if pad < 0 or stride < 1:
        raise ShapeError(f"conv2d: invalid stride {stride} / pad {pad}")
    k = kh
    ho = _conv_out_size(h, k, stride, pad, "conv2d")
    wo = _conv_out_size(wd, k, stride, pad, "conv2d")

    w2d = w.data.reshape(cout, cin * k * k)
    if k == 1 and pad == 0:
        xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
        cols = np.ascontiguousarray(xs.reshape(n, cin, ho * wo))
    else:
        cols = _im2col(x.data, k, stride, pad)
    with np.errstate(over="ignore"):
        out = np.matmul(w2d, cols) + b.data.reshape(1, cout, 1)
    out = out.reshape(n, cout, ho, wo)

    def bwd(g):
        g2d = g.reshape(n, cout, ho * wo)
        dw = np.tensordot(g2d, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        db = g2d.sum(axis=(0, 2))
        dcols = np.matmul(w2d.T, g2d)
        if k == 1 and pad == 0:
            if stride == 1:
                dx = dcols.reshape(x.shape)
            else:
                dx = np.zeros_like(x.data)
                dx[:, :, ::stride, ::stride] = dcols.reshape(n, cin, ho, wo)
        else:
            dx = _col2im(dcols, x.shape, k, stride, pad)
        return dx, dw, db

    return _result("conv2d", out, (x, w, b), bwd)


def dwconv2d(x: Tensor, w: Tensor) -> Tensor:
    """Depthwise convolution: w [C,1,k,k], k in {3,5}, padding k//2, stride 1.

    Channel c of the output depends only on channel c of the input.
    """
    _check_same_dtype("dwconv2d", x, w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[1] != 1:
        raise ShapeError(f"dwconv2d: expected x [N,C,H,W], w [C,1,k,k]; got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    if w.shape[0] != c:
        raise ShapeError(f"dwconv2d: input has {c} channels but kernel has {w.shape[0]}")
    k = w.shape[2]
    if w.shape[3] != k or k not in (3, 5):
        raise ShapeError(f"dwconv2d: kernel must be 3x3 or 5x5, got {w.shape[2]}x{w.shape[3]}")
    pad = k // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ker = w.data[:, 0]
    out = np.zeros_like(x.data)
    for ki in range(k):
        for kj in range(k):
            out += xp[:, :, ki:ki + h, kj:kj + wd] * ker[None, :, ki, kj, None, None]

    def bwd(g):
        dw = np.empty_like(w.data)
        dxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                patch = xp[:, :, ki:ki + h, kj:kj + wd]
                dw[:, 0, ki, kj] = np.einsum("nchw,nchw->c", patch, g)
                dxp[:, :, ki:ki + h, kj:kj + wd] += g * ker[None, :, ki, kj, None, None]
        dx = dxp[:, :, pad:h + pad, pad:wd + pad]
        return dx, dw

    return _result("dwconv2d", out, (x, w), bwd)


def gap(x: Tensor) -> Tensor:
    """Global average pooling: [N,C,H,W] -> [N,C,1,1], mean over all spatial positions."""
    if x.ndim != 4:
        raise ShapeError(f"gap expects [N,C,H,W], got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def bwd(g):
        scale = np.asarray(1.0 / (h * w), dtype=x.dtype)
        return (np.broadcast_to(g * scale, x.shape).astype(x.dtype, copy=False),)

    return _result("gap", out, (x,), bwd)


# --------------------------------------------------------------------------
# bilinear 2x upsampling
# --------------------------------------------------------------------------

_interp_cache: dict[tuple[int, str], np.ndarray] = {}


def _interp_matrix(n: int, dtype) -> np.ndarray:
    """(2n, n) bilinear interpolation matrix, half-pixel-center convention.

    Output index i samples source coordinate (i + 0.5)/2 - 0.5, clamped to
    [0, n-1], blending the two nearest source samples linearly.
    """
    key = (n, np.dtype(dtype).str)
    cached = _interp_cache.get(key)
    if cached is not None:
        return cached
    m = np.zeros((2 * n, n), dtype=dtype)
    for i in range(2 * n):
        src = (i + 0.5) / 2.0 - 0.5
        x0 = int(np.floor(src))
        t = src - x0
        lo = min(max(x0, 0), n - 1)
        hi = min(max(x0 + 1, 0), n - 1)
        m[i, lo] += 1.0 - t
        m[i, hi] += t
    _interp_cache[key] = m
    return m


def upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling, half-pixel centers (align-corners=false)."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2x expects [N,C,H,W], got {x.shape}")
    n, c, h, w = x.shape
    rm = _interp_matrix(h, x.dtype)
    cm = _interp_matrix(w, x.dtype)
    # separable interpolation as two batched GEMMs: rows then columns
    rows = np.matmul(rm, x.data.reshape(n * c, h, w))
    out = np.matmul(rows, cm.T).reshape(n, c, 2 * h, 2 * w)

    def bwd(g):
        gr = np.matmul(rm.T, g.reshape(n * c, 2 * h, 2 * w))
        return (np.matmul(gr, cm).reshape(n, c, h, w),)

    return _result("upsample2x", out, (x,), bwd)


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------

def backward(loss: Tensor):
    """Accumulate gradients of a scalar loss into every requires_grad leaf.

    Consumes and clears the active tape.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = _graph()
    try:
        buffers: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(graph.nodes):
            g = buffers.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward_fn(g)
            for t, ig in zip(node.inputs, in_grads):
                if ig is None or not t.requires_grad:
                    continue
                if t.is_leaf:
                    t.grad = ig.copy() if t.grad is None else t.grad + ig
                else:
                    acc = buffers.get(id(t))
                    buffers[id(t)] = ig if acc is None else acc + ig
        if loss.is_leaf and loss.requires_grad and loss.grad is None:
            loss.grad = np.ones_like(loss.data)
    finally:
        graph.clear()


# --------------------------------------------------------------------------
# serialization: "TXIR" | u32 rank | u32 dims... | little-endian float32 data
# --------------------------------------------------------------------------

TXIR_MAGIC = b"TXIR"


def tensor_to_bytes(t: Tensor) -> bytes:
    dims = t.shape
    header = TXIR_MAGIC + struct.pack("<I", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    return header + np.ascontiguousarray(t.data, dtype="<f4").tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one serialized tensor; returns (tensor, next offset)."""
    if buf[offset:offset + 4] != TXIR_MAGIC:
        raise TxirError(f"bad tensor magic {buf[offset:offset + 4]!r} at offset {offset}")
    offset += 4
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    if rank > 8:
        raise TxirError(f"implausible tensor rank {rank}")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    count = 1
    for d in dims:
        if d <= 0:
            raise TxirError(f"non-positive dimension in {dims}")
        count *= d
    end = offset + 4 * count
    if end > len(buf):
        raise TxirError("truncated tensor data")
    arr = np.frombuffer(buf[offset:end], dtype="<f4").reshape(dims)
    return Tensor(arr.astype(np.float32)), end


def write_tensor(t: Tensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(t))


def read_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    t, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise TxirError(f"{path}: {len(buf) - end} trailing bytes after tensor")
    return t
