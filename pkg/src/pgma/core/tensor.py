"""Dense-array engine with reverse-mode differentiation.

Arrays are numpy-backed, float32 by default with a switchable float64 mode
for gradient verification. Every operator records a node on the implicit
graph when any input requires gradients; `backward` walks the graph once in
reverse topological order and accumulates gradients additively across
fan-out. The operator set is fixed: exactly what the mask-assembly pipeline
needs, nothing general-purpose (no higher-order derivatives, no dynamic
control flow inside a recorded graph).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor",
    "ShapeMismatch",
    "constant",
    "parameter",
    "no_grad",
    "use_dtype",
    "default_dtype",
    "backward",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "narrow",
    "softmax",
    "layer_norm",
    "linear",
    "relu",
    "gelu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "clamp",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "reduce_min",
    "conv2d",
    "resize_bilinear",
    "resize_area",
    "bilinear_matrix",
    "area_matrix",
]


class ShapeMismatch(ValueError):
    """Raised when operator inputs do not conform; names the operator and shapes."""

    def __init__(self, op: str, *shapes: tuple, detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


# Thread-local engine state: default dtype and whether graphs are recorded.
# Distinct episodes may run on distinct threads with independent graphs.
class _State(threading.local):
    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True


_state = _State()


def default_dtype() -> np.dtype:
    return np.dtype(_state.dtype)


@contextmanager
def use_dtype(dtype):
    """Switch the default float width (float64 mode is for verification)."""
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    prev = _state.dtype
    _state.dtype = dtype.type
    try:
        yield
    finally:
        _state.dtype = prev


@contextmanager
def no_grad():
    """Disable graph recording (evaluation fast path)."""
    prev = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A dense array plus the graph bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar; mirrors the functional API below
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int] | None = None) -> "Tensor":
        return transpose(self, axes)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


def constant(data) -> Tensor:
    """A graph leaf that never receives gradients."""
    if isinstance(data, Tensor):
        return data.detach()
    return Tensor(data, requires_grad=False)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative DFS; only interior nodes (those with a vjp) are ordered."""
    order: list[Tensor] = []
    visited: set[int] = {id(root)}
    stack: list[tuple[Tensor, Iterator[Tensor]]] = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        nxt = next(parents, None)
        if nxt is None:
            order.append(node)
            stack.pop()
        elif id(nxt) not in visited:
            visited.add(id(nxt))
            if nxt._vjp is not None:
                stack.append((nxt, iter(nxt._parents)))
    return order


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """Populate `.grad` on every reachable tensor with requires_grad.

    The loss must be scalar. The graph is consumed unless retain_graph is
    set; intermediate gradients are dropped as soon as they are used.
    """
    if loss.data.size != 1:
        raise ShapeMismatch("backward", loss.shape, detail="loss must be scalar")
    if loss._vjp is None and not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any parameter")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None:  # loss itself may be a bare parameter
            continue
        gout = node.grad
        grads = node._vjp(gout)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            p.grad = g if p.grad is None else p.grad + g
        if not retain_graph:
            node._parents = ()
            node._vjp = None
            if node is not loss:
                node.grad = None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    data = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _node(data, (a, b), vjp)


def neg(a) -> Tensor:
    a = _t(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = _t(a)
    data = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1),)

    return _node(data, (a,), vjp)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """2-D or batched 3-D matrix product (leading dims broadcast)."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul", a.shape, b.shape, detail="operands must be >= 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    data = np.matmul(a.data, b.data)

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _node(data, (a, b), vjp)


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _t(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = np.transpose(a.data, axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return _node(data, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _t(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch("reshape", a.shape, shape) from None
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _node(data, (a,), vjp)


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [_t(x) for x in tensors]
    if not parts:
        raise ValueError("concat: empty input list")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *[p.shape for p in parts]) from None
    sizes = [p.shape[axis] for p in parts]
    idx = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, idx, axis=axis))

    return _node(data, tuple(parts), vjp)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis (inverse of concat)."""
    a = _t(a)
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeMismatch(
            "narrow", a.shape, detail=f"axis={axis} start={start} length={length}"
        )
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    data = a.data[sl]

    def vjp(g):
        out = np.zeros_like(a.data)
        out[sl] = g
        return (out,)

    return _node(data, (a,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically guarded softmax; rows sum to one and stay strictly positive."""
    a = _t(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _node(data, (a,), vjp)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then affine. gamma/beta broadcast to x."""
    x, gamma, beta = _t(x), _t(gamma), _t(beta)
    n = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd
    data = xhat * gamma.data + beta.data

    def vjp(g):
        ggamma = _unbroadcast(g * xhat, gamma.shape)
        gbeta = _unbroadcast(g, beta.shape)
        gx = g * gamma.data
        gx = istd * (
            gx
            - gx.mean(axis=-1, keepdims=True)
            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        )
        return gx.astype(x.data.dtype, copy=False), ggamma, gbeta

    return _node(data, (x, gamma, beta), vjp)


def linear(x, w, b=None) -> Tensor:
    """x @ w (+ b). x (..., d_in), w (d_in, d_out), b (d_out,)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def relu(a) -> Tensor:
    a = _t(a)
    data = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _node(data, (a,), vjp)


def gelu(a) -> Tensor:
    """Exact Gaussian-error-linear unit: x * Phi(x)."""
    a = _t(a)
    phi_cdf = 0.5 * (1.0 + _erf(a.data / np.sqrt(2.0)))
    data = a.data * phi_cdf
    pdf = np.exp(-0.5 * a.data * a.data) / np.sqrt(2.0 * np.pi)

    def vjp(g):
        return ((phi_cdf + a.data * pdf).astype(a.data.dtype, copy=False) * g,)

    return _node(data.astype(a.data.dtype, copy=False), (a,), vjp)


def sigmoid(a) -> Tensor:
    a = _t(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _node(data, (a,), vjp)


def tanh(a) -> Tensor:
    a = _t(a)
    data = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _node(data, (a,), vjp)


def exp(a) -> Tensor:
    a = _t(a)
    data = np.exp(a.data)

    def vjp(g):
        return (g * data,)

    return _node(data, (a,), vjp)


def log(a) -> Tensor:
    a = _t(a)
    data = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _node(data, (a,), vjp)


def sqrt(a) -> Tensor:
    a = _t(a)
    data = np.sqrt(a.data)

    def vjp(g):
        return (g / (2.0 * data),)

    return _node(data, (a,), vjp)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = _t(a)
    data = np.clip(a.data, lo, hi)
    inside = np.ones_like(a.data, dtype=bool)
    if lo is not None:
        inside &= a.data > lo
    if hi is not None:
        inside &= a.data < hi

    def vjp(g):
        return (g * inside,)

    return _node(data, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _expand(g, axes, keepdims):
    if keepdims:
        return g
    for ax in sorted(axes):
        g = np.expand_dims(g, ax)
    return g


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    axes = _norm_axis(axis, a.ndim)
    data = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        return (np.broadcast_to(_expand(g, axes, keepdims), a.shape),)

    return _node(np.asarray(data), (a,), vjp)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    data = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        return (np.broadcast_to(_expand(g, axes, keepdims), a.shape) / count,)

    return _node(np.asarray(data), (a,), vjp)


def _reduce_extremum(a, axis, keepdims, fn) -> Tensor:
    a = _t(a)
    axes = _norm_axis(axis, a.ndim)
    data = fn(a.data, axis=axes, keepdims=True)
    mask = a.data == data
    counts = mask.sum(axis=axes, keepdims=True)
    out = data if keepdims else data.squeeze(axis=axes)

    def vjp(g):
        # ties share the gradient evenly (subgradient choice)
        ge = _expand(g, axes, keepdims)
        return ((mask * (ge / counts)).astype(a.data.dtype, copy=False),)

    return _node(np.asarray(out), (a,), vjp)


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce_extremum(a, axis, keepdims, np.max)


def reduce_min(a, axis=None, keepdims: bool = False) -> Tensor:
    return _reduce_extremum(a, axis, keepdims, np.min)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv2d(x, w, b=None) -> Tensor:
    """same-padded stride-1 convolution. x (Cin,H,W), w (Cout,Cin,kh,kw), b (Cout,).

    kh/kw must be odd (the pipeline uses 3x3 and 1x1). Implemented as an
    im2col matmul; the backward pass scatters through the same patch layout.
    """
    x, w = _t(x), _t(w)
    bt = _t(b) if b is not None else None
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeMismatch("conv2d", x.shape, w.shape, detail="expect (C,H,W) and (O,C,kh,kw)")
    cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeMismatch("conv2d", x.shape, w.shape, detail="input channel mismatch")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch("conv2d", w.shape, detail="kernel sides must be odd")
    ph, pw = kh // 2, kw // 2

    if kh == 1 and kw == 1:
        wmat = w.data.reshape(cout, cin)
        xmat = x.data.reshape(cin, h * wd)
        out = wmat @ xmat
    else:
        xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw)))
        # (Cin, kh, kw, H, W) patch view, flattened for one matmul
        win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
        xmat = win.transpose(0, 3, 4, 1, 2).reshape(cin * kh * kw, h * wd)
        wmat = w.data.reshape(cout, cin * kh * kw)
        out = wmat @ xmat
    data = out.reshape(cout, h, wd)
    if bt is not None:
        data = data + bt.data[:, None, None]

    def vjp(g):
        gmat = g.reshape(cout, h * wd)
        gw = (gmat @ xmat.T).reshape(w.shape)
        gb = gmat.sum(axis=1) if bt is not None else None
        gxmat = wmat.T @ gmat
        if kh == 1 and kw == 1:
            gx = gxmat.reshape(x.shape)
        else:
            gcols = gxmat.reshape(cin, kh, kw, h, wd)
            gxp = np.zeros((cin, h + 2 * ph, wd + 2 * pw), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i : i + h, j : j + wd] += gcols[:, i, j]
            gx = gxp[:, ph : ph + h, pw : pw + wd]
        if bt is not None:
            return gx, gw, gb
        return gx, gw

    parents = (x, w) if bt is None else (x, w, bt)
    return _node(data, parents, vjp)


# ---------------------------------------------------------------------------
# resizing (interpolation expressed as constant matrices, so the VJP is
# just the transposed matmul)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _bilinear_matrix_f64(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        t = src - i0
        m[i, i0] += 1.0 - t
        m[i, i1] += t
    return m


@lru_cache(maxsize=256)
def _area_matrix_f64(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), int(np.ceil(hi))):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / scale


def bilinear_matrix(n_in: int, n_out: int, dtype=None) -> np.ndarray:
    """Row-stochastic 1-D bilinear interpolation matrix (half-pixel centers)."""
    dt = np.dtype(dtype) if dtype is not None else default_dtype()
    return _bilinear_matrix_f64(n_in, n_out).astype(dt)


def area_matrix(n_in: int, n_out: int, dtype=None) -> np.ndarray:
    """Row-stochastic 1-D area-average matrix (exact cell-overlap weights)."""
    dt = np.dtype(dtype) if dtype is not None else default_dtype()
    return _area_matrix_f64(n_in, n_out).astype(dt)


def _resize(x, out_hw, mat_fn) -> Tensor:
    x = _t(x)
    if x.ndim not in (2, 3):
        raise ShapeMismatch("resize", x.shape, detail="expect (H,W) or (C,H,W)")
    h_out, w_out = out_hw
    h_in, w_in = x.shape[-2], x.shape[-1]
    if (h_in, w_in) == (h_out, w_out):
        return x
    rm = constant(mat_fn(h_in, h_out, x.data.dtype))
    cm = constant(mat_fn(w_in, w_out, x.data.dtype).T)
    return matmul(matmul(rm, x), cm)


def resize_bilinear(x, out_hw: tuple[int, int]) -> Tensor:
    """Bilinear resize of (H,W) or (C,H,W); constant maps stay constant."""
    return _resize(x, out_hw, bilinear_matrix)


def resize_area(x, out_hw: tuple[int, int]) -> Tensor:
    """Area-average resize; the natural downsampler for masks and priors."""
    return _resize(x, out_hw, area_matrix)
