"""Reverse-mode automatic differentiation over dense float32 arrays.

The tape is built eagerly: every operation whose inputs require a
gradient records a closure mapping the output gradient to input
gradients. ``backward`` walks the tape once in reverse topological
order. Gradients accumulate across backward calls; callers zero them
(optimizers do this after each step). A graph is meant to be
back-propagated once; build a fresh graph per training step.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError, InputError

__all__ = [
    "Tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "relu",
    "sigmoid",
    "log",
    "reshape",
    "conv2d",
    "maxpool2d",
    "softmax_cross_entropy",
    "straight_through",
    "backward",
]


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Sigmoid without overflow for large |x|."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Tensor:
    """Dense float32 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad=False, _parents=(), _backprop=None):
        if isinstance(data, np.ndarray) and data.dtype == np.float32:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents
        )
        # Constants fold: tape info is dropped when no input needs a gradient.
        self._parents = tuple(_parents) if self.requires_grad else ()
        self._backprop = _backprop if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, scalar):
        return mul(self, 1.0 / float(scalar))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data + b.data

    def backprop(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _backprop=backprop)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out_data = a.data - b.data

    def backprop(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _backprop=backprop)


def neg(a) -> Tensor:
    a = _lift(a)

    def backprop(g):
        _accum(a, -g)

    return Tensor(-a.data, _parents=(a,), _backprop=backprop)


def mul(a, b) -> Tensor:
    """Hadamard product with numpy broadcasting."""
    a, b = _lift(a), _lift(b)
    out_data = a.data * b.data

    def backprop(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _backprop=backprop)


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul needs (m,k) x (k,n); got {a.data.shape} x {b.data.shape}"
        )
    out_data = a.data @ b.data

    def backprop(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return Tensor(out_data, _parents=(a, b), _backprop=backprop)


def relu(x) -> Tensor:
    x = _lift(x)
    keep = x.data > 0

    def backprop(g):
        _accum(x, g * keep)

    return Tensor(np.where(keep, x.data, np.float32(0.0)), _parents=(x,), _backprop=backprop)


def sigmoid(x) -> Tensor:
    x = _lift(x)
    out_data = _stable_sigmoid(x.data)

    def backprop(g):
        _accum(x, g * out_data * (1.0 - out_data))

    return Tensor(out_data, _parents=(x,), _backprop=backprop)


def log(x) -> Tensor:
    """Natural log; the caller keeps inputs positive."""
    x = _lift(x)

    def backprop(g):
        _accum(x, g / x.data)

    return Tensor(np.log(x.data), _parents=(x,), _backprop=backprop)


def tensor_sum(x) -> Tensor:
    x = _lift(x)

    def backprop(g):
        _accum(x, np.broadcast_to(g, x.data.shape).astype(np.float32))

    return Tensor(x.data.sum(), _parents=(x,), _backprop=backprop)


def reshape(x, shape) -> Tensor:
    x = _lift(x)
    in_shape = x.data.shape

    def backprop(g):
        _accum(x, g.reshape(in_shape))

    return Tensor(x.data.reshape(shape), _parents=(x,), _backprop=backprop)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    img = np.pad(x, [(0, 0), (0, 0), (pad, pad), (pad, pad)]) if pad else x
    col = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        i_max = i + stride * oh
        for j in range(kw):
            j_max = j + stride * ow
            col[:, :, i, j] = img[:, :, i:i_max:stride, j:j_max:stride]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw), oh, ow


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        i_max = i + stride * oh
        for j in range(kw):
            j_max = j + stride * ow
            # Overlapping windows accumulate.
            img[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j]
    return img[:, :, pad:pad + h, pad:pad + w]


def conv2d(x, w, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    x is (N, C, H, W), w is (F, C, kh, kw); output is (N, F, H', W')
    with H' = (H + 2*padding - kh) / stride + 1 (must divide evenly).
    """
    x, w = _lift(x), _lift(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise DimensionError(
            f"conv2d needs 4-d input and kernel; got {x.data.shape}, {w.data.shape}"
        )
    n, c, h, wd = x.data.shape
    f, ck, kh, kw = w.data.shape
    if c != ck:
        raise DimensionError(
            f"conv2d channel mismatch: input {x.data.shape} vs kernel {w.data.shape}"
        )
    if kh > h + 2 * padding or kw > wd + 2 * padding:
        raise DimensionError(
            f"conv2d kernel {w.data.shape} larger than padded input {x.data.shape}"
        )
    if (h + 2 * padding - kh) % stride or (wd + 2 * padding - kw) % stride:
        raise DimensionError(
            f"conv2d geometry not divisible by stride {stride}: "
            f"input {x.data.shape}, kernel {w.data.shape}, padding {padding}"
        )

    cols, oh, ow = _im2col(x.data, kh, kw, stride, padding)
    w_mat = w.data.reshape(f, -1)
    out_data = (cols @ w_mat.T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def backprop(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
        if w.requires_grad:
            _accum(w, (g_mat.T @ cols).reshape(w.data.shape))
        if x.requires_grad:
            _accum(x, _col2im(g_mat @ w_mat, x.data.shape, kh, kw, stride, padding))

    return Tensor(np.ascontiguousarray(out_data), _parents=(x, w), _backprop=backprop)


def maxpool2d(x, size: int = 2) -> Tensor:
    x = _lift(x)
    if x.data.ndim != 4:
        raise DimensionError(f"maxpool2d needs a 4-d input; got {x.data.shape}")
    n, c, h, w = x.data.shape
    if h % size or w % size:
        raise DimensionError(
            f"maxpool2d size {size} does not divide spatial dims of {x.data.shape}"
        )
    oh, ow = h // size, w // size
    windows = (
        x.data.reshape(n, c, oh, size, ow, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, oh, ow, size * size)
    )
    # argmax takes the first maximum: deterministic on ties.
    idx = windows.argmax(axis=-1)
    out_data = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backprop(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = (
            gw.reshape(n, c, oh, ow, size, size)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        _accum(x, gx)

    return Tensor(np.ascontiguousarray(out_data), _parents=(x,), _backprop=backprop)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels.

    Stabilized by max-subtraction; the result is finite for any finite
    logits.
    """
    logits = _lift(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be 2-d (batch, classes); got {logits.data.shape}")
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {n}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise InputError(f"labels must be integers; got dtype {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(
            f"labels must lie in [0, {k}); got range [{labels.min()}, {labels.max()}]"
        )

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    denom = ez.sum(axis=1, keepdims=True)
    logsum = np.log(denom) + m
    rows = np.arange(n)
    nll = logsum[:, 0] - z[rows, labels]
    out_data = np.float32(nll.mean())

    def backprop(g):
        p = ez / denom
        p[rows, labels] -= 1.0
        _accum(logits, p * (np.float32(g) / np.float32(n)))

    return Tensor(out_data, _parents=(logits,), _backprop=backprop)


def straight_through(soft: Tensor, hard_values: np.ndarray) -> Tensor:
    """Forward takes `hard_values`; backward passes gradients to `soft` unchanged."""

    def backprop(g):
        _accum(soft, g)

    return Tensor(hard_values, _parents=(soft,), _backprop=backprop)


def backward(loss: Tensor):
    """Populate gradients of everything `loss` depends on.

    Gradients accumulate into existing buffers; leaves created with
    requires_grad=True keep theirs until zeroed.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar; got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    _accum(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)
