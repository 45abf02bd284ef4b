"""Minimal dense-tensor reverse-mode automatic differentiation on numpy.

Tensors wrap numpy arrays and record the op graph as they are combined;
``backward`` walks the graph once in reverse topological order and accumulates
gradients additively on every leaf with ``requires_grad``. Training runs in
float32; gradient verification (``grad_check``) runs the same graph in float64
against central finite differences.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class TrainingAborted(RuntimeError):
    """Raised when a non-finite loss is detected during training."""


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, op: str = "leaf"):
        # np.asarray keeps numpy scalar dtypes (reductions yield 0-d results)
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self._op = op

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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        # grads are combined out-of-place everywhere, so aliasing g is safe
        if self.grad is None:
            self.grad = g if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=False)

    # operator sugar; scalars and arrays are lifted to constant tensors
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    def __radd__(self, other):
        return add(_lift(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.dtype))

    def __rsub__(self, other):
        return sub(_lift(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    def __rmul__(self, other):
        return mul(_lift(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_lift(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def _lift(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def _make(data, parents, backward, op) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    if not requires:
        backward = None
        parents = ()
    return Tensor(data, requires_grad=requires, parents=parents, backward=backward, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a.dtype)
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b))
    return _lift(a, b.dtype), b


def add(a: Tensor, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data + b.data

    def backward(grad, out):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(grad, b.shape))

    return _make(out_data, (a, b), backward, "add")


def sub(a: Tensor, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data - b.data

    def backward(grad, out):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-grad, b.shape))

    return _make(out_data, (a, b), backward, "sub")


def mul(a: Tensor, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data * b.data

    def backward(grad, out):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(grad * a.data, b.shape))

    return _make(out_data, (a, b), backward, "mul")


def div(a: Tensor, b) -> Tensor:
    a, b = _pair(a, b)
    out_data = a.data / b.data

    def backward(grad, out):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(grad / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-grad * a.data / (b.data * b.data), b.shape))

    return _make(out_data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    def backward(grad, out):
        a.accumulate_grad(-grad)

    return _make(-a.data, (a,), backward, "neg")


def powc(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    out_data = a.data**exponent

    def backward(grad, out):
        a.accumulate_grad(grad * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), backward, "powc")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(grad, out):
        a.accumulate_grad(grad * 0.5 / out.data)

    return _make(out_data, (a,), backward, "sqrt")


def absolute(a: Tensor) -> Tensor:
    out_data = np.abs(a.data)

    def backward(grad, out):
        a.accumulate_grad(grad * np.sign(a.data))

    return _make(out_data, (a,), backward, "abs")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Elementwise clamp; gradient passes through inside [lo, hi], zero outside."""
    out_data = np.clip(a.data, lo, hi)

    def backward(grad, out):
        inside = (a.data >= lo) & (a.data <= hi)
        a.accumulate_grad(grad * inside.astype(a.dtype))

    return _make(out_data, (a,), backward, "clamp")


def sign_ste(a: Tensor) -> Tensor:
    """Binarize by sign into {-1, +1}; backward is the identity (straight-through)."""
    out_data = np.where(a.data > 0, 1.0, -1.0).astype(a.dtype)

    def backward(grad, out):
        a.accumulate_grad(grad)

    return _make(out_data, (a,), backward, "sign_ste")


# ---------------------------------------------------------------------------
# activations


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(grad, out):
        a.accumulate_grad(grad * out.data)

    return _make(out_data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def backward(grad, out):
        a.accumulate_grad(grad / a.data)

    return _make(out_data, (a,), backward, "log")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(a.dtype)

    def backward(grad, out):
        a.accumulate_grad(grad * out.data * (1.0 - out.data))

    return _make(out_data, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(grad, out):
        a.accumulate_grad(grad * (1.0 - out.data * out.data))

    return _make(out_data, (a,), backward, "tanh")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out_data = (np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))).astype(a.dtype)

    def backward(grad, out):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        a.accumulate_grad(grad * s.astype(a.dtype))

    return _make(out_data, (a,), backward, "softplus")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out_data = (0.5 * x * (1.0 + t)).astype(a.dtype)

    def backward(grad, out):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        dgelu = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        a.accumulate_grad(grad * dgelu.astype(a.dtype))

    return _make(out_data, (a,), backward, "gelu")


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    old_shape = a.shape

    def backward(grad, out):
        a.accumulate_grad(grad.reshape(old_shape))

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(grad, out):
        a.accumulate_grad(grad.transpose(inv))

    return _make(a.data.transpose(axes), (a,), backward, "transpose")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad, out):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * grad.ndim
                idx[axis] = slice(start, stop)
                t.accumulate_grad(grad[tuple(idx)])

    return _make(out_data, tuple(tensors), backward, "concat")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(grad, out):
        full = np.zeros(a.shape, dtype=grad.dtype)
        full[idx] = grad
        a.accumulate_grad(full)

    return _make(a.data[idx].copy(), (a,), backward, "narrow")


# ---------------------------------------------------------------------------
# matmul / indexing


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports 2D and equal-batch stacked operands."""
    out_data = np.matmul(a.data, b.data)

    def backward(grad, out):
        if a.requires_grad:
            ga = np.matmul(grad, np.swapaxes(b.data, -1, -2))
            a.accumulate_grad(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), grad)
            b.accumulate_grad(_unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), backward, "matmul")


def _index_add(target: np.ndarray, index: np.ndarray, src: np.ndarray) -> None:
    """target[index] += src with duplicate indices (sort+reduceat beats np.add.at)."""
    if len(index) == 0:
        return
    order = np.argsort(index, kind="stable")
    sidx = index[order]
    ssrc = src[order]
    starts = np.nonzero(np.r_[True, sidx[1:] != sidx[:-1]])[0]
    target[sidx[starts]] += np.add.reduceat(ssrc, starts, axis=0)


def gather_rows(a: Tensor, index: np.ndarray, unique: bool = False) -> Tensor:
    """Select rows along axis 0: out[i] = a[index[i]].

    ``unique=True`` promises no duplicate indices, enabling a faster backward.
    """
    index = np.asarray(index, dtype=np.int64)
    out_data = a.data[index]

    def backward(grad, out):
        full = np.zeros(a.shape, dtype=grad.dtype)
        if unique:
            full[index] = grad
        else:
            _index_add(full, index, grad)
        a.accumulate_grad(full)

    return _make(out_data, (a,), backward, "gather_rows")


def scatter_add_rows(a: Tensor, index: np.ndarray, n_rows: int, unique: bool = False) -> Tensor:
    """Scatter rows of ``a`` into ``n_rows`` output rows, adding on collisions."""
    index = np.asarray(index, dtype=np.int64)
    out_data = np.zeros((n_rows,) + a.shape[1:], dtype=a.dtype)
    if unique:
        out_data[index] = a.data
    else:
        _index_add(out_data, index, a.data)

    def backward(grad, out):
        a.accumulate_grad(grad[index])

    return _make(out_data, (a,), backward, "scatter_add_rows")


# ---------------------------------------------------------------------------
# reductions / normalizations


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(ax % ndim for ax in axis)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(grad, out):
        g = grad
        if not keepdims:
            g = np.expand_dims(g, axes)
        a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.dtype))

    return _make(out_data, (a,), backward, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _axis_tuple(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if a.ndim else 1
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(grad, out):
        g = grad
        if not keepdims:
            g = np.expand_dims(g, axes)
        a.accumulate_grad((np.broadcast_to(g, a.shape) / count).astype(a.dtype))

    return _make(out_data, (a,), backward, "mean")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(grad, out):
        p = out.data
        dot = (grad * p).sum(axis=axis, keepdims=True)
        a.accumulate_grad(p * (grad - dot))

    return _make(out_data, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse

    def backward(grad, out):
        p = np.exp(out.data)
        a.accumulate_grad(grad - p * grad.sum(axis=axis, keepdims=True))

    return _make(out_data, (a,), backward, "log_softmax")


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """Non-affine layer normalization over one axis."""
    x = a.data
    mu = x.mean(axis=axis, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out_data = xc * inv

    def backward(grad, out):
        n = x.shape[axis]
        y = out.data
        gmean = grad.mean(axis=axis, keepdims=True)
        gymean = (grad * y).mean(axis=axis, keepdims=True)
        a.accumulate_grad(inv * (grad - gmean - y * gymean))
        del n

    return _make(out_data, (a,), backward, "layer_norm")


def rms_norm(a: Tensor, axis: int = -1, eps: float = 1e-6) -> Tensor:
    """Non-affine root-mean-square normalization over one axis."""
    x = a.data
    ms = (x * x).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    out_data = x * inv

    def backward(grad, out):
        n = x.shape[axis]
        gx = (grad * x).sum(axis=axis, keepdims=True)
        a.accumulate_grad(inv * grad - (inv**3 / n) * x * gx)

    return _make(out_data, (a,), backward, "rms_norm")


def cross_entropy(logits: Tensor, targets: np.ndarray, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy over the last axis of a 2D logit matrix.

    ``-inf`` logit entries are legal (additive vocabulary masks) and receive
    exactly zero probability mass and zero gradient.
    """
    targets = np.asarray(targets, dtype=np.int64)
    x = logits.data
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    z = e.sum(axis=-1, keepdims=True)
    logp = (x - m) - np.log(z)
    picked = logp[np.arange(x.shape[0]), targets]
    losses = -picked
    if reduction == "mean":
        out_data = losses.mean()
        scale = 1.0 / x.shape[0]
    elif reduction == "sum":
        out_data = losses.sum()
        scale = 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def backward(grad, out):
        p = e / z
        p[np.arange(x.shape[0]), targets] -= 1.0
        logits.accumulate_grad(p * (grad * scale))

    return _make(np.asarray(out_data, dtype=x.dtype), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# backward driver


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor with requires_grad."""
    if loss.size != 1:
        raise ValueError("backward requires a scalar loss")
    if not np.isfinite(loss.data).all():
        raise TrainingAborted("non-finite loss")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad, node)


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords_per_param: int = 16,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` must be a deterministic scalar function of ``params``; params must be
    float64. Error metric: ``|analytic - numeric| / max(1, |analytic|)``.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        if p.dtype != np.float64:
            raise ValueError("grad_check requires float64 parameters")
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise TrainingAborted("non-finite objective in grad_check")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros(p.shape, dtype=np.float64)
        n = p.size
        k = min(max_coords_per_param, n)
        coords = rng.choice(n, size=k, replace=False)
        flat = p.data.reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = float(f().data)
            flat[c] = orig - eps
            lo = float(f().data)
            flat[c] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = float(analytic.reshape(-1)[c])
            err = abs(a - numeric) / max(1.0, abs(a))
            worst = max(worst, err)
    return worst
