"""Reverse-mode automatic differentiation over dense numpy arrays.

The engine is a tape of `Tensor` nodes. Each forward op records its parents
and a closure that routes the upstream gradient to them. Calling
``backward()`` on a scalar result walks the tape in reverse topological
order and accumulates gradients into every participating tensor that has
``requires_grad`` set.

Accumulation rule: gradients ADD across successive ``backward()`` calls.
Call ``zero_grad()`` (or ``Adam.zero_grad``) between optimizer steps.

Only the ops required by the renderer, the sampling-based color model and
the losses are provided; this is not a general tensor framework.
"""

from __future__ import annotations

import numpy as np

from . import backend


def _as_array(x, dtype=None):
    arr = np.asarray(x, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


def check_finite(arr, what="array"):
    """Raise ValueError if arr contains NaN or Inf."""
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")


class Tensor:
    """A dense array with an optional gradient accumulator.

    ``data`` and ``grad`` always share shape and dtype. Leaf tensors are
    validated to be finite on construction; intermediate results are
    produced by ops via :meth:`from_op`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_array(data)
        check_finite(self.data, "tensor data")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @classmethod
    def from_op(cls, data, parents, backward_fn):
        """Build an op result. ``backward_fn(grad)`` must add into parents."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from a scalar result.

        Gradients accumulate into ``.grad`` of every reachable tensor with
        ``requires_grad``; repeated calls keep adding (documented rule).
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar, got shape {self.data.shape}")
        check_finite(self.data, "loss value")
        order = _toposort(self)
        self.accumulate_grad(np.ones_like(self.data))
        for node in order:
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # Intermediate grads are only needed once per pass.
                if node is not self:
                    node.grad = None

    # Operator sugar used throughout the package.
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

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _toposort(root):
    """Reverse topological order from root, iterative to bound stack depth."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (adjoint of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    return Tensor.from_op(data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    return Tensor.from_op(data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    return Tensor.from_op(data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor.from_op(data, (a, b), backward)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return Tensor.from_op(data, (a, b), backward)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())

    return Tensor.from_op(np.asarray(data), (a,), backward)


def tmean(a, axis=None):
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / count)


def tabs(a):
    a = as_tensor(a)
    data = np.abs(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * np.sign(a.data))

    return Tensor.from_op(data, (a,), backward)


def square(a):
    a = as_tensor(a)
    data = a.data * a.data

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * 2.0 * a.data)

    return Tensor.from_op(data, (a,), backward)


def texp(a):
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * data)

    return Tensor.from_op(data, (a,), backward)


def tlog(a):
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g / a.data)

    return Tensor.from_op(data, (a,), backward)


def leaky_relu(a, negative_slope=0.2):
    a = as_tensor(a)
    data = np.where(a.data >= 0.0, a.data, negative_slope * a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(
                g * np.where(a.data >= 0.0, 1.0, negative_slope))

    return Tensor.from_op(data, (a,), backward)


def softplus(a):
    """log(1 + exp(x)), overflow-safe at both tails."""
    a = as_tensor(a)
    data = np.logaddexp(0.0, a.data)

    def backward(g):
        if a.requires_grad:
            # d softplus / dx = sigmoid(x), computed without overflow.
            sig = np.exp(a.data - data)
            a.accumulate_grad(g * sig)

    return Tensor.from_op(data, (a,), backward)


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes through the interior only."""
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)

    def backward(g):
        if a.requires_grad:
            inside = (a.data >= lo) & (a.data <= hi)
            a.accumulate_grad(g * inside)

    return Tensor.from_op(data, (a,), backward)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.data.shape))

    return Tensor.from_op(data, (a,), backward)


def take_index(a, index, axis=0):
    """Select one slice along `axis` (e.g. one plane of a stack)."""
    a = as_tensor(a)
    data = np.take(a.data, index, axis=axis)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            sl = [slice(None)] * a.data.ndim
            sl[axis] = index
            full[tuple(sl)] = g
            a.accumulate_grad(full)

    return Tensor.from_op(data, (a,), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for t, part in zip(tensors, parts):
            if t.requires_grad:
                t.accumulate_grad(part)

    return Tensor.from_op(data, tuple(tensors), backward)


def gather_pixels(a, ys, xs):
    """Select rows a[ys[k], xs[k], :] from an (H, W, C) tensor."""
    a = as_tensor(a)
    ys = np.asarray(ys, dtype=np.intp)
    xs = np.asarray(xs, dtype=np.intp)
    data = a.data[ys, xs]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (ys, xs), g)
            a.accumulate_grad(full)

    return Tensor.from_op(data, (a,), backward)


def scatter_add_pixels(base, ys, xs, values, coeff):
    """base + sum over entries of coeff[k] * values[k] placed at (ys[k], xs[k]).

    `base` and `coeff` are constants; gradients flow into `values` only.
    Duplicate (y, x) entries accumulate.
    """
    base = np.asarray(base, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.intp)
    xs = np.asarray(xs, dtype=np.intp)
    coeff = np.asarray(coeff, dtype=np.float64)
    values = as_tensor(values)
    data = base.copy()
    np.add.at(data, (ys, xs), coeff[:, None] * values.data)

    def backward(g):
        if values.requires_grad:
            values.accumulate_grad(g[ys, xs] * coeff[:, None])

    return Tensor.from_op(data, (values,), backward)


def bilinear_warp(a, hmat):
    """Backward-warp an (H, W, C) tensor by a 3x3 pixel-coordinate map.

    The map is fixed (not differentiated); gradients flow to the source
    pixel values through the bilinear weights.
    """
    a = as_tensor(a)
    hmat = np.asarray(hmat, dtype=np.float64)
    data = backend.warp_bilinear(a.data, hmat)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(backend.warp_bilinear_grad(
                np.ascontiguousarray(g), hmat, a.data.shape))

    return Tensor.from_op(data, (a,), backward)


def conv2d_valid(a, kernel):
    """Valid-region cross-correlation of an (H, W, C) tensor with a fixed
    2D kernel, applied per channel."""
    a = as_tensor(a)
    kernel = np.asarray(kernel, dtype=np.float64)
    data = _corr2d_valid(a.data, kernel)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_corr2d_grad(g, kernel, a.data.shape))

    return Tensor.from_op(data, (a,), backward)


def _corr2d_valid(img, kernel):
    """img: (H, W, C), kernel: (kh, kw) -> (H-kh+1, W-kw+1, C)."""
    kh, kw = kernel.shape
    windows = np.lib.stride_tricks.sliding_window_view(img, (kh, kw), axis=(0, 1))
    return np.tensordot(windows, kernel, axes=([3, 4], [0, 1]))


def _corr2d_grad(g, kernel, src_shape):
    """Adjoint of valid cross-correlation: full convolution with the kernel."""
    kh, kw = kernel.shape
    padded = np.pad(g, ((kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
    return _corr2d_valid(padded, kernel[::-1, ::-1])
