"""Dense float64 tensors with reverse-mode automatic differentiation.

A small tape-based engine: every operation returns a new :class:`Tensor`
whose backward closure knows how to push gradients to its parents.
Everything is stored as contiguous numpy float64; there is no graph
optimization and no implicit dtype promotion. Determinism: identical
inputs and seeds give bit-identical outputs and gradients.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "reshape",
    "transpose",
    "broadcast_to",
    "concat",
    "stack",
    "tensor_sum",
    "tensor_mean",
    "reduce_max",
    "relu",
    "sigmoid",
    "tanh",
    "tensor_abs",
    "sqrt",
    "conv2d",
    "max_pool2d",
    "avg_pool2d",
    "adaptive_avg_pool2d",
    "cosine_similarity",
    "backward",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """n-dimensional float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp: Callable | None = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def detach(self) -> "Tensor":
        out = Tensor(self.data)
        return out

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar ------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def _as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Create an op output, recording the tape when gradients are live.

    ``vjp`` maps the upstream gradient to a tuple of parent gradients
    (entries may be None for parents that do not need one).
    """
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise arithmetic (broadcasting) ------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return _node(data, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _node(data, (a, b), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching over leading axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        da = g @ np.swapaxes(b.data, -1, -2)
        db = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _node(data, (a, b), vjp)


# -- shape movement ------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _node(data, (x,), vjp)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    data = np.ascontiguousarray(x.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _node(data, (x,), vjp)


def broadcast_to(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    data = np.broadcast_to(x.data, shape).copy()

    def vjp(g):
        return (_unbroadcast(g, x.shape),)

    return _node(data, (x,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return _node(data, parts, vjp)


def stack(tensors, axis: int = 0) -> Tensor:
    parts = [_as_tensor(t) for t in tensors]
    shape = parts[0].shape
    for p in parts:
        _check_same_shape(parts[0], p, "stack")
    axis = axis % (len(shape) + 1)
    new_shape = shape[:axis] + (1,) + shape[axis:]
    return concat([reshape(p, new_shape) for p in parts], axis=axis)


def take(x, index) -> Tensor:
    """Numpy-style indexing; gradients scatter-add back into place."""
    x = _as_tensor(x)
    data = x.data[index]
    if isinstance(data, np.ndarray):
        data = data.copy()
    else:
        data = np.asarray(data, dtype=np.float64)

    def _has_array(idx) -> bool:
        if isinstance(idx, (np.ndarray, list)):
            return True
        if isinstance(idx, tuple):
            return any(isinstance(i, (np.ndarray, list)) for i in idx)
        return False

    advanced = _has_array(index)

    def vjp(g):
        grad = np.zeros(x.shape)
        if advanced:
            np.add.at(grad, index, g)
        else:
            grad[index] += g
        return (grad,)

    return _node(data, (x,), vjp)


# -- reductions -----------------------------------------------------------------

def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    data = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node(data, (x,), vjp)


def tensor_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _normalize_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    data = x.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _node(data, (x,), vjp)


def reduce_max(x, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; the gradient routes to the first argmax."""
    x = _as_tensor(x)
    axis = axis % x.ndim
    data = x.data.max(axis=axis, keepdims=keepdims)
    argmax = np.expand_dims(x.data.argmax(axis=axis), axis)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        grad = np.zeros(x.shape)
        np.put_along_axis(grad, argmax, g, axis=axis)
        return (grad,)

    return _node(data, (x,), vjp)


# -- nonlinearities ----------------------------------------------------------------

def relu(x) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def vjp(g):
        return (g * (x.data > 0.0),)

    return _node(data, (x,), vjp)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    z = np.exp(-np.abs(x.data))
    data = np.where(x.data >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _node(data, (x,), vjp)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    data = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _node(data, (x,), vjp)


def tensor_abs(x) -> Tensor:
    x = _as_tensor(x)
    data = np.abs(x.data)

    def vjp(g):
        return (g * np.sign(x.data),)

    return _node(data, (x,), vjp)


def sqrt(x) -> Tensor:
    """Elementwise square root; gradient is defined as 0 at exactly 0 so a
    zero upstream gradient can never produce NaN through 0 * inf."""
    x = _as_tensor(x)
    data = np.sqrt(x.data)

    def vjp(g):
        denom = 2.0 * data
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = np.where(denom == 0.0, 0.0, g / denom)
        return (grad,)

    return _node(data, (x,), vjp)


# -- convolution and pooling ----------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    """Patch matrix in (n, c*kh*kw, ho*wo) layout (no transposes)."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = x.shape[2], x.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i : i + stride * ho : stride,
                                 j : j + stride * wo : stride]
    return cols.reshape(n, c * kh * kw, ho * wo), ho, wo


def _col2im(dcols: np.ndarray, x_shape, kh, kw, stride, padding):
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    dx = np.zeros((n, c, hp, wp))
    d6 = dcols.reshape(n, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            # rows i, i+stride, ... are distinct, so slice-add is alias free
            dx[:, :, i : i + stride * ho : stride,
               j : j + stride * wo : stride] += d6[:, :, i, j]
    if padding:
        dx = dx[:, :, padding:-padding, padding:-padding]
    return dx


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation), NCHW layout."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(
            f"conv2d needs 4-d input and weight, got {x.shape} and {weight.shape}"
        )
    f, cw, kh, kw = weight.shape
    if x.shape[1] != cw:
        raise ValueError(f"conv2d: shape mismatch {x.shape} vs {weight.shape}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    wmat = weight.data.reshape(f, cw * kh * kw)
    n = x.shape[0]
    data = (wmat @ cols).reshape(n, f, ho, wo)
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (f,):
            raise ValueError(f"conv2d: shape mismatch {bias.shape} vs ({f},)")
        data = data + bias.data.reshape(1, f, 1, 1)
        parents.append(bias)

    def vjp(g):
        g3 = g.reshape(n, f, ho * wo)
        dw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        dcols = wmat.T @ g3  # (n, c*kh*kw, ho*wo)
        dx = _col2im(dcols, x.shape, kh, kw, stride, padding)
        if bias is not None:
            return dx, dw, g.sum(axis=(0, 2, 3))
        return dx, dw

    return _node(data, parents, vjp)


def _pool_windows(x: np.ndarray, extent: int, stride: int):
    n, c, h, w = x.shape
    ho = (h - extent) // stride + 1
    wo = (w - extent) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(x, (extent, extent), axis=(2, 3))
    return view[:, :, ::stride, ::stride], ho, wo


def max_pool2d(x, extent: int, stride: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"max_pool2d needs a 4-d input, got {x.shape}")
    stride = extent if stride is None else stride
    windows, ho, wo = _pool_windows(x.data, extent, stride)
    flat = windows.reshape(*windows.shape[:4], extent * extent)
    arg = flat.argmax(axis=-1)
    data = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        n, c = x.shape[0], x.shape[1]
        grad = np.zeros(x.shape)
        ki, kj = np.unravel_index(arg, (extent, extent))
        rows = (np.arange(ho) * stride)[None, None, :, None] + ki
        cols = (np.arange(wo) * stride)[None, None, None, :] + kj
        bi = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(grad, (bi, ci, rows, cols), g)
        return (grad,)

    return _node(data, (x,), vjp)


def avg_pool2d(x, extent: int, stride: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"avg_pool2d needs a 4-d input, got {x.shape}")
    stride = extent if stride is None else stride
    windows, ho, wo = _pool_windows(x.data, extent, stride)
    data = windows.mean(axis=(-2, -1))
    scale = 1.0 / (extent * extent)

    def vjp(g):
        grad = np.zeros(x.shape)
        gs = g * scale
        for i in range(extent):
            for j in range(extent):
                grad[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gs
        return (grad,)

    return _node(data, (x,), vjp)


def adaptive_avg_pool2d(x, target: int | tuple) -> Tensor:
    """Average pooling onto a fixed output extent (windows may be unequal)."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"adaptive_avg_pool2d needs a 4-d input, got {x.shape}")
    th, tw = (target, target) if isinstance(target, int) else target
    n, c, h, w = x.shape
    if th > h or tw > w:
        raise ValueError(f"adaptive_avg_pool2d: target {(th, tw)} exceeds {(h, w)}")
    rb = [(i * h) // th for i in range(th)] + [h]
    cb = [(j * w) // tw for j in range(tw)] + [w]
    data = np.empty((n, c, th, tw))
    for i in range(th):
        for j in range(tw):
            data[:, :, i, j] = x.data[:, :, rb[i] : rb[i + 1], cb[j] : cb[j + 1]].mean(
                axis=(2, 3)
            )

    def vjp(g):
        grad = np.zeros(x.shape)
        for i in range(th):
            for j in range(tw):
                area = (rb[i + 1] - rb[i]) * (cb[j + 1] - cb[j])
                grad[:, :, rb[i] : rb[i + 1], cb[j] : cb[j + 1]] += (
                    g[:, :, i : i + 1, j : j + 1] / area
                )
        return (grad,)

    return _node(data, (x,), vjp)


# -- similarity --------------------------------------------------------------------

def cosine_similarity(a, b, axis=None) -> Tensor:
    """Cosine similarity reduced over ``axis`` (all axes by default).

    Zero-norm inputs yield similarity 0 with zero gradient; this is the
    convention used by the loss and attention code for degenerate inputs.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape(a, b, "cosine_similarity")
    axes = _normalize_axis(axis, a.ndim)
    dot = (a.data * b.data).sum(axis=axes, keepdims=True)
    na = np.sqrt((a.data * a.data).sum(axis=axes, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=axes, keepdims=True))
    denom = na * nb
    zero = denom == 0.0
    safe = np.where(zero, 1.0, denom)
    cos = np.where(zero, 0.0, dot / safe)
    data = cos.reshape(tuple(n for i, n in enumerate(a.shape) if i not in axes))

    def vjp(g):
        g = g.reshape(cos.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            da = g * np.where(zero, 0.0, (b.data / safe - cos * a.data / (na * na)))
            db = g * np.where(zero, 0.0, (a.data / safe - cos * b.data / (nb * nb)))
        return np.nan_to_num(da, nan=0.0), np.nan_to_num(db, nan=0.0)

    return _node(data, (a, b), vjp)


# -- backward pass ------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss.

    Populates ``grad`` on every requires_grad leaf reachable from the loss;
    repeated calls accumulate until the leaves are zeroed.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not require gradients; nothing to differentiate")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            # leaf (or user tensor): accumulate into .grad
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        parent_grads = node._vjp(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
