"""Dense reverse-mode differentiation on float64 numpy arrays.

Each op returns a new :class:`Tensor` holding its forward value and a closure
that pushes the output gradient into its parents.  ``Tensor.backward`` walks
the graph once in reverse topological order.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.op = "leaf"
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str,
                backward: Callable[[np.ndarray], None]) -> "Tensor":
        out = cls(data)
        out.parents = tuple(parents)
        out.requires_grad = any(p.requires_grad for p in parents)
        out.op = op
        if out.requires_grad:
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data.reshape(()))

    def accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and shape ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return Tensor.from_op(a.data + b.data, (a, b), "add", backward)


def neg(a: Tensor) -> Tensor:
    return Tensor.from_op(-a.data, (a,), "neg", lambda g: a.accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        a.accumulate(_unbroadcast(g * b.data, a.shape))
        b.accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor.from_op(a.data * b.data, (a, b), "mul", backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    return Tensor.from_op(a.data @ b.data, (a, b), "matmul", backward)


def tsum(a: Tensor, axis=None) -> Tensor:
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape))

    return Tensor.from_op(out, (a,), "sum", backward)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor.from_op(a.data.reshape(shape), (a,), "reshape",
                          lambda g: a.accumulate(g.reshape(a.shape)))


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inverse = np.argsort(axes)
    return Tensor.from_op(a.data.transpose(axes), (a,), "transpose",
                          lambda g: a.accumulate(g.transpose(inverse)))


def take(a: Tensor, index: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    index = np.asarray(index, dtype=np.int64)
    axis = axis % a.ndim

    def backward(g):
        full = np.zeros(a.shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        a.accumulate(full)

    return Tensor.from_op(np.take(a.data, index, axis=axis), (a,), "take", backward)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    axis = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
            x.shape[i] != xs[0].shape[i] for i in range(x.ndim) if i != axis
        ):
            raise ValueError(f"concat shape mismatch: {[x.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

    def backward(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            x.accumulate(np.take(g, np.arange(lo, hi), axis=axis))

    return Tensor.from_op(np.concatenate([x.data for x in xs], axis=axis), xs, "concat", backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), "relu",
                          lambda g: x.accumulate(g * mask))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor.from_op(out, (x,), "softplus", lambda g: x.accumulate(g * sig))


def einsum_const(subscripts: str, x: Tensor, const: np.ndarray) -> Tensor:
    """``einsum(subscripts, x, const)`` with a fixed second operand."""
    inputs, output = subscripts.split("->")
    sx, sc = inputs.split(",")
    if len(set(sx)) != len(sx) or not set(sx) <= set(sc) | set(output):
        raise ValueError(f"unsupported einsum pattern {subscripts!r}")
    back = f"{output},{sc}->{sx}"
    out = np.einsum(subscripts, x.data, const, optimize=True)
    return Tensor.from_op(out, (x,), "einsum",
                          lambda g: x.accumulate(np.einsum(back, g, const, optimize=True)))


# ---------------------------------------------------------------------------
# layers

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with weight of shape (out, in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, transpose(weight))
    return out if bias is None else add(out, bias)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[N, C, H, W]`` with ``kernel[O, C, kh, kw]``."""
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv2d: input {x.shape} does not match kernel {kernel.shape}")
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # im2col once; forward and kernel gradient are then plain matrix products
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    kmat = kernel.data.reshape(o, -1)
    out = (cols @ kmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        if bias.shape != (o,):
            raise ValueError(f"conv2d: bias shape {bias.shape} != ({o},)")
        out = out + bias.data[None, :, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gt = g.transpose(1, 0, 2, 3).reshape(o, -1)  # (O, N*ho*wo), same row order as cols
        if kernel.requires_grad:
            kernel.accumulate((gt @ cols).reshape(kernel.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(gt.sum(axis=1))
        if x.requires_grad:
            # channel-major layout keeps every per-tap slice contiguous
            dcols = (kmat.T @ gt).reshape(c, kh, kw, n, ho, wo)
            dxp = np.zeros((c, n) + xp.shape[2:])
            for a in range(kh):
                for b in range(kw):
                    dxp[:, :, a:a + stride * ho:stride, b:b + stride * wo:stride] += dcols[:, a, b]
            dxp = dxp.transpose(1, 0, 2, 3)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            x.accumulate(dxp)

    return Tensor.from_op(np.ascontiguousarray(out), parents, "conv2d", backward)


def _pool_trim(size: int, k: int, centered: bool) -> int:
    rem = size % k
    if not centered:
        return 0
    if rem % 2:
        raise ValueError(f"centered pooling of {size} pixels by {k} leaves an odd remainder")
    return rem // 2


def maxpool2d(x: Tensor, k: int, centered: bool = True) -> Tensor:
    """Non-overlapping k x k max pooling.

    With ``centered`` the leftover border is trimmed evenly from both sides so
    the pooling tiles stay symmetric about the image center.
    """
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho < 1 or wo < 1:
        raise ValueError(f"maxpool2d: window {k} larger than input {h}x{w}")
    ti, tj = _pool_trim(h, k, centered), _pool_trim(w, k, centered)
    core = x.data[:, :, ti:ti + ho * k, tj:tj + wo * k]
    blocks = core.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        grad_blocks = np.zeros(blocks.shape)
        np.put_along_axis(grad_blocks, arg[..., None], g[..., None], axis=-1)
        grad_core = grad_blocks.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        full = np.zeros(x.shape)
        full[:, :, ti:ti + ho * k, tj:tj + wo * k] = grad_core
        x.accumulate(full)

    return Tensor.from_op(out, (x,), "maxpool2d", backward)


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    axis = axis % x.ndim
    arg = x.data.argmax(axis=axis)
    out = np.take_along_axis(x.data, np.expand_dims(arg, axis), axis=axis)
    out = np.squeeze(out, axis=axis)

    def backward(g):
        full = np.zeros(x.shape)
        np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        x.accumulate(full)

    return Tensor.from_op(out, (x,), "max", backward)


def global_max_pool(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C]."""
    n, c, h, w = x.shape
    return max_over_axis(reshape(x, (n, c, h * w)), axis=2)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"cross entropy: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsumexp - z[np.arange(n), labels]))

    def backward(g):
        p = softmax(logits.data)
        p[np.arange(n), labels] -= 1.0
        logits.accumulate(g * p / n)

    return Tensor.from_op(np.array(loss), (logits,), "cross_entropy", backward)


# ---------------------------------------------------------------------------
# checking

def numerical_gradient(fn: Callable[[], Tensor], leaf: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn()`` with respect to ``leaf.data``."""
    grad = np.zeros(leaf.shape)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn().item()
        flat[i] = orig - eps
        down = fn().item()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def gradient_error(fn: Callable[[], Tensor], leaves: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Worst normwise relative error between analytic and numeric gradients."""
    leaves = list(leaves)
    for leaf in leaves:
        leaf.zero_grad()
    fn().backward()
    worst = 0.0
    for leaf in leaves:
        analytic = np.zeros(leaf.shape) if leaf.grad is None else leaf.grad.copy()
        numeric = numerical_gradient(fn, leaf, eps)
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
        worst = max(worst, float(np.max(np.abs(analytic - numeric)) / scale))
    return worst
