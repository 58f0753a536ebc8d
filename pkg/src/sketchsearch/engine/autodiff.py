"""Reverse-mode automatic differentiation over numpy arrays.

A ``Var`` wraps an ndarray and remembers how it was computed. Calling
``backward`` on a scalar (or with an explicit seed gradient) walks the
recorded graph once in reverse topological order and accumulates
gradients into every reachable ``Var`` that requires them.

The op set is deliberately small: elementwise arithmetic, matmul,
strided 2-D convolution, nearest-neighbor upsampling, the activations
used by the nets, reductions, reshape/narrow, softmax and a
stop-gradient. Everything heavier (losses, networks) is composed from
these.
"""

from __future__ import annotations

import numpy as np


class GraphError(RuntimeError):
    """Misuse of the tape: backward on a non-scalar without seed, reuse, etc."""


class Var:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None, requires_grad=False):
        self.value = np.asarray(value)
        self.grad = None
        self._parents = parents
        self._backward = backward
        # a node needs grad if it is a marked leaf or depends on one
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def item(self) -> float:
        return float(self.value)

    def backward(self, seed=None):
        """Accumulate gradients of this node w.r.t. every upstream Var.

        ``seed`` defaults to 1.0 and is only valid for scalar outputs.
        """
        if seed is None:
            if self.value.size != 1:
                raise GraphError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.value)
        seed = np.asarray(seed, dtype=self.value.dtype)
        if seed.shape != self.value.shape:
            raise GraphError(
                f"seed shape {seed.shape} does not match output shape {self.value.shape}"
            )

        order = _toposort(self)
        for node in order:
            node.grad = None
        self.grad = seed
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # convenience arithmetic so loss expressions read naturally
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

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_var(x, requires_grad=False) -> Var:
    if isinstance(x, Var):
        return x
    return Var(np.asarray(x), requires_grad=requires_grad)


def param(value: np.ndarray) -> Var:
    """Leaf node whose gradient will be collected."""
    return Var(value, requires_grad=True)


def constant(value) -> Var:
    return Var(np.asarray(value))


def stop_gradient(x: Var) -> Var:
    """Detach: same value, no gradient flows through."""
    return Var(x.value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value + b.value
    return Var(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value - b.value
    return Var(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value * b.value
    return Var(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.value @ b.value
    return Var(
        out,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def power(a, exponent: float) -> Var:
    """a ** exponent with a constant exponent."""
    a = as_var(a)
    out = a.value**exponent
    return Var(
        out,
        (a,),
        lambda g: (g * exponent * a.value ** (exponent - 1.0),),
    )


def absolute(a) -> Var:
    a = as_var(a)
    return Var(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return Var(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    return Var(np.log(a.value), (a,), lambda g: (g / a.value,))


def relu(a) -> Var:
    a = as_var(a)
    out = np.maximum(a.value, 0.0)
    return Var(out, (a,), lambda g: (g * (a.value > 0),))


def leaky_relu(a, alpha: float = 0.1) -> Var:
    a = as_var(a)
    out = np.where(a.value > 0, a.value, alpha * a.value)
    return Var(out, (a,), lambda g: (g * np.where(a.value > 0, 1.0, alpha),))


def sigmoid(a) -> Var:
    a = as_var(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return Var(out, (a,), lambda g: (g * out * (1.0 - out),))


def sum_(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        gg = np.asarray(g)
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return Var(out, (a,), bw)


def mean(a, axis=None, keepdims=False) -> Var:
    a = as_var(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.value.size
    else:
        count = a.value.shape[axis] if isinstance(axis, int) else int(
            np.prod([a.value.shape[ax] for ax in axis])
        )

    def bw(g):
        gg = np.asarray(g) / count
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return Var(out, (a,), bw)


def reshape(a, shape) -> Var:
    a = as_var(a)
    return Var(
        a.value.reshape(shape), (a,), lambda g: (g.reshape(a.value.shape),)
    )


def narrow(a, axis: int, start: int, size: int) -> Var:
    """Contiguous slice along one axis (used to split joint heads)."""
    a = as_var(a)
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, start + size)
    index = tuple(index)

    def bw(g):
        full = np.zeros_like(a.value)
        full[index] = g
        return (full,)

    return Var(a.value[index], (a,), bw)


def softmax(a, axis: int = 1) -> Var:
    a = as_var(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Var(out, (a,), bw)


def log_softmax(a, axis: int = 1) -> Var:
    a = as_var(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Var(out, (a,), bw)


def upsample2x(a) -> Var:
    """Nearest-neighbor 2x upsampling of an (N, C, H, W) tensor."""
    a = as_var(a)
    out = a.value.repeat(2, axis=2).repeat(2, axis=3)

    def bw(g):
        n, c, h2, w2 = g.shape
        return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return Var(out, (a,), bw)


def conv2d(x, w, b, stride: int = 1, padding: int = 1) -> Var:
    """2-D convolution of (N, C, H, W) with (OC, C, KH, KW) weights.

    Forward and weight gradient use a strided window view + tensordot so
    the heavy lifting stays in BLAS; the input gradient scatters one
    vectorized add per kernel offset.
    """
    x, w, b = as_var(x), as_var(w), as_var(b)
    n, c, h, wd = x.value.shape
    oc, ci, kh, kw = w.value.shape
    if ci != c:
        raise GraphError(f"conv2d channel mismatch: input {c}, weight {ci}")
    xp = np.pad(x.value, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (wd + 2 * padding - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (N, C, OH, OW, KH, KW)
    out = np.tensordot(windows, w.value, axes=([1, 4, 5], [1, 2, 3]))  # (N, OH, OW, OC)
    out = out.transpose(0, 3, 1, 2) + b.value.reshape(1, oc, 1, 1)
    out = np.ascontiguousarray(out)

    def bw(g):
        # g: (N, OC, OH, OW)
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))  # (OC, C, KH, KW)
        gb = g.sum(axis=(0, 2, 3))
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                # (N, OH, OW, C) contribution of this kernel offset
                contrib = np.tensordot(g, w.value[:, :, ki, kj], axes=([1], [0]))
                gxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                    contrib.transpose(0, 3, 1, 2)
                )
        if padding:
            gx = gxp[:, :, padding:-padding, padding:-padding]
        else:
            gx = gxp
        return (gx, gw, gb)

    return Var(out, (x, w, b), bw)


def affine(x, w, b) -> Var:
    """x @ w + b for (N, F_in) inputs."""
    return add(matmul(x, w), b)
