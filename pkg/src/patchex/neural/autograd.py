"""A small reverse-mode autodiff over NCHW numpy arrays.

Only the operators the inpainting networks and their losses need are
provided.  A result records its parents and a backward closure only when one
of its inputs requires gradients, so inference builds no graph and is safe to
run from several threads at once.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, parents, backward)
    return Tensor(data)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a constant array broadcast against ``a``."""
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _result(a.data * b.data, (a, b), backward)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        a._accumulate(g * c)

    return _result(a.data * c, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def backward(g):
        a._accumulate(g * s * (1.0 - s))

    return _result(s, (a,), backward)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def backward(g):
        a._accumulate(g * pos)

    return _result(a.data * pos, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def backward(g):
        a._accumulate(g * sign)

    return _result(np.abs(a.data), (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def backward(g):
        a._accumulate(np.broadcast_to(g / n, a.data.shape))

    return _result(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    sizes = [t.data.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def upsample2x(a: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the spatial axes."""
    out = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        n, c, h, w = a.data.shape
        a._accumulate(g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _result(out, (a,), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """2-D cross-correlation, zero padding; ``padding`` defaults to ``k // 2``.

    Computed as one matrix product per kernel tap so memory stays at the size
    of the output rather than an im2col buffer.
    """
    o, c, kh, kw = w.data.shape
    n, cx, h, wd = x.data.shape
    if cx != c:
        raise ValueError(f"conv expects {c} input channels, got {cx}")
    p = kh // 2 if padding is None else padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    ho = (h + 2 * p - kh) // stride + 1
    wo = (wd + 2 * p - kw) // stride + 1
    acc = np.zeros((o, n, ho, wo), dtype=np.result_type(x.data, w.data))
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
            acc += np.tensordot(w.data[:, :, i, j], xs, axes=([1], [1]))
    out = acc.transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        g_o = g.transpose(1, 0, 2, 3)
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    xs = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
                    gw[:, :, i, j] = np.tensordot(g_o, xs, axes=([1, 2, 3], [0, 2, 3]))
            w._accumulate(gw)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxs = np.tensordot(w.data[:, :, i, j], g_o, axes=([0], [0]))  # (C, N, Ho, Wo)
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gxs.transpose(1, 0, 2, 3)
            x._accumulate(gxp[:, :, p : p + h, p : p + wd] if p else gxp)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward)


def gram(f: Tensor) -> Tensor:
    """Per-sample Gram matrix ``F F^T / (C H W)`` of an NCHW feature map."""
    n, c, h, w = f.data.shape
    flat = f.data.reshape(n, c, h * w)
    norm = 1.0 / (c * h * w)
    out = np.matmul(flat, flat.transpose(0, 2, 1)) * norm

    def backward(g):
        gs = g + g.transpose(0, 2, 1)
        f._accumulate((np.matmul(gs, flat) * norm).reshape(n, c, h, w))

    return _result(out, (f,), backward)
