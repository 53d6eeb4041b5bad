"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records a backward closure per op, in the
style of the classic scalar autograd engines but vectorized: one graph
node per array op, gradients computed with numpy. This is all the
machinery the desk-scale transformer needs; there is no broadcasting
magic beyond what numpy itself does, and gradients of broadcast operands
are reduced back to the operand shape.

Gradient tracking can be suspended with `no_grad()` (used by decoding),
which skips graph construction entirely.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference paths)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._prev: tuple[Tensor, ...] = ()
        self._backward = None

    # ------------------------------------------------------------------
    # graph plumbing
    # ------------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = _node(self.data + other.data, (self, other))
        if out._prev:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad, self.data.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(out.grad, other.data.shape))
            out._backward = _bw
        return out

    def __mul__(self, other):
        other = as_tensor(other)
        out = _node(self.data * other.data, (self, other))
        if out._prev:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad * other.data, self.data.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(out.grad * self.data, other.data.shape))
            out._backward = _bw
        return out

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __truediv__(self, other):
        return self * (as_tensor(other) ** -1.0)

    def __rtruediv__(self, other):
        return as_tensor(other) * (self ** -1.0)

    __radd__ = __add__
    __rmul__ = __mul__

    def __pow__(self, p: float):
        out = _node(self.data ** p, (self,))
        if out._prev:
            def _bw():
                self._accum(_unbroadcast(out.grad * p * self.data ** (p - 1.0),
                                         self.data.shape))
            out._backward = _bw
        return out

    def matmul(self, other: "Tensor") -> "Tensor":
        other = as_tensor(other)
        out = _node(np.matmul(self.data, other.data), (self, other))
        if out._prev:
            def _bw():
                g = out.grad
                if self.requires_grad:
                    da = np.matmul(g, np.swapaxes(other.data, -1, -2))
                    self._accum(_unbroadcast(da, self.data.shape))
                if other.requires_grad:
                    db = np.matmul(np.swapaxes(self.data, -1, -2), g)
                    other._accum(_unbroadcast(db, other.data.shape))
            out._backward = _bw
        return out

    __matmul__ = matmul

    # ------------------------------------------------------------------
    # shape ops
    # ------------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,))
        if out._prev:
            def _bw():
                self._accum(out.grad.reshape(self.data.shape))
            out._backward = _bw
        return out

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        out = _node(np.transpose(self.data, axes), (self,))
        if out._prev:
            inv = np.argsort(axes)
            def _bw():
                self._accum(np.transpose(out.grad, inv))
            out._backward = _bw
        return out

    def swapaxes(self, a: int, b: int) -> "Tensor":
        out = _node(np.swapaxes(self.data, a, b), (self,))
        if out._prev:
            def _bw():
                self._accum(np.swapaxes(out.grad, a, b))
            out._backward = _bw
        return out

    def __getitem__(self, idx) -> "Tensor":
        out = _node(self.data[idx], (self,))
        if out._prev:
            def _bw():
                g = np.zeros_like(self.data)
                np.add.at(g, idx, out.grad)
                self._accum(g)
            out._backward = _bw
        return out

    # ------------------------------------------------------------------
    # reductions and elementwise functions
    # ------------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._prev:
            def _bw():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.data.shape).copy())
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def exp(self) -> "Tensor":
        out = _node(np.exp(self.data), (self,))
        if out._prev:
            def _bw():
                self._accum(out.grad * out.data)
            out._backward = _bw
        return out

    def log(self) -> "Tensor":
        out = _node(np.log(self.data), (self,))
        if out._prev:
            def _bw():
                self._accum(out.grad / self.data)
            out._backward = _bw
        return out

    def tanh(self) -> "Tensor":
        out = _node(np.tanh(self.data), (self,))
        if out._prev:
            def _bw():
                self._accum(out.grad * (1.0 - out.data ** 2))
            out._backward = _bw
        return out

    def gelu(self) -> "Tensor":
        # tanh approximation; smooth everywhere, which keeps finite
        # difference checks honest
        c = float(np.sqrt(2.0 / np.pi))
        x = self.data
        inner = c * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        out = _node(0.5 * x * (1.0 + t), (self,))
        if out._prev:
            def _bw():
                di = c * (1.0 + 3 * 0.044715 * x ** 2)
                d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * di
                self._accum(out.grad * d)
            out._backward = _bw
        return out


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    """Result tensor; records parents only when a gradient can flow."""
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._prev = parents
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


# ----------------------------------------------------------------------
# composite ops used by the model
# ----------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`; -inf entries get probability exactly 0."""
    m = np.max(x.data, axis=axis, keepdims=True)  # constant shift
    e = np.exp(x.data - m)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _node(s, (x,))
    if out._prev:
        def _bw():
            g = out.grad
            dot = (g * s).sum(axis=axis, keepdims=True)
            x._accum(s * (g - dot))
        out._backward = _bw
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = _node(shifted - lse, (x,))
    if out._prev:
        sm = np.exp(shifted - lse)
        def _bw():
            g = out.grad
            x._accum(g - sm * g.sum(axis=axis, keepdims=True))
        out._backward = _bw
    return out


def apply_mask(scores: Tensor, valid: np.ndarray, fill: float = -np.inf) -> Tensor:
    """Replace entries where `valid` is False with `fill` (pre-softmax)."""
    out = _node(np.where(valid, scores.data, fill), (scores,))
    if out._prev:
        def _bw():
            scores._accum(np.where(valid, out.grad, 0.0))
        out._backward = _bw
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather; gradient scatters back with add.at."""
    ids = np.asarray(ids)
    out = _node(table.data[ids], (table,))
    if out._prev:
        def _bw():
            g = np.zeros_like(table.data)
            np.add.at(g, ids.reshape(-1),
                      out.grad.reshape(-1, table.data.shape[-1]))
            table._accum(g)
        out._backward = _bw
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _node(gamma.data * xhat + beta.data, (x, gamma, beta))
    if out._prev:
        def _bw():
            g = out.grad
            if gamma.requires_grad:
                gamma._accum(_unbroadcast(g * xhat, gamma.data.shape))
            if beta.requires_grad:
                beta._accum(_unbroadcast(g, beta.data.shape))
            if x.requires_grad:
                dxhat = g * gamma.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                x._accum(inv * (dxhat - m1 - xhat * m2))
        out._backward = _bw
    return out


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    out = _node(np.concatenate([t.data for t in ts], axis=axis), tuple(ts))
    if out._prev:
        sizes = [t.data.shape[axis] for t in ts]
        offsets = np.cumsum([0] + sizes)
        def _bw():
            for t, a, b in zip(ts, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(a, b)
                    t._accum(out.grad[tuple(sl)])
        out._backward = _bw
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    if p <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.data.dtype)
    out = _node(x.data * keep, (x,))
    if out._prev:
        def _bw():
            x._accum(out.grad * keep)
        out._backward = _bw
    return out


def masked_nll(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted sum of next-token negative log-likelihoods.

    logits: (N, V); targets: (N,) int ids; weights: (N,) floats, zero
    entries contribute exactly zero loss and zero gradient.
    """
    targets = np.asarray(targets)
    weights = np.asarray(weights, dtype=logits.data.dtype)
    m = np.max(logits.data, axis=-1, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = logp[np.arange(targets.shape[0]), targets]
    out = _node(np.asarray(-(picked * weights).sum()), (logits,))
    if out._prev:
        sm = np.exp(logp)
        def _bw():
            d = sm * weights[:, None]
            d[np.arange(targets.shape[0]), targets] -= weights
            logits._accum(out.grad * d)
        out._backward = _bw
    return out
