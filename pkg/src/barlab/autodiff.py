"""Minimal reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; backward()
topologically sorts the graph and accumulates gradients. Supports the op
set needed by the forecaster: matmul, broadcasting add/mul/sub/div, relu,
softplus, log, log1p, exp, log_gamma (grad via digamma), layer_norm,
dropout with an explicit mask, sum/mean, column select.

Gradients are accumulated in the tensor's own dtype; callers pick float32
for training speed or float64 for gradient checking.
"""

from __future__ import annotations

import numpy as np

from .tdist import digamma as _digamma
from .tdist import log_gamma as _log_gamma


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        out_data = self.data + other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            self._accumulate(-g)

        return Tensor(-self.data, parents=(self,), backward=bwd)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) + (-self)

    def __mul__(self, other):
        other = self._coerce(other)
        out_data = self.data * other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor(out_data, parents=(self, other), backward=bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        out_data = self.data / other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(
                    _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape)
                )

        return Tensor(out_data, parents=(self, other), backward=bwd)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __matmul__(self, other):
        other = self._coerce(other)
        out_data = self.data @ other.data

        def bwd(g):
            if self.requires_grad:
                self._accumulate(g @ other.data.T)
            if other.requires_grad:
                other._accumulate(self.data.T @ g)

        return Tensor(out_data, parents=(self, other), backward=bwd)

    # -- elementwise --------------------------------------------------------

    def relu(self):
        mask = self.data > 0

        def bwd(g):
            self._accumulate(g * mask)

        return Tensor(np.where(mask, self.data, 0.0), parents=(self,), backward=bwd)

    def softplus(self):
        # log(1 + e^x), numerically stable both tails
        out_data = np.logaddexp(0.0, self.data).astype(self.data.dtype)

        def bwd(g):
            sig = 1.0 / (1.0 + np.exp(-self.data))
            self._accumulate(g * sig)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def log(self):
        def bwd(g):
            self._accumulate(g / self.data)

        return Tensor(np.log(self.data), parents=(self,), backward=bwd)

    def log1p(self):
        def bwd(g):
            self._accumulate(g / (1.0 + self.data))

        return Tensor(np.log1p(self.data), parents=(self,), backward=bwd)

    def exp(self):
        out_data = np.exp(self.data)

        def bwd(g):
            self._accumulate(g * out_data)

        return Tensor(out_data, parents=(self,), backward=bwd)

    def square(self):
        def bwd(g):
            self._accumulate(g * 2.0 * self.data)

        return Tensor(self.data * self.data, parents=(self,), backward=bwd)

    def log_gamma(self):
        out_data = _log_gamma(self.data.astype(np.float64)).astype(self.data.dtype)

        def bwd(g):
            psi = _digamma(self.data.astype(np.float64)).astype(self.data.dtype)
            self._accumulate(g * psi)

        return Tensor(out_data, parents=(self,), backward=bwd)

    # -- structure ----------------------------------------------------------

    def sum(self):
        def bwd(g):
            self._accumulate(np.broadcast_to(g, self.data.shape).astype(self.data.dtype))

        return Tensor(self.data.sum(), parents=(self,), backward=bwd)

    def mean(self):
        n = self.data.size

        def bwd(g):
            self._accumulate(np.full(self.data.shape, g / n, dtype=self.data.dtype))

        return Tensor(self.data.mean(), parents=(self,), backward=bwd)

    def col(self, idx):
        """Select one column of a 2-D tensor as a 1-D tensor."""
        def bwd(g):
            full = np.zeros_like(self.data)
            full[:, idx] = g
            self._accumulate(full)

        return Tensor(self.data[:, idx], parents=(self,), backward=bwd)

    def dropout(self, mask, rate):
        """Inverted dropout with an explicit 0/1 mask (seeded by the caller)."""
        if rate <= 0.0:
            return self
        scale = np.array(1.0 / (1.0 - rate), dtype=self.data.dtype)
        keep = mask.astype(self.data.dtype) * scale

        def bwd(g):
            self._accumulate(g * keep)

        return Tensor(self.data * keep, parents=(self,), backward=bwd)

    def layer_norm(self, gamma, beta, eps=1e-5):
        """Normalize over the last axis, then affine: gamma * xhat + beta.

        A constant input row yields a zero pre-affine output (the eps floor
        keeps the division finite).
        """
        gamma = self._coerce(gamma)
        beta = self._coerce(beta)
        x = self.data
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        out_data = xhat * gamma.data + beta.data

        def bwd(g):
            if gamma.requires_grad:
                gamma._accumulate(_unbroadcast(g * xhat, gamma.data.shape))
            if beta.requires_grad:
                beta._accumulate(_unbroadcast(g, beta.data.shape))
            if self.requires_grad:
                gx = g * gamma.data
                term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(
                    axis=-1, keepdims=True
                )
                self._accumulate(term * inv)

        return Tensor(out_data, parents=(self, gamma, beta), backward=bwd)
