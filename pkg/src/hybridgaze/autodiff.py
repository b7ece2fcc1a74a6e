"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps a float64 array and remembers how it was produced;
calling :meth:`Tensor.backward` on a scalar result walks the recorded graph
once in reverse topological order and accumulates adjoints into every node.
One training step owns one graph; leaf parameters survive across steps and
get fresh gradients on every backward pass.

The op set is deliberately small: elementwise arithmetic with broadcasting,
2-D matmul, ReLU, reductions, gather/concat plumbing, and a custom
symmetric-eigendecomposition node whose backward rule lives in
:mod:`hybridgaze.linalg`.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .errors import NumericalError


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node on the autodiff graph."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward

    # -- graph walk ---------------------------------------------------------

    def _topo_order(self):
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        return order

    def backward(self):
        """Seed this scalar node with 1 and accumulate adjoints everywhere."""
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar node, got shape "
                             f"{self.value.shape}")
        order = self._topo_order()
        for node in order:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- shape helpers ------------------------------------------------------

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    # -- elementwise arithmetic ---------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value + other.value, (self, other))

        def backward(g):
            self.grad += _unbroadcast(g, self.value.shape)
            other.grad += _unbroadcast(g, other.value.shape)
        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.value, (self,))

        def backward(g):
            self.grad += -g
        out._backward = backward
        return out

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value * other.value, (self, other))

        def backward(g):
            self.grad += _unbroadcast(g * other.value, self.value.shape)
            other.grad += _unbroadcast(g * self.value, other.value.shape)
        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out = Tensor(self.value / other.value, (self, other))

        def backward(g):
            self.grad += _unbroadcast(g / other.value, self.value.shape)
            other.grad += _unbroadcast(
                -g * self.value / (other.value * other.value),
                other.value.shape)
        out._backward = backward
        return out

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.value.ndim != 2 or other.value.ndim != 2:
            raise ValueError("matmul is defined for 2-D tensors only")
        out = Tensor(self.value @ other.value, (self, other))

        def backward(g):
            self.grad += g @ other.value.T
            other.grad += self.value.T @ g
        out._backward = backward
        return out

    # -- unary ops ----------------------------------------------------------

    @property
    def T(self):
        out = Tensor(self.value.T, (self,))

        def backward(g):
            self.grad += g.T
        out._backward = backward
        return out

    def relu(self):
        mask = self.value > 0.0
        out = Tensor(np.where(mask, self.value, 0.0), (self,))

        def backward(g):
            self.grad += g * mask
        out._backward = backward
        return out

    def square(self):
        out = Tensor(self.value * self.value, (self,))

        def backward(g):
            self.grad += g * (2.0 * self.value)
        out._backward = backward
        return out

    def sqrt(self):
        root = np.sqrt(self.value)
        out = Tensor(root, (self,))

        def backward(g):
            self.grad += g * (0.5 / root)
        out._backward = backward
        return out

    def abs(self):
        sign = np.sign(self.value)
        out = Tensor(np.abs(self.value), (self,))

        def backward(g):
            self.grad += g * sign
        out._backward = backward
        return out

    def clip_min(self, floor):
        """max(x, floor) for a constant floor; gradient passes above it."""
        mask = self.value > floor
        out = Tensor(np.where(mask, self.value, floor), (self,))

        def backward(g):
            self.grad += g * mask
        out._backward = backward
        return out

    def reshape(self, *shape):
        out = Tensor(self.value.reshape(*shape), (self,))

        def backward(g):
            self.grad += g.reshape(self.value.shape)
        out._backward = backward
        return out

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.value.sum(axis=axis, keepdims=keepdims), (self,))

        def backward(g):
            if axis is None:
                self.grad += g * np.ones_like(self.value)
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                self.grad += np.broadcast_to(g, self.value.shape)
        out._backward = backward
        return out

    def mean(self):
        return self.sum() * (1.0 / self.value.size)

    # -- indexing plumbing ---------------------------------------------------

    def gather_rows(self, indices):
        indices = np.asarray(indices, dtype=int)
        out = Tensor(self.value[indices], (self,))

        def backward(g):
            np.add.at(self.grad, indices, g)
        out._backward = backward
        return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.value for t in tensors], axis=axis),
                 tuple(tensors))
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            t.grad += g[tuple(idx)]
    out._backward = backward
    return out


def mse(a, b):
    """Mean of squared entrywise differences."""
    return (as_tensor(a) - as_tensor(b)).square().mean()


def masked_rows_sum(values, mask):
    """Per-row masked sums: out[b, g] = sum_p mask[b, g, p] * values[b, p].

    ``mask`` is a fixed (batch, groups, cols) array; gradients flow only into
    ``values``.
    """
    values = as_tensor(values)
    mask = np.asarray(mask, dtype=float)
    out = Tensor(np.einsum("bgp,bp->bg", mask, values.value), (values,))

    def backward(g):
        values.grad += np.einsum("bgp,bg->bp", mask, g)
    out._backward = backward
    return out


def l2norm(x, floor=1e-30):
    """Euclidean norm of all entries; the floor keeps the zero point finite."""
    return as_tensor(x).square().sum().clip_min(floor).sqrt()


def sym_eig_tensors(g, gap_floor=linalg.GAP_FLOOR):
    """Record a symmetric eigendecomposition on the graph.

    Returns (eigenvalues, eigenvectors, spectrum); the first two are tensors
    whose backward rules both accumulate into the input via
    :func:`hybridgaze.linalg.sym_eig_backward`.
    """
    g = as_tensor(g)
    spectrum = linalg.sym_eig(g.value)
    lam = Tensor(spectrum.eigenvalues, (g,))
    vecs = Tensor(spectrum.eigenvectors, (g,))

    def backward_lam(dl):
        g.grad += linalg.sym_eig_backward(spectrum, d_eigenvalues=dl,
                                          gap_floor=gap_floor)

    def backward_vecs(dv):
        g.grad += linalg.sym_eig_backward(spectrum, d_eigenvectors=dv,
                                          gap_floor=gap_floor)
    lam._backward = backward_lam
    vecs._backward = backward_vecs
    return lam, vecs, spectrum


def masked_reciprocal(lam, keep):
    """1/lam where ``keep`` (a fixed boolean mask) holds, zero elsewhere."""
    lam = as_tensor(lam)
    keep = np.asarray(keep, dtype=bool)
    inv = np.zeros_like(lam.value)
    inv[keep] = 1.0 / lam.value[keep]
    out = Tensor(inv, (lam,))

    def backward(g):
        lam.grad += np.where(keep, -g * inv * inv, 0.0)
    out._backward = backward
    return out


def grad_check(f, x, h=1e-5, entries=None, seed=0):
    """Max relative error between tape gradients and central differences.

    ``f`` maps a :class:`Tensor` leaf to a scalar :class:`Tensor`. The
    relative error of entry e is |analytic - numeric| over
    max(|analytic|, |numeric|, 1e-8). ``entries`` caps how many entries are
    probed (a seeded uniform subsample); by default every entry is checked.
    """
    x = np.asarray(x, dtype=float)
    leaf = Tensor(x)
    y = f(leaf)
    if not np.isfinite(y.value):
        raise NumericalError("function value is not finite at the base point")
    y.backward()
    analytic = leaf.grad.copy()

    flat_indices = np.arange(x.size)
    if entries is not None and entries < x.size:
        rng = np.random.default_rng(seed)
        flat_indices = np.sort(rng.choice(x.size, size=entries, replace=False))

    worst = 0.0
    flat = x.reshape(-1)
    for idx in flat_indices:
        orig = flat[idx]
        flat[idx] = orig + h
        up = float(f(Tensor(x)).value)
        flat[idx] = orig - h
        down = float(f(Tensor(x)).value)
        flat[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NumericalError("function value is not finite at a probe")
        numeric = (up - down) / (2.0 * h)
        ana = analytic.reshape(-1)[idx]
        err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
