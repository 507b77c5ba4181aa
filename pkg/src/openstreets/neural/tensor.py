"""Reverse-mode autodiff over a fixed op vocabulary, backed by float64 numpy.

Only the operations the graph layers need are provided; this is intentionally
not a general autodiff system. All ops are deterministic for fixed inputs.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------

    def _as_tensor(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other) -> "Tensor":
        other = self._as_tensor(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)

        out._backward = backward
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-self._as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return self._as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = self._as_tensor(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def matmul(self, other: "Tensor") -> "Tensor":
        other = self._as_tensor(other)
        out = Tensor(self.data @ other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                ga = g @ np.swapaxes(other.data, -1, -2)
                self._accumulate(_unbroadcast(ga, self.shape))
            if other.requires_grad:
                gb = np.swapaxes(self.data, -1, -2) @ g
                other._accumulate(_unbroadcast(gb, other.shape))

        out._backward = backward
        return out

    __matmul__ = matmul

    @property
    def T(self) -> "Tensor":
        out = Tensor(np.swapaxes(self.data, -1, -2), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.swapaxes(g, -1, -2))

        out._backward = backward
        return out

    # -- nonlinearities ----------------------------------------------------

    def sigmoid(self) -> "Tensor":
        x = self.data
        y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.clip(x, None, 500))),
                     np.exp(np.clip(x, -500, None)) / (1.0 + np.exp(np.clip(x, -500, None))))
        out = Tensor(y, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * y * (1.0 - y))

        out._backward = backward
        return out

    def tanh(self) -> "Tensor":
        y = np.tanh(self.data)
        out = Tensor(y, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - y * y))

        out._backward = backward
        return out

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = Tensor(np.where(mask, self.data, 0.0), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * mask)

        out._backward = backward
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g / self.data)

        out._backward = backward
        return out

    def clamp(self, lo: float, hi: float) -> "Tensor":
        inside = (self.data > lo) & (self.data < hi)
        out = Tensor(np.clip(self.data, lo, hi), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * inside)

        out._backward = backward
        return out

    def square(self) -> "Tensor":
        out = Tensor(self.data * self.data, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * 2.0 * self.data)

        out._backward = backward
        return out

    # -- reductions & indexing ----------------------------------------------

    def sum(self) -> "Tensor":
        out = Tensor(self.data.sum(), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.full_like(self.data, float(g)))

        out._backward = backward
        return out

    def mean(self) -> "Tensor":
        n = self.data.size
        out = Tensor(self.data.mean(), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(np.full_like(self.data, float(g) / n))

        out._backward = backward
        return out

    def gather_rows(self, idx: np.ndarray) -> "Tensor":
        """Select one column per row from a 2-D tensor: out[i] = self[i, idx[i]]."""
        idx = np.asarray(idx, dtype=np.intp)
        rows = np.arange(self.data.shape[0])
        out = Tensor(self.data[rows, idx], parents=(self,))

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, (rows, idx), g)
                self._accumulate(full)

        out._backward = backward
        return out


def spmm(adj: sparse.csr_matrix, x: Tensor) -> Tensor:
    """Aggregate over the vertex axis (-2): out[..., v, :] = sum_u adj[v,u] x[..., u, :]."""

    def apply(mat, arr):
        moved = np.moveaxis(arr, -2, 0)
        flat = moved.reshape(moved.shape[0], -1)
        res = mat @ flat
        return np.moveaxis(res.reshape(moved.shape), 0, -2)

    out = Tensor(apply(adj, x.data), parents=(x,))
    adj_t = adj.T.tocsr()

    def backward(g):
        if x.requires_grad:
            x._accumulate(apply(adj_t, g))

    out._backward = backward
    return out


def tensor(data) -> Tensor:
    return Tensor(data)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def numeric_gradient(fn, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function, entry by entry."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def gradient_check(build_loss, tensors: list[Tensor], h: float = 1e-4) -> float:
    """Max relative error between analytic and numeric gradients.

    `build_loss` must rebuild the graph from the tensors' current data.
    """
    loss = build_loss()
    for t in tensors:
        t.grad = None
    loss.backward()
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(lambda: float(build_loss().data), t.data, h)
        # Floor the denominator at 1e-6 so finite-difference noise on
        # near-zero gradients does not register as relative error.
        denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
