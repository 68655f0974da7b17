"""Tape-free reverse-mode autodiff over numpy arrays.

Each :class:`Tensor` produced by an op keeps references to its parents and a
closure that pushes its output gradient back to them. ``backward`` walks the
graph in reverse topological order. Only the ops the policy networks need are
provided.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, parents: Sequence["Tensor"] = (),
                 backward: Callable[[np.ndarray], None] | None = None, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.name = name
        if parents and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values produced by op feeding {name or 'tensor'}")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar loss")
        if self._backward is None and not self._parents:
            raise RuntimeError("backward() called before any forward computation was recorded")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.shape)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # arithmetic -------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        return Tensor(self.data + other.data, parents=(self, other), backward=lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        return Tensor(self.data - other.data, parents=(self, other), backward=lambda g: (g, -g))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __neg__(self) -> "Tensor":
        return Tensor(-self.data, parents=(self,), backward=lambda g: (-g,))

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor(a * b, parents=(self, other), backward=lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a / b
        return Tensor(out, parents=(self, other), backward=lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data

        def back(g):
            ga = g @ np.swapaxes(b, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b)
            gb = np.swapaxes(a, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a, g)
            if gb.ndim > b.ndim:
                gb = gb.reshape(-1, *b.shape).sum(axis=0)
            return ga, gb

        return Tensor(a @ b, parents=(self, other), backward=back)

    def __pow__(self, k: float) -> "Tensor":
        a = self.data
        return Tensor(a ** k, parents=(self,), backward=lambda g: (g * k * a ** (k - 1),))

    # reductions / shape ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,), backward=back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        old = self.shape
        return Tensor(self.data.reshape(*shape), parents=(self,), backward=lambda g: (g.reshape(old),))

    def take(self, index: np.ndarray, axis: int) -> "Tensor":
        """Gather along ``axis``; repeated indices accumulate gradient."""
        index = np.asarray(index)
        axis = axis % self.ndim
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(np.moveaxis(out, axis, 0), index, np.moveaxis(g, axis, 0))
            return (out,)

        return Tensor(np.take(self.data, index, axis=axis), parents=(self,), backward=back)

    def __getitem__(self, idx) -> "Tensor":
        shape = self.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], parents=(self,), backward=back)

    # elementwise -------------------------------------------------------------

    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):
            out = np.exp(self.data)
        return Tensor(out, parents=(self,), backward=lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.data
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(a)
        return Tensor(out, parents=(self,), backward=lambda g: (g / a,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor(out, parents=(self,), backward=lambda g: (g * (1 - out * out),))

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor(self.data * mask, parents=(self,), backward=lambda g: (g * mask,))

    def leaky_relu(self, slope: float = 0.2) -> "Tensor":
        scale = np.where(self.data > 0, 1.0, slope)
        return Tensor(self.data * scale, parents=(self,), backward=lambda g: (g * scale,))

    def clip(self, lo: float, hi: float) -> "Tensor":
        inside = (self.data >= lo) & (self.data <= hi)
        return Tensor(np.clip(self.data, lo, hi), parents=(self,), backward=lambda g: (g * inside,))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return Tensor(np.where(pick_a, a.data, b.data), parents=(a, b),
                  backward=lambda g: (g * pick_a, g * ~pick_a))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tensors,
                  backward=lambda g: tuple(np.split(g, splits, axis=axis)))


def segment_sum(x: Tensor, segments: np.ndarray, num: int, axis: int) -> Tensor:
    """Sum slices of ``x`` along ``axis`` into ``num`` buckets given by ``segments``."""
    segments = np.asarray(segments)
    axis = axis % x.ndim
    shape = list(x.shape)
    shape[axis] = num
    out = np.zeros(shape)
    np.add.at(np.moveaxis(out, axis, 0), segments, np.moveaxis(x.data, axis, 0))
    return Tensor(out, parents=(x,), backward=lambda g: (np.take(g, segments, axis=axis),))


def segment_max(x: np.ndarray, segments: np.ndarray, num: int, axis: int) -> np.ndarray:
    """Constant (non-differentiable) per-segment maximum, used to stabilize softmax."""
    axis = axis % x.ndim
    shape = list(x.shape)
    shape[axis] = num
    out = np.full(shape, -np.inf)
    np.maximum.at(np.moveaxis(out, axis, 0), segments, np.moveaxis(x, axis, 0))
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = x.data.max(axis=axis, keepdims=True)
    z = x.data - shift
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    soft = np.exp(out)
    return Tensor(out, parents=(x,), backward=lambda g: (g - soft * g.sum(axis=axis, keepdims=True),))
