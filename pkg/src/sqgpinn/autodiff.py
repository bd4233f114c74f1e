"""Minimal automatic differentiation: a reverse-mode tape over numpy arrays
plus generic first-order dual numbers that nest to any depth.

``Tensor`` is a classic scalar-loss tape: every operation records a backward
closure, ``backward()`` walks the graph in reverse topological order, and
broadcasting is undone by summing gradients back to the parent shape.

``Dual`` holds a (primal, tangent) pair whose components may be floats, numpy
arrays, ``Tensor`` nodes, or further ``Dual`` values.  Nesting duals gives
exact higher-order input derivatives (forward-over-forward), and running the
components on ``Tensor`` values makes every derivative query reverse-mode
differentiable with respect to network parameters.
"""

from __future__ import annotations

import math

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
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
    """Reverse-mode autodiff node wrapping a float64 numpy array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # keep numpy from absorbing us into object arrays; defer to our methods
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def _make(self, data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accum(self, grad):
        grad = _unbroadcast(np.asarray(grad, dtype=float), self.data.shape)
        self.grad = grad if self.grad is None else self.grad + grad

    # -- arithmetic ----------------------------------------------------------
    # binary ops defer to Dual (NotImplemented) so dual arithmetic wraps us

    def __add__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        o = Tensor._lift(other)
        return self._make(self.data + o.data, (self, o),
                          lambda g: (g, g))

    __radd__ = __add__

    def __neg__(self):
        return self._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        o = Tensor._lift(other)
        return self._make(self.data - o.data, (self, o),
                          lambda g: (g, -g))

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        o = Tensor._lift(other)
        return self._make(self.data * o.data, (self, o),
                          lambda g: (g * o.data, g * self.data))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        o = Tensor._lift(other)
        return self._make(self.data / o.data, (self, o),
                          lambda g: (g / o.data, -g * self.data / o.data**2))

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __matmul__(self, other):
        o = Tensor._lift(other)
        return self._make(self.data @ o.data, (self, o),
                          lambda g: (g @ o.data.T, self.data.T @ g))

    def __rmatmul__(self, other):
        return Tensor._lift(other) @ self

    def __getitem__(self, idx):
        def backward(g):
            full = np.zeros_like(self.data)
            full[idx] = g
            return (full,)
        return self._make(self.data[idx], (self,), backward)

    def reshape(self, *shape):
        old = self.data.shape
        return self._make(self.data.reshape(*shape), (self,),
                          lambda g: (g.reshape(old),))

    def transpose(self):
        return self._make(self.data.T, (self,), lambda g: (g.T,))

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims=False):
        def backward(g):
            if axis is None:
                return (np.broadcast_to(g, self.data.shape),)
            gg = np.asarray(g)
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            return (np.broadcast_to(gg, self.data.shape),)
        return self._make(self.data.sum(axis=axis, keepdims=keepdims),
                          (self,), backward)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def tanh(self):
        t = np.tanh(self.data)
        return self._make(t, (self,), lambda g: (g * (1.0 - t * t),))

    def exp(self):
        e = np.exp(self.data)
        return self._make(e, (self,), lambda g: (g * e,))

    def sqrt(self):
        r = np.sqrt(self.data)
        return self._make(r, (self,), lambda g: (g * 0.5 / r,))

    def sin(self):
        return self._make(np.sin(self.data), (self,),
                          lambda g: (g * np.cos(self.data),))

    def cos(self):
        return self._make(np.cos(self.data), (self,),
                          lambda g: (-g * np.sin(self.data),))

    def item(self) -> float:
        return float(self.data)

    # -- backward pass -------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, grad in zip(node._parents, node._backward(node.grad)):
                if parent.requires_grad:
                    parent._accum(grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def custom_op(value: np.ndarray, parent: Tensor, vjp) -> Tensor:
    """Wrap an externally computed value with a caller-supplied backward map."""
    out = Tensor(value)
    if isinstance(parent, Tensor) and parent.requires_grad:
        out.requires_grad = True
        out._parents = (parent,)
        out._backward = lambda g: (vjp(g),)
    return out


# ---------------------------------------------------------------------------
# Dual numbers


class Dual:
    """First-order dual number a + b*eps with nestable components."""

    __slots__ = ("p", "t")

    __array_ufunc__ = None

    def __init__(self, primal, tangent=0.0):
        self.p = primal
        self.t = tangent

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.p + other.p, self.t + other.t)
        return Dual(self.p + other, self.t)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.p, -self.t)

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.p - other.p, self.t - other.t)
        return Dual(self.p - other, self.t)

    def __rsub__(self, other):
        return Dual(other - self.p, -self.t)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.p * other.p, self.p * other.t + self.t * other.p)
        return Dual(self.p * other, self.t * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.p
            return Dual(self.p * inv, (self.t * other.p - self.p * other.t) * inv * inv)
        return Dual(self.p / other, self.t / other)

    def __rtruediv__(self, other):
        inv = 1.0 / self.p
        return Dual(other * inv, -other * self.t * inv * inv)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            raise TypeError("matmul with dual right operand is not supported")
        if isinstance(self.t, (int, float)):
            # tangents start as scalar seeds; a scalar here is always zero
            return Dual(self.p @ other, 0.0)
        return Dual(self.p @ other, self.t @ other)

    def __repr__(self):
        return f"Dual({self.p!r}, {self.t!r})"


def primal(x):
    """Strip all dual structure from x."""
    while isinstance(x, Dual):
        x = x.p
    return x


def tanh(x):
    if isinstance(x, Dual):
        t = tanh(x.p)
        return Dual(t, x.t * (1.0 - t * t))
    if isinstance(x, Tensor):
        return x.tanh()
    return np.tanh(x)


def sin(x):
    if isinstance(x, Dual):
        return Dual(sin(x.p), x.t * cos(x.p))
    if isinstance(x, Tensor):
        return x.sin()
    return np.sin(x)


def cos(x):
    if isinstance(x, Dual):
        return Dual(cos(x.p), -x.t * sin(x.p))
    if isinstance(x, Tensor):
        return x.cos()
    return np.cos(x)


def exp(x):
    if isinstance(x, Dual):
        e = exp(x.p)
        return Dual(e, x.t * e)
    if isinstance(x, Tensor):
        return x.exp()
    return np.exp(x)


def _unit_seed(c):
    base = primal(c)
    if isinstance(base, Tensor):
        return Tensor(np.ones_like(base.data))
    if isinstance(base, np.ndarray):
        return np.ones_like(base)
    return 1.0


def lift(coords, alpha):
    """Nest the three coordinates into duals so that taking the tangent
    component ``sum(alpha)`` times yields the mixed partial D^alpha.

    coords : sequence of 3 floats/arrays/Tensors (t, x1, x2)
    alpha  : (order_t, order_x1, order_x2)

    Unit seeds take the shape of the coordinate so matrix products stay
    defined; zero seeds stay scalar and are short-circuited where needed.
    """
    order = []
    for var, count in enumerate(alpha):
        order.extend([var] * count)
    lifted = list(coords)
    for var in order:
        lifted = [Dual(c, _unit_seed(c) if i == var else 0.0)
                  for i, c in enumerate(lifted)]
    return lifted


def extract(value, depth, like=None):
    """Take the tangent component `depth` times; missing tangents are zero."""
    for _ in range(depth):
        value = value.t if isinstance(value, Dual) else 0.0
    value = primal(value)
    if like is not None and np.isscalar(value):
        value = np.full_like(np.asarray(like, dtype=float), float(value))
    return value


def derivative(fn, coords, alpha):
    """Mixed partial D^alpha of fn(t, x1, x2) evaluated with nested duals."""
    lifted = lift(coords, alpha)
    out = fn(*lifted)
    ref = primal(coords[0])
    return extract(out, sum(alpha), like=ref)
