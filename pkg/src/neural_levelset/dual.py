"""Vectorized forward-mode dual numbers.

A :class:`Dual` holds an array of values together with the partial derivatives
of every entry with respect to a small fixed set of seed variables (for cut
cells: the four corner level-set values).  ``val`` has shape ``S`` and ``d``
has shape ``S + (k,)``.  Plain numpy arrays broadcast against ``S``.
"""
from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("val", "d")
    __array_ufunc__ = None  # ndarray <op> Dual defers to the reflected Dual method

    def __init__(self, val, d):
        self.val = np.asarray(val, dtype=float)
        self.d = np.asarray(d, dtype=float)

    @classmethod
    def seed(cls, values: np.ndarray) -> "Dual":
        """Independent variables along the last axis of ``values``."""
        values = np.asarray(values, float)
        k = values.shape[-1]
        d = np.broadcast_to(np.eye(k), values.shape + (k,)).copy()
        return cls(values, d)

    @classmethod
    def constant(cls, values, k: int) -> "Dual":
        values = np.asarray(values, float)
        return cls(values, np.zeros(values.shape + (k,)))

    @property
    def shape(self):
        return self.val.shape

    @property
    def nvars(self) -> int:
        return self.d.shape[-1]

    def __repr__(self):
        return f"Dual(val={self.val!r}, d={self.d!r})"

    # arithmetic -------------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.d + other.d)
        other = np.asarray(other, float)
        return Dual(self.val + other, np.broadcast_to(self.d, np.broadcast_shapes(self.val.shape, other.shape) + (self.nvars,)))

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.d)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.d * other.val[..., None] + other.d * self.val[..., None])
        other = np.asarray(other, float)
        return Dual(self.val * other, self.d * other[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv, (self.d - other.d * (self.val * inv)[..., None]) * inv[..., None])
        other = np.asarray(other, float)
        return Dual(self.val / other, self.d / other[..., None])

    def __rtruediv__(self, other):
        other = np.asarray(other, float)
        inv = 1.0 / self.val
        return Dual(other * inv, -self.d * (other * inv * inv)[..., None])

    def __pow__(self, n):
        n = float(n)
        return Dual(self.val**n, self.d * (n * self.val ** (n - 1))[..., None])

    def __abs__(self):
        s = np.sign(self.val)
        return Dual(np.abs(self.val), self.d * s[..., None])

    def sqrt(self):
        r = np.sqrt(self.val)
        return Dual(r, self.d * (0.5 / r)[..., None])

    # shaping ----------------------------------------------------------------
    def __getitem__(self, key):
        if not isinstance(key, tuple):
            key = (key,)
        if any(k is Ellipsis for k in key):
            pos = next(i for i, k in enumerate(key) if k is Ellipsis)
            explicit = sum(k is not None for k in key) - 1
            key = key[:pos] + (slice(None),) * (self.val.ndim - explicit) + key[pos + 1:]
        return Dual(self.val[key], self.d[key + (Ellipsis,)])

    def sum(self, axis):
        axis = axis % self.val.ndim
        return Dual(self.val.sum(axis=axis), self.d.sum(axis=axis))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Dual(self.val.reshape(shape), self.d.reshape(tuple(shape) + (self.nvars,)))

    def take_along(self, idx, axis):
        axis = axis % self.val.ndim
        return Dual(np.take_along_axis(self.val, idx, axis), np.take_along_axis(self.d, idx[..., None], axis))


def value(x):
    """Strip derivative information."""
    return x.val if isinstance(x, Dual) else np.asarray(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Dual) else np.sqrt(x)


def where(mask, a, b):
    """Elementwise select that propagates partials."""
    if not isinstance(a, Dual) and not isinstance(b, Dual):
        return np.where(mask, a, b)
    k = a.nvars if isinstance(a, Dual) else b.nvars
    a = a if isinstance(a, Dual) else Dual.constant(a, k)
    b = b if isinstance(b, Dual) else Dual.constant(b, k)
    mask = np.asarray(mask)
    return Dual(np.where(mask, a.val, b.val), np.where(mask[..., None], a.d, b.d))


def stack(items, axis):
    """Stack duals (or arrays) along a new axis of the value shape."""
    if not any(isinstance(x, Dual) for x in items):
        return np.stack(items, axis=axis)
    k = next(x.nvars for x in items if isinstance(x, Dual))
    items = [x if isinstance(x, Dual) else Dual.constant(x, k) for x in items]
    shape = np.broadcast_shapes(*(x.val.shape for x in items))
    axis = axis % (len(shape) + 1)
    vals = [np.broadcast_to(x.val, shape) for x in items]
    ds = [np.broadcast_to(x.d, shape + (k,)) for x in items]
    return Dual(np.stack(vals, axis=axis), np.stack(ds, axis=axis))


def take_along(x, idx, axis):
    if isinstance(x, Dual):
        return x.take_along(idx, axis)
    return np.take_along_axis(x, idx, axis)


def dsum(x, axis):
    return x.sum(axis) if isinstance(x, Dual) else np.sum(x, axis=axis)


def take_rows(x, idx):
    return x[idx]


def add_rows(x, idx, y):
    """Out-of-place ``x[idx] += y`` with repeated indices accumulated."""
    if not isinstance(x, Dual) and not isinstance(y, Dual):
        out = np.array(x, dtype=float)
        np.add.at(out, idx, y)
        return out
    k = x.nvars if isinstance(x, Dual) else y.nvars
    x = x if isinstance(x, Dual) else Dual.constant(x, k)
    y = y if isinstance(y, Dual) else Dual.constant(y, k)
    val, d = x.val.copy(), x.d.copy()
    np.add.at(val, idx, y.val)
    np.add.at(d, idx, y.d)
    return Dual(val, d)
