"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records, for every tracked operation, the
parent tensors plus a closure that propagates the output gradient to them
(the tape). Calling ``backward()`` on a scalar loss walks the tape in
reverse topological order and accumulates gradients into ``.grad``.

Everything is plain numpy: fp32 for training speed, fp64 for gradient
checking. Shapes follow the batch-first convention used across the
package.
"""

from __future__ import annotations

import numpy as np

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    # sum over prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were size-1 in the original
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An ndarray with an optional gradient and tape linkage.

    invariant: ``grad`` (when present) always has the same shape and dtype
    as ``data``; forward ops on finite inputs produce finite outputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if self.data.dtype == np.int64 or self.data.dtype == np.int32:
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _needs_grad(self) -> bool:
        return self.requires_grad or self._backward is not None

    def _accumulate(self, g: np.ndarray, owned: bool = False):
        """Add g into .grad; ``owned`` marks g as freshly allocated and
        writable, letting the first accumulation keep it without a copy."""
        if self.grad is None:
            if owned and g.dtype == self.data.dtype:
                self.grad = g
            else:
                self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    # -- autograd driver -----------------------------------------------------

    def backward(self, grad=None):
        """Run reverse-mode accumulation from this tensor.

        ``grad`` defaults to ones; for a scalar loss that is the usual seed.
        The tape is released afterwards.
        """
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        if grad is None:
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=self.data.dtype).reshape(self.data.shape).copy()
        for node in reversed(topo):
            if node._backward is not None:
                if node.grad is not None:
                    node._backward(node.grad)
                if node is not self:
                    node.grad = None  # intermediates: free as soon as consumed
            node._parents = ()
            node._backward = None

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(power(self, -1.0), other)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents or p._backward for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, like=a)
    data = a.data + b.data

    def backward(g):
        # a may take ownership of g itself: b (and anyone else) copies first,
        # and the child's reference is dropped right after this closure runs
        if a._needs_grad():
            a._accumulate(_unbroadcast(g, a.data.shape), owned=True)
        if b._needs_grad():
            gb = _unbroadcast(g, b.data.shape)
            b._accumulate(gb, owned=gb is not g)

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    data = a.data * b.data

    def backward(g):
        if a._needs_grad():
            a._accumulate(_unbroadcast(g * b.data, a.data.shape), owned=True)
        if b._needs_grad():
            b._accumulate(_unbroadcast(g * a.data, b.data.shape), owned=True)

    return _make(data, (a, b), backward)


def _fast_pow(x: np.ndarray, p: float) -> np.ndarray:
    # np.power is an order of magnitude slower than repeated multiply
    if p == 2.0:
        return x * x
    if p == 3.0:
        return x * x * x
    if p == 1.0:
        return x.copy()
    if p == 0.0:
        return np.ones_like(x)
    return x ** p


def power(a, p) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    data = _fast_pow(a.data, p)

    def backward(g):
        if a._needs_grad():
            a._accumulate(g * (p * _fast_pow(a.data, p - 1.0)), owned=True)

    return _make(data, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def backward(g):
        if a._needs_grad():
            a._accumulate(g * data, owned=True)

    return _make(data, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    data = np.log(a.data)

    def backward(g):
        if a._needs_grad():
            a._accumulate(g / a.data, owned=True)

    return _make(data, (a,), backward)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    data = np.sqrt(a.data)

    def backward(g):
        if a._needs_grad():
            a._accumulate(g * (0.5 / data), owned=True)

    return _make(data, (a,), backward)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        if a._needs_grad():
            a._accumulate(g * (1.0 - data * data), owned=True)

    return _make(data, (a,), backward)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation (the variant used throughout the models)."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        if not a._needs_grad():
            return
        du = x * x
        du *= 0.134145
        du += 1.0
        du *= _GELU_C
        du *= 1.0 - t * t
        du *= x
        du += 1.0 + t
        du *= 0.5
        du *= g
        a._accumulate(du, owned=True)

    return _make(data, (a,), backward)


# -- reductions --------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a._needs_grad():
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape))

    return _make(data, (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


# -- shape manipulation -------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    data = a.data.reshape(shape)

    def backward(g):
        if a._needs_grad():
            a._accumulate(g.reshape(old))

    return _make(data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    data = a.data.transpose(axes)
    inv = np.argsort(axes)

    def backward(g):
        if a._needs_grad():
            a._accumulate(g.transpose(inv))

    return _make(data, (a,), backward)


def take(a, idx) -> Tensor:
    """Basic indexing only (ints/slices/tuples thereof); grads scatter back."""
    a = as_tensor(a)
    data = a.data[idx]

    def backward(g):
        if not a._needs_grad():
            return
        full = np.zeros_like(a.data)
        full[idx] += g
        a._accumulate(full, owned=True)

    return _make(data.copy(), (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if not t._needs_grad():
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return _make(data, tuple(tensors), backward)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product; leading dims broadcast, trailing two contract.

    The stacked-input x single-weight case is flattened into one large
    GEMM (numpy would otherwise loop small per-slice GEMMs).
    """
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim == 2 and a.data.ndim > 2:
        k = a.data.shape[-1]
        a2 = np.ascontiguousarray(a.data).reshape(-1, k)
        data = (a2 @ b.data).reshape(a.data.shape[:-1] + (b.data.shape[-1],))

        def backward(g):
            g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
            if a._needs_grad():
                a._accumulate((g2 @ b.data.T).reshape(a.data.shape), owned=True)
            if b._needs_grad():
                b._accumulate(a2.T @ g2, owned=True)

        return _make(data, (a, b), backward)

    data = a.data @ b.data

    def backward(g):
        if a._needs_grad():
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape), owned=True)
        if b._needs_grad():
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape), owned=True)

    return _make(data, (a, b), backward)


def affine(x, w, b=None) -> Tensor:
    """x @ w + b over the last axis, fused into one tape node.

    x: (..., Din), w: (Din, Dout), b: (Dout,) or None.
    """
    x, w = as_tensor(x), as_tensor(w)
    din = x.data.shape[-1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, din)
    data = x2 @ w.data
    if b is not None:
        b = as_tensor(b)
        data += b.data
    data = data.reshape(x.data.shape[:-1] + (w.data.shape[-1],))

    def backward(g):
        g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
        if x._needs_grad():
            x._accumulate((g2 @ w.data.T).reshape(x.data.shape), owned=True)
        if w._needs_grad():
            w._accumulate(x2.T @ g2, owned=True)
        if b is not None and b._needs_grad():
            b._accumulate(g2.sum(axis=0), owned=True)

    parents = (x, w) if b is None else (x, w, b)
    return _make(data, parents, backward)


# -- fused numerical kernels ---------------------------------------------------


def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax over the last axis; ``mask`` is additive (use -inf to drop)."""
    a = as_tensor(a)
    logits = a.data if mask is None else a.data + mask
    m = logits.max(axis=-1, keepdims=True)
    e = np.exp(logits - m)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if not a._needs_grad():
            return
        gx = p * g
        gx -= p * gx.sum(axis=-1, keepdims=True)
        a._accumulate(gx, owned=True)

    return _make(p, (a,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine.

    Population variance; gradients follow the standard fused layer-norm
    backward (centered-gradient form).
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data.shape[-1]
    if d == 0:
        raise ValueError("layer_norm: last axis must have size >= 1")
    if eps <= 0:
        raise ValueError("layer_norm: eps must be > 0")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        red = tuple(range(g.ndim - 1))
        if gamma._needs_grad():
            gamma._accumulate((g * xhat).sum(axis=red), owned=True)
        if beta._needs_grad():
            beta._accumulate(g.sum(axis=red), owned=True)
        if not x._needs_grad():
            return
        dxhat = g * gamma.data
        dx = dxhat - dxhat.mean(axis=-1, keepdims=True)
        dx -= xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx *= inv
        x._accumulate(dx, owned=True)

    return _make(data, (x, gamma, beta), backward)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention on (B, H, T, Dh) tensors.

    Softmax over the key axis with 1/sqrt(Dh) scaling; every output row is
    a convex combination of value rows. ``mask`` is additive on the score
    matrix (broadcastable to (B, H, Tq, Tk)).
    """
    if q.shape[-2] == 0 or k.shape[-2] == 0:
        raise ValueError("attention: empty sequence (T=0)")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), scale)
    weights = softmax(scores, mask=mask)
    return matmul(weights, v)
