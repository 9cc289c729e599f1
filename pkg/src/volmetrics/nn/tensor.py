"""Minimal reverse-mode autodiff over numpy arrays.

Tensors carry (depth, height, width, channels) blocks or flat vectors.
The channels-last layout keeps the 3D convolution inner loop a plain
matrix product over the channel axis, which is the only way to reach
BLAS throughput without materializing huge patch matrices.

Reductions accumulate in 64-bit regardless of the storage dtype so that
gradient checks and repeated runs stay stable.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from ..errors import IndivisibleDims, ShapeMismatch

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None, free_graph=True):
        """Reverse-mode sweep from this tensor; grads accumulate in leaves."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward without explicit grad needs a scalar output")
            grad = np.ones_like(self.data)
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.accumulate_grad(grad)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
            if free_graph and node is not self:
                was_leaf = node._backward_fn is None and not node._parents
                node._parents = ()
                node._backward_fn = None
                if not was_leaf:
                    node.grad = None
        if free_graph:
            self._parents = ()
            self._backward_fn = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.shape))

    return _make(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.shape))

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(out, (a, b), bwd)


def square(a) -> Tensor:
    a = as_tensor(a)
    out = a.data * a.data

    def bwd(g):
        a.accumulate_grad(2.0 * a.data * g)

    return _make(out, (a,), bwd)


def sqrt(a, grad_floor: float = 1e-12) -> Tensor:
    """Exact square root; the gradient denominator is floored so a distance
    of exactly zero (identical inputs) cannot produce non-finite grads."""
    a = as_tensor(a)
    root = np.sqrt(a.data)

    def bwd(g):
        a.accumulate_grad(g / (2.0 * np.maximum(root, grad_floor)))

    return _make(root, (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0)

    def bwd(g):
        a.accumulate_grad(np.where(a.data > 0, g, 0))

    return _make(out, (a,), bwd)


# --- reductions / reshaping -------------------------------------------------

def _reduce(x: np.ndarray, axes, op) -> np.ndarray:
    return op(x, axis=axes, dtype=np.float64).astype(x.dtype, copy=False)


def sum_(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = _reduce(a.data, axes, np.sum)

    def bwd(g):
        if axes is None:
            a.accumulate_grad(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))
        else:
            a.accumulate_grad(np.broadcast_to(np.expand_dims(g, axes), a.shape).astype(a.dtype, copy=False))

    return _make(out, (a,), bwd)


def mean(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = _reduce(a.data, axes, np.mean)
    count = a.data.size if axes is None else np.prod([a.shape[i] for i in np.atleast_1d(axes)])

    def bwd(g):
        scaled = g / count
        if axes is None:
            a.accumulate_grad(np.broadcast_to(scaled, a.shape).astype(a.dtype, copy=False))
        else:
            a.accumulate_grad(np.broadcast_to(np.expand_dims(scaled, axes), a.shape).astype(a.dtype, copy=False))

    return _make(out, (a,), bwd)


def stack_scalars(items) -> Tensor:
    items = [as_tensor(t) for t in items]
    out = np.array([t.data.reshape(()) for t in items], dtype=items[0].dtype)

    def bwd(g):
        for k, t in enumerate(items):
            if t.requires_grad:
                t.accumulate_grad(np.asarray(g[k], dtype=t.dtype).reshape(t.shape))

    return _make(out, tuple(items), bwd)


def take(a, indices) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(indices)
    out = a.data[idx]

    def bwd(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        a.accumulate_grad(buf)

    return _make(out, (a,), bwd)


def concat_channels(a, b) -> Tensor:
    """Concatenate along the trailing channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeMismatch(f"spatial dims differ: {a.shape} vs {b.shape}")
    ca = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g[..., :ca])
        if b.requires_grad:
            b.accumulate_grad(g[..., ca:])

    return _make(out, (a, b), bwd)


def dropout(a, rate: float, training: bool, rng=None, per_channel: bool = True) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return _make(a.data, (a,), lambda g: a.accumulate_grad(g))
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    shape = (a.shape[-1],) if per_channel else a.shape
    keep = (rng.random(shape) >= rate).astype(a.dtype)
    mask = keep / np.asarray(1.0 - rate, dtype=a.dtype)
    out = a.data * mask

    def bwd(g):
        a.accumulate_grad(g * mask)

    return _make(out, (a,), bwd)


# --- convolution and pooling ------------------------------------------------

def _conv_forward_raw(xp: np.ndarray, w: np.ndarray, b, stride: int, out_dims):
    """Accumulate the shifted-slab matmuls; xp is the padded input."""
    k = w.shape[0]
    do, ho, wo = out_dims
    co = w.shape[4]
    if b is not None:
        y = np.empty((do, ho, wo, co), dtype=xp.dtype)
        y[...] = b
    else:
        y = np.zeros((do, ho, wo, co), dtype=xp.dtype)
    s = stride
    for dz in range(k):
        for dy in range(k):
            for dx in range(k):
                slab = xp[dz:dz + s * do:s, dy:dy + s * ho:s, dx:dx + s * wo:s, :]
                y += slab @ w[dz, dy, dx]
    return y


def conv3d(x, w, b, stride: int = 1, padding=None) -> Tensor:
    """Cross-correlation with zero padding over (D, H, W, Ci) input.

    w has shape (k, k, k, Ci, Co); default padding keeps dims for odd
    kernels at stride 1.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    k = w.shape[0]
    if x.data.ndim != 4:
        raise ShapeMismatch(f"conv3d input must be (D, H, W, C), got {x.shape}")
    if x.shape[-1] != w.shape[3]:
        raise ShapeMismatch(f"input channels {x.shape[-1]} vs kernel {w.shape[3]}")
    p = (k - 1) // 2 if padding is None else int(padding)
    s = int(stride)
    d, h, ww_ = x.shape[:3]
    do = (d + 2 * p - k) // s + 1
    ho = (h + 2 * p - k) // s + 1
    wo = (ww_ + 2 * p - k) // s + 1
    if min(do, ho, wo) < 1:
        raise ShapeMismatch(f"conv output would be empty for input {x.shape}")
    xp = np.pad(x.data, ((p, p), (p, p), (p, p), (0, 0)))
    y = _conv_forward_raw(xp, w.data, b.data, s, (do, ho, wo))

    def bwd(g):
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 1, 2), dtype=np.float64).astype(b.dtype))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for dz in range(k):
                for dy in range(k):
                    for dx in range(k):
                        slab = xp[dz:dz + s * do:s, dy:dy + s * ho:s, dx:dx + s * wo:s, :]
                        gw[dz, dy, dx] = np.tensordot(slab, g, axes=([0, 1, 2], [0, 1, 2]))
            w.accumulate_grad(gw)
        if x.requires_grad:
            if s == 1:
                # adjoint of a stride-1 correlation is a correlation with the
                # spatially flipped, channel-transposed kernel
                wt = np.ascontiguousarray(w.data[::-1, ::-1, ::-1].transpose(0, 1, 2, 4, 3))
                q = k - 1 - p
                gp = np.pad(g, ((q, q), (q, q), (q, q), (0, 0)))
                gx = _conv_forward_raw(gp, wt, None, 1, (d, h, ww_))
            else:
                gxp = np.zeros_like(xp)
                for dz in range(k):
                    for dy in range(k):
                        for dx in range(k):
                            gxp[dz:dz + s * do:s, dy:dy + s * ho:s, dx:dx + s * wo:s, :] += g @ w.data[dz, dy, dx].T
                gx = gxp[p:p + d, p:p + h, p:p + ww_, :]
            x.accumulate_grad(gx)

    return _make(y, (x, w, b), bwd)


def avg_pool3d(a, k: int) -> Tensor:
    """Non-overlapping k^3 box average over (D, H, W, C)."""
    a = as_tensor(a)
    d, h, w_, c = a.shape
    k = int(k)
    if d % k or h % k or w_ % k:
        raise IndivisibleDims(f"dims {(d, h, w_)} not divisible by {k}")
    blocks = a.data.reshape(d // k, k, h // k, k, w_ // k, k, c)
    out = blocks.mean(axis=(1, 3, 5), dtype=np.float64).astype(a.dtype, copy=False)

    def bwd(g):
        expanded = np.broadcast_to(
            g[:, None, :, None, :, None, :] / np.asarray(k**3, dtype=a.dtype),
            (d // k, k, h // k, k, w_ // k, k, c),
        )
        a.accumulate_grad(expanded.reshape(d, h, w_, c))

    return _make(out, (a,), bwd)


def max_pool3d(a, k: int, stride: int) -> Tensor:
    """Overlapping max pooling over (D, H, W, C)."""
    from numpy.lib.stride_tricks import sliding_window_view

    a = as_tensor(a)
    d, h, w_, c = a.shape
    k, s = int(k), int(stride)
    if min(d, h, w_) < k:
        raise ShapeMismatch(f"dims {(d, h, w_)} below pool size {k}")
    win = sliding_window_view(a.data, (k, k, k), axis=(0, 1, 2))[::s, ::s, ::s]
    do, ho, wo = win.shape[:3]
    flat = win.reshape(do, ho, wo, c, k * k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def bwd(g):
        az, ay, ax = np.unravel_index(arg, (k, k, k))
        zz = (np.arange(do) * s)[:, None, None, None] + az
        yy = (np.arange(ho) * s)[None, :, None, None] + ay
        xx = (np.arange(wo) * s)[None, None, :, None] + ax
        cc = np.broadcast_to(np.arange(c), arg.shape)
        gx = np.zeros_like(a.data)
        np.add.at(gx, (zz, yy, xx, cc), g)
        a.accumulate_grad(gx)

    return _make(out, (a,), bwd)


# --- finite-difference checking ----------------------------------------------

def finite_difference_check(fn, leaves, eps: float = 1e-3, rel_floor: float = 1e-3) -> float:
    """Max scale-clamped relative error between backward grads and central
    finite differences of the scalar fn(). Leaves must be float64 tensors."""
    for t in leaves:
        t.zero_grad()
    out = fn()
    out.backward()
    worst = 0.0
    for t in leaves:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                hi = float(fn().data)
            flat[i] = orig - eps
            with no_grad():
                lo = float(fn().data)
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            an = float(analytic.reshape(-1)[i])
            err = abs(an - fd) / max(abs(an), abs(fd), rel_floor)
            worst = max(worst, err)
    return worst
