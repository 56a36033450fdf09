"""Reverse-mode autodiff over dense numpy arrays.

A static tape is enough here: the layer menu is fixed and every training
step runs at most two backward passes. Graph recording is skipped entirely
inside ``no_grad()`` or when no input requires gradients, and the recorded
graph is freed by ``backward()``.

All array math stays in numpy's deterministic kernels (elementwise ops,
pairwise-summed reductions, 2-D GEMM), so forward and backward are
bit-identical regardless of BLAS thread count.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from qad.errors import InvalidInputError, UsageError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
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
    """Dense n-d array with optional gradient tracking.

    ``data`` is always a float numpy array; ``grad`` (populated by
    ``backward``) matches ``data`` in shape and dtype.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._vjp is None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- autodiff ---------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf.

        Frees the recorded graph afterwards; calling backward twice on the
        same value is a usage error.
        """
        if self.data.size != 1:
            raise InvalidInputError("backward() requires a scalar tensor")
        if self.is_leaf and not self.requires_grad:
            raise UsageError("backward() on a value recorded without gradient tracking")

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
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node.is_leaf:
                add = g.astype(node.data.dtype, copy=False)
                node.grad = add.copy() if node.grad is None else node.grad + add
            if node._vjp is not None:
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if pg is None:
                        continue
                    pg = pg.astype(parent.data.dtype, copy=False)
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
                # free the tape as we walk it
                node._parents = ()
                node._vjp = None

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise NotImplementedError("tensor/tensor division is not part of the op menu")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    # reductions / reshapes as methods for readability
    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    @property
    def T(self):
        return transpose(self)

    def astype(self, dtype):
        return cast(self, dtype)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _record(data: np.ndarray, parents: tuple, vjp) -> Tensor:
    track = _GRAD_ENABLED and any(p.requires_grad or p._vjp is not None for p in parents)
    if not track:
        return Tensor(data)
    out = Tensor(data, _parents=parents, _vjp=vjp)
    out.requires_grad = False
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ops --------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _wrap(a)
        c = float(b)

        def vjp_s(g):
            return (g * c,)

        return _record(a.data * c, (a,), vjp_s)
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _record(out, (a, b), vjp)


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _record(out, (a,), vjp)


def tlog(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _record(out, (a,), vjp)


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def vjp(g):
        # subgradient 0 at the kink; keeps pairwise losses finite on equal inputs
        safe = np.where(out > 0.0, out, 1.0)
        return (np.where(out > 0.0, g * 0.5 / safe, 0.0),)

    return _record(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0.0),)

    return _record(out, (a,), vjp)


def cast(a: Tensor, dtype) -> Tensor:
    dtype = np.dtype(dtype)
    out = a.data.astype(dtype)

    def vjp(g):
        return (g.astype(a.data.dtype),)

    return _record(out, (a,), vjp)


# -- shape ops ---------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _record(out, (a,), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise InvalidInputError("transpose is defined for 2-D tensors")
    out = a.data.T.copy()

    def vjp(g):
        return (g.T,)

    return _record(out, (a,), vjp)


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _record(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- linear algebra ------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise InvalidInputError("matmul is defined for 2-D tensors")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), vjp)


# -- structured ops -------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation) via im2col.

    x: (B, Cin, H, W); w: (Cout, Cin, kh, kw); b: (Cout,).
    """
    if x.data.ndim != 4:
        raise InvalidInputError(f"conv2d input must be 4-D, got shape {x.data.shape}")
    B, cin, H, W = x.data.shape
    cout, cin_w, kh, kw = w.data.shape
    if cin != cin_w:
        raise InvalidInputError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    ho = (Hp - kh) // stride + 1
    wo = (Wp - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise InvalidInputError("conv2d kernel larger than (padded) input")

    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, ho, wo, Cin*kh*kw), contiguous copy for the GEMM
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * ho * wo, cin * kh * kw)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T + b.data).reshape(B, ho, wo, cout).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def vjp(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(B * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(w.data.shape)
        gb = gmat.sum(axis=0)
        gcols = gmat @ wmat  # (B*ho*wo, Cin*kh*kw)
        gcols = gcols.reshape(B, ho, wo, cin, kh, kw)
        gx = np.zeros((B, cin, Hp, Wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + ho * stride : stride, j : j + wo * stride : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        if padding:
            gx = gx[:, :, padding : Hp - padding, padding : Wp - padding]
        return gx, gw, gb

    return _record(out, (x, w, b), vjp)


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pool; trailing rows/cols that do not fill a window are dropped."""
    if x.data.ndim != 4:
        raise InvalidInputError(f"maxpool2d input must be 4-D, got shape {x.data.shape}")
    B, C, H, W = x.data.shape
    ho, wo = H // size, W // size
    if ho == 0 or wo == 0:
        raise InvalidInputError("maxpool2d window larger than input")
    cropped = x.data[:, :, : ho * size, : wo * size]
    tiles = cropped.reshape(B, C, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, ho, wo, size * size)
    idx = tiles.argmax(axis=-1)  # first maximum wins: deterministic under ties
    out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]

    def vjp(g):
        gt = np.zeros_like(tiles)
        np.put_along_axis(gt, idx[..., None], g[..., None], axis=-1)
        gx_crop = gt.reshape(B, C, ho, wo, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, ho * size, wo * size)
        if ho * size == H and wo * size == W:
            return (gx_crop,)
        gx = np.zeros_like(x.data)
        gx[:, :, : ho * size, : wo * size] = gx_crop
        return (gx,)

    return _record(out, (x,), vjp)
