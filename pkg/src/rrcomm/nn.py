"""Minimal reverse-mode autodiff over numpy arrays.

Tensors record the ops that produced them; backward() topologically sorts
the recorded graph and accumulates gradients into every reachable tensor
with requires_grad set. Arrays are float32 by default; float64 inputs stay
float64, which the gradient-check tests rely on. There is no global state:
randomness (dropout) is injected through explicit generators.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeMismatch(ValueError):
    """Operands with incompatible shapes."""


class GraphCycle(RuntimeError):
    """A cycle in the recorded graph; impossible unless tensors are mutated."""


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(np.float32)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    # -- basics ------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def detach(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = grad.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        out = Tensor(self.data + other.data, _parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))
        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_wrap(other))

    def __rsub__(self, other):
        return _wrap(other) + (-self)

    def __mul__(self, other):
        other = _wrap(other)
        out = Tensor(self.data * other.data, _parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))
        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        out = Tensor(self.data / other.data, _parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.data / other.data ** 2, other.shape))
        out._backward = backward
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], _parents=(self,))

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, idx, g)
                self._accumulate(full)
        out._backward = backward
        return out

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), _parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.shape))
        out._backward = backward
        return out

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        out = Tensor(self.data.transpose(axes), _parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inverse))
        out._backward = backward
        return out

    @property
    def T(self):
        return self.transpose()

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())
        out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        size = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / size)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def backward(g):
        if a.ndim == 1 and b.ndim == 1:
            if a.requires_grad:
                a._accumulate(g * b.data)
            if b.requires_grad:
                b._accumulate(g * a.data)
        elif b.ndim == 1:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g[..., :, None] * b.data, a.shape))
            if b.requires_grad:
                b._accumulate((a.data * g[..., :, None]).sum(axis=tuple(range(a.ndim - 1))))
        elif a.ndim == 1:
            if a.requires_grad:
                a._accumulate(b.data @ g)
            if b.requires_grad:
                b._accumulate(np.outer(a.data, g))
        else:
            if a.requires_grad:
                a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = Tensor(np.maximum(x.data, 0), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))
    out._backward = backward
    return out


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """Leaky rectifier; keeps a small gradient on the negative side so conv
    channels cannot die outright."""
    x = _wrap(x)
    out = Tensor(np.where(x.data > 0, x.data, slope * x.data), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * np.where(x.data > 0, 1.0, slope))
    out._backward = backward
    return out


def exp(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = Tensor(np.exp(x.data), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * out.data)
    out._backward = backward
    return out


def log(x: Tensor) -> Tensor:
    x = _wrap(x)
    out = Tensor(np.log(x.data), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g / x.data)
    out._backward = backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along one axis; rows sum to 1."""
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            inner = (g * s).sum(axis=axis, keepdims=True)
            x._accumulate(s * (g - inner))
    out._backward = backward
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), _parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + size)
                t._accumulate(g[tuple(index)])
            offset += size
    out._backward = backward
    return out


def embedding_add(x: Tensor, table: Tensor) -> Tensor:
    """Add a learnable per-position table to a matching sequence."""
    x, table = _wrap(x), _wrap(table)
    if x.shape != table.shape:
        raise ShapeMismatch(f"embedding_add {x.shape} vs table {table.shape}")
    return x + table


def mean_pool(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    """Mean over the given axes (removed from the output shape)."""
    x = _wrap(x)
    size = 1
    for a in axes:
        size *= x.shape[a]
    out = Tensor(x.data.mean(axis=axes), _parents=(x,))

    def backward(g):
        if x.requires_grad:
            ge = g
            for a in sorted(axes):
                ge = np.expand_dims(ge, a)
            x._accumulate(np.broadcast_to(ge / size, x.shape).copy())
    out._backward = backward
    return out


def channel_standardize(x: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization along one axis."""
    x = _wrap(x)
    mu = x.data.mean(axis=axis, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor(y, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            g_mean = g.mean(axis=axis, keepdims=True)
            gy_mean = (g * y).mean(axis=axis, keepdims=True)
            x._accumulate(inv * (g - g_mean - y * gy_mean))
    out._backward = backward
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; scale kept activations by 1/(1-rate)."""
    x = _wrap(x)
    if rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * keep, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * keep)
    out._backward = backward
    return out


def conv3d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: tuple[int, int, int] = (1, 1, 1),
           pad_mode: str = "edge") -> Tensor:
    """3D convolution of (C_in, T, H, W) with kernel (C_out, C_in, kt, kh, kw).

    Padding is kernel//2 per axis. Edge padding (the default) keeps constant
    inputs exactly constant across the output, which zero padding would break
    at the borders.
    """
    x, kernel = _wrap(x), _wrap(kernel)
    cout, cin, kt, kh, kw = kernel.shape
    if x.ndim != 4 or x.shape[0] != cin:
        raise ShapeMismatch(f"conv3d input {x.shape} vs kernel {kernel.shape}")
    if pad_mode not in ("zero", "edge"):
        raise ValueError(f"unsupported pad_mode {pad_mode!r}")
    st, sh, sw = stride
    pt, ph, pw = kt // 2, kh // 2, kw // 2
    pad_spec = [(0, 0), (pt, pt), (ph, ph), (pw, pw)]
    xp = np.pad(x.data, pad_spec, mode="constant" if pad_mode == "zero" else "edge")
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    windows = windows[:, ::st, ::sh, ::sw]
    out_data = np.einsum("cthwijk,ocijk->othw", windows, kernel.data, optimize=True)
    if bias is not None:
        bias = _wrap(bias)
        out_data = out_data + bias.data[:, None, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    out = Tensor(out_data, _parents=parents)
    to, ho, wo = out_data.shape[1:]

    def backward(g):
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(1, 2, 3)))
        if kernel.requires_grad:
            kernel._accumulate(np.einsum("othw,cthwijk->ocijk", g, windows, optimize=True))
        if x.requires_grad:
            gp = np.zeros_like(xp)
            for i in range(kt):
                for j in range(kh):
                    for k in range(kw):
                        patch = np.einsum("othw,oc->cthw", g, kernel.data[:, :, i, j, k],
                                          optimize=True)
                        gp[:, i:i + st * to:st, j:j + sh * ho:sh, k:k + sw * wo:sw] += patch
            x._accumulate(_fold_padding(gp, pad_spec, pad_mode))
    out._backward = backward
    return out


def _fold_padding(gp: np.ndarray, pad_spec, mode: str) -> np.ndarray:
    """Collapse gradient on a padded array back onto the unpadded one."""
    for axis, (lo, hi) in enumerate(pad_spec):
        if lo == 0 and hi == 0:
            continue
        if mode == "edge":
            head = np.take(gp, range(0, lo), axis=axis).sum(axis=axis, keepdims=True)
            tail = np.take(gp, range(gp.shape[axis] - hi, gp.shape[axis]),
                           axis=axis).sum(axis=axis, keepdims=True)
            core = np.take(gp, range(lo, gp.shape[axis] - hi), axis=axis)
            first = [slice(None)] * gp.ndim
            first[axis] = slice(0, 1)
            last = [slice(None)] * gp.ndim
            last[axis] = slice(core.shape[axis] - 1, core.shape[axis])
            core = core.copy()
            core[tuple(first)] += head
            core[tuple(last)] += tail
            gp = core
        else:  # zero padding: pad gradient is simply dropped
            gp = np.take(gp, range(lo, gp.shape[axis] - hi), axis=axis)
    return gp


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Negative log softmax probability of the target class."""
    logits = _wrap(logits)
    if logits.ndim != 1:
        raise ShapeMismatch("cross_entropy expects a flat logit vector")
    n = logits.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} classes")
    shifted = logits.data - logits.data.max()
    lse = math.log(np.exp(shifted).sum())
    out = Tensor(np.asarray(lse - shifted[target], dtype=logits.data.dtype),
                 _parents=(logits,))
    probs = np.exp(shifted - lse)

    def backward(g):
        if logits.requires_grad:
            grad = probs.copy()
            grad[target] -= 1.0
            logits._accumulate(g * grad)
    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# backward pass

def backward(loss: Tensor) -> None:
    """Populate .grad on every reachable tensor with requires_grad set."""
    if loss.data.size != 1:
        raise ValueError("backward expects a scalar loss")
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 0 = on stack, 1 = done
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            state[id(node)] = 1
            order.append(node)
            continue
        mark = state.get(id(node))
        if mark == 1:
            continue
        if mark == 0:
            raise GraphCycle("cycle detected in autodiff graph")
        state[id(node)] = 0
        stack.append((node, True))
        for parent in node._parents:
            if state.get(id(parent)) != 1:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
