"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records its inputs and a backward rule on the output tensor; a
:class:`Tape` is the reachable part of that graph ordered by execution
sequence, and :func:`backward` replays it in reverse.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

MASK_BIAS = -1e30

_seq = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    pass


class FullyMaskedError(ValueError):
    """A softmax row (or nonlocal query) has no unmasked column to attend to."""


class ContractError(RuntimeError):
    pass


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._seq = next(_seq)
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._seq = next(_seq)
    out.op = op
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (no broadcasting)")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # only scalar operands are ever broadcast
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)), "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)), "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (_reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)), "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _make(out, (a, b), lambda g: (_reduce_to(g / bd, a.shape), _reduce_to(-g * out / bd, b.shape)), "div")


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    return _make(ad**p, (a,), lambda g: (g * p * ad ** (p - 1),), "pow")


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * g * ad,), "square")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(a)) without overflow for large |a|."""
    ad = a.data
    out = -np.logaddexp(0.0, -ad)
    s = 0.5 * (1.0 + np.tanh(0.5 * ad))
    return _make(out, (a,), lambda g: (g * (1.0 - s),), "log_sigmoid")


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    ad = a.data
    pos = ad >= 0
    scale = np.where(pos, 1.0, slope)
    return _make(np.where(pos, ad, slope * ad), (a,), lambda g: (g * scale,), "leaky_relu")


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, 0.0)


# ---------------------------------------------------------------- reductions / shape


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = np.sum(a.data, axis=axes)
    keep_shape = tuple(1 if i in axes else s for i, s in enumerate(a.shape))

    def bw(g):
        return (np.broadcast_to(np.reshape(g, keep_shape), a.shape).copy(),)

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes), 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        idx = [slice(None)] * g.ndim
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            grads.append(g[tuple(idx)])
        return tuple(grads)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def take_rows(a: Tensor, index: slice) -> Tensor:
    """Slice along the leading axis (batch split)."""
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(out, (a,), bw, "take_rows")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d product, or a batched product when both operands are 3-d."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (2, 3) or a.ndim != b.ndim:
        raise ShapeError(f"matmul: unsupported ranks {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul: inner dims disagree {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g)

    return _make(ad @ bd, (a, b), bw, "matmul")


def softmax_rows(a: Tensor, mask_bias: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along the last axis.

    ``mask_bias`` is added before normalisation; entries at ``MASK_BIAS``
    come out as exact zeros.
    """
    x = a.data
    if mask_bias is not None:
        mask_bias = np.asarray(mask_bias, dtype=np.float64)
        if mask_bias.shape != x.shape:
            raise ShapeError(f"softmax_rows: mask_bias {mask_bias.shape} vs input {x.shape}")
        if np.any(np.all(mask_bias <= MASK_BIAS / 2, axis=-1)):
            raise FullyMaskedError("softmax row has every column masked")
        x = x + mask_bias
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _make(out, (a,), bw, "softmax_rows")


# ---------------------------------------------------------------- convolution


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [N,C,H,W] with ``weight`` [K,C,kh,kw] plus bias."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    k, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: weight expects {wc} channels, input has {c}")
    if stride < 1:
        raise ShapeError("conv2d: stride must be >= 1")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input")
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({k},)")
    ho, wo = _conv_out(h, kh, stride, pad), _conv_out(w, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = np.empty((n, c, kh, kw, ho, wo))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    ckk = c * kh * kw
    cols = cols.reshape(n, ckk, ho * wo)
    w2 = weight.data.reshape(k, ckk)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, k, ho, wo)

    def bw(g):
        g2 = g.reshape(n, k, ho * wo)
        gw = (g2.transpose(1, 0, 2).reshape(k, n * ho * wo) @ cols.transpose(1, 0, 2).reshape(ckk, n * ho * wo).T)
        gcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, ho, wo)
        gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
        gx = gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp
        grads = [gx, gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, bw, "conv2d")


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"upsample: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _make(out, (x,), bw, "upsample")


def upsample_conv(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, pad: Optional[int] = None) -> Tensor:
    """Nearest-neighbour x2 upsampling followed by a stride-1 convolution.

    ``pad`` defaults to ``(kh - 1) // 2`` so odd kernels keep the doubled size.
    """
    if pad is None:
        pad = (weight.shape[2] - 1) // 2
    return conv2d(upsample_nearest(x, 2), weight, bias, stride=1, pad=pad)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"instance_norm: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    if h * w < 2:
        raise ShapeError("instance_norm: degenerate plane (H*W must be >= 2)")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("instance_norm: gamma/beta must have one entry per channel")
    xd = x.data
    mu = xd.mean(axis=(2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data[None, :, None, None]
    out = gd * xhat + beta.data[None, :, None, None]

    def bw(g):
        gxhat = g * gd
        m = h * w
        gx = inv / m * (m * gxhat - gxhat.sum(axis=(2, 3), keepdims=True) - xhat * (gxhat * xhat).sum(axis=(2, 3), keepdims=True))
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return _make(out, (x, gamma, beta), bw, "instance_norm")


# ---------------------------------------------------------------- backward


@dataclass
class Tape:
    """Ops reachable from a loss, in execution order."""

    ops: list = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        seen: set = set()
        nodes = []
        stack = [loss]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes)

    def leaves(self) -> list:
        return [t for t in self.ops if not t._parents and t.requires_grad]

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.ops or self.ops[-1] is not loss:
            raise ContractError("loss was not produced on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.ops):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def backward(loss: Tensor, tape: Optional[Tape] = None) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-enabled leaf."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or Tape.from_loss(loss)
    tape.backward(loss)
    return tape


# ---------------------------------------------------------------- gradient check


class EvaluationError(ValueError):
    pass


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    tol: float

    @property
    def max_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(
    f: Callable[[Tensor], Tensor],
    point: ArrayLike,
    h: float = 1e-5,
    tol: float = 1e-4,
    coords: Optional[Iterable[int]] = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare the tape gradient of scalar ``f`` at ``point`` with central differences.

    ``coords`` restricts the comparison to a subset of flat indices.
    """
    base = np.array(as_tensor(point).data, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    y = f(x)
    if y.size != 1 or not np.all(np.isfinite(y.data)):
        raise EvaluationError("f must return a finite scalar")
    backward(y)
    analytic_full = x.grad.reshape(-1) if x.grad is not None else np.zeros(base.size)
    idx = np.arange(base.size) if coords is None else np.asarray(list(coords), dtype=int)

    def eval_at(flat):
        with no_grad():
            v = f(Tensor(flat.reshape(base.shape))).data
        if not np.all(np.isfinite(v)):
            raise EvaluationError("f is not finite at a perturbed point")
        return float(v)

    numeric = np.empty(idx.size)
    flat = base.reshape(-1)
    for n, i in enumerate(idx):
        p = flat.copy()
        p[i] += h
        fp = eval_at(p)
        p[i] = flat[i] - h
        fm = eval_at(p)
        numeric[n] = (fp - fm) / (2 * h)
    analytic = analytic_full[idx]
    return GradCheckReport(analytic, numeric, relative_error(analytic, numeric, floor), tol)
