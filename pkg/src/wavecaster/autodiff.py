"""Dense tensors with reverse-mode differentiation.

Values are float64 numpy arrays; every differentiable operation optionally
records its adjoint rule on an ambient Tape. Gradients flow back into
Parameter leaves. Only the small set of ops the forecaster needs is
implemented: broadcast elementwise arithmetic, (batched) matmul, softmax,
layer norm, GELU/sigmoid/tanh, reductions, reshapes and a 3x3 conv2d with
periodic-longitude / replicated-latitude padding.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_active_tape = None


class Tensor:
    """Immutable dense array of float64 values."""

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # operator sugar; constants are allowed on either side
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """Learnable leaf tensor with an accumulated gradient."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name=""):
        super().__init__(data)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Tape:
    """Append-only record of operations for one forward pass.

    Nodes are stored in topological order by construction; backward visits
    them exactly once in strict reverse order. Use as a context manager:

        with Tape() as tape:
            loss = ...
        backward(tape, loss)
    """

    def __init__(self):
        self.nodes = []  # (out Tensor, parent Tensors, adjoint fn)

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise ContractError("nested tapes are not supported")
        _active_tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _active_tape
        _active_tape = None
        return False

    def record(self, out, parents, backward_fn):
        self.nodes.append((out, parents, backward_fn))


def _record(out, parents, backward_fn):
    if _active_tape is not None:
        _active_tape.record(out, parents, backward_fn)
    return out


def _value(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _check_broadcastable(sa, sb):
    for da, db in zip(reversed(sa), reversed(sb)):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"shapes {tuple(sa)} and {tuple(sb)} are not broadcastable")


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(Parameter) into every reachable Parameter's grad."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for out, parents, fn in reversed(tape.nodes):
        g_out = grads.pop(id(out), None)
        if g_out is None:
            continue
        for parent, g in zip(parents, fn(g_out)):
            if g is None or not isinstance(parent, Tensor):
                continue
            if isinstance(parent, Parameter):
                parent.grad += g
            else:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    av, bv = _value(a), _value(b)
    _check_broadcastable(av.shape, bv.shape)
    out = Tensor(av + bv)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)),
    )


def sub(a, b):
    av, bv = _value(a), _value(b)
    _check_broadcastable(av.shape, bv.shape)
    out = Tensor(av - bv)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)),
    )


def mul(a, b):
    av, bv = _value(a), _value(b)
    _check_broadcastable(av.shape, bv.shape)
    out = Tensor(av * bv)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def div(a, b):
    av, bv = _value(a), _value(b)
    _check_broadcastable(av.shape, bv.shape)
    out = Tensor(av / bv)
    return _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / bv, av.shape),
            _unbroadcast(-g * av / (bv * bv), bv.shape),
        ),
    )


def neg(a):
    out = Tensor(-_value(a))
    return _record(out, (a,), lambda g: (-g,))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b):
    """Dispatch by op kind; kept as the generic entry point for binary ops."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op kind {kind!r}") from None
    return fn(a, b)


# ---------------------------------------------------------------------------
# linear algebra and shaping


def matmul(a, b):
    av, bv = _value(a), _value(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {av.shape} vs {bv.shape}")
    _check_broadcastable(av.shape[:-2], bv.shape[:-2])
    out = Tensor(np.matmul(av, bv))

    def back(g):
        ga = _unbroadcast(np.matmul(g, bv.swapaxes(-1, -2)), av.shape)
        gb = _unbroadcast(np.matmul(av.swapaxes(-1, -2), g), bv.shape)
        return ga, gb

    return _record(out, (a, b), back)


def reshape(a, shape):
    av = _value(a)
    out = Tensor(av.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(av.shape),))


def transpose(a, axes):
    av = _value(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor(av.transpose(axes))
    return _record(out, (a,), lambda g: (g.transpose(inv),))


def concat(parts: Sequence[Tensor], axis=0):
    vals = [_value(p) for p in parts]
    out = Tensor(np.concatenate(vals, axis=axis))
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(parts), back)


def slice_axis0(a, start, stop):
    av = _value(a)
    out = Tensor(av[start:stop])

    def back(g):
        full = np.zeros_like(av)
        full[start:stop] = g
        return (full,)

    return _record(out, (a,), back)


def tsum(a, axis=None, keepdims=False):
    av = _value(a)
    out = Tensor(av.sum(axis=axis, keepdims=keepdims))

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, av.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, av.shape).copy(),)

    return _record(out, (a,), back)


def mean_all(a):
    av = _value(a)
    return mul(tsum(a), 1.0 / av.size)


# ---------------------------------------------------------------------------
# nonlinearities


def softmax_lastdim(a):
    av = _value(a)
    shifted = av - av.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def back(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), back)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last dimension, then apply affine gain/bias."""
    av, gv, bv = _value(a), _value(gain), _value(bias)
    d = av.shape[-1]
    mu = av.mean(axis=-1, keepdims=True)
    xc = av - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(gv * xhat + bv)

    def back(g):
        dxhat = g * gv
        # standard layer-norm adjoint, fused
        dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(av.ndim - 1))
        dg = (g * xhat).sum(axis=lead)
        db = g.sum(axis=lead)
        return dx, dg, db

    return _record(out, (a, gain, bias), back)


def gelu(a):
    """Exact Gaussian error linear unit x * Phi(x)."""
    av = _value(a)
    phi_cdf = 0.5 * (1.0 + erf(av * _INV_SQRT2))
    out = Tensor(av * phi_cdf)

    def back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * av * av)
        return (g * (phi_cdf + av * pdf),)

    return _record(out, (a,), back)


def sigmoid(a):
    av = _value(a)
    y = 1.0 / (1.0 + np.exp(-av))
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a):
    y = np.tanh(_value(a))
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


# ---------------------------------------------------------------------------
# 3x3 convolution with earth-like padding


def _pad_wrap_edge(x):
    """Pad H (latitude) by edge replication and W (longitude) periodically."""
    xw = np.pad(x, ((0, 0), (0, 0), (1, 1)), mode="wrap")
    return np.pad(xw, ((0, 0), (1, 1), (0, 0)), mode="edge")


def _pad_adjoint(gp):
    """Adjoint of _pad_wrap_edge: fold padded-border gradients back in."""
    # undo edge padding in latitude
    gw = gp[:, 1:-1, :].copy()
    gw[:, 0, :] += gp[:, 0, :]
    gw[:, -1, :] += gp[:, -1, :]
    # undo wrap padding in longitude
    g = gw[:, :, 1:-1].copy()
    g[:, :, -1] += gw[:, :, 0]
    g[:, :, 0] += gw[:, :, -1]
    return g


def conv2d(x, kernels):
    """3x3 convolution on a (C_in, H, W) field, spatial extents preserved.

    Longitude wraps periodically; latitude edges replicate.
    """
    xv, kv = _value(x), _value(kernels)
    if xv.ndim != 3:
        raise ShapeError(f"conv2d input must be (C,H,W), got {xv.shape}")
    if kv.ndim != 4 or kv.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernels must be (C_out,C_in,3,3), got {kv.shape}")
    c_in, h, w = xv.shape
    if kv.shape[1] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {c_in}, kernels expect {kv.shape[1]}")
    c_out = kv.shape[0]

    xp = _pad_wrap_edge(xv)
    view = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    cols = view.transpose(1, 2, 0, 3, 4).reshape(h * w, c_in * 9)
    kmat = kv.reshape(c_out, c_in * 9)
    y = (cols @ kmat.T).reshape(h, w, c_out).transpose(2, 0, 1)
    out = Tensor(np.ascontiguousarray(y))

    def back(g):
        gmat = g.transpose(1, 2, 0).reshape(h * w, c_out)
        dk = (gmat.T @ cols).reshape(kv.shape)
        dcols = (gmat @ kmat).reshape(h, w, c_in, 3, 3)
        gp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                gp[:, di:di + h, dj:dj + w] += dcols[:, :, :, di, dj].transpose(2, 0, 1)
        return _pad_adjoint(gp), dk

    return _record(out, (x, kernels), back)


# ---------------------------------------------------------------------------
# verification harness


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    samples_per_param: int = 4,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients of a scalar function against central differences.

    Returns the max over sampled coordinates of
    |analytic - central| / max(1, |central|). f is re-evaluated with
    perturbed parameter entries, so it must be deterministic.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backward(tape, loss)

    worst = 0.0
    for p in params:
        n = p.data.size
        count = min(samples_per_param, n)
        idxs = rng.choice(n, size=count, replace=False)
        flat = p.data.reshape(-1)
        gflat = p.grad.reshape(-1)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + h
            up = f().item()
            flat[idx] = orig - h
            dn = f().item()
            flat[idx] = orig
            fd = (up - dn) / (2.0 * h)
            err = abs(gflat[idx] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst
