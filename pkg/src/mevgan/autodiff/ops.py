"""Differentiable primitives.

Every backward rule is written with the ops in this module, so gradients are
themselves differentiable when computed under ``create_graph=True``.
Convolutions use valid padding and cross-correlation; pad explicitly with
:func:`pad2d` where a same-size output is wanted.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make

BCE_EPS = 1e-7
NORM_EPS = 1e-12

# when a list, piecewise ops append a fingerprint of their active branch
branch_log: list | None = None


def _log_branch(mask: np.ndarray) -> None:
    if branch_log is not None:
        branch_log.append(hash(mask.tobytes()))


def _lift(v, like: Tensor) -> Tensor:
    if isinstance(v, Tensor):
        return v
    return Tensor(np.asarray(v, dtype=like.data.dtype))


def _need(t: Tensor, thunk):
    return thunk() if t.requires_grad else None


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    axes = tuple(range(extra)) + tuple(
        i + extra for i, n in enumerate(shape) if n == 1 and g.shape[i + extra] != 1
    )
    return reshape(sum(g, axis=axes), shape)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)), "sub")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(mul(g, b), a.shape), _unbroadcast(mul(g, a), b.shape)),
                "mul")


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)

    def backward(g):
        ga = div(g, b)
        gb = neg(div(mul(ga, a), b))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make(a.data / b.data, (a, b), backward, "div")


def neg(x: Tensor) -> Tensor:
    return make(-x.data, (x,), lambda g: (neg(g),), "neg")


def power(x: Tensor, p: float) -> Tensor:
    return make(x.data ** p, (x,), lambda g: (mul(g, mul(power(x, p - 1), p)),), "pow")


def exp(x: Tensor) -> Tensor:
    out = make(np.exp(x.data), (x,), lambda g: (mul(g, out),), "exp")
    return out


def log(x: Tensor) -> Tensor:
    return make(np.log(x.data), (x,), lambda g: (div(g, x),), "log")


def sqrt(x: Tensor) -> Tensor:
    out = make(np.sqrt(x.data), (x,), lambda g: (div(g, mul(out, 2.0)),), "sqrt")
    return out


def tanh(x: Tensor) -> Tensor:
    out = make(np.tanh(x.data), (x,), lambda g: (mul(g, sub(1.0, mul(out, out))),), "tanh")
    return out


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    out = make(y, (x,), lambda g: (mul(g, mul(out, sub(1.0, out))),), "sigmoid")
    return out


def relu(x: Tensor) -> Tensor:
    mask = Tensor((x.data > 0).astype(x.data.dtype))
    _log_branch(mask.data)
    return make(x.data * mask.data, (x,), lambda g: (mul(g, mask),), "relu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    m = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)
    mask = Tensor(m)
    _log_branch(m)
    return make(x.data * m, (x,), lambda g: (mul(g, mask),), "leaky_relu")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    mask = Tensor(((x.data >= lo) & (x.data <= hi)).astype(x.data.dtype))
    _log_branch(mask.data)
    return make(np.clip(x.data, lo, hi), (x,), lambda g: (mul(g, mask),), "clamp")


# -- reductions and shape ---------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if not keepdims and axis is not None:
            axes = (axis,) if isinstance(axis, int) else axis
            axes = tuple(a % len(shape) for a in axes)
            g = reshape(g, tuple(1 if i in axes else n for i, n in enumerate(shape)))
        elif not keepdims:
            g = reshape(g, (1,) * len(shape))
        return (broadcast_to(g, shape),)

    return make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    s = sum(x, axis=axis, keepdims=keepdims)
    return mul(s, s.data.size / x.data.size)


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    return make(np.broadcast_to(x.data, shape).copy(), (x,),
                lambda g: (_unbroadcast(g, x.shape),), "broadcast_to")


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make(x.data.reshape(shape), (x,), lambda g: (reshape(g, old),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make(x.data.transpose(axes), (x,),
                lambda g: (transpose(g, inv),), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape
    return make(np.array(x.data[index]), (x,), lambda g: (scatter(g, shape, index),), "getitem")


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in items)


def scatter(x: Tensor, shape: tuple, index) -> Tensor:
    """Place ``x`` at ``index`` of a zero tensor of ``shape`` (adjoint of getitem)."""
    out = np.zeros(shape, dtype=x.data.dtype)
    if _is_basic(index):
        out[index] = x.data
    else:
        np.add.at(out, index, x.data)
    return make(out, (x,), lambda g: (getitem(g, index),), "scatter")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = (slice(None),) * axis + (slice(int(lo), int(hi)),)
            grads.append(getitem(g, idx))
        return grads

    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ValueError(f"concat_last: leading dims differ, {a.shape} vs {b.shape}")
    return concat([a, b], axis=-1)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return make(a.data @ b.data, (a, b),
                lambda g: (_need(a, lambda: matmul(g, transpose(b))),
                           _need(b, lambda: matmul(transpose(a), g))), "matmul")


# -- image ops --------------------------------------------------------------

def pad2d(x: Tensor, ph: int, pw: int | None = None) -> Tensor:
    pw = ph if pw is None else pw
    h, w = x.shape[-2:]
    data = np.pad(x.data, [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)])
    crop = (Ellipsis, slice(ph, ph + h), slice(pw, pw + w))
    return make(data, (x,), lambda g: (getitem(g, crop),), "pad2d")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of the last two axes."""
    data = x.data.repeat(2, axis=-2).repeat(2, axis=-1)
    return make(data, (x,), lambda g: (sum_pool2x(g),), "upsample2x")


def sum_pool2x(x: Tensor) -> Tensor:
    *lead, h, w = x.shape
    data = x.data.reshape(*lead, h // 2, 2, w // 2, 2).sum(axis=(-3, -1))
    return make(data, (x,), lambda g: (upsample2x(g),), "sum_pool2x")


def avg_pool2x(x: Tensor) -> Tensor:
    return mul(sum_pool2x(x), 0.25)


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Patches of ``x`` as (B, C*kh*kw, Ho*Wo)."""
    b, c, h, w = x.shape
    ho, wo = conv_output_size(h, kh, sh), conv_output_size(w, kw, sw)
    cols = np.empty((b, c, kh, kw, ho, wo), x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _conv_fwd(x, w, stride, cols=None):
    o, _, kh, kw = w.shape
    if cols is None:
        cols = _im2col(x, kh, kw, *stride)
    ho, wo = conv_output_size(x.shape[2], kh, stride[0]), conv_output_size(x.shape[3], kw, stride[1])
    return np.matmul(w.reshape(o, -1), cols).reshape(x.shape[0], o, ho, wo)


def _conv_weight(x, g, kshape, stride, cols=None):
    kh, kw = kshape
    if cols is None:
        cols = _im2col(x, kh, kw, *stride)
    b, o = g.shape[:2]
    dw = np.matmul(g.reshape(b, o, -1), cols.transpose(0, 2, 1)).sum(axis=0)
    return dw.reshape(o, x.shape[1], kh, kw)


def _conv_transpose(g, w, in_shape, stride):
    sh, sw = stride
    b, o, ho, wo = g.shape
    _, c, kh, kw = w.shape
    d = np.matmul(w.reshape(o, -1).T, g.reshape(b, o, -1)).reshape(b, c, kh, kw, ho, wo)
    out = np.zeros(in_shape, dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += d[:, :, i, j]
    return out


def conv2d_raw(x: Tensor, w: Tensor, stride=(1, 1)) -> Tensor:
    stride = tuple(stride)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    if w.shape[2] > x.shape[2] or w.shape[3] > x.shape[3]:
        raise ValueError(f"conv2d: kernel {w.shape[2:]} larger than input {x.shape[2:]}")
    cols = _im2col(x.data, w.shape[2], w.shape[3], *stride)
    return make(_conv_fwd(x.data, w.data, stride, cols), (x, w),
                lambda g: (_need(x, lambda: conv_transpose(g, w, x.shape, stride)),
                           _need(w, lambda: conv_weight(x, g, w.shape[2:], stride, cols))),
                "conv2d")


def conv_transpose(g: Tensor, w: Tensor, in_shape: tuple, stride) -> Tensor:
    """Adjoint of :func:`conv2d_raw` with respect to its input."""
    return make(_conv_transpose(g.data, w.data, in_shape, stride), (g, w),
                lambda gg: (_need(g, lambda: conv2d_raw(gg, w, stride)),
                            _need(w, lambda: conv_weight(gg, g, w.shape[2:], stride))),
                "conv_transpose")


def conv_weight(x: Tensor, g: Tensor, kshape, stride, cols=None) -> Tensor:
    """Adjoint of :func:`conv2d_raw` with respect to its weight."""
    return make(_conv_weight(x.data, g.data, tuple(kshape), stride, cols), (x, g),
                lambda gw: (_need(x, lambda: conv_transpose(g, gw, x.shape, stride)),
                            _need(g, lambda: conv2d_raw(x, gw, stride))),
                "conv_weight")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=(1, 1)) -> Tensor:
    """Valid cross-correlation. ``x`` (B,Cin,H,W), ``weight`` (Cout,Cin,kH,kW)."""
    if isinstance(stride, int):
        stride = (stride, stride)
    out = conv2d_raw(x, weight, stride)
    if bias is not None:
        out = add(out, reshape(bias, (1, -1, 1, 1)))
    return out


# -- normalisation and losses -----------------------------------------------

def l2_normalize_rows(x: Tensor) -> Tensor:
    norms = np.sqrt(np.sum(x.data.astype(np.float64) ** 2, axis=1, keepdims=True))
    if np.any(norms < NORM_EPS):
        raise ValueError("l2_normalize_rows: row norm below 1e-12")

    def backward(g):
        n = sqrt(sum(mul(x, x), axis=1, keepdims=True))
        proj = sum(mul(g, out), axis=1, keepdims=True)
        return (div(sub(g, mul(out, proj)), n),)

    out = make((x.data / norms).astype(x.data.dtype), (x,), backward, "l2_normalize_rows")
    return out


def pixel_norm(x: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale each spatial position's channel vector to unit RMS (axis 1)."""
    ms = mean(mul(x, x), axis=1, keepdims=True)
    return div(x, sqrt(add(ms, eps)))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    z = sub(x, shift)
    return sub(z, log(sum(exp(z), axis=axis, keepdims=True)))


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy of probabilities, clamped into [eps, 1-eps]."""
    t = target if isinstance(target, Tensor) else Tensor(np.broadcast_to(
        np.asarray(target, dtype=pred.data.dtype), pred.shape).copy())
    p = clamp(pred, BCE_EPS, 1.0 - BCE_EPS)
    ll = add(mul(t, log(p)), mul(sub(1.0, t), log(sub(1.0, p))))
    return neg(mean(ll))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy against integer class labels."""
    logp = log_softmax(logits, axis=1)
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[np.arange(len(labels)), labels] = 1.0
    return neg(mean(sum(mul(logp, Tensor(onehot)), axis=1)))


# -- operator sugar ---------------------------------------------------------

Tensor.__add__ = lambda a, b: add(a, b)
Tensor.__radd__ = lambda a, b: add(b, a)
Tensor.__sub__ = lambda a, b: sub(a, b)
Tensor.__rsub__ = lambda a, b: sub(b, a)
Tensor.__mul__ = lambda a, b: mul(a, b)
Tensor.__rmul__ = lambda a, b: mul(b, a)
Tensor.__truediv__ = lambda a, b: div(a, b)
Tensor.__rtruediv__ = lambda a, b: div(b, a)
Tensor.__neg__ = lambda a: neg(a)
Tensor.__pow__ = lambda a, p: power(a, p)
Tensor.__matmul__ = lambda a, b: matmul(a, b)
Tensor.__getitem__ = lambda a, idx: getitem(a, idx)
Tensor.reshape = lambda a, *shape: reshape(a, shape[0] if len(shape) == 1 else shape)
Tensor.sum = lambda a, axis=None, keepdims=False: sum(a, axis, keepdims)
Tensor.mean = lambda a, axis=None, keepdims=False: mean(a, axis, keepdims)
Tensor.T = property(lambda a: transpose(a))
