"""Differentiable primitive operations.

Every function takes :class:`~regionmatte.tensor.Tensor` objects (numpy
arrays and scalars are accepted and treated as constants) and returns a new
tensor whose backward closure maps the output gradient to input gradients.

Shape rules per kind:

* ``add``/``sub``/``mul``/``div``/``where``: numpy broadcasting; gradients are
  summed back to each operand's shape.
* ``matmul``: operands with ``ndim >= 2``; leading (batch) axes broadcast.
* ``linear``: ``x[..., in] @ w[in, out] + b[out]``.
* ``conv2d``: NHWC input, ``w[kh, kw, cin, cout]``; cross-correlation (the
  kernel is not flipped), symmetric zero padding, integer stride.
* ``bilinear_upsample``: NHWC, half-pixel sampling, edge clamped.
* ``softmax``/``layer_norm``/``mean``/``sum``: along the given axis.
* Everything else is elementwise or a pure re-indexing.
"""

import builtins

import numpy as np
from scipy.special import erf

from .errors import ShapeError
from .tensor import Tensor, as_tensor, record_macs

MASK_VALUE = -1e9
"""Additive logit for masked attention positions; finite so gradients stay finite."""


def _op(data, parents, backward, name):
    return Tensor._from_op(data, parents, backward, name)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _const(x, like=None):
    if isinstance(x, Tensor):
        return x
    if like is None:
        return Tensor(x)
    return Tensor(np.asarray(x, dtype=like.dtype), dtype=like.dtype)


def _binary_operands(a, b):
    if isinstance(a, Tensor):
        return a, _const(b, a)
    b = as_tensor(b)
    return _const(a, b), b


def _check_broadcast(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{name}: cannot broadcast {a.shape} with {b.shape}") from exc


# -- arithmetic ---------------------------------------------------------------

def add(a, b):
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _op(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _op(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = _binary_operands(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _op(out, (a, b), backward, "div")


def neg(a):
    a = as_tensor(a)
    return _op(-a.data, (a,), lambda g: (-g,), "neg")


def scalar_mul(a, c):
    a = as_tensor(a)
    c = float(c)
    return _op(a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,), "scalar_mul")


def where(cond, a, b):
    """Select ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    a, b = _binary_operands(a, b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    zero = np.zeros((), dtype=out.dtype)

    def backward(g):
        g = np.broadcast_to(g, out.shape)
        return (_unbroadcast(np.where(cond, g, zero), a.shape),
                _unbroadcast(np.where(cond, zero, g), b.shape))

    return _op(out, (a, b), backward, "where")


# -- elementwise functions ----------------------------------------------------

def square(a):
    a = as_tensor(a)
    return _op(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def abs(a):
    a = as_tensor(a)
    return _op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _op(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clamp(a, lo=None, hi=None):
    """Clip to ``[lo, hi]``; the gradient is passed only where unclipped."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = out == a.data

    return _op(out, (a,), lambda g: (g * inside,), "clamp")


def relu(a):
    a = as_tensor(a)
    positive = a.data > 0
    return _op(a.data * positive, (a,), lambda g: (g * positive,), "relu")


def sigmoid(a):
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _op(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a):
    """Exact (erf) GELU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(x.dtype)

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _op(out, (a,), backward, "gelu")


def softmax(a, axis=-1, mask=None):
    """Softmax with an optional additive (constant) mask.

    Use :data:`MASK_VALUE` for positions that must receive zero weight.
    """
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        x = x + np.asarray(mask, dtype=x.dtype)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _op(out, (a,), backward, "softmax")


# -- reductions ---------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _op(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return _op(np.asarray(out, dtype=a.dtype), (a,), backward, "mean")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch axes differ: {a.shape} @ {b.shape}") from exc
    out = np.matmul(a.data, b.data)
    record_macs("matmul", np.prod(batch, dtype=np.int64) * a.shape[-2] * a.shape[-1] * b.shape[-1])

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _op(out, (a, b), backward, "matmul")


def linear(x, w, b=None):
    """``x[..., in] @ w[in, out] (+ b[out])``."""
    x, w = as_tensor(x), as_tensor(w)
    b = None if b is None else as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, w.shape[0])
    out = flat @ w.data
    if b is not None:
        out = out + b.data
    record_macs("linear", flat.shape[0] * w.shape[0] * w.shape[1])
    out = out.reshape(lead + (w.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape)
        gw = flat.T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return _op(out, parents, backward, "linear")


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation over NHWC input with a ``[kh, kw, cin, cout]`` kernel."""
    x, w = as_tensor(x), as_tensor(w)
    b = None if b is None else as_tensor(b)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d needs NHWC input and 4-D kernel, got {x.shape}, {w.shape}")
    n, h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {wcin}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match {cout} output channels")
    s, p = int(stride), int(padding)
    hp, wp = h + 2 * p, wd + 2 * p
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // s + 1
    wo = (wp - kw) // s + 1
    xp = np.pad(x.data, ((0, 0), (p, p), (p, p), (0, 0))) if p else x.data
    # im2col in kernel layout: (n, ho, wo, kh, kw, cin)
    cols = np.empty((n, ho, wo, kh, kw, cin), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
    cols2d = cols.reshape(-1, kh * kw * cin)
    w2d = w.data.reshape(kh * kw * cin, cout)
    out = (cols2d @ w2d).reshape(n, ho, wo, cout)
    if b is not None:
        out = out + b.data
    record_macs("conv2d", n * ho * wo * kh * kw * cin * cout)

    def backward(g):
        g2d = g.reshape(-1, cout)
        gw = (cols2d.T @ g2d).reshape(kh, kw, cin, cout)
        gcols = (g2d @ w2d.T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, p:p + h, p:p + wd, :] if p else gxp
        gb = g2d.sum(axis=0) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return _op(out, parents, backward, "conv2d")


def layer_norm(x, weight=None, bias=None, eps=1e-5):
    """Normalize over the last axis, then optionally scale and shift."""
    x = as_tensor(x)
    weight = None if weight is None else as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    c = x.shape[-1]
    for t in (weight, bias):
        if t is not None and t.shape != (c,):
            raise ShapeError(f"layer_norm: affine shape {t.shape} != ({c},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        lead = tuple(range(x.ndim - 1))
        gw = (g * xhat).sum(axis=lead) if weight is not None else None
        gb = g.sum(axis=lead) if bias is not None else None
        gh = g * weight.data if weight is not None else g
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if weight is not None:
            grads.append(gw)
        if bias is not None:
            grads.append(gb)
        return tuple(grads)

    parents = tuple(t for t in (x, weight, bias) if t is not None)
    return _op(out.astype(x.dtype, copy=False), parents, backward, "layer_norm")


# -- re-indexing --------------------------------------------------------------

def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from exc
    return _op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def slice(a, index):
    """Basic indexing (ints, slices, Ellipsis, None); steps allowed."""
    a = as_tensor(a)
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _op(np.array(out, copy=True), (a,), backward, "slice")


def gather(a, indices, axis=0):
    """``take`` along ``axis`` with integer indices of any shape."""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    axis = axis % a.ndim
    if indices.size and (indices.min() < -a.shape[axis] or indices.max() >= a.shape[axis]):
        raise ShapeError(f"gather index out of range for axis of length {a.shape[axis]}")
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + indices.ndim)), tuple(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (full,)

    return _op(out, (a,), backward, "gather")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty list")
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}")
    dtype = np.result_type(*[t.dtype for t in tensors])
    out = np.concatenate([t.data.astype(dtype, copy=False) for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _op(out, tuple(tensors), backward, "concat")


def zero_pad(a, pad_width):
    """Pad with zeros; ``pad_width`` is one ``(before, after)`` pair per axis."""
    a = as_tensor(a)
    pad_width = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(pad_width) != a.ndim or builtins.min(builtins.min(p) for p in pad_width) < 0:
        raise ShapeError(f"zero_pad: bad pad width {pad_width} for shape {a.shape}")
    out = np.pad(a.data, pad_width)
    index = tuple(np.s_[lo:lo + n] for (lo, _), n in zip(pad_width, a.shape))
    return _op(out, (a,), lambda g: (g[index],), "zero_pad")


def _interp_matrix(n_in, n_out, dtype):
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    return m.astype(dtype)


def bilinear_upsample(a, size):
    """Resize NHWC (or HWC) to ``size=(out_h, out_w)`` with half-pixel bilinear sampling."""
    a = as_tensor(a)
    if a.ndim not in (3, 4):
        raise ShapeError(f"bilinear_upsample needs HWC or NHWC, got {a.shape}")
    hax = a.ndim - 3
    h, w = a.shape[hax], a.shape[hax + 1]
    oh, ow = int(size[0]), int(size[1])
    mh = _interp_matrix(h, oh, a.dtype)
    mw = _interp_matrix(w, ow, a.dtype)
    out = np.moveaxis(np.tensordot(mh, a.data, axes=([1], [hax])), 0, hax)
    out = np.moveaxis(np.tensordot(mw, out, axes=([1], [hax + 1])), 0, hax + 1)

    def backward(g):
        gx = np.moveaxis(np.tensordot(mh.T, g, axes=([1], [hax])), 0, hax)
        gx = np.moveaxis(np.tensordot(mw.T, gx, axes=([1], [hax + 1])), 0, hax + 1)
        return (gx,)

    return _op(np.ascontiguousarray(out), (a,), backward, "bilinear_upsample")


def avg_pool(a, factor):
    """Non-overlapping ``factor x factor`` mean pooling over NHWC/HWC via reshape + mean."""
    a = as_tensor(a)
    hax = a.ndim - 3
    h, w, c = a.shape[hax:]
    if h % factor or w % factor:
        raise ShapeError(f"avg_pool: {h}x{w} not divisible by {factor}")
    lead = a.shape[:hax]
    x = reshape(a, lead + (h // factor, factor, w // factor, factor, c))
    return mean(x, axis=(hax + 1, hax + 3))


# -- composites ---------------------------------------------------------------

def pixel_unshuffle(t, p):
    """Space-to-depth on ``[..., H, W, C]``.

    ``out[..., i, j, (a * p + b) * C + c] == t[..., i * p + a, j * p + b, c]``:
    row-major over the ``p x p`` block, input channels fastest.
    """
    t = as_tensor(t)
    p = int(p)
    if p < 1:
        raise ShapeError("pixel_unshuffle: p must be positive")
    h, w, c = t.shape[-3:]
    for axis, n in (("H", h), ("W", w)):
        if n % p:
            raise ShapeError(f"pixel_unshuffle: axis {axis} of size {n} not divisible by {p}")
    if p == 1:
        return t
    lead = t.shape[:-3]
    k = len(lead)
    x = reshape(t, lead + (h // p, p, w // p, p, c))
    x = transpose(x, tuple(range(k)) + (k, k + 2, k + 1, k + 3, k + 4))
    return reshape(x, lead + (h // p, w // p, p * p * c))


def pixel_shuffle(t, p):
    """Depth-to-space; exact inverse of :func:`pixel_unshuffle` with the same ``p``."""
    t = as_tensor(t)
    p = int(p)
    if p < 1:
        raise ShapeError("pixel_shuffle: p must be positive")
    h, w, cc = t.shape[-3:]
    if cc % (p * p):
        raise ShapeError(f"pixel_shuffle: {cc} channels not divisible by p^2={p * p}")
    if p == 1:
        return t
    c = cc // (p * p)
    lead = t.shape[:-3]
    k = len(lead)
    x = reshape(t, lead + (h, w, p, p, c))
    x = transpose(x, tuple(range(k)) + (k, k + 2, k + 1, k + 3, k + 4))
    return reshape(x, lead + (h * p, w * p, c))


def attention(q, k, v, bias=None, mask=None):
    """``softmax(q k^T / sqrt(d) + bias) v`` over the last two axes.

    ``bias`` broadcasts against the ``[..., n, m]`` logits (``[n, m]`` or
    ``[m]``); ``mask`` is a constant additive term, see :data:`MASK_VALUE`.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q {q.shape}, k {k.shape}, v {v.shape} do not align")
    d = q.shape[-1]
    logits = scalar_mul(matmul(q, swap_last(k)), 1.0 / np.sqrt(d))
    if bias is not None:
        logits = add(logits, bias)
    weights = softmax(logits, axis=-1, mask=mask)
    return matmul(weights, v)


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)
