"""Differentiable operation kinds.

Each kind registers a forward returning ``(output, ctx)`` and a backward
mapping ``(ctx, grad_out)`` to one gradient per input (``None`` where the
input is not differentiable).
"""

from __future__ import annotations

import builtins
import math
from typing import Any, Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Node, Tensor, active_graph


class ShapeError(ValueError):
    pass


class UnknownOpError(KeyError):
    pass


_FORWARD: dict[str, Callable] = {}
_BACKWARD: dict[str, Callable] = {}


def register(kind: str):
    def deco(fwd):
        _FORWARD[kind] = fwd

        def bwd_deco(bwd):
            _BACKWARD[kind] = bwd
            return bwd

        fwd.backward = bwd_deco
        return fwd

    return deco


def kinds() -> list[str]:
    return sorted(_FORWARD)


def _as_tensor(x: Any, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def apply(kind: str, *inputs: Any, **attrs: Any) -> Tensor:
    """Run op ``kind`` on ``inputs``; record it on the active graph if tracked."""
    if kind not in _FORWARD:
        raise UnknownOpError(f"unknown op kind {kind!r}; known: {', '.join(kinds())}")
    dtype = next((x.dtype for x in inputs if isinstance(x, Tensor)), np.float64)
    tensors = tuple(_as_tensor(x, dtype) for x in inputs)
    arrays = [t.data for t in tensors]
    try:
        out, ctx = _FORWARD[kind](*arrays, **attrs)
    except ShapeError:
        raise
    except (ValueError, IndexError) as exc:
        shapes = ", ".join(str(a.shape) for a in arrays)
        raise ShapeError(f"{kind}: invalid input shapes {shapes}: {exc}") from exc
    out = Tensor(np.asarray(out, dtype=dtype))
    graph = active_graph()
    if graph is not None and any(t._tracked for t in tensors):
        out._tracked = True
        bwd = _BACKWARD[kind]
        graph.record(Node(kind, tensors, out, lambda g, _c=ctx: bwd(_c, g)))
    return out


def _shape_error(kind: str, *arrays: np.ndarray, why: str = "") -> ShapeError:
    shapes = ", ".join(str(a.shape) for a in arrays)
    return ShapeError(f"{kind}: incompatible shapes {shapes}" + (f" ({why})" if why else ""))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(kind, a, b, why="not broadcastable") from None


# -- elementwise -------------------------------------------------------------


@register("add")
def _add(a, b):
    _broadcast_check("add", a, b)
    return a + b, (a.shape, b.shape)


@_add.backward
def _add_b(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), _unbroadcast(g, sb)


@register("sub")
def _sub(a, b):
    _broadcast_check("sub", a, b)
    return a - b, (a.shape, b.shape)


@_sub.backward
def _sub_b(ctx, g):
    sa, sb = ctx
    return _unbroadcast(g, sa), -_unbroadcast(g, sb)


@register("mul")
def _mul(a, b):
    _broadcast_check("mul", a, b)
    return a * b, (a, b)


@_mul.backward
def _mul_b(ctx, g):
    a, b = ctx
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@register("relu")
def _relu(x):
    return np.maximum(x, 0), x > 0


@_relu.backward
def _relu_b(mask, g):
    return (g * mask,)


_GELU_C = math.sqrt(2.0 / math.pi)


@register("gelu")
def _gelu(x):
    # tanh approximation
    x2 = x * x
    th = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    return 0.5 * x * (1.0 + th), (x, th)


@_gelu.backward
def _gelu_b(ctx, g):
    x, th = ctx
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * du),)


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)


@register("sigmoid")
def _sigmoid_f(x):
    s = _sigmoid(x)
    return s, s


@_sigmoid_f.backward
def _sigmoid_b(s, g):
    return (g * s * (1.0 - s),)


@register("softmax")
def _softmax(x, axis=-1):
    s = x - x.max(axis=axis, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=axis, keepdims=True)
    return s, (s, axis)


@_softmax.backward
def _softmax_b(ctx, g):
    s, axis = ctx
    dot = np.expand_dims(np.einsum("...j,...j->...", np.moveaxis(s, axis, -1), np.moveaxis(g, axis, -1)), axis)
    out = g - dot
    out *= s
    return (out,)


# -- linear algebra ----------------------------------------------------------


@register("matmul")
def _matmul(a, b):
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise _shape_error("matmul", a, b, why="inner dimensions differ")
    try:
        out = np.matmul(a, b)
    except ValueError:
        raise _shape_error("matmul", a, b, why="batch dimensions not broadcastable") from None
    return out, (a, b)


@_matmul.backward
def _matmul_b(ctx, g):
    a, b = ctx
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = g
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    if b.ndim == 1:
        g2 = np.expand_dims(g2, -1)
    ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
    gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
    if a.ndim == 1:
        ga = ga[..., 0, :]
    if b.ndim == 1:
        gb = gb[..., :, 0]
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


@register("transpose")
def _transpose(x, axes=None):
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise _shape_error("transpose", x, why=f"bad axes {axes}")
    return np.transpose(x, axes), axes


@_transpose.backward
def _transpose_b(axes, g):
    return (np.transpose(g, np.argsort(axes)),)


@register("reshape")
def _reshape(x, shape):
    try:
        return x.reshape(shape), x.shape
    except ValueError:
        raise _shape_error("reshape", x, why=f"cannot reshape to {tuple(shape)}") from None


@_reshape.backward
def _reshape_b(shape, g):
    return (g.reshape(shape),)


# -- reductions (accumulate in f64) -----------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


@register("sum")
def _sum(x, axis=None, keepdims=False):
    ax = _norm_axis(axis, x.ndim)
    out = np.sum(x, axis=ax, keepdims=keepdims, dtype=np.float64).astype(x.dtype)
    return out, (x.shape, ax, keepdims)


@_sum.backward
def _sum_b(ctx, g):
    shape, ax, keepdims = ctx
    if not keepdims:
        g = np.expand_dims(g, ax)
    return (np.broadcast_to(g, shape).copy(),)


@register("mean")
def _mean(x, axis=None, keepdims=False):
    ax = _norm_axis(axis, x.ndim)
    out = np.mean(x, axis=ax, keepdims=keepdims, dtype=np.float64).astype(x.dtype)
    n = int(np.prod([x.shape[a] for a in ax]))
    return out, (x.shape, ax, keepdims, n)


@_mean.backward
def _mean_b(ctx, g):
    shape, ax, keepdims, n = ctx
    if not keepdims:
        g = np.expand_dims(g, ax)
    return (np.broadcast_to(g / n, shape).copy(),)


# -- structural --------------------------------------------------------------


@register("concat")
def _concat(*xs, axis=0):
    try:
        out = np.concatenate(xs, axis=axis)
    except ValueError:
        raise _shape_error("concat", *xs, why=f"along axis {axis}") from None
    sizes = [x.shape[axis] for x in xs]
    return out, (axis, np.cumsum(sizes)[:-1])


@_concat.backward
def _concat_b(ctx, g):
    axis, splits = ctx
    return tuple(np.split(g, splits, axis=axis))


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, builtins.slice, type(None), type(Ellipsis))) for i in items)


@register("slice")
def _slice(x, index):
    try:
        out = x[index]
    except IndexError as exc:
        raise ShapeError(f"slice: index {index!r} invalid for shape {x.shape}: {exc}") from None
    if out.size == 0:
        raise ShapeError(f"slice: index {index!r} selects nothing from shape {x.shape}")
    return np.array(out), (x.shape, x.dtype, index)


@_slice.backward
def _slice_b(ctx, g):
    shape, dtype, index = ctx
    gx = np.zeros(shape, dtype=dtype)
    if _is_basic(index):
        gx[index] += g
    else:
        np.add.at(gx, index, g)
    return (gx,)


@register("embed_lookup")
def _embed(table, ids):
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise _shape_error("embed_lookup", table, why="table must be 2-D")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embed_lookup: ids outside [0, {table.shape[0]}) for table {table.shape}")
    return table[ids], (table.shape, table.dtype, ids)


@_embed.backward
def _embed_b(ctx, g):
    shape, dtype, ids = ctx
    gt = np.zeros(shape, dtype=dtype)
    np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[1]))
    return (gt,)


# -- normalization -----------------------------------------------------------


def _norm_backward(gy, xhat, inv, axes):
    n = int(np.prod([xhat.shape[a] for a in axes]))
    mg = gy.sum(axis=axes, keepdims=True) / n
    mgx = (gy * xhat).sum(axis=axes, keepdims=True) / n
    return inv * (gy - mg - xhat * mgx)


@register("layernorm")
def _layernorm(x, gamma, beta, eps=1e-5):
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise _shape_error("layernorm", x, gamma, beta, why="affine params must match last axis")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * gamma + beta, (xhat, inv, gamma)


@_layernorm.backward
def _layernorm_b(ctx, g):
    xhat, inv, gamma = ctx
    red = tuple(range(g.ndim - 1))
    gx = _norm_backward(g * gamma, xhat, inv, (-1,))
    return gx, (g * xhat).sum(axis=red), g.sum(axis=red)


@register("groupnorm")
def _groupnorm(x, gamma, beta, groups=1, eps=1e-5):
    if x.ndim != 4:
        raise _shape_error("groupnorm", x, why="expected (B, C, H, W)")
    b, c, h, w = x.shape
    if c % groups or gamma.shape != (c,) or beta.shape != (c,):
        raise _shape_error("groupnorm", x, gamma, beta, why=f"channels {c} vs groups {groups}")
    xg = x.reshape(b, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    var = ((xg - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return out, (xhat, inv, gamma, groups)


@_groupnorm.backward
def _groupnorm_b(ctx, g):
    xhat, inv, gamma, groups = ctx
    b = g.shape[0]
    gy = (g * gamma[None, :, None, None]).reshape(b, groups, -1)
    gx = _norm_backward(gy, xhat.reshape(b, groups, -1), inv, (-1,)).reshape(g.shape)
    return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))


# -- convolution and pooling -------------------------------------------------


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


@register("conv2d")
def _conv2d(x, w, *, stride, padding):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise _shape_error("conv2d", x, w, why="expected x (B, C, H, W) and w (O, C, kh, kw)")
    b, c = x.shape[:2]
    o, _, kh, kw = w.shape
    xp = _pad(x, padding)
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise _shape_error("conv2d", x, w, why="kernel larger than padded input")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    # im2col: (B, C*kh*kw, Ho*Wo)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * kh * kw, ho * wo)
    out = np.matmul(w.reshape(o, -1), cols).reshape(b, o, ho, wo)
    return out, (xp.shape, w, cols, stride, padding)


@_conv2d.backward
def _conv2d_b(ctx, g):
    pshape, w, cols, stride, padding = ctx
    o, c, kh, kw = w.shape
    b, _, ho, wo = g.shape
    gm = g.reshape(b, o, ho * wo)
    gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    gcols = np.matmul(w.reshape(o, -1).T, gm).reshape(b, c, kh, kw, ho, wo)
    gxp = np.zeros(pshape, dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return gxp, gw


@register("avgpool2d")
def _avgpool(x, *, kernel, stride):
    if x.ndim != 4 or x.shape[2] < kernel or x.shape[3] < kernel:
        raise _shape_error("avgpool2d", x, why=f"kernel {kernel} on (B, C, H, W)")
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    return win.mean(axis=(-2, -1)), (x.shape, kernel, stride, win.shape[2:4])


@_avgpool.backward
def _avgpool_b(ctx, g):
    shape, k, s, (ho, wo) = ctx
    gx = np.zeros(shape, dtype=g.dtype)
    gk = g / (k * k)
    for i in range(k):
        for j in range(k):
            gx[:, :, i : i + s * ho : s, j : j + s * wo : s] += gk
    return (gx,)


# -- losses ------------------------------------------------------------------


@register("bce_logits")
def _bce_logits(z, y):
    if z.shape != y.shape:
        raise _shape_error("bce_logits", z, y, why="logits and labels differ")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError(f"bce_logits: labels must be 0 or 1, got values {np.unique(y)[:5].tolist()}")
    # mean of max(z,0) - z*y + log(1 + exp(-|z|))
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(np.mean(per, dtype=np.float64), dtype=z.dtype)
    return out, (z, y)


@_bce_logits.backward
def _bce_logits_b(ctx, g):
    z, y = ctx
    return g * (_sigmoid(z) - y) / z.size, None


# -- convenience wrappers ----------------------------------------------------


def matmul(a, b):
    return apply("matmul", a, b)


def add(a, b):
    return apply("add", a, b)


def sub(a, b):
    return apply("sub", a, b)


def mul(a, b):
    return apply("mul", a, b)


def relu(x):
    return apply("relu", x)


def gelu(x):
    return apply("gelu", x)


def sigmoid(x):
    return apply("sigmoid", x)


def softmax(x, axis=-1):
    return apply("softmax", x, axis=axis)


def layernorm(x, gamma, beta, eps=1e-5):
    return apply("layernorm", x, gamma, beta, eps=eps)


def groupnorm(x, gamma, beta, groups, eps=1e-5):
    return apply("groupnorm", x, gamma, beta, groups=groups, eps=eps)


def conv2d(x, w, *, stride, padding):
    return apply("conv2d", x, w, stride=stride, padding=padding)


def avgpool2d(x, *, kernel, stride):
    return apply("avgpool2d", x, kernel=kernel, stride=stride)


def mean(x, axis=None, keepdims=False):
    return apply("mean", x, axis=axis, keepdims=keepdims)


def sum(x, axis=None, keepdims=False):  # noqa: A001
    return apply("sum", x, axis=axis, keepdims=keepdims)


def concat(xs, axis=0):
    return apply("concat", *xs, axis=axis)


def slice(x, index):  # noqa: A001
    return apply("slice", x, index=index)


def transpose(x, axes=None):
    return apply("transpose", x, axes=axes)


def reshape(x, shape):
    return apply("reshape", x, shape=tuple(shape))


def embed_lookup(table, ids):
    return apply("embed_lookup", table, ids=np.asarray(ids))


def bce_logits(z, y):
    return apply("bce_logits", z, y)
