"""Differentiable operations for the denoising models.

Every op validates its shape contract, computes the forward result with
numpy, and attaches a backward closure. Convolutions use strided column
views feeding BLAS matmuls; everything else composes cheap elementwise and
reduction kernels. Ops that act on [channels, length] maps also accept a
leading batch axis, so [C, L] and [N, C, L] both work.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf as _erf

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, accumulate_grad, make_node

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    data = a.data + b.data

    def backward():
        g = out.grad
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(g, b.data.shape))

    out = make_node(data, (a, b), backward)
    return out


def sub(a, b):
    data = a.data - b.data

    def backward():
        g = out.grad
        accumulate_grad(a, _unbroadcast(g, a.data.shape))
        accumulate_grad(b, _unbroadcast(-g, b.data.shape), fresh=True)

    out = make_node(data, (a, b), backward)
    return out


def mul(a, b):
    data = a.data * b.data

    def backward():
        g = out.grad
        accumulate_grad(a, _unbroadcast(g * b.data, a.data.shape), fresh=True)
        accumulate_grad(b, _unbroadcast(g * a.data, b.data.shape), fresh=True)

    out = make_node(data, (a, b), backward)
    return out


def scale(x, c):
    c = float(c)

    def backward():
        accumulate_grad(x, c * out.grad, fresh=True)

    out = make_node(x.data * c, (x,), backward)
    return out


def shift(x, c):
    c = float(c)

    def backward():
        accumulate_grad(x, out.grad)

    out = make_node(x.data + c, (x,), backward)
    return out


def power(x, exponent):
    """Elementwise x**p for a constant p (x > 0 when p is fractional)."""
    p = float(exponent)
    data = x.data**p

    def backward():
        accumulate_grad(x, out.grad * p * x.data ** (p - 1.0), fresh=True)

    out = make_node(data, (x,), backward)
    return out


def square(x):
    def backward():
        accumulate_grad(x, out.grad * 2.0 * x.data, fresh=True)

    out = make_node(x.data * x.data, (x,), backward)
    return out


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    old = x.data.shape

    def backward():
        accumulate_grad(x, out.grad.reshape(old))

    out = make_node(x.data.reshape(shape), (x,), backward)
    return out


def transpose(x, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward():
        accumulate_grad(x, out.grad.transpose(inverse))

    out = make_node(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward)
    return out


def swap_last_axes(x):
    axes = list(range(x.data.ndim))
    axes[-2], axes[-1] = axes[-1], axes[-2]
    return transpose(x, axes)


def concat(tensors, axis):
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward():
        pieces = np.split(out.grad, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            accumulate_grad(t, piece)

    out = make_node(data, tuple(tensors), backward)
    return out


# ---------------------------------------------------------------------------
# reductions


def sum_(x, axis=None, keepdims=False):
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accumulate_grad(x, np.broadcast_to(g, x.data.shape))

    out = make_node(data, (x,), backward)
    return out


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.data.shape[a] for a in axes]))
    data = x.data.mean(axis=axis, keepdims=keepdims)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accumulate_grad(x, np.broadcast_to(g, x.data.shape) / count)

    out = make_node(data, (x,), backward)
    return out


def mse(pred, target):
    """Mean squared error as a scalar tensor."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse shape mismatch: {pred.data.shape} vs {target.data.shape}"
        )
    return mean(square(sub(pred, target)))


# ---------------------------------------------------------------------------
# matmul and linear algebra


def matmul(a, b):
    data = np.matmul(a.data, b.data)

    def backward():
        g = out.grad
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        accumulate_grad(a, _unbroadcast(ga, a.data.shape), fresh=True)
        accumulate_grad(b, _unbroadcast(gb, b.data.shape), fresh=True)

    out = make_node(data, (a, b), backward)
    return out


def linear(x, weight, bias=None):
    """Fully connected map over the channel axis: y = W @ x (+ b).

    x may be [C_in, L] or [N, C_in, L]; weight is [C_out, C_in],
    bias [C_out].
    """
    if weight.data.ndim != 2 or weight.data.shape[1] != x.data.shape[-2]:
        raise ShapeError(
            f"linear weight {weight.data.shape} does not match input {x.data.shape}"
        )
    y = matmul(weight, x)
    if bias is not None:
        y = add(y, reshape(bias, (bias.data.size, 1)))
    return y


# ---------------------------------------------------------------------------
# activations and softmax


def leaky_relu(x, negative_slope=0.01):
    s = float(negative_slope)
    mask = x.data >= 0
    data = np.where(mask, x.data, s * x.data)

    def backward():
        accumulate_grad(x, out.grad * np.where(mask, 1.0, s), fresh=True)

    out = make_node(data, (x,), backward)
    return out


def gelu(x):
    """Exact (erf-based) GELU."""
    xd = x.data
    phi = 0.5 * (1.0 + _erf(xd * _INV_SQRT2))
    data = xd * phi

    def backward():
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT2PI
        accumulate_grad(x, out.grad * (phi + xd * pdf), fresh=True)

    out = make_node(data, (x,), backward)
    return out


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward():
        g = out.grad
        y = out.data
        dot = (g * y).sum(axis=axis, keepdims=True)
        accumulate_grad(x, y * (g - dot), fresh=True)

    out = make_node(data, (x,), backward)
    return out


def residual_add(x, y):
    if x.data.shape != y.data.shape:
        raise ShapeError(
            f"residual_add shape mismatch: {x.data.shape} vs {y.data.shape}"
        )
    return add(x, y)


# ---------------------------------------------------------------------------
# normalization


def standardize(x, axes, eps=1e-5):
    """Zero-mean unit-variance over the given axes (fused analytic backward)."""
    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    mu = x.data.mean(axis=axes, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv

    def backward():
        g = out.grad
        g_mean = g.mean(axis=axes, keepdims=True)
        gy_mean = np.mean(g * y, axis=axes, keepdims=True)
        accumulate_grad(x, inv * (g - g_mean - y * gy_mean), fresh=True)

    out = make_node(y, (x,), backward)
    return out


def layer_norm(x, gamma, beta, axes=(-2, -1), eps=1e-5):
    """Normalize over the given axes, then apply an affine map.

    gamma/beta must broadcast against x (e.g. [C, 1] for per-channel affine
    on a [C, L] map).
    """
    return add(mul(standardize(x, axes, eps), gamma), beta)


def group_norm(x, num_groups, gamma, beta, eps=1e-5):
    """Per-group standardization over (channels_in_group, length).

    x: [C, L] or [N, C, L]; gamma/beta: [C, 1].
    """
    batched = x.data.ndim == 3
    if x.data.ndim not in (2, 3):
        raise ShapeError(f"group_norm expects [C, L] or [N, C, L], got {x.data.shape}")
    c, length = x.data.shape[-2], x.data.shape[-1]
    if num_groups < 1 or c % num_groups != 0:
        raise ConfigError(f"{c} channels not divisible into {num_groups} groups")
    lead = (x.data.shape[0],) if batched else ()
    grouped = reshape(x, lead + (num_groups, (c // num_groups) * length))
    normed = standardize(grouped, axes=(-1,), eps=eps)
    restored = reshape(normed, lead + (c, length))
    return add(mul(restored, gamma), beta)


# ---------------------------------------------------------------------------
# convolutions


def _as_batched(x):
    if x.data.ndim == 2:
        return x.data[None], False
    if x.data.ndim == 3:
        return x.data, True
    raise ShapeError(f"expected [C, L] or [N, C, L], got shape {x.data.shape}")


def conv1d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Cross-correlation along the length axis.

    x: [C_in, L] or [N, C_in, L]; weight: [C_out, C_in/groups, K];
    bias: [C_out]. L_out = floor((L + 2*padding - K)/stride) + 1.
    """
    x3, batched = _as_batched(x)
    if weight.data.ndim != 3:
        raise ShapeError(f"conv1d weight must be 3-D, got {weight.data.shape}")
    n, c_in, length = x3.shape
    c_out, c_g, k = weight.data.shape
    if groups < 1 or c_in % groups != 0 or c_out % groups != 0:
        raise ConfigError(
            f"groups={groups} must divide in/out channels ({c_in}, {c_out})"
        )
    if c_g != c_in // groups:
        raise ShapeError(
            f"weight expects {c_g * groups} input channels, input has {c_in}"
        )
    if length + 2 * padding < k:
        raise ShapeError(f"length {length} with padding {padding} shorter than kernel {k}")
    if bias is not None and bias.data.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({c_out},)")

    if padding:
        x_pad = np.pad(x3, ((0, 0), (0, 0), (padding, padding)))
    else:
        x_pad = x3
    l_out = (length + 2 * padding - k) // stride + 1
    windows = sliding_window_view(x_pad, k, axis=2)[:, :, :: stride][:, :, :l_out]

    if groups == 1:
        cols = np.ascontiguousarray(windows.transpose(0, 1, 3, 2)).reshape(
            n, c_in * k, l_out
        )
        w2 = weight.data.reshape(c_out, c_in * k)
        y = np.matmul(w2, cols)
    else:
        c_per = c_in // groups
        o_per = c_out // groups
        cols = np.ascontiguousarray(
            windows.reshape(n, groups, c_per, l_out, k).transpose(0, 1, 2, 4, 3)
        ).reshape(n, groups, c_per * k, l_out)
        w2 = weight.data.reshape(groups, o_per, c_per * k)
        y = np.matmul(w2, cols).reshape(n, c_out, l_out)
    if bias is not None:
        y = y + bias.data[:, None]

    def backward():
        g = out.grad if batched else out.grad[None]
        if groups == 1:
            gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
            accumulate_grad(weight, gw.reshape(weight.data.shape), fresh=True)
            if x.requires_grad:
                gcols = np.matmul(w2.T, g)
                gcols = gcols.reshape(n, c_in, k, l_out)
        else:
            g4 = g.reshape(n, groups, o_per, l_out)
            gw = np.matmul(g4, cols.transpose(0, 1, 3, 2)).sum(axis=0)
            accumulate_grad(weight, gw.reshape(weight.data.shape), fresh=True)
            if x.requires_grad:
                gcols = np.matmul(w2.transpose(0, 2, 1)[None], g4)
                gcols = gcols.reshape(n, c_in, k, l_out)
        if x.requires_grad:
            gx_pad = np.zeros_like(x_pad)
            for kk in range(k):
                gx_pad[:, :, kk : kk + stride * l_out : stride] += gcols[:, :, kk]
            gx = gx_pad[:, :, padding : padding + length] if padding else gx_pad
            accumulate_grad(x, gx if batched else gx[0], fresh=True)
        if bias is not None:
            accumulate_grad(bias, g.sum(axis=(0, 2)), fresh=True)

    out = make_node(
        y if batched else y[0],
        (x, weight) if bias is None else (x, weight, bias),
        backward,
    )
    return out


def depthwise_separable_conv1d(
    x, dw_weight, pw_weight, dw_bias=None, pw_bias=None, stride=1, padding=0
):
    """Depthwise conv (groups = C_in) followed by a pointwise 1x1 conv.

    dw_weight: [C_in, 1, K]; pw_weight: [C_out, C_in, 1]. Parameter count is
    K*C_in + C_in*C_out plus any biases.
    """
    c_in = x.data.shape[-2]
    if dw_weight.data.shape[0] != c_in or dw_weight.data.shape[1] != 1:
        raise ShapeError(
            f"depthwise weight {dw_weight.data.shape} incompatible with {c_in} channels"
        )
    mid = conv1d(x, dw_weight, bias=dw_bias, stride=stride, padding=padding, groups=c_in)
    return conv1d(mid, pw_weight, bias=pw_bias)


def conv_transpose1d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution (gradient of conv1d w.r.t. its input).

    x: [C_in, L] or [N, C_in, L]; weight: [C_in, C_out, K].
    L_out = (L - 1)*stride - 2*padding + K.
    """
    x3, batched = _as_batched(x)
    if weight.data.ndim != 3:
        raise ShapeError(f"conv_transpose1d weight must be 3-D, got {weight.data.shape}")
    n, c_in, length = x3.shape
    w_in, c_out, k = weight.data.shape
    if w_in != c_in:
        raise ShapeError(f"weight expects {w_in} input channels, input has {c_in}")
    l_full = (length - 1) * stride + k
    l_out = l_full - 2 * padding
    if l_out < 1:
        raise ShapeError(f"output length {l_out} < 1 (padding {padding} too large)")
    if bias is not None and bias.data.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.data.shape} != ({c_out},)")

    y_full = np.zeros((n, c_out, l_full))
    for kk in range(k):
        y_full[:, :, kk : kk + stride * length : stride] += np.matmul(
            weight.data[:, :, kk].T, x3
        )
    y = y_full[:, :, padding : padding + l_out] if padding else y_full
    if bias is not None:
        y = y + bias.data[:, None]

    def backward():
        g = out.grad if batched else out.grad[None]
        if padding:
            g_full = np.zeros((n, c_out, l_full))
            g_full[:, :, padding : padding + l_out] = g
        else:
            g_full = g
        if x.requires_grad:
            gx = np.zeros_like(x3)
            for kk in range(k):
                gx += np.matmul(
                    weight.data[:, :, kk],
                    g_full[:, :, kk : kk + stride * length : stride],
                )
            accumulate_grad(x, gx if batched else gx[0], fresh=True)
        gw = np.empty_like(weight.data)
        for kk in range(k):
            gw[:, :, kk] = np.tensordot(
                x3, g_full[:, :, kk : kk + stride * length : stride], axes=([0, 2], [0, 2])
            )
        accumulate_grad(weight, gw, fresh=True)
        if bias is not None:
            accumulate_grad(bias, g.sum(axis=(0, 2)), fresh=True)

    out = make_node(
        y if batched else y[0],
        (x, weight) if bias is None else (x, weight, bias),
        backward,
    )
    return out


# ---------------------------------------------------------------------------
# attention


def multi_head_attention(
    x, heads, wq, bq, wk, bk, wv, bv, wo, bo, return_weights=False
):
    """Self-attention over the length axis of a [C, L] (or [N, C, L]) map.

    Channels act as the embedding; C must be divisible by heads. Projections
    are learned [C, C] maps with [C] biases. Rows of each attention matrix
    sum to one.
    """
    c = x.data.shape[-2]
    if c % heads != 0:
        raise ConfigError(f"{c} channels not divisible by {heads} heads")
    d_head = c // heads
    length = x.data.shape[-1]
    lead = (x.data.shape[0],) if x.data.ndim == 3 else ()

    q = reshape(linear(x, wq, bq), lead + (heads, d_head, length))
    k = reshape(linear(x, wk, bk), lead + (heads, d_head, length))
    v = reshape(linear(x, wv, bv), lead + (heads, d_head, length))

    scores = scale(matmul(swap_last_axes(q), k), 1.0 / math.sqrt(d_head))
    attn = softmax(scores, axis=-1)  # [..., heads, L_query, L_key]
    context = matmul(v, swap_last_axes(attn))
    merged = reshape(context, lead + (c, length))
    out = linear(merged, wo, bo)
    if return_weights:
        return out, attn.data.copy()
    return out
