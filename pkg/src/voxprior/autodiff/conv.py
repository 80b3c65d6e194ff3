"""Direct (im2col) n-D convolution primitives with differentiable backward rules.

Three primitives per dimensionality form a closed set under differentiation:
conv, conv_transpose and the weight gradient. Each one's backward rule is
written in terms of the other two, so arbitrary-order gradients work.

Weight layouts follow the usual convention:
  conv weight            (C_out, C_in, *k)
  conv_transpose weight  (C_in, C_out, *k)
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatchError
from .tensor import _node, as_tensor, add, reshape


def _check_spatial(x, nd, what):
    if x.ndim != nd + 2:
        raise ShapeMismatchError(
            "%s expects a (batch, channels, %d spatial) tensor, got shape %r"
            % (what, nd, x.shape))


def _patches(x, k, stride, padding, out_spatial):
    """im2col: (B, C, *S) -> (B, L, C*prod(k)) for the given output layout."""
    nd = len(k)
    xp = np.pad(x, ((0, 0), (0, 0)) + tuple((padding, padding) for _ in range(nd)))
    win = sliding_window_view(xp, k, axis=tuple(range(2, 2 + nd)))
    sl = (slice(None), slice(None)) + tuple(
        slice(0, (o - 1) * stride + 1, stride) for o in out_spatial)
    win = win[sl]  # (B, C, *out, *k)
    B, C = x.shape[0], x.shape[1]
    L = int(np.prod(out_spatial))
    K = int(np.prod(k))
    perm = (0,) + tuple(range(2, 2 + nd)) + (1,) + tuple(range(2 + nd, 2 + 2 * nd))
    return np.ascontiguousarray(win.transpose(perm)).reshape(B, L, C * K)


def _conv_raw(x, w, stride, padding):
    nd = w.ndim - 2
    k = w.shape[2:]
    out_spatial = tuple(
        (x.shape[2 + i] + 2 * padding - k[i]) // stride + 1 for i in range(nd))
    if any(o < 1 for o in out_spatial):
        raise ShapeMismatchError(
            "conv kernel %r too large for input %r with padding %d" % (k, x.shape, padding))
    pat = _patches(x, k, stride, padding, out_spatial)  # (B, L, C*K)
    wm = w.reshape(w.shape[0], -1)  # (Co, C*K)
    out = pat @ wm.T  # (B, L, Co)
    B = x.shape[0]
    return np.ascontiguousarray(out.transpose(0, 2, 1)).reshape((B, w.shape[0]) + out_spatial)


def _conv_transpose_raw(x, w, stride, padding, output_padding):
    # w: (C_in, C_out, *k); zero-dilate the input, then correlate with the
    # spatially flipped kernel at stride 1. `output_padding` grows the
    # trailing edge of each axis (needed for exact adjoints of floor-sized
    # forward convolutions).
    nd = w.ndim - 2
    k = w.shape[2:]
    if any(k[i] - 1 - padding < 0 for i in range(nd)):
        raise ShapeMismatchError("conv_transpose requires padding <= kernel-1")
    B, C = x.shape[0], x.shape[1]
    dil_spatial = tuple((x.shape[2 + i] - 1) * stride + 1 + output_padding[i]
                        for i in range(nd))
    z = np.zeros((B, C) + dil_spatial, dtype=x.dtype)
    z[(slice(None), slice(None)) + tuple(slice(None, None, stride) for _ in range(nd))] = x
    wf = np.flip(w, axis=tuple(range(2, 2 + nd))).transpose(
        (1, 0) + tuple(range(2, 2 + nd)))  # (C_out, C_in, *k)
    return _conv_raw(z, np.ascontiguousarray(wf), 1, k[0] - 1 - padding)


def _wgrad_raw(x, g, stride, padding, k):
    # x: (B, Ci, *S), g: (B, Co, *out) -> (Co, Ci, *k)
    out_spatial = g.shape[2:]
    pat = _patches(x, k, stride, padding, out_spatial)  # (B, L, Ci*K)
    B, Co = g.shape[0], g.shape[1]
    g2 = g.reshape(B, Co, -1)  # (B, Co, L)
    acc = np.einsum("bol,blk->ok", g2, pat, optimize=True)
    return acc.reshape((Co, x.shape[1]) + tuple(k))


def _adjoint_output_padding(in_spatial, k, stride, padding):
    """Trailing growth that makes conv_transpose the exact adjoint of a
    floor-sized forward conv over inputs of the given spatial extent."""
    return tuple((s + 2 * padding - kk) % stride for s, kk in zip(in_spatial, k))


def conv_nd(x, w, stride=1, padding=0):
    """Cross-correlation of a batched input with a (C_out, C_in, *k) kernel."""
    x, w = as_tensor(x), as_tensor(w)
    nd = w.ndim - 2
    _check_spatial(x, nd, "conv%dd" % nd)
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(
            "conv channel mismatch: input %r vs weight %r" % (x.shape, w.shape))
    k = w.shape[2:]
    out = _conv_raw(x.data, w.data, stride, padding)
    opad = _adjoint_output_padding(x.shape[2:], k, stride, padding)

    def grad_fn(g):
        gx = conv_transpose_nd(g, w, stride, padding, opad)
        gw = conv_wgrad_nd(x, g, stride, padding, k)
        return gx, gw

    return _node(out, (x, w), grad_fn)


def conv_transpose_nd(x, w, stride=1, padding=0, output_padding=0):
    """Transposed convolution (adjoint of conv_nd) with a (C_in, C_out, *k) kernel."""
    x, w = as_tensor(x), as_tensor(w)
    nd = w.ndim - 2
    _check_spatial(x, nd, "conv_transpose%dd" % nd)
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatchError(
            "conv_transpose channel mismatch: input %r vs weight %r" % (x.shape, w.shape))
    k = w.shape[2:]
    if np.isscalar(output_padding):
        output_padding = (int(output_padding),) * nd
    if any(not 0 <= op < max(stride, 1) for op in output_padding):
        raise ValueError("output_padding must lie in [0, stride)")
    out = _conv_transpose_raw(x.data, w.data, stride, padding, output_padding)

    def grad_fn(g):
        gx = conv_nd(g, w, stride, padding)
        gw = conv_wgrad_nd(g, x, stride, padding, k)
        return gx, gw

    return _node(out, (x, w), grad_fn)


def conv_wgrad_nd(x, g, stride, padding, k):
    """Weight gradient of conv_nd(x, w) contracted with an output cotangent g."""
    x, g = as_tensor(x), as_tensor(g)
    nd = x.ndim - 2
    k = (int(k),) * nd if np.isscalar(k) else tuple(k)
    out = _wgrad_raw(x.data, g.data, stride, padding, k)
    opad = _adjoint_output_padding(x.shape[2:], k, stride, padding)

    def grad_fn(gw):
        gx = conv_transpose_nd(g, gw, stride, padding, opad)
        gg = conv_nd(x, gw, stride, padding)
        return gx, gg

    return _node(out, (x, g), grad_fn)


def _with_bias(out, bias, nd):
    if bias is None:
        return out
    bias = as_tensor(bias)
    return add(out, reshape(bias, (1, bias.shape[0]) + (1,) * nd))


def conv2d(x, w, bias=None, stride=1, padding=0):
    return _with_bias(conv_nd(x, w, stride, padding), bias, 2)


def conv3d(x, w, bias=None, stride=1, padding=0):
    return _with_bias(conv_nd(x, w, stride, padding), bias, 3)


def conv_transpose3d(x, w, bias=None, stride=1, padding=0):
    return _with_bias(conv_transpose_nd(x, w, stride, padding), bias, 3)


def conv_transpose2d(x, w, bias=None, stride=1, padding=0):
    return _with_bias(conv_transpose_nd(x, w, stride, padding), bias, 2)
