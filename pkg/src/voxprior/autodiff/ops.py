"""Network-level operations composed from the autodiff primitives."""

import numpy as np

from ..errors import ShapeMismatchError
from .tensor import (Tensor, as_tensor, add, mul, sum_, mean, reshape, matmul,
                     transpose, clamp, log, power, relu, leaky_relu, sigmoid)

BCE_CLAMP = 1e-7


def dense(x, w, bias=None):
    """Affine map: x (B, n_in) @ w (n_out, n_in)^T + bias (n_out,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(
            "dense expects (B, %d) input for weight %r, got %r" % (w.shape[1], w.shape, x.shape))
    out = matmul(x, transpose(w))
    if bias is not None:
        out = add(out, reshape(as_tensor(bias), (1, w.shape[0])))
    return out


def activation(x, kind, slope=0.2):
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError("unknown activation kind %r" % (kind,))


def batchnorm(x, gamma, beta, eps=1e-5, mode="train", running=None, momentum=0.1):
    """Batch normalization over all axes except channel axis 1.

    mode="train" normalizes with batch statistics and, when a `running`
    dict is given, updates its "mean"/"var" entries in place.
    mode="eval" normalizes with the running statistics.
    """
    x = as_tensor(x)
    C = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, C) + (1,) * (x.ndim - 2)
    if mode == "train":
        mu = mean(x, axis=axes, keepdims=True)
        xc = x - mu
        var = mean(mul(xc, xc), axis=axes, keepdims=True)
        if running is not None:
            n = x.data.size // C
            unbiased = var.data * (n / max(n - 1, 1))
            running["mean"] *= (1.0 - momentum)
            running["mean"] += momentum * mu.data.reshape(C)
            running["var"] *= (1.0 - momentum)
            running["var"] += momentum * unbiased.reshape(C)
    elif mode == "eval":
        if running is None:
            raise ValueError("eval-mode batchnorm requires running statistics")
        mu = Tensor(running["mean"].reshape(bshape))
        var = Tensor(running["var"].reshape(bshape))
        xc = x - mu
    else:
        raise ValueError("unknown batchnorm mode %r" % (mode,))
    inv = power(var + eps, -0.5)
    xhat = mul(xc, inv)
    return add(mul(xhat, reshape(as_tensor(gamma), bshape)),
               reshape(as_tensor(beta), bshape))


def bce(pred, target, clamp_eps=BCE_CLAMP):
    """Mean binary cross-entropy; predictions clamped away from {0,1}."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatchError(
            "bce shape mismatch: pred %r vs target %r" % (pred.shape, target.shape))
    p = clamp(pred, clamp_eps, 1.0 - clamp_eps)
    ll = add(mul(target, log(p)), mul(1.0 - target, log(1.0 - p)))
    return mul(mean(ll), -1.0)


def l2_norm(x, axis=None, keepdims=False):
    """Euclidean norm over the given axis set."""
    x = as_tensor(x)
    return power(sum_(mul(x, x), axis=axis, keepdims=keepdims), 0.5)


def scale(x, c):
    return mul(x, float(c))
