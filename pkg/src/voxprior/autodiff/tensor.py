"""Tape-based reverse-mode autodiff over dense numpy arrays.

Backward rules are themselves expressed with the differentiable primitives
below, so a backward pass can be recorded onto the tape and differentiated
again (double backprop, needed for gradient penalties).
"""

import numpy as np

from ..errors import ShapeMismatchError

_GRAD_ENABLED = True


class set_grad_enabled:
    """Context manager toggling graph recording."""

    def __init__(self, mode):
        self.mode = bool(mode)
        self.prev = None

    def __enter__(self):
        global _GRAD_ENABLED
        self.prev = _GRAD_ENABLED
        _GRAD_ENABLED = self.mode
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self.prev
        return False


def no_grad():
    return set_grad_enabled(False)


class Tensor:
    """N-dimensional array node in a computation graph."""

    __slots__ = ("data", "requires_grad", "parents", "grad_fn")

    def __init__(self, data, requires_grad=False, parents=(), grad_fn=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.parents = parents
        self.grad_fn = grad_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return "Tensor(%r, requires_grad=%r)" % (self.data, self.requires_grad)

    # operator sugar; definitions below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __truediv__(self, other):
        return mul(self, power(as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64) if not isinstance(x, np.ndarray) else x)


def _node(data, parents, grad_fn):
    """Build an output tensor; records the graph edge only when needed."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, grad_fn=grad_fn)
    return Tensor(data)


def _sum_to_shape(g, shape):
    """Reduce a broadcasted gradient back to the original operand shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    return reshape(g, tuple(shape))


# ----------------------------------------------------------------------------
# primitives
# ----------------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _sum_to_shape(g, a.shape), _sum_to_shape(g, b.shape)

    return _node(a.data + b.data, (a, b), grad_fn)


def neg(x):
    x = as_tensor(x)

    def grad_fn(g):
        return (neg(g),)

    return _node(-x.data, (x,), grad_fn)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def grad_fn(g):
        return _sum_to_shape(mul(g, b), a.shape), _sum_to_shape(mul(g, a), b.shape)

    return _node(a.data * b.data, (a, b), grad_fn)


def power(x, p):
    """Elementwise x**p with constant scalar exponent p."""
    x = as_tensor(x)
    p = float(p)

    def grad_fn(g):
        return (mul(g, mul(power(x, p - 1.0), p)),)

    return _node(x.data ** p, (x,), grad_fn)


def log(x):
    x = as_tensor(x)

    def grad_fn(g):
        return (mul(g, power(x, -1.0)),)

    return _node(np.log(x.data), (x,), grad_fn)


def exp(x):
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def grad_fn(g):
        return (mul(g, out),)

    out = _node(out_data, (x,), grad_fn)
    return out


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out_data = np.sum(x.data, axis=axis, keepdims=keepdims)

    def grad_fn(g):
        gd = g
        if not keepdims and axis is not None:
            axes = axis if isinstance(axis, tuple) else (axis,)
            kshape = list(x.shape)
            for ax in axes:
                kshape[ax % x.ndim] = 1
            gd = reshape(gd, tuple(kshape))
        elif not keepdims and axis is None:
            gd = reshape(gd, (1,) * x.ndim)
        # broadcast back up via multiplication with ones
        return (mul(gd, Tensor(np.ones(x.shape, dtype=x.dtype))),)

    return _node(out_data, (x,), grad_fn)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod(
        [x.shape[ax % x.ndim] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape

    def grad_fn(g):
        return (reshape(g, old),)

    return _node(x.data.reshape(shape), (x,), grad_fn)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))

    def grad_fn(g):
        return (transpose(g, inv),)

    return _node(np.transpose(x.data, axes), (x,), grad_fn)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError("matmul expects 2-D operands, got %r and %r" % (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul shapes %r and %r do not align" % (a.shape, b.shape))

    def grad_fn(g):
        return matmul(g, transpose(b)), matmul(transpose(a), g)

    return _node(a.data @ b.data, (a, b), grad_fn)


def relu(x):
    x = as_tensor(x)
    mask = (x.data > 0).astype(x.data.dtype)

    def grad_fn(g):
        return (mul(g, Tensor(mask)),)

    return _node(x.data * mask, (x,), grad_fn)


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)

    def grad_fn(g):
        return (mul(g, Tensor(scale)),)

    return _node(x.data * scale, (x,), grad_fn)


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    out_data = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                        np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def grad_fn(g):
        return (mul(g, mul(out, 1.0 - out)),)

    out = _node(out_data.astype(d.dtype), (x,), grad_fn)
    return out


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient passes through strictly inside the range."""
    x = as_tensor(x)
    mask = ((x.data >= lo) & (x.data <= hi)).astype(x.data.dtype)

    def grad_fn(g):
        return (mul(g, Tensor(mask)),)

    return _node(np.clip(x.data, lo, hi), (x,), grad_fn)


def pad_end(x, pads):
    """Zero-pad the trailing end of each axis; pads is a per-axis width tuple."""
    x = as_tensor(x)
    widths = tuple((0, int(p)) for p in pads)
    old = x.shape

    def grad_fn(g):
        return (crop_end(g, old),)

    return _node(np.pad(x.data, widths), (x,), grad_fn)


def crop_end(x, shape):
    """Keep the leading region of the given shape on each axis."""
    x = as_tensor(x)
    sl = tuple(slice(0, int(n)) for n in shape)
    pads = tuple(x.shape[i] - shape[i] for i in range(x.ndim))

    def grad_fn(g):
        return (pad_end(g, pads),)

    return _node(x.data[sl], (x,), grad_fn)


# ----------------------------------------------------------------------------
# backward
# ----------------------------------------------------------------------------

def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order


def backward(output, wrt, higher_order=False):
    """Reverse-mode gradients of a scalar output w.r.t. a list of tensors.

    With higher_order=True the backward computation itself is recorded on the
    tape, so the returned gradients can be differentiated again. Unreachable
    entries of `wrt` get zero gradients.
    """
    if output.data.size != 1:
        raise ValueError("backward requires a scalar output, got shape %r" % (output.shape,))
    grads = {id(output): Tensor(np.ones(output.shape, dtype=output.dtype))}
    order = _toposort(output)
    with set_grad_enabled(higher_order):
        for node in reversed(order):
            if node.grad_fn is None:
                continue
            g = grads.pop(id(node), None)
            if g is None:
                continue
            parent_grads = node.grad_fn(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else add(acc, pg)
    out = []
    for t in wrt:
        g = grads.get(id(t))
        if g is None:
            g = Tensor(np.zeros(t.shape, dtype=t.dtype))
        out.append(g)
    return out
