"""Shared test helpers: finite-difference gradient checking."""

import numpy as np

from voxprior import autodiff as ad


def finite_difference_grads(f, arrays, h=1e-5):
    """Central-difference gradients of a scalar function of numpy arrays."""
    out = []
    for j, base in enumerate(arrays):
        fd = np.zeros_like(base, dtype=np.float64)
        flat = base.reshape(-1)
        fdf = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*arrays))
            flat[i] = orig - h
            fm = float(f(*arrays))
            flat[i] = orig
            fdf[i] = (fp - fm) / (2.0 * h)
        out.append(fd)
    return out


def max_rel_error(a, b, floor=1e-6):
    denom = np.maximum(floor, np.abs(a) + np.abs(b))
    return float(np.max(np.abs(a - b) / denom))


def gradcheck(build, arrays, h=1e-5, tol=1e-4):
    """Compare analytic reverse-mode gradients of `build` against central
    finite differences. `build` maps Tensors to a scalar Tensor."""
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    grads = ad.backward(out, tensors)

    def scalar(*arrs):
        return build(*[ad.Tensor(a) for a in arrs]).item()

    fds = finite_difference_grads(scalar, [a.copy() for a in arrays], h=h)
    worst = 0.0
    for g, fd in zip(grads, fds):
        worst = max(worst, max_rel_error(g.data, fd))
    assert worst < tol, "gradient check failed: max relative error %g" % worst
    return worst
