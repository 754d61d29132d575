"""Finite-difference verification of recorded gradients."""

import numpy as np

from .errors import NumericError, UsageError
from .tensor import Graph, zero_grad


def grad_check(f, params, eps=1e-5):
    """Compare recorded gradients of ``f(params)`` against central differences.

    ``f`` must be deterministic and return a scalar tensor. For every
    coordinate of every parameter the central difference
    (f(p+eps) - f(p-eps)) / (2 eps) is compared with the recorded gradient;
    the returned value is the max over coordinates of
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise UsageError(f"eps must be positive, got {eps}")

    zero_grad(params)
    with Graph() as g:
        out = f(params)
        if out.data.size != 1:
            raise UsageError("grad_check requires f to return a scalar")
        if not np.isfinite(out.data).all():
            raise NumericError("f returned a non-finite value at the base point")
        g.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]

    worst = 0.0
    for pi, p in enumerate(params):
        flat = p.data.reshape(-1)
        for ci in range(flat.size):
            orig = flat[ci]
            flat[ci] = orig + eps
            hi = float(f(params).data)
            flat[ci] = orig - eps
            lo = float(f(params).data)
            flat[ci] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError(
                    f"f is non-finite near parameter {pi} coordinate {ci}")
            numeric = (hi - lo) / (2.0 * eps)
            ana = analytic[pi].reshape(-1)[ci]
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
