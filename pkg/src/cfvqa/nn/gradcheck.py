"""Central finite-difference gradient verification.

The checker perturbs raw arrays one coordinate at a time, so it is
independent of every backward pass it is used to verify.
"""

import numpy as np


def numerical_grad(fn, x, h=1e-5):
    """Central-difference gradient of scalar fn at array x (modified in place, restored)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(a, b):
    """||a-b|| / max(||a||, ||b||, floor).

    The floor keeps comparisons of two numerically-zero gradients (e.g. a
    conv bias feeding a mean-subtracting normalizer) from reporting a
    spurious relative error of 1.
    """
    na = float(np.linalg.norm(a.reshape(-1)))
    nb = float(np.linalg.norm(b.reshape(-1)))
    if max(na, nb) < 1e-7:  # both below central-difference noise: zero gradient
        return 0.0
    diff = float(np.linalg.norm((a - b).reshape(-1)))
    denom = max(na, nb, 1e-8)
    return diff / denom


def check_param_grads(loss_fn, params, h=1e-5):
    """Compare analytic grads (already in p.grad) with finite differences.

    loss_fn: zero-arg callable recomputing the scalar loss from current
    parameter values. Returns {param_name: rel_error}.
    """
    out = {}
    for p in params:
        num = numerical_grad(loss_fn, p.data, h=h)
        out[p.name] = rel_error(p.grad.astype(np.float64), num)
    return out
