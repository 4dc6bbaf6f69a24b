"""Central finite-difference gradient checking (float64 shadow mode)."""

from __future__ import annotations

import numpy as np

FD_EPS = 1e-3
REL_TOL = 1e-3


def numeric_gradient(f, x: np.ndarray, eps: float = FD_EPS) -> np.ndarray:
    """Central differences of the scalar function f() with respect to x.

    x is perturbed in place and restored; f must read x freshly per call.
    """
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * eps)
        it.iternext()
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Max elementwise |a-n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


def check_gradients(loss_and_grads, arrays: dict[str, np.ndarray], eps: float = FD_EPS) -> float:
    """Compare analytic gradients against finite differences.

    loss_and_grads() must return (scalar_loss, {name: grad}) computed from
    the current contents of `arrays` (all float64).  Returns the worst
    relative error across all entries of all arrays.
    """
    _, grads = loss_and_grads()
    worst = 0.0
    for name, x in arrays.items():
        num = numeric_gradient(lambda: loss_and_grads()[0], x, eps)
        worst = max(worst, rel_error(grads[name], num))
    return worst
