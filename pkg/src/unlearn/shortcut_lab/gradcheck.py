"""Central finite differences for checking hand-written gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np


def central_difference(fn: Callable[[], float], array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Numerical gradient of ``fn()`` with respect to ``array``, perturbed in place."""
    grad = np.zeros(array.shape)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """``max |a - n| / max(|a| + |n|, floor)`` over all entries."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor), initial=0.0))
