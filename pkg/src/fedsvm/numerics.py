"""Dense float64 tensor helpers shared by every other module.

All numeric state in this package lives in C-contiguous ``numpy``
float64 arrays. Reductions that feed aggregation use a fixed
accumulation order so that repeated runs with the same seed are
bit-reproducible.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Tensor = np.ndarray


def as_tensor(values, shape=None) -> Tensor:
    """Coerce ``values`` to a float64 array, optionally reshaped."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    return arr


def check_finite(arr: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite values in {what}")
    return arr


def check_same_shape(a: Tensor, b: Tensor, what: str = "operands") -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in {what}: {a.shape} vs {b.shape}")


def finite_difference_gradient(f: Callable[[Tensor], float], x: Tensor,
                               h: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Used as the independent oracle against every hand-derived gradient in
    the package.
    """
    if h <= 0:
        raise ValueError("step size h must be positive")
    x = as_tensor(x)
    flat = x.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(x))
        flat[i] = orig - h
        f_minus = float(f(x))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def weighted_mean(arrays: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """Weighted mean with normalized weights and anchored accumulation.

    Computed as ``x0 + sum_i u_i * (x_i - x0)`` with ``u_i = w_i / sum(w)``,
    accumulated in input order. The anchored form makes the mean of a
    single array, or of identical arrays, exactly the input; the fixed
    order makes the reduction reproducible. Callers that must agree
    bitwise (full-model averaging vs. per-row selective averaging) all
    route through this function.
    """
    if len(arrays) == 0:
        raise ValueError("weighted_mean of empty sequence")
    if len(arrays) != len(weights):
        raise ValueError("arrays and weights length mismatch")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    total = 0.0
    for wi in w:
        total += wi
    anchor = arrays[0]
    acc = np.zeros_like(anchor)
    for xi, wi in zip(arrays, w):
        check_same_shape(anchor, xi, "weighted_mean inputs")
        acc += (wi / total) * (xi - anchor)
    return anchor + acc


def relative_error(approx: Tensor, exact: Tensor) -> float:
    """L2 relative error with a unit floor on the denominator scale."""
    num = float(np.linalg.norm(np.asarray(approx) - np.asarray(exact)))
    den = max(float(np.linalg.norm(exact)), 1e-12)
    return num / den
