"""Dense numeric kernels.

Arrays are stored as float32; every reduction (products, sums, norms) is
carried out in float64 and cast back, so results are reproducible and tests
can use tight tolerances.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

STORE = np.float32
ACC = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Input contains NaN or infinity."""


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.asarray(data, dtype=STORE)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {m.shape[1]}")
    return m


def matmul(a, b) -> np.ndarray:
    """Matrix product; leading axes broadcast like ``numpy.matmul``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >= 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return np.matmul(a.astype(ACC), b.astype(ACC)).astype(STORE)


def softmax_rows(m, scale: float = 1.0) -> np.ndarray:
    """Softmax of ``m / scale`` along the last axis (row-max stabilized)."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    x = np.asarray(m, dtype=ACC)
    if not np.all(np.isfinite(x)):
        raise NumericError("softmax input contains non-finite values")
    x = x / scale
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    return (e / e.sum(axis=-1, keepdims=True)).astype(STORE)


def l2_normalize(x) -> np.ndarray:
    """Row-normalize in float64; zero rows stay zero."""
    x = np.asarray(x, dtype=ACC)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norm, out=np.zeros_like(x), where=norm > 0)


def cosine_sim_matrix(x, y) -> np.ndarray:
    """``out[i, j] = cos(x_i, y_j)``. Rows with zero norm have similarity 0.

    Returned in float64: the merge planner ranks these values and must not
    lose ties or orderings to a float32 round trip.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape[-1] != y.shape[-1]:
        raise ShapeError(f"feature widths differ: {x.shape} vs {y.shape}")
    out = l2_normalize(x) @ np.swapaxes(l2_normalize(y), -1, -2)
    return np.clip(out, -1.0, 1.0)


def weighted_mean(values: Sequence, weights: Sequence[float]) -> np.ndarray:
    """``sum(w_i * v_i) / sum(w_i)`` over the first axis."""
    v = np.asarray(values, dtype=ACC)
    w = np.asarray(weights, dtype=ACC)
    if v.shape[0] == 0:
        raise ValueError("weighted_mean of an empty sequence")
    if w.shape != (v.shape[0],):
        raise ShapeError(f"{v.shape[0]} values but weights of shape {w.shape}")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    w = w.reshape((-1,) + (1,) * (v.ndim - 1))
    return ((v * w).sum(axis=0) / w.sum()).astype(STORE)


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=ACC)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    out = (x - mu) / np.sqrt(var + eps) * np.asarray(gamma, ACC) + np.asarray(beta, ACC)
    return out.astype(STORE)


def gelu(x) -> np.ndarray:
    # tanh approximation
    x = np.asarray(x, dtype=ACC)
    return (0.5 * x * (1.0 + np.tanh(0.7978845608028654 * (x + 0.044715 * x**3)))).astype(STORE)
