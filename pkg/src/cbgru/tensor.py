"""Dense double-precision kernels shared by every other module.

Matrices are 2-D float64 numpy arrays in row-major order, vectors are 1-D
float64 arrays. All public operations keep finite inputs finite.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, Mapping

import numpy as np


class DimensionError(ValueError):
    """Operand shapes violate an operation's contract."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class DegenerateInputError(ValueError):
    """Input is empty or too short for the requested operation."""


class StateError(RuntimeError):
    """Backward pass invoked without a matching forward cache."""


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic 64-bit generator (PCG64): same seed, same stream."""
    return np.random.Generator(np.random.PCG64(seed))


def glorot_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform init on [-L, L] with L = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"glorot_init needs positive dims, got {rows}x{cols}")
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic sigmoid, computed without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def ew_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b, "add")
    return a + b


def ew_sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b, "sub")
    return a - b


def ew_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_same_shape(a, b, "mul")
    return a * b


def softmax(x: np.ndarray) -> np.ndarray:
    """Stable softmax over a 1-D vector (max-subtraction)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DimensionError(f"softmax expects a nonempty 1-D vector, got shape {x.shape}")
    z = x - x.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise DimensionError(f"log_softmax expects a nonempty 1-D vector, got shape {x.shape}")
    z = x - x.max()
    return z - math.log(np.exp(z).sum())


def finite_diff_grad(
    f: Callable[[Mapping[str, np.ndarray]], float],
    arrays: Mapping[str, np.ndarray],
    eps: float = 1e-5,
) -> Dict[str, np.ndarray]:
    """Central-difference gradient of ``f`` with respect to every scalar in
    ``arrays``.

    Perturbs entries in place and restores them; ``f`` must be a
    deterministic function of the current array contents.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads: Dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(arrays))
            flat[i] = orig - eps
            fm = float(f(arrays))
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"non-finite objective while perturbing {name}[{i}]")
            gflat[i] = (fp - fm) / (2.0 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Elementwise |a - n| / max(|a|, |n|, 1e-6), reduced by max."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    _check_same_shape(a, n, "max_relative_error")
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
    return float(np.max(np.abs(a - n) / denom))
