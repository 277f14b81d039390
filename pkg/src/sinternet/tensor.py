"""Dense-array substrate used by every other module.

Tensors are plain numpy arrays in row-major layout, float32 by default.
Image-like tensors are channel-major [C, H, W]. There is no broadcasting:
shape agreement is checked explicitly so that hand-derived backward
passes cannot hide silent shape bugs. Gradient-check code may pass
float64 arrays through the same functions; dtype follows the inputs.
"""

import numpy as np

DEFAULT_DTYPE = np.float32

MAX_RANK = 4

__all__ = [
    "DEFAULT_DTYPE",
    "as_tensor",
    "zeros",
    "elementwise",
    "matmul",
    "concat_channels",
    "split_channels",
]


def as_tensor(data, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Convert to a validated tensor: rank 1..4, finite values only."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise ValueError(f"tensor rank must be 1..{MAX_RANK}, got {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


def zeros(shape, dtype=DEFAULT_DTYPE) -> np.ndarray:
    return np.zeros(shape, dtype=dtype)


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Elementwise add/sub/mul of two same-shaped tensors."""
    if a.shape != b.shape:
        raise ValueError(f"elementwise shape mismatch: {a.shape} vs {b.shape}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two rank-2 tensors.

    Summation is delegated to numpy's BLAS, which is bit-reproducible
    for a fixed build and thread count; the determinism tests assert it.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs rank-2 tensors, got {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
    return a @ b


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stack [C1,H,W] and [C2,H,W] into [C1+C2,H,W]; a's channels first."""
    if a.ndim != 3 or b.ndim != 3:
        raise ValueError("concat_channels needs rank-3 [C,H,W] tensors")
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(f"spatial dims disagree: {a.shape[1:]} vs {b.shape[1:]}")
    return np.concatenate([a, b], axis=0)


def split_channels(x: np.ndarray, c1: int):
    """Inverse of concat_channels: split [C,H,W] at channel index c1."""
    if x.ndim != 3:
        raise ValueError("split_channels needs a rank-3 [C,H,W] tensor")
    if not 0 <= c1 <= x.shape[0]:
        raise ValueError(f"split index {c1} out of range for {x.shape[0]} channels")
    return x[:c1], x[c1:]
