"""Dense tensor carrier and the numeric primitives layers build on.

A tensor here is a C-contiguous NumPy ndarray (float32 on the training
path, float64 in the gradient-check mode).  All operations validate
shapes exactly; there is no broadcasting anywhere in this package.
"""

import numpy as np

from .errors import InvalidShapeError, ShapeMismatchError

DTYPE = np.float32
CHECK_DTYPE = np.float64  # gradient-check mode


def create(shape, fill=0.0, dtype=DTYPE):
    """Allocate a tensor of `shape` with every element equal to `fill`."""
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0 or any(d < 1 for d in shape):
        raise InvalidShapeError(f"dimensions must be >= 1, got {list(shape)}")
    return np.full(shape, fill, dtype=dtype)


def axpy(alpha, x, y):
    """Elementwise alpha*x + y over identically shaped tensors."""
    if x.shape != y.shape:
        raise ShapeMismatchError(f"axpy operands {x.shape} vs {y.shape}")
    return (x.dtype.type(alpha) * x + y).astype(x.dtype, copy=False)


def matmul(a, b):
    """Rank-2 matrix product with an explicit inner-dimension check."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def require_shape(x, shape, what="tensor"):
    if tuple(x.shape) != tuple(shape):
        raise ShapeMismatchError(f"{what}: expected {tuple(shape)}, got {tuple(x.shape)}")
    return x
