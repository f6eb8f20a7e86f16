"""Dense tensor kernels shared by every other module.

A tensor here is a plain C-contiguous ``float64`` numpy array: ``shape``
is the axis list and the underlying buffer is the flat row-major data.
All public operations allocate fresh outputs and never mutate their
arguments, so tensors can be shared read-only across workers.
"""

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "as_tensor",
    "contract",
    "exp_scale",
    "hadamard",
]


class DimensionMismatchError(ValueError):
    """A paired or elementwise-combined axis has inconsistent length."""


def as_tensor(values) -> np.ndarray:
    """Coerce input to a C-contiguous float64 array."""
    return np.ascontiguousarray(values, dtype=np.float64)


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"{op} produced non-finite entries")
    return arr


def contract(a, b, axis_pairs) -> np.ndarray:
    """Contract ``a`` with ``b`` over the given (axis-of-a, axis-of-b) pairs.

    The result carries the unpaired axes of ``a`` followed by the
    unpaired axes of ``b``; each output entry is the sum over the paired
    indices of the product of entries.
    """
    a = as_tensor(a)
    b = as_tensor(b)
    axes_a = [p[0] for p in axis_pairs]
    axes_b = [p[1] for p in axis_pairs]
    if len(set(axes_a)) != len(axes_a) or len(set(axes_b)) != len(axes_b):
        raise DimensionMismatchError("an axis may be paired at most once")
    for ax_a, ax_b in axis_pairs:
        if not (0 <= ax_a < a.ndim and 0 <= ax_b < b.ndim):
            raise DimensionMismatchError(
                f"axis pair ({ax_a}, {ax_b}) out of range for ranks "
                f"{a.ndim} and {b.ndim}"
            )
        if a.shape[ax_a] != b.shape[ax_b]:
            raise DimensionMismatchError(
                f"paired axes differ: a axis {ax_a} has length "
                f"{a.shape[ax_a]}, b axis {ax_b} has length {b.shape[ax_b]}"
            )
    # tensordot already returns a fresh C-contiguous array; avoid
    # ascontiguousarray here, which would promote rank-0 results to rank 1
    out = np.tensordot(a, b, axes=(axes_a, axes_b))
    return _check_finite(out, "contract")


def exp_scale(a, beta: float) -> np.ndarray:
    """Elementwise ``exp(-beta * a)``, same shape as ``a``."""
    a = as_tensor(a)
    if not np.isfinite(beta):
        raise ValueError(f"beta must be finite, got {beta}")
    with np.errstate(over="ignore"):
        out = np.exp(-beta * a)
    return _check_finite(out, "exp_scale")


def hadamard(a, b) -> np.ndarray:
    """Elementwise product of two same-shaped tensors."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"hadamard requires identical shapes, got {a.shape} and {b.shape}"
        )
    return _check_finite(a * b, "hadamard")
