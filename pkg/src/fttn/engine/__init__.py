"""Contraction engine: reference ops plus swappable hot kernels.

The batched kernels exist twice: a compiled Cython core and a pure-numpy
fallback with the same API. The compiled core is preferred when present;
set ``FTTN_BACKEND=python`` or ``FTTN_BACKEND=compiled`` to force one.
"""

import os

from .ops import (
    ScaledVector,
    absorb_features,
    contract_parallel,
    contract_sequential,
    count_flops,
    count_flops_stages,
)
from .pack import pack_model, unpack_site_grads

__all__ = [
    "ScaledVector",
    "absorb_features",
    "contract_parallel",
    "contract_sequential",
    "count_flops",
    "count_flops_stages",
    "pack_model",
    "unpack_site_grads",
    "active_backend",
    "get_kernels",
    "select_backend",
]

_BACKENDS = ("auto", "python", "compiled")
_active_name = None
_active_kernels = None


def _load(name: str):
    if name == "python":
        from . import kernels_py

        return "python", kernels_py
    try:
        from . import _kernels

        return "compiled", _kernels
    except ImportError:
        if name == "compiled":
            raise
        from . import kernels_py

        return "python", kernels_py


def select_backend(name: str = "auto"):
    """Select the kernel backend; returns the kernel module."""
    global _active_name, _active_kernels
    if name not in _BACKENDS:
        raise ValueError(f"backend must be one of {_BACKENDS}, got {name!r}")
    _active_name, _active_kernels = _load(name)
    return _active_kernels


def get_kernels(name: str = "active"):
    """Kernel module for ``name`` without changing the active selection."""
    if name == "active":
        return _active_kernels
    if name not in _BACKENDS:
        raise ValueError(f"backend must be one of {_BACKENDS}, got {name!r}")
    return _load(name)[1]


def active_backend() -> str:
    return _active_name


select_backend(os.environ.get("FTTN_BACKEND", "auto"))
