"""Pixel feature maps: embed gray-scale values into length-2 vectors.

Two maps are supported, selected by name:

* ``linear``: ``[1 - p, p]`` -- components sum to 1 for p in [0, 1].
* ``trig``:   ``[cos(pi*p/2), sin(pi*p/2)]`` -- unit Euclidean norm.

An embedded image is the (N, 2) array of per-pixel feature vectors in
row-major raster order; the full outer product over sites is never
materialized, it only ever appears implicitly through contraction.
"""

import numpy as np

__all__ = [
    "DomainError",
    "FEATURE_MAPS",
    "LOCAL_DIM",
    "embed_pixel",
    "embed_image",
    "embed_images",
]

LOCAL_DIM = 2


class DomainError(ValueError):
    """A pixel value lies outside [0, 1]."""


def _linear(p):
    return np.stack([1.0 - p, p], axis=-1)


def _trig(p):
    half_pi = 0.5 * np.pi
    return np.stack([np.cos(half_pi * p), np.sin(half_pi * p)], axis=-1)


FEATURE_MAPS = {"linear": _linear, "trig": _trig}


def _checked(p, kind: str) -> np.ndarray:
    if kind not in FEATURE_MAPS:
        raise ValueError(
            f"unknown feature map {kind!r}; expected one of {sorted(FEATURE_MAPS)}"
        )
    p = np.asarray(p, dtype=np.float64)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise DomainError("pixel values must lie in [0, 1]")
    return p


def embed_pixel(p: float, kind: str = "linear") -> np.ndarray:
    """Map one gray-scale value in [0, 1] to its length-2 feature vector."""
    p = _checked(p, kind)
    if p.ndim != 0:
        raise ValueError("embed_pixel expects a scalar")
    return FEATURE_MAPS[kind](p)


def embed_image(pixels, kind: str = "linear") -> np.ndarray:
    """Embed an image into its (N, 2) feature chain, raster order.

    ``pixels`` may be an (H, W) image or an already-flat length-N vector;
    flattening is row-major either way.
    """
    p = _checked(pixels, kind).reshape(-1)
    return FEATURE_MAPS[kind](p)


def embed_images(pixels, kind: str = "linear") -> np.ndarray:
    """Embed a batch: (M, N) or (M, H, W) pixels -> (M, N, 2) features."""
    p = _checked(pixels, kind)
    return FEATURE_MAPS[kind](p.reshape(p.shape[0], -1))
