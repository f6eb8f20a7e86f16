"""Deterministic synthetic image sets for demos, smoke tests and CI.

``demo_dataset`` renders ten visually distinct bar patterns at 28x28
with per-sample jitter and noise, quantized to bytes so it round-trips
through the IDX container exactly like a downloaded dataset would.
"""

import numpy as np

from .data import Dataset, write_idx_images, write_idx_labels

__all__ = ["demo_dataset", "write_demo_idx", "toy_separable"]

_SIDE = 28


def _render(cls: int, rng: np.random.Generator) -> np.ndarray:
    img = rng.uniform(0.0, 0.08, size=(_SIDE, _SIDE))
    row = 2 + 2 * cls + rng.integers(0, 2)
    col = 25 - 2 * cls - rng.integers(0, 2)
    img[row : row + 2, 3:25] = rng.uniform(0.65, 1.0, size=(2, 22))
    img[3:25, col : col + 2] = rng.uniform(0.65, 1.0, size=(22, 2))
    return img


def demo_dataset(n_samples: int, seed: int, num_classes: int = 10) -> Dataset:
    """Byte-quantized bar-pattern images, labels cycling over classes."""
    rng = np.random.default_rng(seed)
    images = np.empty((n_samples, _SIDE * _SIDE))
    labels = np.empty(n_samples, dtype=np.int64)
    for i in range(n_samples):
        cls = i % num_classes
        img = np.rint(_render(cls, rng) * 255.0) / 255.0
        images[i] = img.reshape(-1)
        labels[i] = cls
    return Dataset(images, labels, num_classes, (_SIDE, _SIDE))


def write_demo_idx(out_dir, n_train: int = 200, n_test: int = 100,
                   seed: int = 7, gzipped: bool = True):
    """Write train/test demo fixtures in IDX form; returns the four paths."""
    suffix = ".idx.gz" if gzipped else ".idx"
    train = demo_dataset(n_train, seed)
    test = demo_dataset(n_test, seed + 1)
    paths = {}
    for name, ds in (("train", train), ("test", test)):
        img_path = f"{out_dir}/{name}-images{suffix}"
        lbl_path = f"{out_dir}/{name}-labels{suffix}"
        side = ds.image_shape[0]
        write_idx_images(img_path, ds.images.reshape(-1, side, side))
        write_idx_labels(lbl_path, ds.labels)
        paths[f"{name}_images"] = img_path
        paths[f"{name}_labels"] = lbl_path
    return paths


def toy_separable(n_samples: int = 100, seed: int = 0) -> Dataset:
    """Linearly separable 2-class set on 4 pixels (2x2 images)."""
    rng = np.random.default_rng(seed)
    proto = {0: np.array([0.9, 0.1, 0.8, 0.2]), 1: np.array([0.1, 0.9, 0.2, 0.8])}
    images = np.empty((n_samples, 4))
    labels = np.empty(n_samples, dtype=np.int64)
    for i in range(n_samples):
        cls = i % 2
        images[i] = np.clip(proto[cls] + rng.uniform(-0.05, 0.05, 4), 0.0, 1.0)
        labels[i] = cls
    return Dataset(images, labels, 2, (2, 2))
