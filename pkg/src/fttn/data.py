"""IDX dataset loading, normalization, splitting and batching.

The IDX container is parsed bit-exactly: big-endian u32 magic
(0x00000803 for images, 0x00000801 for labels), big-endian u32 dimension
sizes, then the raw byte payload. Pixels are normalized as byte / 255.0,
0 for black to 1 for white, and nothing else is done to them. Files are
transparently un-gzipped when they start with the gzip magic.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "IdxFormatError",
    "IMAGES_MAGIC",
    "LABELS_MAGIC",
    "load_idx_images",
    "load_idx_labels",
    "write_idx_images",
    "write_idx_labels",
    "load_dataset",
    "split",
    "batches",
    "downscale_dataset",
]

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Dataset:
    """Flattened images in [0, 1] with integer class labels."""

    images: np.ndarray  # (M, N) float64
    labels: np.ndarray  # (M,) int64
    num_classes: int
    image_shape: tuple

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                f"{len(self.images)} images but {len(self.labels)} labels"
            )
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixels must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, indices) -> "Dataset":
        return Dataset(self.images[indices], self.labels[indices],
                       self.num_classes, self.image_shape)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        head = fh.read(2)
        fh.seek(0)
        if head == b"\x1f\x8b":
            with gzip.open(fh) as gz:
                return gz.read()
        return fh.read()


def _parse_header(data: bytes, expected_magic: int, n_dims: int, path):
    if len(data) < 4:
        raise IdxFormatError(f"{path}: file too short for magic", 0)
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise IdxFormatError(
            f"{path}: expected magic 0x{expected_magic:08x}, found 0x{magic:08x}",
            0,
        )
    header_len = 4 + 4 * n_dims
    if len(data) < header_len:
        raise IdxFormatError(f"{path}: truncated dimension header", len(data))
    dims = struct.unpack(f">{n_dims}I", data[4:header_len])
    payload = data[header_len:]
    expected = int(np.prod(dims))
    if len(payload) != expected:
        raise IdxFormatError(
            f"{path}: payload holds {len(payload)} bytes, expected {expected}",
            header_len + min(len(payload), expected),
        )
    return dims, payload


def load_idx_images(path) -> np.ndarray:
    """Images as (M, H, W) float64 in [0, 1] (byte / 255.0)."""
    dims, payload = _parse_header(_read_bytes(path), IMAGES_MAGIC, 3, path)
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    return raw.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    dims, payload = _parse_header(_read_bytes(path), LABELS_MAGIC, 1, path)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def _write_maybe_gzip(path, blob: bytes) -> None:
    if str(path).endswith(".gz"):
        with gzip.open(path, "wb") as fh:
            fh.write(blob)
    else:
        with open(path, "wb") as fh:
            fh.write(blob)


def write_idx_images(path, images) -> None:
    """Write (M, H, W) images; floats in [0, 1] are requantized to bytes."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise ValueError("expected (M, H, W) images")
    if images.dtype != np.uint8:
        images = np.rint(images * 255.0).astype(np.uint8)
    header = struct.pack(">I3I", IMAGES_MAGIC, *images.shape)
    _write_maybe_gzip(path, header + images.tobytes(order="C"))


def write_idx_labels(path, labels) -> None:
    labels = np.asarray(labels).astype(np.uint8)
    header = struct.pack(">II", LABELS_MAGIC, len(labels))
    _write_maybe_gzip(path, header + labels.tobytes(order="C"))


def load_dataset(images_path, labels_path, num_classes: int = 10) -> Dataset:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxFormatError(
            f"{images_path} holds {len(images)} images but {labels_path} "
            f"holds {len(labels)} labels",
            0,
        )
    shape = images.shape[1:]
    return Dataset(images.reshape(len(images), -1), labels, num_classes, shape)


def split(dataset: Dataset, holdout_fraction: float, seed: int):
    """Disjoint, exhaustive (train, holdout) split, deterministic per seed."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ValueError("holdout_fraction must lie strictly between 0 and 1")
    m = len(dataset)
    n_hold = int(round(m * holdout_fraction))
    perm = np.random.default_rng(seed).permutation(m)
    return dataset.take(perm[n_hold:]), dataset.take(perm[:n_hold])


def batches(dataset: Dataset, batch_size: int, epoch_seed: int):
    """Seeded shuffle, then contiguous chunks; the final partial one too."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    perm = np.random.default_rng(epoch_seed).permutation(len(dataset))
    for start in range(0, len(dataset), batch_size):
        idx = perm[start : start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def downscale_dataset(dataset: Dataset, target_side: int) -> Dataset:
    """Average-pool square images down to target_side x target_side."""
    h, w = dataset.image_shape
    if h != w:
        raise ValueError("downscaling expects square images")
    if h == target_side:
        return dataset
    if h % target_side:
        raise ValueError(f"cannot pool {h} down to {target_side}")
    f = h // target_side
    imgs = dataset.images.reshape(-1, target_side, f, target_side, f)
    pooled = imgs.mean(axis=(2, 4)).reshape(len(dataset), -1)
    return Dataset(pooled, dataset.labels.copy(), dataset.num_classes,
                   (target_side, target_side))
