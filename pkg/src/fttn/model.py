"""The MPS classifier: weight chain, temperature fusing, checkpoints.

Site tensor shapes (bond dimension chi, local dimension d, L classes):

* left boundary   ``(d, chi)``
* interior        ``(chi, d, chi)``
* right boundary  ``(chi, d)``
* the one label-bearing site carries a trailing class axis of length L,
  e.g. an interior label tensor is ``(chi, d, chi, L)``; a single-site
  chain degenerates to ``(d, L)``.

The temperature layer never exists as a separate object: each site is
fused into its effective tensor ``A * exp(-beta * A)`` elementwise, which
reduces to the raw chain exactly at ``beta = 0``.
"""

import struct

import numpy as np

from .tensor import exp_scale, hadamard

__all__ = [
    "MpsClassifier",
    "CheckpointFormatError",
    "init_model",
    "effective_sites",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = b"FTTN"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Malformed checkpoint file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MpsClassifier:
    """A chain of weight tensors with one label-bearing site."""

    def __init__(self, sites, bond_dim, num_classes, label_site, local_dim=2):
        self.sites = [np.ascontiguousarray(s, dtype=np.float64) for s in sites]
        self.bond_dim = int(bond_dim)
        self.local_dim = int(local_dim)
        self.num_classes = int(num_classes)
        self.label_site = int(label_site)
        self._validate()

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    def site_shape(self, index: int) -> tuple:
        """Expected shape of the site tensor at ``index``."""
        n, chi, d = self.n_sites, self.bond_dim, self.local_dim
        if n == 1:
            shape = (d,)
        elif index == 0:
            shape = (d, chi)
        elif index == n - 1:
            shape = (chi, d)
        else:
            shape = (chi, d, chi)
        if index == self.label_site:
            shape = shape + (self.num_classes,)
        return shape

    def _validate(self):
        n = self.n_sites
        if n < 1:
            raise ValueError("model needs at least one site")
        if not (0 <= self.label_site < n):
            raise ValueError(f"label_site {self.label_site} outside [0, {n})")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        for i, site in enumerate(self.sites):
            expected = self.site_shape(i)
            if site.shape != expected:
                raise ValueError(
                    f"site {i} has shape {site.shape}, expected {expected}"
                )
            if not np.isfinite(site).all():
                raise ValueError(f"site {i} contains non-finite entries")

    def copy(self) -> "MpsClassifier":
        return MpsClassifier(
            [s.copy() for s in self.sites],
            self.bond_dim,
            self.num_classes,
            self.label_site,
            self.local_dim,
        )


def init_model(
    n_sites: int,
    chi: int,
    num_classes: int,
    seed: int,
    noise_scale: float = 1e-2,
    label_site: int | None = None,
    local_dim: int = 2,
) -> MpsClassifier:
    """Sign-alternating stacked-identity-plus-noise initialization.

    Interior entry ``[a, s, a']`` of the noiseless core at chain
    position ``i`` is ``(-1)**i * delta(a, a')`` stacked along the
    physical axis; boundary tensors carry the first identity row/column
    with the same sign; the label axis replicates its site's core
    uniformly. With the linear feature map the per-site transfer matrix
    is then exactly ``+-identity``, so contraction magnitudes stay O(1)
    over hundreds of sites, and because the temperature layer damps the
    two signs by ``exp(-beta)`` and ``exp(+beta)`` respectively, the
    alternation keeps the fused chain product O(1) at every beta as
    well -- without it, gradients vanish below the optimizer's epsilon
    at realistic chain lengths for beta > 0. Uniform noise of
    half-width ``noise_scale`` is added to every entry. Deterministic
    per seed.
    """
    if chi < 1:
        raise ValueError("chi must be at least 1")
    if num_classes < 2:
        raise ValueError("num_classes must be at least 2")
    if noise_scale < 0:
        raise ValueError("noise_scale must be non-negative")
    if label_site is None:
        label_site = n_sites // 2
    d = local_dim
    rng = np.random.default_rng(seed)

    def core_for(index: int) -> np.ndarray:
        sign = -1.0 if index % 2 else 1.0
        if n_sites == 1:
            core = sign * np.ones(d)
        elif index == 0:
            core = np.zeros((d, chi))
            core[:, 0] = sign
        elif index == n_sites - 1:
            core = np.zeros((chi, d))
            core[0, :] = sign
        else:
            core = np.zeros((chi, d, chi))
            for a in range(chi):
                core[a, :, a] = sign
        if index == label_site:
            core = np.repeat(core[..., None], num_classes, axis=-1)
        return core

    sites = []
    for i in range(n_sites):
        core = core_for(i)
        noise = rng.uniform(-noise_scale, noise_scale, size=core.shape)
        sites.append(core + noise)
    return MpsClassifier(sites, chi, num_classes, label_site, d)


def effective_sites(model: MpsClassifier, beta: float, temper_label: bool = True):
    """Fuse the temperature layer: ``A * exp(-beta * A)`` per site.

    At ``beta = 0`` the multiplier is exactly 1.0 everywhere, so the
    output equals the raw sites bit for bit. ``temper_label=False``
    leaves the label-bearing tensor untouched (experiment flag; the
    default applies the layer uniformly).
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    out = []
    for i, site in enumerate(model.sites):
        if i == model.label_site and not temper_label:
            out.append(site.copy())
        else:
            out.append(hadamard(site, exp_scale(site, beta)))
    return out


def save_checkpoint(model: MpsClassifier, path) -> None:
    """Write the binary checkpoint; round trips are bit-exact.

    Layout: magic ``FTTN``, u16 format version, then n_sites, chi, d, L,
    label_site as little-endian u32, then per site a u8 rank, the axis
    lengths as u32 and the entries as little-endian float64, row-major.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(
            struct.pack(
                "<5I",
                model.n_sites,
                model.bond_dim,
                model.local_dim,
                model.num_classes,
                model.label_site,
            )
        )
        for site in model.sites:
            fh.write(struct.pack("<B", site.ndim))
            fh.write(struct.pack(f"<{site.ndim}I", *site.shape))
            fh.write(site.astype("<f8", copy=False).tobytes(order="C"))


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointFormatError(
                f"truncated checkpoint: needed {n} bytes for {what}, "
                f"only {len(self.data) - self.offset} remain",
                self.offset,
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk


def load_checkpoint(path) -> MpsClassifier:
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read())
    magic = cur.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(
            f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", 0
        )
    (version,) = struct.unpack("<H", cur.take(2, "version"))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported format version {version}", 4)
    header_off = cur.offset
    n_sites, chi, d, num_classes, label_site = struct.unpack(
        "<5I", cur.take(20, "header")
    )
    if n_sites < 1 or chi < 1 or d < 1 or num_classes < 2 or label_site >= n_sites:
        raise CheckpointFormatError("inconsistent header fields", header_off)
    sites = []
    for i in range(n_sites):
        (rank,) = struct.unpack("<B", cur.take(1, f"site {i} rank"))
        if rank < 1 or rank > 4:
            raise CheckpointFormatError(
                f"site {i} has unsupported rank {rank}", cur.offset - 1
            )
        shape = struct.unpack(f"<{rank}I", cur.take(4 * rank, f"site {i} shape"))
        count = int(np.prod(shape))
        raw = cur.take(8 * count, f"site {i} entries")
        sites.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
    if cur.offset != len(cur.data):
        raise CheckpointFormatError(
            f"{len(cur.data) - cur.offset} trailing bytes after last site",
            cur.offset,
        )
    try:
        return MpsClassifier(sites, chi, num_classes, label_site, d)
    except ValueError as exc:
        raise CheckpointFormatError(f"invalid model: {exc}", header_off) from exc
