"""Deterministic sub-seed derivation from one top-level seed."""

import hashlib

__all__ = ["derive_seed"]


def derive_seed(master: int, tag: str) -> int:
    """Stable 64-bit stream seed for (master seed, purpose tag)."""
    digest = hashlib.blake2b(f"{master}:{tag}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
