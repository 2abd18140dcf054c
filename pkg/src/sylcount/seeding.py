"""Deterministic seed derivation.

All randomness in the package funnels through a single root seed; every
consumer derives its own child seed by stable hashing of (seed, purpose),
so adding a new consumer never shifts the random streams of existing ones.
"""

import hashlib


def child_seed(seed: int, purpose: str) -> int:
    """Derive an independent 63-bit seed from a root seed and a purpose tag."""
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
