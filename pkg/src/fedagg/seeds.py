"""Deterministic hierarchical seed derivation."""

from __future__ import annotations

import hashlib


def seed_stream(global_seed: int, *labels) -> int:
    """Derive a 64-bit child seed from a global seed and a label path."""
    h = hashlib.sha256()
    h.update(str(int(global_seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(repr(label).encode())
    return int.from_bytes(h.digest()[:8], "little")
