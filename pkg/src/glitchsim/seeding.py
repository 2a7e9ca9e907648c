"""Deterministic seed derivation shared by all randomized components.

Every random stream in the simulator is keyed by an explicit integer seed.
Sub-streams (per trial, per glitch, per shot) are derived with a fixed,
documented hash so that runs replay identically across processes and
platforms, and so trials can execute in any order or concurrently.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(*parts: object) -> int:
    """Derive a 64-bit child seed from an arbitrary tuple of parts.

    The derivation is the first 8 bytes (big-endian) of the SHA-256 digest
    of the colon-joined decimal rendering of the parts. Stable across
    platforms and Python versions; not intended to be cryptographically
    meaningful, only collision-resistant enough for experiment bookkeeping.
    """
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big") & _MASK64


def rng_from(*parts: object) -> np.random.Generator:
    """PCG64 generator seeded via derive_seed on the given parts."""
    return np.random.default_rng(derive_seed(*parts))
