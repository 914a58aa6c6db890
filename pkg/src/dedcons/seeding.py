"""Stream-split seeding: one top-level seed, independent RNG per unit of work."""

from __future__ import annotations

import hashlib
import random


def derive_seed(seed: int, *keys: object) -> int:
    payload = "\x1f".join([str(seed), *(str(k) for k in keys)]).encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def derive_rng(seed: int, *keys: object) -> random.Random:
    """RNG keyed by (seed, *keys); independent of call order and worker count."""
    return random.Random(derive_seed(seed, *keys))
