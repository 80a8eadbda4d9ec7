"""Deterministic random streams keyed by simulation coordinates."""

import hashlib

import numpy as np


def stable_hash(value) -> int:
    """64-bit hash of ``value`` that does not depend on PYTHONHASHSEED."""
    return int.from_bytes(hashlib.sha256(str(value).encode()).digest()[:8], "big")


def derive_seed(seed: int, *keys) -> int:
    """Child seed for a stream identified by ``keys`` under ``seed``."""
    entropy = [int(seed)] + [stable_hash(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0])


def rng_for(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [stable_hash(k) for k in keys]))
