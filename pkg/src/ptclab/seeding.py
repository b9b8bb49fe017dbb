"""Deterministic seed derivation.

Every random draw in the lab flows from an explicit numpy Generator, and
every Generator is derived from a (purpose, *ints) key so that independent
streams (scene sampling, lidar noise, training batches, benchmark scenes)
never collide and every run is a pure function of its seed.
"""

import hashlib

import numpy as np

_PURPOSES = {}


def _purpose_id(purpose: str) -> int:
    pid = _PURPOSES.get(purpose)
    if pid is None:
        digest = hashlib.sha256(purpose.encode("utf-8")).digest()
        pid = int.from_bytes(digest[:8], "little")
        _PURPOSES[purpose] = pid
    return pid


def seed_sequence(purpose: str, *parts: int) -> np.random.SeedSequence:
    entropy = [_purpose_id(purpose)] + [int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]
    return np.random.SeedSequence(entropy)


def rng_for(purpose: str, *parts: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(purpose, *parts))
