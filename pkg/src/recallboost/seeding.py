"""Seed handling.

Every random stream is a numpy ``Generator`` over PCG64.  Sub-streams for
pipeline phases are derived from ``(seed, tag)`` by hashing, so one run seed
fixes every draw and adding a phase never shifts another phase's stream.
"""

from __future__ import annotations

import hashlib

import numpy as np

RNG_NAME = "numpy.random.PCG64"


def derive_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
