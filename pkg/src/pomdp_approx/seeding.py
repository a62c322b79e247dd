"""Stateless seed derivation.

``seed_sequence(seed, *key)`` builds ``SeedSequence(entropy=seed,
spawn_key=key)`` with string key parts hashed to 32-bit integers. The same
(seed, key) always yields the same stream, independent of call order, so
adding a stage or a worker never perturbs other streams.

``component_seed(master, stage)`` is the documented fan-out used by the
experiment runner: the first 8 bytes of ``sha256(f"{master}/{stage}")``,
shifted right by one bit.
"""

import hashlib

import numpy as np


def _tag(part):
    if isinstance(part, (int, np.integer)):
        return int(part)
    return int.from_bytes(hashlib.sha256(str(part).encode()).digest()[:4], "big")


def seed_sequence(seed, *key):
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(_tag(k) for k in key))
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_tag(k) for k in key))


def stream(seed, *key):
    return np.random.default_rng(seed_sequence(seed, *key))


def component_seed(master, stage):
    digest = hashlib.sha256(f"{int(master)}/{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1
