"""Root-seed derivation.

Every random stream is keyed by ``(root_seed, component_tag, *indices)``;
the tag is hashed with CRC-32 so the mapping is stable across Python
versions and processes. Streams never depend on execution order.
"""
from __future__ import annotations

import zlib

import numpy as np


def derive_seed_sequence(root: int, tag: str, *index: int) -> np.random.SeedSequence:
    key = (zlib.crc32(tag.encode("utf-8")),) + tuple(int(i) for i in index)
    return np.random.SeedSequence(entropy=int(root), spawn_key=key)


def rng_for(root: int, tag: str, *index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(root, tag, *index))
