"""Deterministic derivation of independent random streams.

Every randomized stage derives its generator from the master seed plus a
tuple of namespacing keys (strings and integers). Streams are independent
of each other and of the order in which sibling streams are consumed, so
parallel and serial executions, or runs that skip a stage entirely,
produce identical draws for the stages they share.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key: str | int) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(key.encode("utf-8"))


def substream(master_seed: int, *keys: str | int) -> np.random.Generator:
    """Return a Generator for the stream identified by (master_seed, *keys)."""
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stream_seed(master_seed: int, *keys: str | int) -> int:
    """Collapse a stream identity to a single 63-bit integer seed."""
    entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0] >> 1)
