"""Reproducible random streams.

Every stream is a Philox counter-based generator keyed by a
``numpy.random.SeedSequence`` built from the experiment seed and a
``(namespace, id)`` spawn key. Namespaces partition the id space so that
streams for sites, replicas, environments and calibration never collide;
ids inside a namespace are plain non-negative integers (negative site
indices are zigzag-encoded first).
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np

SEED_LIMIT = 2**64


class StreamNamespace(IntEnum):
    REPLICA = 0
    SITE = 1
    ENVIRONMENT = 2
    CALIBRATION = 3
    WINDOW = 4
    PROBE = 5


def zigzag(index: int) -> int:
    """Map Z onto N: 0, -1, 1, -2, 2, ... -> 0, 1, 2, 3, 4, ..."""
    return 2 * index if index >= 0 else -2 * index - 1


def derive_stream(
    seed: int,
    replica_id: int,
    namespace: StreamNamespace = StreamNamespace.REPLICA,
) -> np.random.Generator:
    if not 0 <= seed < SEED_LIMIT:
        raise ValueError(f"Seed must be a 64-bit unsigned integer, got {seed}.")
    if replica_id < 0:
        raise ValueError(f"Stream id must be non-negative, got {replica_id}.")
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(int(namespace), replica_id))
    return np.random.Generator(np.random.Philox(sequence))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 64-bit seed from an existing stream."""
    return int(rng.integers(0, SEED_LIMIT, dtype=np.uint64))
