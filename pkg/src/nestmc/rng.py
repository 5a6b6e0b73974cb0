"""Counter-based random streams for deterministic, schedule-independent sampling.

Every consumer of randomness derives its own Philox stream from a 64-bit user
seed plus a tuple of integer key parts (replication, level, role, chunk). Work
is split into fixed-size chunks whose boundaries depend only on the plan, never
on the worker count, so merging per-chunk partials in chunk order reproduces
results bit-exactly under any parallel schedule.
"""

from __future__ import annotations

import numpy as np

# Roles keep streams for different draw purposes disjoint even at equal level/chunk.
ROLE_OUTER = 1
ROLE_INNER = 2

# Upper bound on elements (outer x inner) touched per chunk; keeps temporaries
# in the tens-of-MB range while amortizing Python overhead.
ELEMENT_BUDGET = 1 << 20
MAX_OUTER_CHUNK = 1 << 16

_MASK64 = (1 << 64) - 1


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the Philox generator uniquely keyed by ``(seed, *key)``.

    Key parts are folded into the SeedSequence entropy, so distinct tuples give
    statistically independent, reproducible streams.
    """
    entropy = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in key]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def outer_chunk_size(inner_size: int) -> int:
    """Outer-samples-per-chunk for a level using ``inner_size`` inner draws."""
    if inner_size < 1:
        raise ValueError("inner_size must be >= 1")
    return int(max(1, min(MAX_OUTER_CHUNK, ELEMENT_BUDGET // inner_size)))


def chunk_ranges(n: int, chunk: int) -> list[tuple[int, int, int]]:
    """Split ``range(n)`` into ``(chunk_index, start, stop)`` triples."""
    return [(c, s, min(s + chunk, n)) for c, s in enumerate(range(0, n, chunk))]
