"""Named, seedable, splittable random streams.

Every stochastic operation in this package takes an explicit stream
argument; nothing reads global RNG state. Streams are Philox
(counter-based), so distinct (seed, path) pairs give statistically
independent sequences and the same pair reproduces bit-exactly.
"""

from __future__ import annotations

import hashlib

import numpy as np

GENERATOR_NAME = "philox"


def _tag_to_key(tag) -> int:
    """Map a path tag (int or string) to a spawn-key integer."""
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise ValueError(f"integer stream tags must be nonnegative, got {tag}")
        return int(tag)
    digest = hashlib.blake2b(str(tag).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, *path) -> np.random.Generator:
    """Philox stream identified by a root seed and a path of tags.

    Tags may be nonnegative ints or strings (strings are hashed). Use one
    stream per logical task, e.g. ``stream(seed, "train", arch_id)``.
    """
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    key = tuple(_tag_to_key(t) for t in path)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def split(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split off ``n`` independent child streams (advances the parent)."""
    if n < 1:
        raise ValueError(f"cannot split into {n} streams")
    return rng.spawn(n)
