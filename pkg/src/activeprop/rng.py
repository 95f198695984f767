"""Deterministic random-stream derivation from a single global seed."""

import hashlib

import numpy as np


def derive_rng(seed: int, *parts) -> np.random.Generator:
    """Derive an independent generator for the stream keyed by ``parts``.

    The key (e.g. ``("partition", image_id, branch, step)``) is hashed with
    blake2b into the generator's seed material, so every stream is stable
    across processes and platforms and two distinct keys never share a
    stream. Parts may be ints, floats, or strings.
    """
    h = hashlib.blake2b(digest_size=16)
    h.update(repr(int(seed)).encode())
    for part in parts:
        h.update(b"\x1f")
        h.update(repr(part).encode())
    words = np.frombuffer(h.digest(), dtype=np.uint32)
    return np.random.default_rng(np.random.SeedSequence([int(w) for w in words]))
