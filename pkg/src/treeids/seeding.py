"""Deterministic RNG derivation.

Every random decision in the toolkit flows from one master seed through
``derived_rng(seed, *tokens)``.  Tokens name the consumer (module name plus
indices), so two call sites never share a stream and results are independent
of thread scheduling and worker count.
"""

from __future__ import annotations

import zlib

import numpy as np


def _token_word(token) -> int:
    if isinstance(token, (int, np.integer)):
        return int(token) & 0xFFFFFFFF
    return zlib.crc32(str(token).encode("utf-8"))


def derived_seed_sequence(seed: int, *tokens) -> np.random.SeedSequence:
    """SeedSequence for (seed, tokens); stable across runs and platforms."""
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF]
    words.extend(_token_word(t) for t in tokens)
    return np.random.SeedSequence(words)


def derived_rng(seed: int, *tokens) -> np.random.Generator:
    """Generator seeded from (seed, tokens), e.g. derived_rng(7, "forest", 12)."""
    return np.random.default_rng(derived_seed_sequence(seed, *tokens))


def derived_int(seed: int, *tokens) -> int:
    """Plain integer sub-seed for APIs that take one."""
    return int(derived_seed_sequence(seed, *tokens).generate_state(1)[0])
