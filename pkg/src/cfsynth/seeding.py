"""Deterministic seed fan-out.

A single global seed must reproduce every artifact byte for byte, so each
stochastic component derives its own generator from (seed, *labels) through
a counter-splitting scheme instead of sharing one stream.
"""

from __future__ import annotations

import zlib

import numpy as np


def spawn_seed_sequence(seed: int, *labels: str | int) -> np.random.SeedSequence:
    """Derive a child SeedSequence from a global seed and a label path.

    Labels are hashed with crc32 so the mapping is stable across runs,
    platforms and Python processes (unlike ``hash()``).
    """
    key = tuple(
        zlib.crc32(str(lab).encode("utf-8")) if isinstance(lab, str) else int(lab)
        for lab in labels
    )
    return np.random.SeedSequence(entropy=int(seed), spawn_key=key)


def spawn_rng(seed: int, *labels: str | int) -> np.random.Generator:
    """A PCG64 generator for the component identified by the label path."""
    return np.random.default_rng(spawn_seed_sequence(seed, *labels))
