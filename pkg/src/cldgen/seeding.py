"""Deterministic derivation of independent RNG substreams."""

from __future__ import annotations

import numpy as np

__all__ = ["substream"]


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream identified by (seed, path...).

    Distinct paths give statistically independent streams; the same
    (seed, path) always gives the same stream.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))
