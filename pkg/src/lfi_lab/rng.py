"""Counter-based random streams keyed by (seed, experiment, trial, strategy)."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, experiment: str = "", trial: int = 0, strategy: int = 0) -> np.random.Generator:
    """Independent generator for one (experiment, trial, strategy) cell.

    The key is hashed through ``SeedSequence`` into a Philox counter-based
    generator, so any cell can be regenerated without replaying the others.
    """
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(experiment.encode()), int(trial), int(strategy)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
