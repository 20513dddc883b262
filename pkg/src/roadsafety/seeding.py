"""Named random substreams derived from the single pipeline seed."""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def subseed(seed: int, name: str) -> int:
    return int(substream(seed, name).integers(0, 2**31 - 1))
