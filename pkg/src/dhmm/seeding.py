"""Independent random streams derived from one integer seed.

Each component (topology, trajectory, observations, ...) gets its own stream
tag so that changing one part of an experiment leaves the others untouched.
"""
from __future__ import annotations

import zlib

import numpy as np


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _tag_key(tag)]))


def parse_range(text: str) -> list[int]:
    """Expand ``"a..b"`` or ``"a..b..step"`` (inclusive) or ``"1,4,7"``."""
    text = text.strip()
    if ".." in text:
        parts = [int(p) for p in text.split("..")]
        if len(parts) == 2:
            start, stop, step = parts[0], parts[1], 1
        elif len(parts) == 3:
            start, stop, step = parts
        else:
            raise ValueError(f"bad range {text!r}")
        if step <= 0:
            raise ValueError(f"range step must be positive in {text!r}")
        return list(range(start, stop + 1, step))
    return [int(p) for p in text.split(",") if p.strip()]
