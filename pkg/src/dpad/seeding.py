"""Deterministic per-purpose random streams from one top-level seed."""

from __future__ import annotations

import numpy as np

# Fixed registry: the spawn key of a stream never depends on which
# other streams a given run happens to draw.
_STREAMS = ("synth", "bank", "encoder", "head", "shuffle", "misc")


def seed_stream(seed: int, name: str) -> np.random.Generator:
    if name not in _STREAMS:
        raise KeyError(f"unknown seed stream '{name}' (known: {_STREAMS})")
    key = _STREAMS.index(name)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))
