"""Named sub-seeds derived from one top-level seed."""

import numpy as np

STREAMS = ("data", "init", "sampling", "diagnostics")


def derive_seed(seed: int, stream: str) -> int:
    """Independent 32-bit seed for ``stream``; stable across runs and platforms."""
    if stream not in STREAMS:
        raise ValueError(f"unknown seed stream {stream!r}; expected one of {STREAMS}")
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS.index(stream),))
    return int(ss.generate_state(1)[0])
