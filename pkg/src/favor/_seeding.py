"""Deterministic seed derivation (SplitMix64).

Trial ``t`` of a harness run with master seed ``s`` uses
``derive_seed(s, t, ...)``: each key is folded in by adding it to the
running state and applying one SplitMix64 finalizer step.  The result
depends only on the keys, never on scheduling or thread count.
"""

import zlib

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One SplitMix64 output for state ``x`` (golden-ratio increment applied)."""
    z = (x + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master, *keys):
    state = splitmix64(int(master) & _MASK)
    for key in keys:
        if isinstance(key, str):
            key = zlib.crc32(key.encode("utf-8"))
        state = splitmix64((state + int(key)) & _MASK)
    return state
