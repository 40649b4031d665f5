"""Deterministic seed derivation: every random component draws from a seed
computed from the master seed and a path of labels, never from run order."""

import zlib

import numpy as np


def _word(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed(master: int, *keys) -> int:
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, *(_word(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
