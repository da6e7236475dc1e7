"""Deterministic counter-based random streams.

Every random draw in the package flows from one 64-bit master seed through
Philox generators keyed by (master_seed, sample_index, component).  Within a
stream, all per-mode draws happen in a single vectorized call in canonical
lattice order, so the draws consumed by sample s are a pure function of
(seed, s, component) and results never depend on worker count or schedule.
"""

from __future__ import annotations

import numpy as np

# Component ids; fixed for the life of the on-disk formats.
SOURCE_Z = 0
VEL_V = 1
VEL_W = 2
PATH_V = 3
PATH_W = 4


def stream(master_seed: int, sample_index: int = 0, component: int = 0) -> np.random.Generator:
    """Independent generator for one (seed, sample, component) triple."""
    ss = np.random.SeedSequence(
        entropy=int(master_seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=(int(sample_index), int(component)),
    )
    return np.random.Generator(np.random.Philox(ss))
