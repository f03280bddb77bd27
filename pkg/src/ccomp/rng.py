"""Counter-based random streams for reproducible generation runs.

Each run owns one seed. Draws are organized into substreams keyed by
(lane, step) so that the numbers a particle sees depend only on the seed,
the step index and its slot in the ensemble, never on execution order.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

_PROPOSAL_LANE = 0
_RESAMPLE_LANE = 1
_GENERIC_LANE = 2


def _generator(seed: int, lane: int, step: int) -> np.random.Generator:
    key = np.array(
        [seed & _MASK64, ((lane & 0xFFFFFFFF) << 32) | (step & 0xFFFFFFFF)],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def open_uniforms(gen: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` uniforms from the open interval (0, 1).

    Exact zeros would make inverse-CDF sampling and systematic resampling
    select zero-mass entries, so they are redrawn.
    """
    u = gen.random(count)
    while True:
        zero = u == 0.0
        if not zero.any():
            return u
        u[zero] = gen.random(int(zero.sum()))


class RunRng:
    """All randomness for one generation run, split into per-step substreams."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def proposal_uniforms(self, step: int, count: int) -> np.ndarray:
        """One uniform in (0, 1) per particle for the step's proposals."""
        return open_uniforms(_generator(self.seed, _PROPOSAL_LANE, step), count)

    def resample_generator(self, step: int) -> np.random.Generator:
        return _generator(self.seed, _RESAMPLE_LANE, step)

    def generic(self, step: int = 0) -> np.random.Generator:
        return _generator(self.seed, _GENERIC_LANE, step)
