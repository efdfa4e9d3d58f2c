"""Deterministic random streams.

Every stochastic operation in the workbench draws from an :class:`RngStream`
identified by ``(master_seed, stream_id)``. Two streams constructed with the
same pair produce bit-identical draw sequences, independent of thread count
or interleaving with other streams, which is what makes dataset generation
parallel-invariant: worker i always owns stream ``(master_seed, i)``.
"""

from __future__ import annotations

import numpy as np

__all__ = ["RngStream"]


class RngStream:
    """A stateful random stream derived from ``(master_seed, stream_id)``.

    Wraps a PCG64 :class:`numpy.random.Generator` seeded through
    ``SeedSequence(master_seed, spawn_key=(stream_id,))``. Draws are
    sequential and mutate the stream; construct a fresh instance to replay.
    """

    __slots__ = ("master_seed", "stream_id", "generator")

    def __init__(self, master_seed: int, stream_id: int = 0):
        if master_seed < 0 or stream_id < 0:
            raise ValueError("master_seed and stream_id must be non-negative")
        self.master_seed = int(master_seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_id,))
        self.generator = np.random.default_rng(seq)

    def sibling(self, stream_id: int) -> "RngStream":
        """A fresh stream under the same master seed."""
        return RngStream(self.master_seed, stream_id)

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"
