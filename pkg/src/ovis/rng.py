"""Splittable, counter-based random streams.

Every draw in the library is a pure function of ``(seed, stream path,
counter)``: a :class:`Stream` is an immutable (seed, path) pair, children are
derived by extending the path, and generators are Philox counter-based
bit generators seeded through ``numpy``'s ``SeedSequence``. Two streams with
different paths are statistically independent; recreating a stream from the
same seed and path reproduces its draws exactly, independent of what any
other stream did.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Stream"]


@dataclass(frozen=True)
class Stream:
    """Handle for a deterministic random stream, split by integer path."""

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *ids: int) -> "Stream":
        """Derive an independent sub-stream by appending ids to the path."""
        if any(i < 0 for i in ids):
            raise ValueError(f"stream ids must be non-negative, got {ids}")
        return Stream(self.seed, self.path + ids)

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator positioned at counter 0 for this stream."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seed=ss))
