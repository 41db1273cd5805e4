"""Counter-based random streams for reproducible, schedule-independent sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U64_MAX = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Seeded random source addressed by (run, iteration, particle, draw).

    Every coordinate tuple owns an independent Philox substream: a draw is a
    pure function of (seed, run, iteration, particle, draw) and does not
    depend on how many draws other coordinates consumed, in which order they
    ran, or how work was split across threads.

    The 128-bit Philox key packs (seed, run); the 256-bit counter pins
    (draw, particle, iteration) in its upper words and leaves the low word
    free for the generator to advance through, so one coordinate tuple can
    serve up to 2**64 blocks before touching its neighbours.
    """

    seed: int
    run: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= _U64_MAX:
            raise ValueError(f"seed must fit in 64 bits, got {self.seed}")
        if not 0 <= self.run <= _U64_MAX:
            raise ValueError(f"run id must fit in 64 bits, got {self.run}")

    def substream(self, run: int) -> "RngStream":
        """Same seed, different run coordinate (e.g. one per environment)."""
        return RngStream(self.seed, run)

    def generator(
        self, iteration: int = 0, particle: int = 0, draw: int = 0
    ) -> np.random.Generator:
        """Fresh generator pinned to one coordinate tuple."""
        if iteration < 0 or particle < 0 or draw < 0:
            raise ValueError("stream coordinates must be nonnegative")
        bg = np.random.Philox(
            key=self.seed + (self.run << 64),
            counter=[0, draw, particle, iteration],
        )
        return np.random.Generator(bg)

    def normal(self, size, iteration: int = 0, particle: int = 0, draw: int = 0):
        return self.generator(iteration, particle, draw).standard_normal(size)

    def uniform(
        self, low, high, size, iteration: int = 0, particle: int = 0, draw: int = 0
    ):
        return self.generator(iteration, particle, draw).uniform(low, high, size)


def particle_normals(
    rng: RngStream, iteration: int, n: int, dim: int, draw: int
) -> np.ndarray:
    """(n, dim) standard normals, row i drawn from particle i's substream."""
    out = np.empty((n, dim))
    for i in range(n):
        out[i] = rng.normal(dim, iteration=iteration, particle=i, draw=draw)
    return out


# Draw-purpose labels. Operations sharing an (iteration, particle) pair must
# use distinct labels to keep their streams disjoint.
DRAW_INIT = 0
DRAW_SAMPLE = 1
DRAW_STEP_NOISE = 2
DRAW_MONTE_CARLO = 3
DRAW_ENV_GEOMETRY = 4
