"""Particle populations, softmax cost weighting, and the consensus point.

These are the primitives every optimizer in the package shares: a population
is an immutable (N, dim) block of candidate control vectors with optional
per-particle costs, and the consensus point is the softmax-weighted average
that the particle dynamics contract toward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnevaluatedPopulationError(RuntimeError):
    """Operation needs per-particle costs that have not been computed."""


class CovarianceFactorizationError(ValueError):
    """Covariance matrix could not be factored (not positive semidefinite)."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ControlTrajectory:
    """Flat decision vector of length horizon x controls-per-step.

    Immutable after construction; all entries must be finite.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        v = _frozen_array(self.values)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("control trajectory must be a non-empty 1-d vector")
        if not np.all(np.isfinite(v)):
            raise ValueError("control trajectory contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class Population:
    """N particles at one iteration, with costs once evaluated.

    ``particles`` is an (N, dim) matrix, one row per particle. Arrays are
    frozen on construction; steps return new Population values, so a
    Population can be read from any number of workers concurrently.
    """

    particles: np.ndarray
    costs: np.ndarray | None = None
    iteration: int = 0

    def __post_init__(self) -> None:
        p = np.array(self.particles, dtype=float)
        if p.ndim == 1:
            p = p[None, :]
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("particles must form a non-empty (N, dim) matrix")
        if not np.all(np.isfinite(p)):
            raise ValueError("particles contain non-finite entries")
        p.setflags(write=False)
        object.__setattr__(self, "particles", p)
        if self.costs is not None:
            c = _frozen_array(self.costs)
            if c.shape != (p.shape[0],):
                raise ValueError(
                    f"costs must have shape ({p.shape[0]},), got {c.shape}"
                )
            if not np.all(np.isfinite(c)):
                raise ValueError("costs contain non-finite entries")
            object.__setattr__(self, "costs", c)
        if self.iteration < 0:
            raise ValueError("iteration index must be nonnegative")

    @classmethod
    def from_trajectories(
        cls, trajectories, costs=None, iteration: int = 0
    ) -> "Population":
        rows = [
            t.values if isinstance(t, ControlTrajectory) else np.asarray(t, float)
            for t in trajectories
        ]
        return cls(np.stack(rows), costs=costs, iteration=iteration)

    @property
    def n(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    @property
    def evaluated(self) -> bool:
        return self.costs is not None

    def particle(self, i: int) -> ControlTrajectory:
        return ControlTrajectory(self.particles[i])

    def with_costs(self, costs) -> "Population":
        return Population(self.particles, costs=costs, iteration=self.iteration)

    def require_costs(self) -> np.ndarray:
        if self.costs is None:
            raise UnevaluatedPopulationError(
                f"population at iteration {self.iteration} has no evaluated costs"
            )
        return self.costs

    def diameter(self) -> float:
        """Twice the largest particle distance from the population centroid.

        Cheap O(N dim) spread measure; scales exactly like pairwise
        distances under affine contraction toward any point.
        """
        center = self.particles.mean(axis=0)
        return 2.0 * float(np.linalg.norm(self.particles - center, axis=1).max())


@dataclass(frozen=True)
class SoftmaxConfig:
    """Temperature of the exponential cost weighting; larger is greedier."""

    rho: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"temperature rho must be positive, got {self.rho}")


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Nonnegative weights over a population, summing to one."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = _frozen_array(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.size


def softmax_weights(costs, cfg: SoftmaxConfig) -> WeightVector:
    """Exponential cost weighting, shifted by the minimum cost.

    w_i is proportional to exp(-rho * (c_i - min_j c_j)). The shift leaves
    the weights unchanged mathematically (the common factor cancels in the
    normalization) but keeps every exponent <= 0, so arbitrarily large rho
    cannot overflow. The minimum-cost entry always carries the largest
    weight; ties resolve to the lowest index.
    """
    c = np.asarray(costs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise ValueError("costs must be a non-empty 1-d vector")
    if not np.all(np.isfinite(c)):
        raise ValueError("costs contain non-finite entries")
    z = np.exp(-cfg.rho * (c - c.min()))
    return WeightVector(z / z.sum())


def consensus_point(pop: Population, w: WeightVector) -> ControlTrajectory:
    """Weighted average of the population, the attractor of the drift.

    The result is clipped to the componentwise bounding box of the
    population, which the exact convex combination lies in; clipping only
    removes sub-ulp rounding excursions.
    """
    if len(w) != pop.n:
        raise ValueError(f"got {len(w)} weights for {pop.n} particles")
    point = w.weights @ pop.particles
    lo = pop.particles.min(axis=0)
    hi = pop.particles.max(axis=0)
    return ControlTrajectory(np.clip(point, lo, hi))


def best_particle(pop: Population) -> tuple[int, float]:
    """Index and cost of the lowest-cost particle; ties go to the lowest index."""
    costs = pop.require_costs()
    idx = int(np.argmin(costs))
    return idx, float(costs[idx])
