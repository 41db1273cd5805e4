"""Cost landscapes the optimizers minimize.

A problem exposes its decision dimension plus pure cost evaluation over one
control vector or a whole population; everything else (dynamics, geometry)
is internal to the concrete problem.
"""

from __future__ import annotations

import abc
from typing import Callable

import numpy as np

from .core import ControlTrajectory


class Problem(abc.ABC):
    """Pure cost function over flat control vectors."""

    @property
    @abc.abstractmethod
    def dim(self) -> int: ...

    @abc.abstractmethod
    def evaluate(self, u: np.ndarray) -> float: ...

    def evaluate_many(self, U: np.ndarray) -> np.ndarray:
        """Costs for an (N, dim) matrix; rows are independent."""
        U = np.asarray(U, dtype=float)
        return np.array([self.evaluate(row) for row in U])

    def _check_dim(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValueError(f"expected control vector of shape ({self.dim},), got {u.shape}")
        return u


class StagewiseProblem(Problem):
    """Trajectory cost summed stage by stage along simulated dynamics.

    total = sum_t stage_cost(x_t, u_t) + terminal_cost(x_T)
    with x_{t+1} = dynamics(x_t, u_t) from the fixed initial state.
    Evaluation is pure: identical controls give bit-identical costs.
    """

    def __init__(
        self,
        horizon: int,
        n_controls: int,
        x0,
        dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray],
        stage_cost: Callable[[np.ndarray, np.ndarray], float],
        terminal_cost: Callable[[np.ndarray], float],
    ):
        if horizon < 1 or n_controls < 1:
            raise ValueError("horizon and controls-per-step must be positive")
        self.horizon = horizon
        self.n_controls = n_controls
        self.x0 = np.array(x0, dtype=float)
        self.dynamics = dynamics
        self.stage_cost = stage_cost
        self.terminal_cost = terminal_cost

    @property
    def dim(self) -> int:
        return self.horizon * self.n_controls

    def rollout(self, u) -> tuple[list[np.ndarray], float]:
        """States visited (x_0 .. x_T) and the total cost."""
        u = self._check_dim(u)
        steps = u.reshape(self.horizon, self.n_controls)
        x = self.x0
        states = [x]
        total = 0.0
        for t in range(self.horizon):
            total += float(self.stage_cost(x, steps[t]))
            x = np.asarray(self.dynamics(x, steps[t]), dtype=float)
            states.append(x)
        total += float(self.terminal_cost(x))
        return states, total

    def evaluate(self, u) -> float:
        return self.rollout(u)[1]


def himmelblau_penalized(x, y, alpha: float):
    """Four-basin Himmelblau surface plus a quadratic pull toward (3, 2).

    The penalty leaves (3, 2) as the unique global minimum at value 0 while
    the other three basins survive as strictly positive local minima.
    Accepts scalars or arrays elementwise.
    """
    if alpha <= 0:
        raise ValueError(f"penalty coefficient alpha must be positive, got {alpha!r}")
    h = (x * x + y - 11.0) ** 2 + (x + y * y - 7.0) ** 2
    return h + alpha * ((x - 3.0) ** 2 + (y - 2.0) ** 2)


class HimmelblauProblem(Problem):
    """2-d multimodal benchmark with a unique global minimum at (3, 2)."""

    def __init__(self, alpha: float = 0.01):
        if alpha <= 0:
            raise ValueError(f"penalty coefficient alpha must be positive, got {alpha!r}")
        self.alpha = alpha

    @property
    def dim(self) -> int:
        return 2

    def evaluate(self, u) -> float:
        u = self._check_dim(u)
        return float(himmelblau_penalized(u[0], u[1], self.alpha))

    def evaluate_many(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if U.ndim != 2 or U.shape[1] != 2:
            raise ValueError(f"expected (N, 2) matrix, got {U.shape}")
        return himmelblau_penalized(U[:, 0], U[:, 1], self.alpha)

    def minimizer(self) -> ControlTrajectory:
        return ControlTrajectory(np.array([3.0, 2.0]))
