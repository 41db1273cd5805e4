"""Point-mass tunnel navigation benchmark.

A first-order agent (velocity is the control, no inertia) must travel from a
start point into a goal tunnel whose only opening faces upward: its left wall
extends high above the opening, the right wall is shorter, and both reach the
bottom of the arena, so greedy motion toward the goal pins the agent against
the left wall. Randomly placed disk obstacles penalize (but do not block) the
approach. Walls block motion: a step whose segment would cross a wall leaves
the agent in place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .problems import Problem
from .rng import DRAW_ENV_GEOMETRY, RngStream


class EnvironmentGenerationError(RuntimeError):
    """Obstacle placement could not satisfy the exclusion constraints."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle; containment is strict (boundary is outside)."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise ValueError(f"degenerate rectangle {self}")

    def contains(self, q) -> bool:
        x, y = float(q[0]), float(q[1])
        return self.xmin < x < self.xmax and self.ymin < y < self.ymax

    def contains_many(self, Q: np.ndarray) -> np.ndarray:
        return (
            (Q[..., 0] > self.xmin)
            & (Q[..., 0] < self.xmax)
            & (Q[..., 1] > self.ymin)
            & (Q[..., 1] < self.ymax)
        )

    def distance(self, q) -> float:
        dx = max(self.xmin - q[0], 0.0, q[0] - self.xmax)
        dy = max(self.ymin - q[1], 0.0, q[1] - self.ymax)
        return float(np.hypot(dx, dy))


# Canonical arena, in meters. The tunnel sits right of center with its
# opening at the top; both walls drop to the arena floor so the only way in
# is over a wall top (over the shorter right wall, or higher over the left).
ARENA = Rect(-5.0, -5.0, 5.0, 5.0)
DEFAULT_START = (-3.0, 0.0)
DEFAULT_GOAL = (1.5, -0.75)
DEFAULT_TUNNEL = Rect(0.5, -2.0, 2.5, 0.5)
DEFAULT_WALLS = (
    ((0.5, -5.0), (0.5, 2.5)),  # left wall, extends above the opening
    ((2.5, -5.0), (2.5, 1.0)),  # shorter right wall
)
DEFAULT_DT = 0.25
DEFAULT_GAMMA_V = 10.0
DEFAULT_PENALTY = 1000.0


@dataclass(frozen=True, eq=False)
class PointMassEnv:
    """Immutable tunnel-world geometry, dynamics step size, and penalties."""

    start: np.ndarray
    goal: np.ndarray
    dt: float
    gamma_v: float
    walls: np.ndarray  # (W, 2, 2) segment endpoints
    tunnel: Rect
    obstacles: np.ndarray  # (K, 3) rows of (cx, cy, radius); K may be 0
    penalty_tunnel: float = DEFAULT_PENALTY
    penalty_obstacle_each: float = DEFAULT_PENALTY
    seed: int | None = None

    def __post_init__(self) -> None:
        start = np.array(self.start, dtype=float).reshape(2)
        goal = np.array(self.goal, dtype=float).reshape(2)
        walls = np.array(self.walls, dtype=float).reshape(-1, 2, 2)
        obstacles = np.array(self.obstacles, dtype=float).reshape(-1, 3)
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.gamma_v < 0:
            raise ValueError(f"gamma_v must be nonnegative, got {self.gamma_v!r}")
        if not self.tunnel.contains(goal):
            raise ValueError(f"goal {goal} must lie inside the tunnel {self.tunnel}")
        if self.tunnel.contains(start):
            raise ValueError(f"start {start} must lie outside the tunnel")
        if obstacles.size:
            if np.any(obstacles[:, 2] <= 0):
                raise ValueError("obstacle radii must be positive")
            gaps = np.hypot(*(obstacles[:, :2] - start).T)
            if np.any(gaps < obstacles[:, 2]):
                raise ValueError("an obstacle contains the start point")
        for arr in (start, goal, walls, obstacles):
            arr.setflags(write=False)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "obstacles", obstacles)


def default_env(obstacles=(), dt: float = DEFAULT_DT, seed: int | None = None) -> PointMassEnv:
    """Canonical geometry with the given obstacles."""
    return PointMassEnv(
        start=DEFAULT_START,
        goal=DEFAULT_GOAL,
        dt=dt,
        gamma_v=DEFAULT_GAMMA_V,
        walls=np.array(DEFAULT_WALLS, dtype=float),
        tunnel=DEFAULT_TUNNEL,
        obstacles=np.array(obstacles, dtype=float).reshape(-1, 3),
        seed=seed,
    )


def _cross(ox, oy, ax, ay, bx, by):
    """Signed area orientation of (a - o) x (b - o); broadcasts."""
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def moves_blocked(P0: np.ndarray, P1: np.ndarray, walls: np.ndarray) -> np.ndarray:
    """Whether each move segment P0[i] -> P1[i] touches any wall segment.

    Touching counts as blocked; collinear overlap is resolved with a
    bounding-box test. Shapes: P0, P1 are (N, 2); walls is (W, 2, 2).
    """
    if walls.size == 0:
        return np.zeros(P0.shape[0], dtype=bool)
    ax, ay = walls[:, 0, 0][:, None], walls[:, 0, 1][:, None]  # (W, 1)
    bx, by = walls[:, 1, 0][:, None], walls[:, 1, 1][:, None]
    px, py = P0[None, :, 0], P0[None, :, 1]  # (1, N)
    qx, qy = P1[None, :, 0], P1[None, :, 1]

    d1 = _cross(ax, ay, bx, by, px, py)
    d2 = _cross(ax, ay, bx, by, qx, qy)
    d3 = _cross(px, py, qx, qy, ax, ay)
    d4 = _cross(px, py, qx, qy, bx, by)

    collinear = (d1 == 0) & (d2 == 0) & (d3 == 0) & (d4 == 0)
    crossing = (d1 * d2 <= 0) & (d3 * d4 <= 0) & ~collinear
    bbox = (
        (np.minimum(px, qx) <= np.maximum(ax, bx))
        & (np.maximum(px, qx) >= np.minimum(ax, bx))
        & (np.minimum(py, qy) <= np.maximum(ay, by))
        & (np.maximum(py, qy) >= np.minimum(ay, by))
    )
    return (crossing | (collinear & bbox)).any(axis=0)


def segments_intersect(p0, p1, q0, q1) -> bool:
    """Whether segments p0-p1 and q0-q1 share a point (touching included)."""
    P0 = np.asarray(p0, float)[None, :]
    P1 = np.asarray(p1, float)[None, :]
    wall = np.array([[q0, q1]], dtype=float)
    return bool(moves_blocked(P0, P1, wall)[0])


def point_mass_step(q, v, env: PointMassEnv) -> np.ndarray:
    """One Euler step q + v*dt, rejected entirely if it would cross a wall."""
    q = np.asarray(q, dtype=float).reshape(2)
    v = np.asarray(v, dtype=float).reshape(2)
    candidate = q + v * env.dt
    if moves_blocked(q[None, :], candidate[None, :], env.walls)[0]:
        return q.copy()
    return candidate


def in_tunnel(q, env: PointMassEnv) -> bool:
    """Strictly inside the tunnel rectangle; the boundary counts as outside."""
    return env.tunnel.contains(q)


def obstacle_hits(positions, env: PointMassEnv) -> int:
    """Number of distinct obstacles some position lies strictly inside."""
    Q = np.asarray(positions, dtype=float).reshape(-1, 2)
    if env.obstacles.shape[0] == 0:
        return 0
    centers = env.obstacles[:, :2]
    radii = env.obstacles[:, 2]
    d2 = ((Q[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)  # (T, K)
    return int((d2 < radii**2).any(axis=0).sum())


def rollout_many(U: np.ndarray, env: PointMassEnv) -> tuple[np.ndarray, np.ndarray]:
    """Simulate a whole population at once.

    U is (N, 2*T), rows interpreted as (vx, vy) pairs per step. Returns the
    (N, T, 2) positions after each step and the (N,) total costs: summed
    squared goal distance, gamma_v-weighted squared speed, a flat penalty if
    the final position misses the tunnel, and one flat penalty per distinct
    obstacle entered (dwelling inside costs no extra).
    """
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] % 2 != 0 or U.shape[1] == 0:
        raise ValueError(f"controls must be (N, 2*T) with T >= 1, got {U.shape}")
    n, horizon = U.shape[0], U.shape[1] // 2
    V = U.reshape(n, horizon, 2)
    Q = np.empty((n, horizon, 2))
    q = np.broadcast_to(env.start, (n, 2)).copy()
    for t in range(horizon):
        candidate = q + V[:, t, :] * env.dt
        blocked = moves_blocked(q, candidate, env.walls)
        q = np.where(blocked[:, None], q, candidate)
        Q[:, t] = q

    dist_cost = ((Q - env.goal) ** 2).sum(axis=-1).sum(axis=-1)
    vel_cost = env.gamma_v * (V**2).sum(axis=-1).sum(axis=-1)
    miss = ~env.tunnel.contains_many(Q[:, -1, :])
    tunnel_cost = env.penalty_tunnel * miss.astype(float)
    if env.obstacles.shape[0]:
        centers = env.obstacles[:, :2]
        radii = env.obstacles[:, 2]
        d2 = ((Q[:, :, None, :] - centers[None, None, :, :]) ** 2).sum(axis=-1)
        hits = (d2 < radii**2).any(axis=1).sum(axis=1)  # distinct obstacles
        obstacle_cost = env.penalty_obstacle_each * hits.astype(float)
    else:
        obstacle_cost = np.zeros(n)
    return Q, dist_cost + vel_cost + tunnel_cost + obstacle_cost


def point_mass_rollout(u, env: PointMassEnv) -> tuple[np.ndarray, float]:
    """Positions after each step and the total cost of one control vector."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or u.size % 2 != 0 or u.size == 0:
        raise ValueError(f"control vector length must be even and positive, got {u.shape}")
    Q, cost = rollout_many(u[None, :], env)
    return Q[0], float(cost[0])


@dataclass(frozen=True)
class CostBreakdown:
    distance: float
    velocity: float
    tunnel_penalty: float
    obstacle_penalty: float

    @property
    def total(self) -> float:
        return self.distance + self.velocity + self.tunnel_penalty + self.obstacle_penalty


def decompose_cost(u, env: PointMassEnv) -> CostBreakdown:
    """Rollout cost split into its four independently recomputed terms."""
    positions, _ = point_mass_rollout(u, env)
    V = np.asarray(u, dtype=float).reshape(-1, 2)
    distance = float(((positions - env.goal) ** 2).sum())
    velocity = float(env.gamma_v * (V**2).sum())
    tunnel_penalty = 0.0 if in_tunnel(positions[-1], env) else env.penalty_tunnel
    obstacle_penalty = env.penalty_obstacle_each * obstacle_hits(positions, env)
    return CostBreakdown(distance, velocity, tunnel_penalty, obstacle_penalty)


class PointMassProblem(Problem):
    """Tunnel navigation as a flat (vx, vy) decision vector of length 2*T."""

    def __init__(self, env: PointMassEnv, horizon: int = 100):
        if horizon < 1:
            raise ValueError(f"horizon must be positive, got {horizon}")
        self.env = env
        self.horizon = horizon

    @property
    def dim(self) -> int:
        return 2 * self.horizon

    def evaluate(self, u) -> float:
        u = self._check_dim(u)
        return float(rollout_many(u[None, :], self.env)[1][0])

    def evaluate_many(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=float)
        if U.ndim != 2 or U.shape[1] != self.dim:
            raise ValueError(f"expected (N, {self.dim}) matrix, got {U.shape}")
        return rollout_many(U, self.env)[1]


@dataclass(frozen=True)
class EnvGenConfig:
    """Random obstacle placement: how many, how big, where, and what to avoid."""

    seed: int
    obstacle_count: tuple[int, int] = (8, 8)
    radius_range: tuple[float, float] = (0.3, 0.6)
    region: Rect = field(default_factory=lambda: Rect(-4.5, -2.5, 4.5, 4.5))
    start_clearance: float = 0.8
    goal_clearance: float = 0.8
    tunnel_clearance: float = 0.3
    max_attempts: int = 200

    def __post_init__(self) -> None:
        lo, hi = self.obstacle_count
        if not (0 <= lo <= hi):
            raise ValueError(f"bad obstacle count range {self.obstacle_count}")
        rlo, rhi = self.radius_range
        if not (0 < rlo <= rhi):
            raise ValueError(f"bad radius range {self.radius_range}")
        if min(self.start_clearance, self.goal_clearance, self.tunnel_clearance) < 0:
            raise ValueError("clearances must be nonnegative")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")


def generate_environment(cfg: EnvGenConfig, base: PointMassEnv | None = None) -> PointMassEnv:
    """Sample obstacles into the base geometry, deterministically per seed.

    Each obstacle disk must keep its clearance from the start point, the
    goal, and the tunnel rectangle, and its center must lie in the placement
    region. Rejection sampling; gives up after max_attempts tries per
    obstacle.
    """
    env = base if base is not None else default_env()
    gen = RngStream(cfg.seed).generator(draw=DRAW_ENV_GEOMETRY)
    lo, hi = cfg.obstacle_count
    count = int(gen.integers(lo, hi, endpoint=True))
    placed: list[tuple[float, float, float]] = []
    for _ in range(count):
        for attempt in range(cfg.max_attempts):
            cx = float(gen.uniform(cfg.region.xmin, cfg.region.xmax))
            cy = float(gen.uniform(cfg.region.ymin, cfg.region.ymax))
            r = float(gen.uniform(cfg.radius_range[0], cfg.radius_range[1]))
            if np.hypot(cx - env.start[0], cy - env.start[1]) < r + cfg.start_clearance:
                continue
            if np.hypot(cx - env.goal[0], cy - env.goal[1]) < r + cfg.goal_clearance:
                continue
            if env.tunnel.distance((cx, cy)) < r + cfg.tunnel_clearance:
                continue
            placed.append((cx, cy, r))
            break
        else:
            raise EnvironmentGenerationError(
                f"could not place obstacle {len(placed) + 1}/{count} after "
                f"{cfg.max_attempts} attempts; exclusion zones may cover the "
                f"placement region {cfg.region}"
            )
    return replace(
        env,
        obstacles=np.array(placed, dtype=float).reshape(-1, 3),
        seed=cfg.seed,
    )


def env_to_dict(env: PointMassEnv) -> dict:
    return {
        "start": env.start.tolist(),
        "goal": env.goal.tolist(),
        "dt": env.dt,
        "gamma_v": env.gamma_v,
        "walls": env.walls.tolist(),
        "tunnel": {
            "xmin": env.tunnel.xmin,
            "ymin": env.tunnel.ymin,
            "xmax": env.tunnel.xmax,
            "ymax": env.tunnel.ymax,
        },
        "obstacles": env.obstacles.tolist(),
        "penalty_tunnel": env.penalty_tunnel,
        "penalty_obstacle_each": env.penalty_obstacle_each,
        "seed": env.seed,
    }


def env_from_dict(d: dict) -> PointMassEnv:
    t = d["tunnel"]
    return PointMassEnv(
        start=d["start"],
        goal=d["goal"],
        dt=d["dt"],
        gamma_v=d["gamma_v"],
        walls=np.array(d["walls"], dtype=float),
        tunnel=Rect(t["xmin"], t["ymin"], t["xmax"], t["ymax"]),
        obstacles=np.array(d["obstacles"], dtype=float).reshape(-1, 3),
        penalty_tunnel=d["penalty_tunnel"],
        penalty_obstacle_each=d["penalty_obstacle_each"],
        seed=d["seed"],
    )


def save_env(env: PointMassEnv, path) -> None:
    with open(path, "w") as fh:
        json.dump(env_to_dict(env), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_env(path) -> PointMassEnv:
    with open(path) as fh:
        return env_from_dict(json.load(fh))
