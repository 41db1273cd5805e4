"""Zero-order update rules behind one run loop.

Two families share the Population/consensus primitives from ``core``:

* consensus particle dynamics (``cbo_step``, ``cbs_step``, ``run_cbo``) move
  every particle toward the softmax-weighted consensus point and explore
  with noise proportional to each particle's distance from it;
* Gaussian-search methods (``mppi_update``, ``cma_update``, ``cem_update``,
  ``run_gaussian_method``) resample a parametric search distribution around
  a mean and move the mean (and, for CMA/CEM, the covariance) from the
  weighted samples.

Both runners emit the same per-iteration RunRecord schema so runs are
directly comparable.
"""

from __future__ import annotations

import concurrent.futures
import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    ControlTrajectory,
    CovarianceFactorizationError,
    Population,
    SoftmaxConfig,
    WeightVector,
    best_particle,
    consensus_point,
    softmax_weights,
)
from .rng import DRAW_SAMPLE, DRAW_STEP_NOISE, RngStream, particle_normals

ISOTROPIC = "isotropic"
ANISOTROPIC = "anisotropic"

_LAMBDA_DT_TOL = 1e-12


@dataclass(frozen=True)
class CboParams:
    """Consensus-dynamic coefficients.

    lambda_ is the drift decay rate, sigma0 the initial noise intensity,
    dt the Euler-Maruyama step, sigma_decay the per-iteration multiplicative
    decay of sigma. noise_mode selects the diffusion coefficient: Euclidean
    norm of (u - consensus) in isotropic mode, componentwise magnitude in
    anisotropic mode. rho_final, when set, ramps the softmax temperature
    linearly from softmax.rho to rho_final over a run.
    """

    lambda_: float
    sigma0: float
    dt: float
    sigma_decay: float = 1.0
    noise_mode: str = ISOTROPIC
    softmax: SoftmaxConfig = field(default_factory=lambda: SoftmaxConfig(1.0))
    rho_final: float | None = None

    def __post_init__(self) -> None:
        contraction = self.lambda_ * self.dt
        # lambda = 0 (pure diffusion) is accepted; only overshoot is rejected.
        if not (0.0 <= contraction <= 1.0 + _LAMBDA_DT_TOL):
            raise ValueError(
                f"lambda*dt must lie in [0, 1], got {contraction!r}"
            )
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.sigma0 < 0:
            raise ValueError(f"sigma0 must be nonnegative, got {self.sigma0!r}")
        if not (0.0 < self.sigma_decay <= 1.0):
            raise ValueError(
                f"sigma_decay must lie in (0, 1], got {self.sigma_decay!r}"
            )
        if self.noise_mode not in (ISOTROPIC, ANISOTROPIC):
            raise ValueError(f"unknown noise_mode {self.noise_mode!r}")
        if self.rho_final is not None and self.rho_final <= 0:
            raise ValueError(f"rho_final must be positive, got {self.rho_final!r}")


@dataclass(frozen=True)
class StoppingRule:
    """Stop on iteration budget, small consensus displacement, or a
    collapsed population, whichever comes first. Zero tolerances disable
    the corresponding check."""

    max_iterations: int
    consensus_tol: float = 0.0
    diameter_tol: float = 0.0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError(
                f"max_iterations must be at least 1, got {self.max_iterations}"
            )
        if self.consensus_tol < 0 or self.diameter_tol < 0:
            raise ValueError("stopping tolerances must be nonnegative")


@dataclass(frozen=True, eq=False)
class GaussianSearchState:
    """Mean and covariance of a Gaussian search distribution.

    ``cov`` is a full (dim, dim) matrix, or its diagonal as a (dim,) vector
    when ``diag`` is set. ``step`` is the scale/mixing rate alpha: sampling
    uses mean + step * A @ eps with cov = step**2 * A @ A.T, and CMA/CEM blend
    old and new statistics with weight step. ``elite_count`` is how many
    lowest-cost particles the CMA/CEM updates keep.
    """

    mean: np.ndarray
    cov: np.ndarray
    step: float
    elite_count: int
    diag: bool = False

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=float)
        cov = np.array(self.cov, dtype=float)
        if mean.ndim != 1 or mean.size == 0 or not np.all(np.isfinite(mean)):
            raise ValueError("mean must be a finite, non-empty 1-d vector")
        if self.diag:
            if cov.shape != mean.shape:
                raise ValueError(
                    f"diagonal covariance must have shape {mean.shape}, got {cov.shape}"
                )
            if np.any(cov < -1e-10):
                raise CovarianceFactorizationError(
                    f"diagonal covariance has negative entry {cov.min()!r}"
                )
        else:
            if cov.shape != (mean.size, mean.size):
                raise ValueError(
                    f"covariance must be ({mean.size}, {mean.size}), got {cov.shape}"
                )
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-8 * max(1.0, np.abs(cov).max())):
                raise ValueError("covariance must be symmetric")
            cov = (cov + cov.T) / 2.0
        if not np.all(np.isfinite(cov)):
            raise ValueError("covariance contains non-finite entries")
        if self.step < 0:
            raise ValueError(f"step must be nonnegative, got {self.step!r}")
        if self.elite_count < 1:
            raise ValueError(f"elite_count must be at least 1, got {self.elite_count}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def scale_matrix(self) -> np.ndarray:
        """L with cov = L @ L.T (equals step * A); (dim,) vector when diag.

        Cholesky when positive definite, symmetric-eigendecomposition
        fallback for semidefinite input. Eigenvalues below -1e-10 are
        rejected; tiny negatives from roundoff are clipped to zero.
        """
        if self.diag:
            neg = self.cov.min()
            if neg < -1e-10:
                raise CovarianceFactorizationError(
                    f"diagonal covariance has negative entry {neg!r}"
                )
            return np.sqrt(np.clip(self.cov, 0.0, None))
        try:
            return np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            eigvals, eigvecs = np.linalg.eigh(self.cov)
            if eigvals.min() < -1e-10:
                raise CovarianceFactorizationError(
                    f"covariance has negative eigenvalue {eigvals.min()!r}"
                ) from None
            return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))

    def factor(self) -> np.ndarray:
        """A with cov = step**2 * A @ A.T (triangular when cov is definite)."""
        scale = self.scale_matrix()
        if self.step > 0:
            return scale / self.step
        if np.any(scale != 0):
            raise CovarianceFactorizationError(
                "step is zero but covariance is nonzero; no factor exists"
            )
        return scale


@dataclass(frozen=True)
class IterationRow:
    iteration: int
    best_cost: float
    mean_cost: float
    consensus_cost: float
    population_diameter: float
    sigma_or_alpha: float
    wallclock_ms: float


@dataclass
class RunRecord:
    """Per-iteration trace of one optimizer run plus its final state.

    ``best_cost``/``best_controls`` track the running minimum over every
    particle ever evaluated, separately from the per-iteration best column.
    """

    rows: list[IterationRow]
    final_population: Population
    final_consensus: ControlTrajectory
    best_cost: float
    best_controls: ControlTrajectory

    def running_best_costs(self) -> np.ndarray:
        return np.minimum.accumulate([row.best_cost for row in self.rows])

    def final_best_cost(self) -> float:
        return self.rows[-1].best_cost


def evaluate_population(
    problem, pop: Population, threads: int = 1
) -> Population:
    """Evaluate per-particle costs, optionally across worker threads.

    The particle matrix is split into contiguous chunks assembled back in
    chunk order, so results are identical for any worker count.
    """
    U = pop.particles
    try:
        if threads <= 1:
            costs = np.asarray(problem.evaluate_many(U), dtype=float)
        else:
            chunks = np.array_split(U, threads)
            with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(problem.evaluate_many, chunks))
            costs = np.concatenate([np.asarray(p, dtype=float) for p in parts])
    except Exception as exc:
        raise RuntimeError(
            f"cost evaluation failed at iteration {pop.iteration} "
            f"(population of {pop.n} particles): {exc}"
        ) from exc
    return pop.with_costs(costs)


def _diffusion_scale(deviation: np.ndarray, noise_mode: str) -> np.ndarray:
    if noise_mode == ISOTROPIC:
        return np.linalg.norm(deviation, axis=1, keepdims=True)
    return np.abs(deviation)


def cbo_step(
    pop: Population,
    params: CboParams,
    rng: RngStream,
    sigma: float | None = None,
) -> Population:
    """One Euler-Maruyama step of the consensus dynamic.

    Each particle moves by -lambda*(u - consensus)*dt plus
    sigma*sqrt(dt)*D(u - consensus)*W with W a per-particle standard-normal
    vector drawn from the particle's own stream coordinates. Costs are
    invalidated and the iteration counter advances.
    """
    costs = pop.require_costs()
    if sigma is None:
        sigma = params.sigma0
    w = softmax_weights(costs, params.softmax)
    ubar = consensus_point(pop, w).values
    deviation = pop.particles - ubar
    noise = particle_normals(rng, pop.iteration, pop.n, pop.dim, DRAW_STEP_NOISE)
    drift = (params.lambda_ * params.dt) * deviation
    diffusion = (sigma * math.sqrt(params.dt)) * _diffusion_scale(
        deviation, params.noise_mode
    ) * noise
    return Population(
        pop.particles - drift + diffusion, costs=None, iteration=pop.iteration + 1
    )


def cbs_step(
    pop: Population, dt: float, softmax: SoftmaxConfig, rng: RngStream
) -> Population:
    """Resample every particle around the consensus with distance-scaled spread.

    This is the consensus dynamic at full drift (lambda*dt = 1) with
    sigma = sqrt(dt); it delegates to cbo_step so the two match draw for
    draw on a shared stream.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    params = CboParams(
        lambda_=1.0 / dt, sigma0=math.sqrt(dt), dt=dt, softmax=softmax
    )
    return cbo_step(pop, params, rng)


def decay_rate_threshold(sigma: float, dim: int) -> float:
    """Smallest drift rate for which the contraction exponent stays positive."""
    return dim * sigma * sigma / 2.0


def _ramped_rho(params: CboParams, r: int, max_iterations: int) -> float:
    if params.rho_final is None or max_iterations <= 1:
        return params.softmax.rho
    frac = r / (max_iterations - 1)
    return params.softmax.rho + (params.rho_final - params.softmax.rho) * frac


def run_cbo(
    problem,
    init: Population,
    params: CboParams,
    stop: StoppingRule,
    rng: RngStream,
    threads: int = 1,
) -> RunRecord:
    """Iterate evaluate -> consensus -> step until the stopping rule fires.

    sigma is multiplied by sigma_decay after every step, and the softmax
    temperature ramps linearly when rho_final is set. Emits one RunRecord
    row per evaluated iteration.
    """
    if init.dim != problem.dim:
        raise ValueError(
            f"population dimension {init.dim} does not match problem dimension {problem.dim}"
        )
    threshold = decay_rate_threshold(params.sigma0, problem.dim)
    if params.lambda_ <= threshold:
        warnings.warn(
            f"drift rate lambda={params.lambda_!r} is at or below the "
            f"contraction threshold {threshold!r} (= dim*sigma0^2/2); the "
            f"population is not guaranteed to contract until sigma decays",
            stacklevel=2,
        )
    pop = init
    sigma = params.sigma0
    rows: list[IterationRow] = []
    best_cost = math.inf
    best_controls: ControlTrajectory | None = None
    prev_consensus: np.ndarray | None = None
    final_consensus: ControlTrajectory | None = None

    for r in range(stop.max_iterations):
        t0 = time.perf_counter()
        pop = pop if pop.evaluated else evaluate_population(problem, pop, threads)
        costs = pop.costs
        rho_r = _ramped_rho(params, r, stop.max_iterations)
        step_params = replace(params, softmax=SoftmaxConfig(rho_r))
        w = softmax_weights(costs, step_params.softmax)
        ubar = consensus_point(pop, w)
        final_consensus = ubar
        consensus_cost = float(problem.evaluate(ubar.values))
        idx, it_best = best_particle(pop)
        if it_best < best_cost:
            best_cost = it_best
            best_controls = pop.particle(idx)
        diameter = pop.diameter()
        rows.append(
            IterationRow(
                iteration=pop.iteration,
                best_cost=it_best,
                mean_cost=float(costs.mean()),
                consensus_cost=consensus_cost,
                population_diameter=diameter,
                sigma_or_alpha=sigma,
                wallclock_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        if stop.diameter_tol > 0 and diameter < stop.diameter_tol:
            break
        if (
            stop.consensus_tol > 0
            and prev_consensus is not None
            and np.linalg.norm(ubar.values - prev_consensus) < stop.consensus_tol
        ):
            break
        prev_consensus = ubar.values
        pop = cbo_step(pop, step_params, rng, sigma=sigma)
        sigma *= params.sigma_decay

    return RunRecord(
        rows=rows,
        final_population=pop,
        final_consensus=final_consensus,
        best_cost=best_cost,
        best_controls=best_controls,
    )


def sample_gaussian_population(
    state: GaussianSearchState, n: int, rng: RngStream, iteration: int = 0
) -> Population:
    """Draw n particles from the search distribution, one substream each."""
    if n < 1:
        raise ValueError(f"population size must be at least 1, got {n}")
    scale = state.scale_matrix()
    eps = particle_normals(rng, iteration, n, state.dim, DRAW_SAMPLE)
    if state.diag:
        particles = state.mean + eps * scale
    else:
        particles = state.mean + eps @ scale.T
    return Population(particles, costs=None, iteration=iteration)


def mppi_update(
    state: GaussianSearchState,
    problem,
    n: int,
    softmax: SoftmaxConfig,
    rng: RngStream,
    iteration: int = 0,
    population: Population | None = None,
    threads: int = 1,
) -> GaussianSearchState:
    """Move the mean to the softmax-weighted average of sampled controls.

    The covariance is held fixed. A pre-built population (evaluated or not)
    can be supplied to share samples with other methods.
    """
    pop = population
    if pop is None:
        pop = sample_gaussian_population(state, n, rng, iteration)
    if not pop.evaluated:
        pop = evaluate_population(problem, pop, threads)
    w = softmax_weights(pop.costs, softmax)
    new_mean = consensus_point(pop, w).values
    return replace(state, mean=new_mean)


def _elite_update(
    state: GaussianSearchState,
    pop: Population,
    alpha: float,
    elite_weights: WeightVector,
    elite_idx: np.ndarray,
) -> GaussianSearchState:
    w = elite_weights.weights
    y = pop.particles[elite_idx] - state.mean
    new_mean = state.mean + alpha * (w @ y)
    if state.diag:
        new_cov = (1.0 - alpha) * state.cov + alpha * (w @ (y * y))
    else:
        weighted = (y * w[:, None]).T @ y
        new_cov = (1.0 - alpha) * state.cov + alpha * weighted
        new_cov = (new_cov + new_cov.T) / 2.0
    return replace(state, mean=new_mean, cov=new_cov)


def _elite_indices(costs: np.ndarray, elite_count: int) -> np.ndarray:
    # Stable sort so cost ties keep the lowest particle index.
    return np.argsort(costs, kind="stable")[:elite_count]


def cma_update(
    state: GaussianSearchState,
    pop: Population,
    alpha: float,
    softmax: SoftmaxConfig,
) -> GaussianSearchState:
    """Blend mean and covariance toward softmax-weighted elite statistics.

    The elite set is the elite_count lowest-cost particles;
    y_i = u_i - mean measures each elite's deviation from the current mean.
    mean moves by alpha * sum(w_i y_i) and the covariance blends toward
    sum(w_i y_i y_i^T), staying symmetric PSD as a convex combination.
    """
    costs = pop.require_costs()
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    if state.elite_count > pop.n:
        raise ValueError(
            f"elite_count {state.elite_count} exceeds population size {pop.n}"
        )
    idx = _elite_indices(costs, state.elite_count)
    w = softmax_weights(costs[idx], softmax)
    return _elite_update(state, pop, alpha, w, idx)


def cem_update(
    state: GaussianSearchState, pop: Population, alpha: float
) -> GaussianSearchState:
    """cma_update with uniform weights over the elite set."""
    costs = pop.require_costs()
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must lie in [0, 1], got {alpha!r}")
    if state.elite_count > pop.n:
        raise ValueError(
            f"elite_count {state.elite_count} exceeds population size {pop.n}"
        )
    idx = _elite_indices(costs, state.elite_count)
    w = WeightVector(np.full(state.elite_count, 1.0 / state.elite_count))
    return _elite_update(state, pop, alpha, w, idx)


GAUSSIAN_METHODS = ("mppi", "cma", "cem")


def run_gaussian_method(
    method: str,
    problem,
    state0: GaussianSearchState,
    n: int,
    stop: StoppingRule,
    rng: RngStream,
    softmax: SoftmaxConfig | None = None,
    init_population: Population | None = None,
    threads: int = 1,
) -> RunRecord:
    """Iterate sample -> evaluate -> update for one Gaussian-search method.

    When init_population is given it replaces the iteration-0 sample so
    several methods can consume an identical starting population. Emits the
    same RunRecord schema as run_cbo; the consensus column holds the cost of
    the freshly updated mean.
    """
    if method not in GAUSSIAN_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {GAUSSIAN_METHODS}")
    if state0.dim != problem.dim:
        raise ValueError(
            f"search dimension {state0.dim} does not match problem dimension {problem.dim}"
        )
    if softmax is None:
        softmax = SoftmaxConfig(1.0)
    if init_population is not None and init_population.dim != problem.dim:
        raise ValueError("initial population dimension does not match problem")

    state = state0
    rows: list[IterationRow] = []
    best_cost = math.inf
    best_controls: ControlTrajectory | None = None
    pop: Population | None = None

    for r in range(stop.max_iterations):
        t0 = time.perf_counter()
        if r == 0 and init_population is not None:
            pop = init_population
        else:
            pop = sample_gaussian_population(state, n, rng, iteration=r)
        if not pop.evaluated:
            pop = evaluate_population(problem, pop, threads)
        prev_mean = state.mean
        if method == "mppi":
            state = mppi_update(
                state, problem, n, softmax, rng, iteration=r, population=pop
            )
        elif method == "cma":
            state = cma_update(state, pop, alpha=state.step, softmax=softmax)
        else:
            state = cem_update(state, pop, alpha=state.step)
        consensus_cost = float(problem.evaluate(state.mean))
        idx, it_best = best_particle(pop)
        if it_best < best_cost:
            best_cost = it_best
            best_controls = pop.particle(idx)
        diameter = pop.diameter()
        rows.append(
            IterationRow(
                iteration=r,
                best_cost=it_best,
                mean_cost=float(pop.costs.mean()),
                consensus_cost=consensus_cost,
                population_diameter=diameter,
                sigma_or_alpha=state.step,
                wallclock_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
        if stop.diameter_tol > 0 and diameter < stop.diameter_tol:
            break
        if (
            stop.consensus_tol > 0
            and np.linalg.norm(state.mean - prev_mean) < stop.consensus_tol
        ):
            break

    return RunRecord(
        rows=rows,
        final_population=pop,
        final_consensus=ControlTrajectory(state.mean),
        best_cost=best_cost,
        best_controls=best_controls,
    )
