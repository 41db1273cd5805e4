"""Quantities that make the convergence story checkable at runtime.

Covers the population's Lyapunov energy around a known optimum, Monte-Carlo
estimates of the smoothed objective (plain mean and log-exponential), the
drift-rate threshold and minimum-iteration bound implied by the contraction
exponent 2*lambda - dim*sigma^2, and sampling-verifiable closed forms for
the Gaussian mean-Fisher information and same-covariance Gaussian KL.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ControlTrajectory, CovarianceFactorizationError, Population
from .rng import DRAW_MONTE_CARLO, RngStream


@dataclass(frozen=True)
class SurrogateEstimate:
    """Monte-Carlo estimate with a plug-in standard error."""

    value: float
    standard_error: float
    sample_count: int

    def __post_init__(self) -> None:
        if self.standard_error < 0:
            raise ValueError("standard error must be nonnegative")
        if self.sample_count < 1:
            raise ValueError("sample count must be at least 1")


def lyapunov_v(pop: Population, u_star: ControlTrajectory) -> float:
    """Mean half squared distance of the population to a reference point."""
    if u_star.dim != pop.dim:
        raise ValueError(
            f"reference dimension {u_star.dim} does not match population {pop.dim}"
        )
    sq = ((pop.particles - u_star.values) ** 2).sum(axis=1)
    return float(0.5 * sq.mean())


def _cholesky_or_raise(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValueError(f"covariance must be square, got {cov.shape}")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise CovarianceFactorizationError(
            f"covariance is not positive definite: {exc}"
        ) from exc


def _gaussian_samples(mean, cov, m: int, rng: RngStream) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    L = _cholesky_or_raise(cov)
    eps = rng.normal((m, mean.size), draw=DRAW_MONTE_CARLO)
    return mean + eps @ L.T


def surrogate_mc(problem, mean, cov, m: int, rng: RngStream) -> SurrogateEstimate:
    """Sample average of the cost under a Gaussian over controls."""
    if m < 2:
        raise ValueError(f"need at least 2 samples, got {m}")
    xs = _gaussian_samples(mean, cov, m, rng)
    costs = np.asarray(problem.evaluate_many(xs), dtype=float)
    bad = ~np.isfinite(costs)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(
            f"non-finite cost {costs[i]!r} at sample {i}: {xs[i].tolist()}"
        )
    return SurrogateEstimate(
        value=float(costs.mean()),
        standard_error=float(costs.std(ddof=1) / math.sqrt(m)),
        sample_count=m,
    )


def log_surrogate_mc(
    problem, mean, cov, rho: float, m: int, rng: RngStream
) -> SurrogateEstimate:
    """-(1/rho) * log of the sample average of exp(-rho * cost).

    Uses the same stream coordinates as surrogate_mc, so both estimates can
    be compared on identical samples. Computed max-shifted, so large rho is
    safe; as rho grows the value approaches the minimum sampled cost. The
    standard error is the delta-method propagation through the log.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho!r}")
    if m < 2:
        raise ValueError(f"need at least 2 samples, got {m}")
    xs = _gaussian_samples(mean, cov, m, rng)
    costs = np.asarray(problem.evaluate_many(xs), dtype=float)
    bad = ~np.isfinite(costs)
    if bad.any():
        i = int(np.argmax(bad))
        raise ValueError(
            f"non-finite cost {costs[i]!r} at sample {i}: {xs[i].tolist()}"
        )
    a = -rho * costs
    shift = a.max()
    scaled = np.exp(a - shift)
    mean_scaled = scaled.mean()
    value = -(shift + math.log(mean_scaled)) / rho
    se = float(scaled.std(ddof=1) / math.sqrt(m) / mean_scaled / rho)
    return SurrogateEstimate(value=float(value), standard_error=se, sample_count=m)


def check_lambda(sigma: float, n_a: int, horizon: int) -> float:
    """Drift-rate threshold n_a*T*sigma^2/2.

    Below this value the contraction exponent 2*lambda - n_a*T*sigma^2 is
    non-positive and the population is not guaranteed to collapse.
    """
    if sigma < 0 or n_a < 1 or horizon < 1:
        raise ValueError("sigma must be nonnegative and n_a, horizon positive")
    return n_a * horizon * sigma * sigma / 2.0


@dataclass(frozen=True)
class DecayParams:
    """Inputs of the minimum-iteration bound.

    theta in [0, 1) is the slack factor on the decay exponent; v0 is the
    initial Lyapunov energy and v_floor in (0, v0] the target energy.
    """

    lambda_: float
    sigma: float
    n_a: int
    horizon: int
    theta: float
    v0: float
    v_floor: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.theta < 1.0):
            raise ValueError(f"theta must lie in [0, 1), got {self.theta!r}")
        if self.v0 <= 0:
            raise ValueError(f"v0 must be positive, got {self.v0!r}")
        if not (0.0 < self.v_floor <= self.v0):
            raise ValueError(
                f"v_floor must lie in (0, v0], got {self.v_floor!r} with v0 {self.v0!r}"
            )
        if self.sigma < 0 or self.n_a < 1 or self.horizon < 1:
            raise ValueError("sigma must be nonnegative and n_a, horizon positive")

    @property
    def decay_denominator(self) -> float:
        return 2.0 * self.lambda_ - self.n_a * self.horizon * self.sigma**2


def min_iterations_estimate(p: DecayParams) -> float:
    """Iterations needed to drive the Lyapunov energy from v0 down to v_floor.

    log(v0 / v_floor) / ((1 - theta) * (2*lambda - n_a*T*sigma^2)); requires
    the decay denominator to be positive.
    """
    denom = p.decay_denominator
    if denom <= 0:
        threshold = check_lambda(p.sigma, p.n_a, p.horizon)
        raise ValueError(
            f"decay exponent is non-positive: lambda={p.lambda_!r} must exceed "
            f"n_a*T*sigma^2/2 = {threshold!r}"
        )
    return math.log(p.v0 / p.v_floor) / ((1.0 - p.theta) * denom)


def gaussian_kl_same_cov(mu0, mu1, cov) -> float:
    """KL divergence between equal-covariance Gaussians: 0.5 * d^T cov^-1 d."""
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    if mu0.shape != mu1.shape or mu0.ndim != 1:
        raise ValueError("means must be 1-d vectors of equal length")
    L = _cholesky_or_raise(cov)
    delta = mu1 - mu0
    half = np.linalg.solve(L, delta)
    return float(0.5 * (half @ half))


def gaussian_kl_same_cov_mc(mu0, mu1, cov, m: int, rng: RngStream) -> SurrogateEstimate:
    """Sampling estimate of the same KL via the mean log density ratio.

    Draws from the first Gaussian and averages log p0(x) - log p1(x), which
    needs only the quadratic forms since the normalizers cancel.
    """
    if m < 2:
        raise ValueError(f"need at least 2 samples, got {m}")
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    L = _cholesky_or_raise(cov)
    eps = rng.normal((m, mu0.size), draw=DRAW_MONTE_CARLO)
    xs = mu0 + eps @ L.T
    z0 = np.linalg.solve(L, (xs - mu0).T)
    z1 = np.linalg.solve(L, (xs - mu1).T)
    ratios = 0.5 * ((z1**2).sum(axis=0) - (z0**2).sum(axis=0))
    return SurrogateEstimate(
        value=float(ratios.mean()),
        standard_error=float(ratios.std(ddof=1) / math.sqrt(m)),
        sample_count=m,
    )


def empirical_fisher_gaussian_mean(cov, m: int, rng: RngStream) -> np.ndarray:
    """Monte-Carlo outer product of Gaussian mean-score vectors.

    Scores are cov^-1 (x - mu) for x drawn from the Gaussian; their average
    outer product converges to cov^-1. The result is symmetrized exactly.
    """
    cov = np.asarray(cov, dtype=float)
    dim = cov.shape[0]
    if m < 10 * dim * dim:
        raise ValueError(
            f"need at least 10*dim^2 = {10 * dim * dim} samples for a stable "
            f"estimate, got {m}"
        )
    L = _cholesky_or_raise(cov)
    eps = rng.normal((m, dim), draw=DRAW_MONTE_CARLO)
    xs = eps @ L.T  # centered draws
    scores = np.linalg.solve(cov, xs.T).T
    fisher = scores.T @ scores / m
    return (fisher + fisher.T) / 2.0
