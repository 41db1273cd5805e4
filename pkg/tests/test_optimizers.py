import math

import numpy as np
import pytest

from zotraj.core import (
    CovarianceFactorizationError,
    Population,
    SoftmaxConfig,
    UnevaluatedPopulationError,
    consensus_point,
    softmax_weights,
)
from zotraj.optimizers import (
    CboParams,
    GaussianSearchState,
    StoppingRule,
    cbo_step,
    cbs_step,
    cem_update,
    cma_update,
    evaluate_population,
    mppi_update,
    run_cbo,
    run_gaussian_method,
    sample_gaussian_population,
)
from zotraj.problems import Problem
from zotraj.rng import RngStream


class Quadratic(Problem):
    """sum(u^2); counts evaluation calls for loop-contract tests."""

    def __init__(self, dim):
        self._dim = dim
        self.calls = 0

    @property
    def dim(self):
        return self._dim

    def evaluate(self, u):
        return float(np.sum(np.asarray(u) ** 2))

    def evaluate_many(self, U):
        self.calls += 1
        return (np.asarray(U) ** 2).sum(axis=1)


def evaluated(particles, costs=None, iteration=0):
    particles = np.asarray(particles, dtype=float)
    if costs is None:
        costs = np.zeros(particles.shape[0])
    return Population(particles, costs=costs, iteration=iteration)


class TestCboParams:
    def test_overshoot_rejected(self):
        with pytest.raises(ValueError):
            CboParams(lambda_=3.0, sigma0=1.0, dt=0.5)

    def test_pure_diffusion_allowed(self):
        CboParams(lambda_=0.0, sigma0=1.0, dt=1.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(lambda_=1.0, sigma0=-1.0, dt=0.5),
            dict(lambda_=1.0, sigma0=1.0, dt=0.0),
            dict(lambda_=1.0, sigma0=1.0, dt=0.5, sigma_decay=0.0),
            dict(lambda_=1.0, sigma0=1.0, dt=0.5, sigma_decay=1.5),
            dict(lambda_=1.0, sigma0=1.0, dt=0.5, noise_mode="radial"),
        ],
    )
    def test_invalid_params(self, kwargs):
        with pytest.raises(ValueError):
            CboParams(**kwargs)


class TestCboStep:
    def test_drift_only_arithmetic(self):
        pop = evaluated([[2.0], [-2.0]])
        params = CboParams(lambda_=1.0, sigma0=0.0, dt=0.5)
        stepped = cbo_step(pop, params, RngStream(0))
        assert np.allclose(stepped.particles, [[1.0], [-1.0]])
        assert stepped.iteration == 1 and stepped.costs is None

    def test_full_contraction_collapses_to_consensus(self):
        pop = evaluated([[2.0, 1.0], [-2.0, 5.0], [0.0, 0.0]])
        params = CboParams(lambda_=2.0, sigma0=0.0, dt=0.5)
        stepped = cbo_step(pop, params, RngStream(0))
        ubar = consensus_point(pop, softmax_weights(pop.costs, params.softmax)).values
        assert np.allclose(stepped.particles, ubar, atol=1e-15)

    def test_diffusion_variance_matches_coefficient(self):
        # half the particles sit at 4, half at -2, equal costs: the consensus
        # is 1 and every deviation has magnitude 3, so with lambda=0, sigma=1,
        # dt=1 each particle moves by 3 * standard normal.
        n = 100_000
        particles = np.concatenate([np.full(n // 2, 4.0), np.full(n // 2, -2.0)])
        pop = evaluated(particles[:, None])
        params = CboParams(lambda_=0.0, sigma0=1.0, dt=1.0)
        stepped = cbo_step(pop, params, RngStream(123))
        moves = stepped.particles[:, 0] - particles
        assert abs(moves.mean()) < 0.05
        assert np.var(moves) == pytest.approx(9.0, rel=0.03)

    def test_degenerate_population_fixed_point(self):
        pop = evaluated(np.full((5, 3), 2.5))
        params = CboParams(lambda_=1.0, sigma0=5.0, dt=0.5)
        stepped = cbo_step(pop, params, RngStream(0))
        assert np.array_equal(stepped.particles, pop.particles)

    def test_anisotropic_noise_is_componentwise(self):
        # deviation (3, 0): anisotropic noise leaves the flat coordinate
        # untouched, isotropic noise spreads it with the full norm
        pop = evaluated([[4.0, 1.0], [-2.0, 1.0]])
        iso = cbo_step(
            pop, CboParams(lambda_=0.0, sigma0=1.0, dt=1.0), RngStream(5)
        )
        aniso = cbo_step(
            pop,
            CboParams(lambda_=0.0, sigma0=1.0, dt=1.0, noise_mode="anisotropic"),
            RngStream(5),
        )
        assert np.array_equal(aniso.particles[:, 1], pop.particles[:, 1])
        assert not np.array_equal(iso.particles[:, 1], pop.particles[:, 1])

    def test_requires_costs(self):
        with pytest.raises(UnevaluatedPopulationError):
            cbo_step(
                Population([[0.0]]),
                CboParams(lambda_=1.0, sigma0=0.0, dt=0.5),
                RngStream(0),
            )

    def test_exact_pairwise_contraction_at_zero_noise(self):
        gen = np.random.default_rng(17)
        for _ in range(100):
            n = int(gen.integers(2, 12))
            dim = int(gen.integers(1, 6))
            pop = evaluated(gen.uniform(-10, 10, (n, dim)), costs=gen.uniform(0, 5, n))
            lam_dt = float(gen.uniform(0.05, 1.0))
            params = CboParams(lambda_=lam_dt, sigma0=0.0, dt=1.0)
            stepped = cbo_step(pop, params, RngStream(0))
            before = np.linalg.norm(
                pop.particles[:, None, :] - pop.particles[None, :, :], axis=-1
            )
            after = np.linalg.norm(
                stepped.particles[:, None, :] - stepped.particles[None, :, :], axis=-1
            )
            mask = before > 0
            ratio = after[mask] / before[mask]
            assert np.all(np.abs(ratio - (1.0 - lam_dt)) <= 1e-12 * max(1.0, 1.0 - lam_dt) + 1e-15)


class TestCbsStep:
    def test_bit_identical_to_full_drift_cbo(self):
        gen = np.random.default_rng(3)
        for _ in range(30):
            n = int(gen.integers(1, 10))
            dim = int(gen.integers(1, 5))
            pop = evaluated(gen.normal(size=(n, dim)), costs=gen.uniform(0, 3, n))
            dt = float(gen.uniform(0.05, 1.0))
            softmax = SoftmaxConfig(float(gen.uniform(0.1, 5.0)))
            via_cbs = cbs_step(pop, dt, softmax, RngStream(42))
            params = CboParams(
                lambda_=1.0 / dt, sigma0=math.sqrt(dt), dt=dt, softmax=softmax
            )
            via_cbo = cbo_step(pop, params, RngStream(42))
            assert np.array_equal(via_cbs.particles, via_cbo.particles)

    def test_small_dt_collapses_to_consensus(self):
        pop = evaluated([[2.0], [-2.0]])
        stepped = cbs_step(pop, 1e-12, SoftmaxConfig(1.0), RngStream(0))
        assert np.allclose(stepped.particles, 0.0, atol=1e-9)

    def test_single_particle_unchanged(self):
        pop = evaluated([[3.0, -1.0]])
        stepped = cbs_step(pop, 0.3, SoftmaxConfig(1.0), RngStream(0))
        assert np.array_equal(stepped.particles, pop.particles)


class TestGaussianSearchState:
    def test_factor_reproduces_covariance(self):
        gen = np.random.default_rng(0)
        A = gen.normal(size=(4, 4))
        cov = A @ A.T
        state = GaussianSearchState(np.zeros(4), cov, step=0.7, elite_count=2)
        factor = state.factor()
        rebuilt = (state.step**2) * (factor @ factor.T)
        assert np.linalg.norm(rebuilt - cov) / np.linalg.norm(cov) < 1e-8

    def test_semidefinite_fallback(self):
        v = np.array([1.0, 2.0, 3.0])
        cov = np.outer(v, v)  # rank one
        state = GaussianSearchState(np.zeros(3), cov, step=1.0, elite_count=1)
        factor = state.factor()
        assert np.allclose(factor @ factor.T, cov, atol=1e-10)

    def test_negative_eigenvalue_named(self):
        cov = np.array([[1.0, 0.0], [0.0, -0.5]])
        state = GaussianSearchState(np.zeros(2), cov, step=1.0, elite_count=1)
        with pytest.raises(CovarianceFactorizationError, match="eigenvalue"):
            state.scale_matrix()

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            GaussianSearchState(
                np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), step=1.0, elite_count=1
            )

    def test_diag_negative_entry_rejected(self):
        with pytest.raises(CovarianceFactorizationError):
            GaussianSearchState(
                np.zeros(2), np.array([1.0, -1.0]), step=1.0, elite_count=1, diag=True
            )


class TestSampleGaussianPopulation:
    def test_zero_step_zero_cov_collapses(self):
        state = GaussianSearchState(
            np.array([1.0, -2.0]), np.zeros((2, 2)), step=0.0, elite_count=1
        )
        pop = sample_gaussian_population(state, 8, RngStream(0))
        assert np.array_equal(pop.particles, np.tile([1.0, -2.0], (8, 1)))

    def test_identity_covariance_moments(self):
        state = GaussianSearchState(np.zeros(2), np.eye(2), step=1.0, elite_count=1)
        pop = sample_gaussian_population(state, 100_000, RngStream(7))
        assert np.all(np.abs(pop.particles.mean(axis=0)) < 0.02)
        sample_cov = np.cov(pop.particles.T)
        assert np.linalg.norm(sample_cov - np.eye(2)) / np.linalg.norm(np.eye(2)) < 0.03

    def test_diagonal_stds(self):
        state = GaussianSearchState(
            np.zeros(2), np.array([4.0, 1.0]), step=1.0, elite_count=1, diag=True
        )
        pop = sample_gaussian_population(state, 100_000, RngStream(8))
        stds = pop.particles.std(axis=0)
        assert stds[0] == pytest.approx(2.0, rel=0.03)
        assert stds[1] == pytest.approx(1.0, rel=0.03)

    def test_iteration_coordinate_changes_draws(self):
        state = GaussianSearchState(np.zeros(2), np.eye(2), step=1.0, elite_count=1)
        a = sample_gaussian_population(state, 4, RngStream(0), iteration=0)
        b = sample_gaussian_population(state, 4, RngStream(0), iteration=1)
        assert not np.array_equal(a.particles, b.particles)
        assert b.iteration == 1


class TestMppiUpdate:
    def test_equal_costs_average(self):
        state = GaussianSearchState(np.zeros(2), np.eye(2), step=1.0, elite_count=1)
        pop = evaluated([[0.0, 0.0], [2.0, 4.0], [4.0, -1.0]])
        new = mppi_update(state, None, 3, SoftmaxConfig(1.0), RngStream(0), population=pop)
        assert np.allclose(new.mean, pop.particles.mean(axis=0), atol=1e-12)
        assert np.array_equal(new.cov, state.cov)

    def test_greedy_limit_matches_best(self):
        state = GaussianSearchState(np.zeros(1), np.eye(1), step=1.0, elite_count=1)
        pop = evaluated([[0.0], [1.0], [2.0]], costs=[5.0, 1.0, 3.0])
        new = mppi_update(state, None, 3, SoftmaxConfig(1e9), RngStream(0), population=pop)
        assert abs(new.mean[0] - 1.0) <= 1e-9

    def test_hand_weighted_pair(self):
        state = GaussianSearchState(np.zeros(1), np.eye(1), step=1.0, elite_count=1)
        pop = evaluated([[0.0], [4.0]], costs=[0.0, math.log(3.0)])
        new = mppi_update(state, None, 2, SoftmaxConfig(1.0), RngStream(0), population=pop)
        assert new.mean[0] == pytest.approx(1.0, abs=1e-12)

    def test_samples_and_evaluates_when_no_population(self):
        problem = Quadratic(2)
        state = GaussianSearchState(np.full(2, 10.0), np.eye(2), step=1.0, elite_count=1)
        new = mppi_update(state, problem, 64, SoftmaxConfig(1.0), RngStream(0))
        assert problem.calls == 1
        assert np.linalg.norm(new.mean) < np.linalg.norm(state.mean)


class TestCmaUpdate:
    def test_alpha_zero_unchanged(self):
        state = GaussianSearchState(np.zeros(2), 2.0 * np.eye(2), step=0.5, elite_count=2)
        pop = evaluated([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]], costs=[1.0, 2.0, 3.0])
        new = cma_update(state, pop, alpha=0.0, softmax=SoftmaxConfig(1.0))
        assert np.array_equal(new.mean, state.mean)
        assert np.array_equal(new.cov, state.cov)

    def test_single_elite_full_step(self):
        state = GaussianSearchState(np.zeros(2), np.eye(2), step=1.0, elite_count=1)
        pop = evaluated([[3.0, 1.0], [5.0, 5.0]], costs=[0.5, 2.0])
        new = cma_update(state, pop, alpha=1.0, softmax=SoftmaxConfig(2.0))
        y = np.array([3.0, 1.0])
        assert np.allclose(new.mean, y, atol=1e-15)
        assert np.allclose(new.cov, np.outer(y, y), atol=1e-12)

    def test_full_elite_full_step_matches_weighted_mean(self):
        gen = np.random.default_rng(2)
        for _ in range(20):
            n, dim = 12, 3
            pop = evaluated(gen.normal(size=(n, dim)), costs=gen.uniform(0, 4, n))
            softmax = SoftmaxConfig(1.7)
            state = GaussianSearchState(
                gen.normal(size=dim), np.eye(dim), step=1.0, elite_count=n
            )
            new = cma_update(state, pop, alpha=1.0, softmax=softmax)
            reference = consensus_point(pop, softmax_weights(pop.costs, softmax)).values
            assert np.all(np.abs(new.mean - reference) <= 1e-12)

    def test_psd_preserved(self):
        gen = np.random.default_rng(4)
        for _ in range(50):
            dim = int(gen.integers(1, 5))
            A = gen.normal(size=(dim, dim))
            state = GaussianSearchState(
                gen.normal(size=dim), A @ A.T, step=1.0, elite_count=3
            )
            pop = evaluated(gen.normal(size=(6, dim)), costs=gen.uniform(0, 1, 6))
            alpha = float(gen.uniform(0, 1))
            new = cma_update(state, pop, alpha=alpha, softmax=SoftmaxConfig(1.0))
            assert np.linalg.eigvalsh(new.cov).min() >= -1e-10
            assert np.array_equal(new.cov, new.cov.T)

    def test_elite_count_exceeding_population_rejected(self):
        state = GaussianSearchState(np.zeros(1), np.eye(1), step=1.0, elite_count=5)
        pop = evaluated([[0.0], [1.0]], costs=[0.0, 1.0])
        with pytest.raises(ValueError):
            cma_update(state, pop, alpha=0.5, softmax=SoftmaxConfig(1.0))


class TestCemUpdate:
    def test_full_elite_plain_average(self):
        state = GaussianSearchState(np.zeros(1), np.eye(1), step=1.0, elite_count=3)
        pop = evaluated([[0.0], [3.0], [6.0]], costs=[2.0, 1.0, 3.0])
        new = cem_update(state, pop, alpha=1.0)
        assert new.mean[0] == pytest.approx(3.0, abs=1e-12)

    def test_two_elites_average(self):
        state = GaussianSearchState(np.zeros(1), np.eye(1), step=1.0, elite_count=2)
        pop = evaluated([[0.0], [2.0], [9.0]], costs=[0.1, 0.2, 5.0])
        new = cem_update(state, pop, alpha=1.0)
        assert new.mean[0] == pytest.approx(1.0, abs=1e-12)

    def test_alpha_zero_unchanged(self):
        state = GaussianSearchState(np.ones(2), np.eye(2), step=0.3, elite_count=1)
        pop = evaluated([[5.0, 5.0]], costs=[1.0])
        new = cem_update(state, pop, alpha=0.0)
        assert np.array_equal(new.mean, state.mean)
        assert np.array_equal(new.cov, state.cov)


class TestRunCbo:
    def params(self, **kwargs):
        base = dict(lambda_=1.0, sigma0=0.0, dt=0.5, softmax=SoftmaxConfig(1.0))
        base.update(kwargs)
        return CboParams(**base)

    def test_zero_iterations_rejected(self):
        with pytest.raises(ValueError):
            StoppingRule(max_iterations=0)

    def test_single_iteration_one_eval_one_step(self):
        problem = Quadratic(1)
        init = Population([[2.0], [-2.0]])
        record = run_cbo(
            problem, init, self.params(), StoppingRule(1), RngStream(0)
        )
        assert problem.calls == 1
        assert len(record.rows) == 1
        assert record.final_population.iteration == 1
        assert record.final_population.costs is None

    def test_symmetric_contraction_trace(self):
        problem = Quadratic(1)
        init = Population([[2.0], [-2.0]])
        record = run_cbo(
            problem, init, self.params(), StoppingRule(6), RngStream(0)
        )
        for r, row in enumerate(record.rows):
            assert row.consensus_cost == pytest.approx(0.0, abs=1e-20)
            assert row.population_diameter == pytest.approx(4.0 * 0.5**r, rel=1e-12)
        assert np.allclose(record.final_consensus.values, [0.0], atol=1e-15)

    def test_row_count_contract(self):
        problem = Quadratic(2)
        init = Population(np.random.default_rng(0).normal(size=(8, 2)))
        record = run_cbo(
            problem, init, self.params(sigma0=0.1), StoppingRule(9), RngStream(0)
        )
        assert len(record.rows) == 9
        assert [row.iteration for row in record.rows] == list(range(9))

    def test_diameter_stop_triggers(self):
        problem = Quadratic(1)
        init = Population([[2.0], [-2.0]])
        params = self.params(lambda_=2.0)  # lambda*dt = 1: collapse in one step
        record = run_cbo(
            problem, init, params, StoppingRule(50, diameter_tol=1e-9), RngStream(0)
        )
        assert len(record.rows) == 2  # first row diameter 4, second row 0 -> stop

    def test_consensus_stop_triggers(self):
        problem = Quadratic(1)
        init = Population([[2.0], [-2.0]])
        record = run_cbo(
            problem,
            init,
            self.params(),
            StoppingRule(50, consensus_tol=1e-6),
            RngStream(0),
        )
        # symmetric population: consensus fixed at 0, displacement 0 < tol
        assert len(record.rows) == 2

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            run_cbo(
                Quadratic(3),
                Population([[0.0]]),
                self.params(),
                StoppingRule(1),
                RngStream(0),
            )

    def test_decay_threshold_warning(self):
        problem = Quadratic(4)
        init = Population(np.random.default_rng(0).normal(size=(4, 4)))
        params = self.params(sigma0=1.0)  # threshold = 4/2 = 2 > lambda = 1
        with pytest.warns(UserWarning, match="threshold"):
            run_cbo(problem, init, params, StoppingRule(1), RngStream(0))

    def test_evaluation_failure_carries_context(self):
        class Broken(Quadratic):
            def evaluate_many(self, U):
                raise FloatingPointError("bad rollout")

        with pytest.raises(RuntimeError, match="iteration 0"):
            run_cbo(
                Broken(1),
                Population([[1.0]]),
                self.params(),
                StoppingRule(3),
                RngStream(0),
            )

    def test_running_best_nonincreasing(self):
        problem = Quadratic(2)
        init = Population(np.random.default_rng(1).uniform(-5, 5, (16, 2)))
        record = run_cbo(
            problem,
            init,
            self.params(lambda_=1.0, sigma0=0.4, dt=0.5, sigma_decay=0.95),
            StoppingRule(30),
            RngStream(1),
        )
        running = record.running_best_costs()
        assert np.all(np.diff(running) <= 0)
        assert record.best_cost == pytest.approx(running[-1])
        assert problem.evaluate(record.best_controls.values) == pytest.approx(
            record.best_cost
        )


class TestRunGaussianMethod:
    def test_row_count_contract(self):
        problem = Quadratic(2)
        state = GaussianSearchState(np.zeros(2), np.eye(2), step=0.5, elite_count=4)
        record = run_gaussian_method(
            "cem", problem, state, 16, StoppingRule(7), RngStream(0)
        )
        assert len(record.rows) == 7

    def test_running_minimum_nonincreasing_on_quadratic(self):
        problem = Quadratic(1)
        state = GaussianSearchState(np.array([10.0]), np.eye(1), step=0.5, elite_count=8)
        record = run_gaussian_method(
            "mppi", problem, state, 32, StoppingRule(50), RngStream(3),
            softmax=SoftmaxConfig(1.0),
        )
        running = record.running_best_costs()
        assert np.all(np.diff(running) <= 0)
        assert running[-1] < running[0]

    def test_one_iteration_matches_hand_composition(self):
        problem = Quadratic(3)
        state = GaussianSearchState(np.full(3, 5.0), np.eye(3), step=1.0, elite_count=4)
        softmax = SoftmaxConfig(0.7)
        record = run_gaussian_method(
            "mppi", problem, state, 20, StoppingRule(1), RngStream(11), softmax=softmax
        )
        by_hand = mppi_update(
            state, Quadratic(3), 20, softmax, RngStream(11), iteration=0
        )
        assert np.array_equal(record.final_consensus.values, by_hand.mean)

    def test_shared_initial_population_matches_iteration_zero(self):
        problem = Quadratic(2)
        rng = RngStream(5)
        state = GaussianSearchState(np.zeros(2), 4.0 * np.eye(2), step=0.5, elite_count=4)
        init = sample_gaussian_population(state, 24, rng, iteration=0)
        records = {}
        for method in ("mppi", "cma", "cem"):
            records[method] = run_gaussian_method(
                method, problem, state, 24, StoppingRule(3), rng,
                softmax=SoftmaxConfig(1.0), init_population=init,
            )
        first_bests = {m: r.rows[0].best_cost for m, r in records.items()}
        assert len(set(first_bests.values())) == 1

    def test_unknown_method_rejected(self):
        state = GaussianSearchState(np.zeros(1), np.eye(1), step=1.0, elite_count=1)
        with pytest.raises(ValueError):
            run_gaussian_method(
                "pso", Quadratic(1), state, 4, StoppingRule(1), RngStream(0)
            )


class TestEvaluatePopulation:
    def test_chunking_never_changes_costs(self):
        problem = Quadratic(3)
        pop = Population(np.random.default_rng(0).normal(size=(17, 3)))
        single = evaluate_population(problem, pop, threads=1)
        for threads in (2, 3, 8):
            multi = evaluate_population(problem, pop, threads=threads)
            assert np.array_equal(single.costs, multi.costs)

    def test_thread_count_does_not_change_run(self):
        def run(threads):
            problem = Quadratic(2)
            init = Population(np.random.default_rng(2).uniform(-3, 3, (12, 2)))
            params = CboParams(
                lambda_=1.0, sigma0=0.3, dt=0.5, softmax=SoftmaxConfig(1.0)
            )
            return run_cbo(
                problem, init, params, StoppingRule(10), RngStream(9), threads=threads
            )

        base = run(1)
        for threads in (2, 8):
            other = run(threads)
            assert np.array_equal(
                base.final_population.particles, other.final_population.particles
            )
            for a, b in zip(base.rows, other.rows):
                assert a.best_cost == b.best_cost
                assert a.mean_cost == b.mean_cost
                assert a.consensus_cost == b.consensus_cost
                assert a.population_diameter == b.population_diameter
