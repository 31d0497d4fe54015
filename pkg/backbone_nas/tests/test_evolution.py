import numpy as np
import pytest
from numpy.testing import assert_array_equal

from astropy.table import Table

from ..evolution import (Individual, EvolutionConfig, initialize_population, select_topk,
                         mutate, crossover, make_children, run_search, TabularFitness,
                         ExhaustiveOracle, rank_correlation, sign_test, LOG_COLUMNS)
from ..flops import Constraint, architecture_flops, flops_range, sample_flops
from ..search_space import (Architecture, SearchSpaceSpec, SMALL_SPACE,
                            baseline_architecture)
from ..utils import (InvalidConfigurationError, ConstrainedSamplingError,
                     NumericalError)


@pytest.fixture
def three_block_space():
    return SearchSpaceSpec(8, ((8, 1), (16, 1), (32, 1)), name='three')


def median_budget(space, quantile=0.5, samples=2000):
    return float(np.quantile(sample_flops(space, samples, rng=0), quantile))


def test_config_validation():
    assert EvolutionConfig().total_evaluations == 1000
    for kwargs in (dict(population_size=0), dict(parent_size=0),
                   dict(population_size=5, parent_size=6), dict(iterations=0),
                   dict(mutation_probability=1.5), dict(max_resample_attempts=0)):
        with pytest.raises(InvalidConfigurationError):
            EvolutionConfig(**kwargs)


def test_initial_population_respects_constraint():
    budget = median_budget(SMALL_SPACE)
    config = EvolutionConfig(population_size=50, constraint=Constraint(budget))
    population = initialize_population(SMALL_SPACE, config, rng=0)
    assert len(population) == 50
    assert len(set(individual.theta for individual in population)) == 50
    for individual in population:
        assert individual.flops <= budget
        assert individual.flops == architecture_flops(individual.theta, SMALL_SPACE)
        assert not individual.evaluated


def test_initial_population_of_a_tiny_space(three_block_space):
    # 64 architectures cannot fill 100 distinct slots
    config = EvolutionConfig(population_size=100, parent_size=10,
                             max_resample_attempts=50)
    population = initialize_population(three_block_space, config, rng=1)
    assert len(population) == 100
    assert len(set(individual.theta for individual in population)) == 64


def test_infeasible_constraint_fails_fast(three_block_space):
    low, _ = flops_range(three_block_space)
    config = EvolutionConfig(constraint=Constraint(low - 1))
    calls = []
    with pytest.raises(ConstrainedSamplingError):
        initialize_population(three_block_space, config, rng=0)
    with pytest.raises(ConstrainedSamplingError):
        run_search(lambda arch: calls.append(arch) or 0., three_block_space, config, rng=0)
    assert calls == []


def test_sampling_gives_up_after_max_attempts():
    low, _ = flops_range(SMALL_SPACE)
    # feasible, but a uniform draw essentially never hits the cheapest paths
    config = EvolutionConfig(population_size=5, parent_size=2, max_resample_attempts=20,
                             constraint=Constraint(low + 1))
    with pytest.raises(ConstrainedSamplingError) as excinfo:
        initialize_population(SMALL_SPACE, config, rng=0)
    assert excinfo.value.attempts == 20


def test_select_topk():
    population = [Individual(Architecture((i,)), fitness=f, evaluation_index=i)
                  for i, f in enumerate([0.1, 0.5, 0.3, 0.5])]
    top = select_topk(population, 3)
    assert [individual.fitness for individual in top] == [0.5, 0.5, 0.3]
    # ties keep evaluation order
    assert top[0].evaluation_index == 1 and top[1].evaluation_index == 3
    with pytest.raises(ValueError):
        select_topk(population, 5)
    with pytest.raises(ValueError, match='evaluated'):
        select_topk([Individual(Architecture((0,)))], 1)


def test_mutation():
    rng = np.random.default_rng(0)
    arch = baseline_architecture(SMALL_SPACE)
    assert mutate(arch, 0., rng) == arch
    changed = mutate(arch, 1., rng)
    assert all(choice != 0 for choice in changed)

    counts = np.zeros(4)
    for _ in range(300):
        counts += np.bincount(mutate(arch, 1., rng).to_array(), minlength=4)
    assert counts[0] == 0
    assert np.all(counts[1:] > 1500)

    flips = [sum(a != b for a, b in zip(arch, mutate(arch, 0.1, rng)))
             for _ in range(500)]
    assert 1.6 < np.mean(flips) < 2.4


def test_crossover():
    rng = np.random.default_rng(0)
    first, second = Architecture((0,) * 20), Architecture((3,) * 20)
    child = crossover(first, second, rng)
    assert set(child) <= {0, 3}
    shares = [np.mean(crossover(first, second, rng).to_array() == 0) for _ in range(300)]
    assert 0.45 < np.mean(shares) < 0.55
    assert crossover(first, first, rng) == first


def test_children(three_block_space):
    config = EvolutionConfig(population_size=7, parent_size=2)
    parents = [Architecture((0, 0, 0)), Architecture((3, 3, 3))]
    children = make_children(parents, config, np.random.default_rng(0), three_block_space)
    assert len(children) == 7
    assert all(isinstance(child, Architecture) for child in children)
    with pytest.raises(ValueError):
        make_children([], config, 0, three_block_space)


def test_children_respect_constraint():
    budget = median_budget(SMALL_SPACE, 0.3)
    config = EvolutionConfig(population_size=20, parent_size=5,
                             constraint=Constraint(budget))
    parents = initialize_population(SMALL_SPACE, config, rng=0)[:5]
    children = make_children(parents, config, np.random.default_rng(1), SMALL_SPACE)
    assert all(architecture_flops(child, SMALL_SPACE) <= budget for child in children)


def test_search_log_accounting(three_block_space, tmp_path):
    fitness = TabularFitness(three_block_space, seed=0)
    config = EvolutionConfig(population_size=12, parent_size=4, iterations=5)
    log_path = tmp_path / 'search_log.csv'
    result = run_search(fitness, three_block_space, config, rng=0,
                        log_path=str(log_path))
    assert result.num_evaluations == 60
    assert result.log.colnames == list(LOG_COLUMNS)
    assert list(np.unique(result.log['iteration'])) == list(range(5))
    assert np.all(np.diff(result.best_so_far()) >= 0)
    assert result.best_fitness == result.best_so_far()[-1]
    assert result.best_fitness == max(result.log['fitness'])
    assert result.best_fitness == fitness(result.best_architecture)
    # duplicates are served from the memo table but still logged
    unique = len(set(result.log['architecture']))
    assert result.num_unique_evaluations == unique

    written = Table.read(str(log_path), format='ascii.csv')
    assert len(written) == 60
    assert "best_fitness = {0:.6f}".format(result.best_fitness) in result.summary()


def test_memo_avoids_reevaluation(three_block_space):
    calls = []

    def evaluator(arch):
        calls.append(arch)
        return float(np.sum(arch.to_array()))

    config = EvolutionConfig(population_size=20, parent_size=4, iterations=6)
    result = run_search(evaluator, three_block_space, config, rng=3)
    assert len(calls) == len(set(calls)) == result.num_unique_evaluations
    assert result.best_fitness == max(np.sum(arch.to_array()) for arch in calls)


def test_search_rows_satisfy_the_constraint():
    budget = median_budget(SMALL_SPACE)
    fitness = TabularFitness(SMALL_SPACE, seed=1)
    config = EvolutionConfig(population_size=20, parent_size=5, iterations=5,
                             constraint=Constraint(budget))
    for controller in ('evolution', 'random'):
        result = run_search(fitness, SMALL_SPACE, config, controller=controller, rng=2)
        assert np.all(result.log['flops'] <= budget)
        assert result.best_flops <= budget


def test_search_is_deterministic(three_block_space):
    fitness = TabularFitness(three_block_space, seed=5, noise=0.1)
    config = EvolutionConfig(population_size=10, parent_size=3, iterations=4)
    first = run_search(fitness, three_block_space, config, rng=7)
    second = run_search(fitness, three_block_space, config, rng=7)
    assert_array_equal(first.log['architecture'], second.log['architecture'])
    assert_array_equal(first.log['fitness'], second.log['fitness'])


def test_parallel_evaluation_matches_serial(three_block_space):
    fitness = TabularFitness(three_block_space, seed=5)
    config = EvolutionConfig(population_size=10, parent_size=3, iterations=3)
    serial = run_search(fitness, three_block_space, config, rng=7, num_cores=1)
    parallel = run_search(fitness, three_block_space, config, rng=7, num_cores=2)
    assert_array_equal(serial.log['fitness'], parallel.log['fitness'])


def test_non_finite_fitness(three_block_space):
    config = EvolutionConfig(population_size=4, parent_size=2, iterations=2)
    with pytest.raises(NumericalError):
        run_search(lambda arch: float('nan'), three_block_space, config, rng=0)
    with pytest.raises(InvalidConfigurationError, match='controller'):
        run_search(lambda arch: 0., three_block_space, config, controller='bayes')


def test_tabular_fitness(three_block_space):
    fitness = TabularFitness(three_block_space, seed=0, noise=0.5)
    arch = Architecture((1, 2, 3))
    assert fitness(arch) == fitness(Architecture((1, 2, 3)))
    assert TabularFitness(three_block_space, seed=0, noise=0.5)(arch) == fitness(arch)
    assert TabularFitness(three_block_space, seed=1)(arch) != fitness(arch)


def test_exhaustive_oracle(three_block_space):
    fitness = TabularFitness(three_block_space, seed=0)
    oracle = ExhaustiveOracle(fitness, three_block_space)
    assert len(oracle) == 64
    best, value = oracle.best()
    assert value == max(oracle.values.values())
    low, _ = flops_range(three_block_space)
    cheapest = [arch for arch in oracle.values
                if architecture_flops(arch, three_block_space) == low]
    constrained = ExhaustiveOracle(fitness, three_block_space, Constraint(low))
    assert len(constrained) == len(cheapest) >= 1
    assert set(constrained.values) == set(cheapest)
    assert constrained.best()[1] == max(oracle.values[arch] for arch in cheapest)
    # the cheapest path is not the all-3x3 one
    assert baseline_architecture(three_block_space) not in constrained.values
    assert constrained.best()[0] == Architecture((0, 0, 3))


def test_evolution_finds_the_oracle_optimum(three_block_space):
    config = EvolutionConfig(population_size=20, parent_size=5, iterations=10)
    found = 0
    for seed in range(20):
        fitness = TabularFitness(three_block_space, seed=seed)
        best, value = ExhaustiveOracle(fitness, three_block_space).best()
        result = run_search(fitness, three_block_space, config, rng=seed)
        assert result.num_evaluations == 200
        assert result.best_fitness <= value
        found += result.best_architecture == best
    assert found >= 19


def test_evolution_beats_random_search():
    budget = median_budget(SMALL_SPACE)
    config = EvolutionConfig(constraint=Constraint(budget))
    evolution, random = [], []
    for seed in range(20):
        fitness = TabularFitness(SMALL_SPACE, seed=seed, noise=0.1)
        evolution.append(run_search(fitness, SMALL_SPACE, config, 'evolution',
                                    rng=seed).best_fitness)
        random.append(run_search(fitness, SMALL_SPACE, config, 'random',
                                 rng=seed).best_fitness)
    assert np.median(evolution) > np.median(random)
    assert sign_test(evolution, random) < 0.05


def test_rank_statistics():
    assert rank_correlation([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.)
    assert rank_correlation([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.)
    tau, pvalue = rank_correlation([1, 2, 3, 4, 5], [1, 3, 2, 4, 5], return_pvalue=True)
    assert 0 < tau < 1 and 0 < pvalue <= 1
    with pytest.raises(ValueError):
        rank_correlation([1], [1])

    assert sign_test([1] * 20, [0] * 20) < 1e-5
    assert sign_test([1, 0], [0, 1]) == 1.
    assert sign_test([1, 1], [1, 1]) == 1.
