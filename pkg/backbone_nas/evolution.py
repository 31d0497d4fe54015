"""
Constraint-respecting evolutionary search over architectures, the
budget-matched random-search baseline, and the tabular fitness benchmark
used to compare them.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from astropy import log
from astropy.table import Table
from astropy.utils.console import ProgressBar

from .flops import Constraint, architecture_flops
from .search_space import (Architecture, NUM_CHOICES, random_architecture,
                           enumerate_architectures, _as_rng)
from .utils import (InvalidConfigurationError, ConstrainedSamplingError,
                    NumericalError, _map_context)

__all__ = ['Individual', 'EvolutionConfig', 'SearchResult', 'initialize_population',
           'select_topk', 'mutate', 'crossover', 'make_children', 'run_search',
           'TabularFitness', 'ExhaustiveOracle', 'rank_correlation', 'sign_test',
           'CONTROLLERS', 'LOG_COLUMNS']

CONTROLLERS = ('evolution', 'random')

LOG_COLUMNS = ('iteration', 'index', 'architecture', 'flops', 'fitness',
               'best_so_far', 'memo_hit')


@dataclass
class Individual:
    """
    An architecture and, once evaluated, its fitness.
    """

    theta: Architecture
    fitness: float = None
    flops: int = None
    evaluation_index: int = None

    @property
    def evaluated(self):
        return self.fitness is not None


@dataclass(frozen=True)
class EvolutionConfig:
    """
    Parameters
    ----------
    population_size : int
        Individuals per generation.
    parent_size : int
        Top individuals kept as parents of the next generation.
    iterations : int
        Generations; the search evaluates ``population_size * iterations``
        architectures.
    mutation_probability : float
        Per-position probability that a mutation child changes its
        parent's choice.
    constraint : `~backbone_nas.flops.Constraint`
    max_resample_attempts : int
        Draws allowed per individual before giving up on the constraint.
    """

    population_size: int = 50
    parent_size: int = 10
    iterations: int = 20
    mutation_probability: float = 0.1
    constraint: Constraint = field(default_factory=Constraint)
    max_resample_attempts: int = 1000

    def __post_init__(self):
        if self.population_size < 1:
            raise InvalidConfigurationError("population_size must be at least 1")
        if not 1 <= self.parent_size <= self.population_size:
            raise InvalidConfigurationError("parent_size must be between 1 and "
                                            "population_size ({0}), got {1}"
                                            .format(self.population_size,
                                                    self.parent_size))
        if self.iterations < 1:
            raise InvalidConfigurationError("iterations must be at least 1")
        if not 0 <= self.mutation_probability <= 1:
            raise InvalidConfigurationError("mutation_probability must be in [0, 1]")
        if self.max_resample_attempts < 1:
            raise InvalidConfigurationError("max_resample_attempts must be at least 1")

    @property
    def total_evaluations(self):
        return self.population_size * self.iterations


def _sample_constrained(draw, space, constraint, max_attempts, what):
    for attempt in range(max_attempts):
        arch = draw()
        flops = architecture_flops(arch, space)
        if constraint.satisfies_flops(flops):
            return arch, flops
    raise ConstrainedSamplingError("Could not draw a {0} satisfying {1} in {2} "
                                   "attempts".format(what, constraint, max_attempts),
                                   attempts=max_attempts)


def _check_feasible(space, constraint):
    if not constraint.is_feasible(space):
        raise ConstrainedSamplingError("No architecture of {0} satisfies {1}"
                                       .format(space.name, constraint), attempts=0)


def initialize_population(space, config, rng=None):
    """
    ``population_size`` random individuals, each satisfying the constraint.

    Duplicates are redrawn; a duplicate is only kept when
    ``max_resample_attempts`` draws produced nothing new (a space smaller
    than the population).

    Raises
    ------
    ConstrainedSamplingError
        When the constraint is infeasible for ``space`` (checked before any
        draw) or no satisfying architecture was drawn within
        ``max_resample_attempts``.
    """
    rng = _as_rng(rng)
    constraint = config.constraint
    _check_feasible(space, constraint)

    population = []
    seen = set()
    for slot in range(config.population_size):
        fallback = None
        for attempt in range(config.max_resample_attempts):
            arch = random_architecture(space, rng)
            flops = architecture_flops(arch, space)
            if not constraint.satisfies_flops(flops):
                continue
            if arch not in seen:
                break
            fallback = fallback or (arch, flops)
        else:
            if fallback is None:
                raise ConstrainedSamplingError("Could not draw an initial individual "
                                               "satisfying {0} in {1} attempts"
                                               .format(constraint,
                                                       config.max_resample_attempts),
                                               attempts=config.max_resample_attempts)
            arch, flops = fallback
            log.debug("Keeping duplicate initial individual {0}".format(arch))
        seen.add(arch)
        population.append(Individual(arch, flops=flops))
    return population


def select_topk(population, k):
    """
    The ``k`` individuals of highest fitness, best first. Equal fitnesses
    keep evaluation order.
    """
    if k > len(population):
        raise ValueError("Cannot select {0} parents from a population of {1}"
                         .format(k, len(population)))
    if any(not individual.evaluated for individual in population):
        raise ValueError("Every individual must be evaluated before selection")

    def key(item):
        position, individual = item
        order = individual.evaluation_index
        return (-individual.fitness, position if order is None else order)

    ranked = sorted(enumerate(population), key=key)
    return [individual for _, individual in ranked[:k]]


def mutate(arch, probability, rng):
    """
    Change each position with ``probability`` to a uniformly drawn
    *different* choice.
    """
    choices = arch.to_array()
    flip = rng.random(len(choices)) < probability
    shift = rng.integers(1, NUM_CHOICES, size=len(choices))
    return Architecture.from_array(np.where(flip, (choices + shift) % NUM_CHOICES, choices))


def crossover(first, second, rng):
    """
    Uniform crossover: every position comes from either parent with
    probability 1/2.
    """
    take_first = rng.random(len(first)) < 0.5
    return Architecture.from_array(np.where(take_first, first.to_array(),
                                            second.to_array()))


def make_children(parents, config, rng, space):
    """
    ``population_size`` children: the first ``ceil(P / 2)`` by mutating a
    random parent, the rest by crossing two distinct random parents. A
    child violating the constraint is redrawn (with freshly drawn
    parents).

    Returns
    -------
    children : list of `~backbone_nas.search_space.Architecture`
    """
    if len(parents) == 0:
        raise ValueError("make_children needs at least one parent")
    rng = _as_rng(rng)
    thetas = [parent.theta if isinstance(parent, Individual) else parent
              for parent in parents]
    num_mutations = math.ceil(config.population_size / 2)
    num_crossovers = config.population_size // 2

    def draw_mutation():
        parent = thetas[rng.integers(len(thetas))]
        return mutate(parent, config.mutation_probability, rng)

    def draw_crossover():
        if len(thetas) > 1:
            i, j = rng.choice(len(thetas), size=2, replace=False)
        else:
            i = j = 0
        return crossover(thetas[i], thetas[j], rng)

    children = []
    for draw, count, what in ((draw_mutation, num_mutations, 'mutation child'),
                              (draw_crossover, num_crossovers, 'crossover child')):
        for _ in range(count):
            arch, _ = _sample_constrained(draw, space, config.constraint,
                                          config.max_resample_attempts, what)
            children.append(arch)
    return children


@dataclass
class SearchResult:
    """
    Outcome of one search: the best architecture found and the full
    evaluation log (an `~astropy.table.Table` with columns ``LOG_COLUMNS``).
    """

    controller: str
    best_architecture: Architecture
    best_fitness: float
    best_flops: int
    log: Table
    wall_time: float = 0.
    constraint: Constraint = field(default_factory=Constraint)

    @property
    def num_evaluations(self):
        return len(self.log)

    @property
    def num_unique_evaluations(self):
        return int(np.sum(self.log['memo_hit'] == 0))

    def best_so_far(self):
        return np.asarray(self.log['best_so_far'])

    def summary(self):
        """
        Structured-text summary; only the ``wall_time`` line varies
        between reruns.
        """
        lines = ["controller = {0}".format(self.controller),
                 "best_architecture = {0}".format(self.best_architecture),
                 "best_architecture_symbolic = {0}"
                 .format(self.best_architecture.to_symbolic()),
                 "best_fitness = {0:.6f}".format(self.best_fitness),
                 "best_flops = {0:d}".format(int(self.best_flops)),
                 "constraint = {0}".format(self.constraint),
                 "evaluations = {0:d}".format(self.num_evaluations),
                 "unique_evaluations = {0:d}".format(self.num_unique_evaluations),
                 "wall_time = {0:.1f} s".format(self.wall_time)]
        return "\n".join(lines) + "\n"

    def write_log(self, filename):
        self.log.write(filename, format='ascii.csv', overwrite=True)

    def write_summary(self, filename):
        with open(filename, 'w') as fh:
            fh.write(self.summary())


def _log_table(rows):
    columns = list(zip(*rows)) if rows else [[] for _ in LOG_COLUMNS]
    table = Table(columns, names=LOG_COLUMNS,
                  dtype=(np.int64, np.int64, str, np.int64, np.float64,
                         np.float64, np.int64))
    table['fitness'].info.format = '.6f'
    table['best_so_far'].info.format = '.6f'
    return table


class _SearchState:
    """
    Memo table, running best and evaluation log shared by both controllers.
    """

    def __init__(self, evaluator, space, constraint, num_cores, log_path):
        self.evaluator = evaluator
        self.space = space
        self.constraint = constraint
        self.num_cores = num_cores
        self.log_path = log_path
        self.memo = {}
        self.rows = []
        self.best = (-np.inf, None, None)

    def evaluate(self, iteration, archs):
        flops = [architecture_flops(arch, self.space) for arch in archs]
        for arch, value in zip(archs, flops):
            if not self.constraint.satisfies_flops(value):
                raise ConstrainedSamplingError("Architecture {0} ({1} MACs) violates "
                                               "{2}".format(arch, value, self.constraint))

        pending = []
        for arch in archs:
            if arch not in self.memo and arch not in pending:
                pending.append(arch)

        with _map_context(self.num_cores) as map:
            fitnesses = map(self.evaluator, pending)

        for arch, fitness in zip(pending, fitnesses):
            fitness = float(fitness)
            if not np.isfinite(fitness):
                raise NumericalError("Non-finite fitness {0} for {1}".format(fitness, arch),
                                     iteration=iteration, architecture=arch)
            self.memo[arch] = fitness

        fresh = set(pending)
        population = []
        for index, (arch, value) in enumerate(zip(archs, flops)):
            memo_hit = arch not in fresh
            fresh.discard(arch)
            fitness = self.memo[arch]
            if fitness > self.best[0]:
                self.best = (fitness, arch, value)
            evaluation_index = len(self.rows)
            self.rows.append((iteration, index, str(arch), int(value), fitness,
                              self.best[0], int(memo_hit)))
            population.append(Individual(arch, fitness=fitness, flops=value,
                                         evaluation_index=evaluation_index))

        if self.log_path is not None:
            _log_table(self.rows).write(self.log_path, format='ascii.csv', overwrite=True)

        log.info("Iteration {0}: {1} evaluations ({2} new), best fitness {3:.4f}"
                 .format(iteration, len(archs), len(pending), self.best[0]))
        return population


def run_search(evaluator, space, config, controller='evolution', rng=None,
               num_cores=None, log_path=None, progressbar=None):
    """
    Search ``space`` for the architecture of highest fitness under
    ``config.constraint``.

    The evolution controller evaluates a random initial population, then
    for every further generation selects the top ``parent_size``
    individuals and replaces the whole population by their children. The
    random controller draws the same number of constraint-satisfying
    architectures uniformly. Architectures seen before are served from a
    memo table and still count as (logged) evaluations.

    Parameters
    ----------
    evaluator : callable
        ``evaluator(arch) -> float``, higher is better; for instance a
        `~backbone_nas.supernet.SupernetEvaluator`.
    space : `~backbone_nas.search_space.SearchSpaceSpec`
    config : `EvolutionConfig`
    controller : {'evolution', 'random'}
    rng : int or `numpy.random.Generator`
    num_cores : int, optional
        joblib workers for the fitness evaluations of one generation;
        defaults to ``conf.num_cores``.
    log_path : str, optional
        CSV file rewritten after every generation.
    progressbar : bool, optional
        Defaults to ``conf.show_progress``.

    Returns
    -------
    result : `SearchResult`
    """
    from . import conf

    if controller not in CONTROLLERS:
        raise InvalidConfigurationError("Unknown controller {0!r}; expected one of {1}"
                                        .format(controller, CONTROLLERS))
    rng = _as_rng(rng)
    num_cores = conf.num_cores if num_cores is None else num_cores
    progressbar = conf.show_progress if progressbar is None else progressbar
    constraint = config.constraint
    _check_feasible(space, constraint)

    state = _SearchState(evaluator, space, constraint, num_cores, log_path)
    start = time.time()

    log.info("Starting {0} search over {1}: {2} x {3} evaluations, {4}"
             .format(controller, space.name, config.iterations, config.population_size,
                     constraint))

    if progressbar:
        pbu = ProgressBar(config.iterations).update
    else:
        pbu = lambda: True

    def draw_random():
        return random_architecture(space, rng)

    population = None
    for iteration in range(config.iterations):
        if controller == 'random':
            archs = [_sample_constrained(draw_random, space, constraint,
                                         config.max_resample_attempts,
                                         'random architecture')[0]
                     for _ in range(config.population_size)]
        elif population is None:
            archs = [individual.theta
                     for individual in initialize_population(space, config, rng)]
        else:
            parents = select_topk(population, config.parent_size)
            archs = make_children(parents, config, rng, space)
        population = state.evaluate(iteration, archs)
        pbu()

    best_fitness, best_arch, best_flops = state.best
    return SearchResult(controller, best_arch, best_fitness, best_flops,
                        _log_table(state.rows), wall_time=time.time() - start,
                        constraint=constraint)


class TabularFitness:
    """
    Seeded synthetic fitness over a search space: a sum of per-position
    choice scores and adjacent-pair interaction scores, plus optional
    noise that is itself a fixed function of the architecture.

    Evaluating the same architecture always returns the same value.
    """

    def __init__(self, space, seed=0, noise=0.0, interaction=0.25):
        rng = np.random.default_rng(seed)
        self.space = space
        self.seed = seed
        self.noise = noise
        self.unary = rng.normal(size=(space.num_blocks, NUM_CHOICES))
        self.pairwise = interaction * rng.normal(size=(max(space.num_blocks - 1, 0),
                                                       NUM_CHOICES, NUM_CHOICES))

    def __call__(self, arch):
        choices = arch.to_array()
        positions = np.arange(len(choices))
        value = self.unary[positions, choices].sum()
        if len(choices) > 1:
            value += self.pairwise[positions[:-1], choices[:-1], choices[1:]].sum()
        if self.noise:
            value += self.noise * np.random.default_rng([self.seed] + list(choices)).normal()
        return float(value)


class ExhaustiveOracle:
    """
    Brute-force optimum of a fitness over a small (at most 6 block) space.
    """

    def __init__(self, fitness, space, constraint=None):
        constraint = constraint or Constraint()
        self.values = {arch: fitness(arch) for arch in enumerate_architectures(space)
                       if constraint.satisfies(arch, space)}
        if not self.values:
            raise ConstrainedSamplingError("No architecture satisfies {0}"
                                           .format(constraint), attempts=0)

    def best(self):
        """
        ``(architecture, fitness)`` of the optimum; the lexicographically
        first one on ties.
        """
        return max(self.values.items(), key=lambda item: item[1])

    def __len__(self):
        return len(self.values)


def rank_correlation(inherited, standalone, return_pvalue=False):
    """
    Kendall rank correlation between supernet-inherited and stand-alone
    fitnesses of the same architectures.
    """
    inherited = np.asarray(inherited, dtype=float)
    standalone = np.asarray(standalone, dtype=float)
    if inherited.shape != standalone.shape or inherited.size < 2:
        raise ValueError("Need two equally long sequences of at least two "
                         "fitnesses")
    tau, pvalue = stats.kendalltau(inherited, standalone)
    return (tau, pvalue) if return_pvalue else tau


def sign_test(first, second):
    """
    Two-sided sign test p-value of paired samples; ties are dropped.
    """
    diff = np.asarray(first, dtype=float) - np.asarray(second, dtype=float)
    diff = diff[diff != 0]
    if diff.size == 0:
        return 1.0
    return float(stats.binomtest(int(np.sum(diff > 0)), diff.size, 0.5).pvalue)
