"""
Population maintenance and variation.

Fitness is either a Monte-Carlo episode return or a surrogate: an H-step
discounted prefix bootstrapped by a policy-extended value function. Variation
works on the columns of the policy matrices (behavior level), so an action
dimension that an operator does not touch keeps producing exactly the same
actions. Parameter-level operators on flattened vectors are kept as baselines.
"""
import dataclasses
import enum
import math
from typing import List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from loguru import logger

from erlre2.envs import Env, Transition, rollout
from erlre2.errors import ConfigError, NonFiniteError, ShapeMismatch
from erlre2.nn import Parametric
from erlre2.policy import (
    PolicyRepresentation,
    SharedRepresentation,
    init_policy,
    policy_forward,
    policy_init_bound,
)
from erlre2.records import recordable
from erlre2.values import ValueMode

P = TypeVar("P", bound=Parametric)

MUTATION_GATE = 0.9
SMALL_SIGMA_SCALE = 0.05
LARGE_SIGMA = 0.5
CEM_FLOOR = 1e-6


@recordable
class FitnessKind(enum.Enum):
    MONTE_CARLO = "monte_carlo"
    SURROGATE = "surrogate"


@recordable
@dataclasses.dataclass
class FitnessEstimate:
    value: float
    kind: FitnessKind
    episodes_used: int
    steps_used: int
    """
    Environment steps consumed, all of them counted by the harness. A surrogate
    estimate uses at most `episodes_used` * H steps, which exceeds H when more
    than one prefix is averaged.
    """


@dataclasses.dataclass(eq=False)
class Population:
    members: List[PolicyRepresentation]
    fitness: Optional[np.ndarray] = None
    """Latest estimate per member, NaN until evaluated."""

    generation: int = 0

    def __post_init__(self):
        if not self.members:
            raise ConfigError("a population needs at least one member")
        shape = self.members[0].matrix.shape
        for i, w in enumerate(self.members):
            if w.matrix.shape != shape:
                raise ShapeMismatch(f"population member {i}", shape, w.matrix.shape)
        if self.fitness is None:
            self.fitness = np.full(len(self.members), np.nan)
        self.fitness = np.asarray(self.fitness, dtype=np.float64)
        if self.fitness.shape != (len(self.members),):
            raise ShapeMismatch("population fitness", (len(self.members),), self.fitness.shape)

    @property
    def n(self) -> int:
        return len(self.members)

    def __len__(self):
        return self.n

    def __getitem__(self, i: int) -> PolicyRepresentation:
        return self.members[i]


def init_population(n: int, d: int, action_dim: int, rng: np.random.Generator) -> Population:
    return Population([init_policy(d, action_dim, rng) for _ in range(n)])


def evaluate_fitness_mc(
    shared: SharedRepresentation,
    w: PolicyRepresentation,
    env: Env,
    episodes: int,
    rng: np.random.Generator,
) -> Tuple[FitnessEstimate, List[Transition]]:
    """
    Mean undiscounted return over `episodes` full noise-free episodes.

    :return: the estimate and every transition collected.
    """
    if episodes < 1:
        raise ConfigError(f"episodes must be >= 1, got {episodes}")
    returns, transitions = [], []
    for _ in range(episodes):
        res = rollout(shared, w, env, env.spec.horizon, 0.0, rng)
        returns.append(res.episode_return)
        transitions.extend(res.transitions)
    value = float(np.mean(returns))
    estimate = FitnessEstimate(value, FitnessKind.MONTE_CARLO, episodes, len(transitions))
    return estimate, transitions


def evaluate_fitness_surrogate(
    shared: SharedRepresentation,
    w: PolicyRepresentation,
    env: Env,
    value_fn,
    horizon: int,
    gamma: float,
    rng: np.random.Generator,
    episodes: int = 1,
) -> Tuple[FitnessEstimate, List[Transition]]:
    """
    Discounted return of an H-step prefix from a reset, plus the discounted
    value of the state reached.

    The bootstrap term is dropped when the prefix ends in a genuine termination
    or at the environment horizon, so an H at least as long as the horizon with
    gamma = 1 gives the Monte-Carlo return.

    :param value_fn: Anything with ``value(s, a, w, mode)``, normally the PeVFA.
    :param horizon: Prefix length H >= 0; 0 bootstraps from the reset state.
    :param episodes: Prefixes averaged into the estimate.
    """
    if horizon < 0:
        raise ConfigError(f"surrogate horizon must be >= 0, got {horizon}")
    if episodes < 1:
        raise ConfigError(f"episodes must be >= 1, got {episodes}")
    spec = env.spec.action_spec
    values, transitions = [], []
    for _ in range(episodes):
        res = rollout(shared, w, env, horizon, 0.0, rng)
        discounted, discount = 0.0, 1.0
        for t in res.transitions:
            discounted += discount * t.r
            discount *= gamma
        if not (res.terminated or res.truncated):
            a = policy_forward(shared, w, spec, res.final_state)
            discounted += discount * float(value_fn.value(res.final_state, a, w, ValueMode.MIN))
        values.append(discounted)
        transitions.extend(res.transitions)
    value = float(np.mean(values))
    if not np.isfinite(value):
        raise NonFiniteError("surrogate fitness")
    estimate = FitnessEstimate(value, FitnessKind.SURROGATE, episodes, len(transitions))
    return estimate, transitions


@recordable
@dataclasses.dataclass
class SelectionOutcome:
    elites: List[int]
    winners: List[int]
    discarders: List[int]

    def check(self, n: int):
        everyone = sorted(self.elites + self.winners + self.discarders)
        if everyone != list(range(n)):
            raise ConfigError(f"selection outcome does not partition {n} members: {self}")


def _rank_key(fitness: np.ndarray):
    return lambda i: (-fitness[i], i)


def select(pop: Population, e_count: int, rng: np.random.Generator) -> SelectionOutcome:
    """
    Split the population into elites, tournament winners and discarders.

    The `e_count` fittest members are elites (ties go to the lower index). Then
    ``n - e_count`` size-3 tournaments are held among the non-elites; each
    distinct winner is kept once and whoever never wins is a discarder.

    :raises ConfigError: if the population is smaller than 3 or `e_count` does
        not leave any non-elite.
    """
    n = pop.n
    if n < 3:
        raise ConfigError(f"selection needs a population of at least 3, got {n}")
    if not 1 <= e_count < n:
        raise ConfigError(f"elite count must be in [1, {n - 1}], got {e_count}")
    fitness = pop.fitness
    if not np.all(np.isfinite(fitness)):
        raise NonFiniteError("fitness", pop.generation)

    key = _rank_key(fitness)
    order = sorted(range(n), key=key)
    elites = order[:e_count]
    rest = sorted(order[e_count:])

    winners: List[int] = []
    for _ in range(n - e_count):
        contenders = rng.choice(rest, size=min(3, len(rest)), replace=False)
        best = min((int(i) for i in contenders), key=key)
        if best not in winners:
            winners.append(best)
    discarders = [i for i in rest if i not in winners]
    logger.debug("selection: elites {}, winners {}, discarders {}", elites, winners, discarders)
    return SelectionOutcome(elites, winners, discarders)


def b_crossover(
    p1: PolicyRepresentation, p2: PolicyRepresentation, assignment
) -> Tuple[PolicyRepresentation, PolicyRepresentation]:
    """
    Exchange whole columns between two parents.

    :param assignment: One boolean per action dimension. True moves parent 2's
        column into the first child, False moves parent 1's column into the
        second child. Every dimension moves in exactly one direction.
    :return: two new children; the parents are left as they were.
    """
    if p1.matrix.shape != p2.matrix.shape:
        raise ShapeMismatch("crossover parents", p1.matrix.shape, p2.matrix.shape)
    to_first = np.asarray(assignment, dtype=bool)
    if to_first.shape != (p1.action_dim,):
        raise ShapeMismatch("crossover assignment", (p1.action_dim,), to_first.shape)
    c1, c2 = p1.matrix.copy(), p2.matrix.copy()
    c1[:, to_first] = p2.matrix[:, to_first]
    c2[:, ~to_first] = p1.matrix[:, ~to_first]
    return PolicyRepresentation(c1), PolicyRepresentation(c2)


def sample_assignment(action_dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.random(action_dim) < 0.5


def crossover(p1: PolicyRepresentation, p2: PolicyRepresentation, rng: np.random.Generator):
    return b_crossover(p1, p2, sample_assignment(p1.action_dim, rng))


@recordable
class MutationKind(enum.Enum):
    SMALL = "small"
    LARGE = "large"
    RESET = "reset"


MUTATION_KINDS = (MutationKind.SMALL, MutationKind.LARGE, MutationKind.RESET)
MUTATION_KIND_PROBS = (0.90, 0.05, 0.05)


def mutate_columns(
    w: PolicyRepresentation,
    dims: Sequence[int],
    beta: float,
    rng: np.random.Generator,
    kind: Optional[MutationKind] = None,
) -> PolicyRepresentation:
    """
    Perturb a ceil(beta * (d + 1))-entry random subset of each listed column.

    :param kind: Force one perturbation kind; drawn per column when `None`.
    """
    if not 0.0 <= beta <= 1.0:
        raise ConfigError(f"beta must lie in [0, 1], got {beta}")
    matrix = w.matrix.copy()
    rows = w.d + 1
    count = math.ceil(beta * rows)
    for j in dims:
        k = kind or MUTATION_KINDS[rng.choice(len(MUTATION_KINDS), p=MUTATION_KIND_PROBS)]
        if count == 0:
            continue
        idx = rng.choice(rows, size=count, replace=False)
        if k is MutationKind.SMALL:
            sigma = SMALL_SIGMA_SCALE * (1.0 + np.abs(matrix[idx, j]))
            matrix[idx, j] += rng.normal(size=count) * sigma
        elif k is MutationKind.LARGE:
            matrix[idx, j] += rng.normal(size=count) * LARGE_SIGMA
        else:
            bound = policy_init_bound(w.d)
            matrix[idx, j] = rng.uniform(-bound, bound, size=count)
        logger.debug("mutation: column {} {} on {} entries", j, k.value, count)
    return PolicyRepresentation(matrix)


def b_mutation(
    w: PolicyRepresentation, alpha: float, beta: float, rng: np.random.Generator
) -> PolicyRepresentation:
    """
    Mutate each action dimension independently with probability `alpha`.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    dims = np.flatnonzero(rng.random(w.action_dim) < alpha)
    return mutate_columns(w, dims, beta, rng)


def param_crossover_at(a: P, b: P, cuts: Sequence[int]) -> Tuple[P, P]:
    """
    Segment-wise exchange of flattened parameters at the given cut indices.

    The first child takes even segments from `a` and odd ones from `b`.
    """
    if a.shapes() != b.shapes():
        raise ShapeMismatch("crossover architectures", a.shapes(), b.shapes())
    fa, fb = a.flat(), b.flat()
    c1, c2 = fa.copy(), fb.copy()
    bounds = [0, *sorted(int(c) for c in cuts), fa.shape[0]]
    for k, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        if k % 2:
            c1[lo:hi], c2[lo:hi] = fb[lo:hi], fa[lo:hi]
    return a.from_flat(c1), b.from_flat(c2)


def param_crossover(a: P, b: P, points: int, rng: np.random.Generator) -> Tuple[P, P]:
    """
    k-point crossover over the flattened parameter vectors.
    """
    if a.shapes() != b.shapes():
        raise ShapeMismatch("crossover architectures", a.shapes(), b.shapes())
    size = a.size
    points = min(points, size - 1)
    cuts = rng.choice(np.arange(1, size), size=points, replace=False) if points > 0 else []
    return param_crossover_at(a, b, cuts)


def param_mutation(net: P, sigma: float, rng: np.random.Generator) -> P:
    """
    Elementwise Gaussian noise on every parameter.
    """
    if sigma == 0.0:
        return net.copy()
    flat = net.flat()
    return net.from_flat(flat + rng.normal(0.0, sigma, size=flat.shape))


@recordable
class OperatorLevel(enum.Enum):
    BEHAVIOR = "behavior"
    PARAMETER = "parameter"


@dataclasses.dataclass
class EvolutionConfig:
    alpha: float = 1.0
    """Probability that a mutated member has a given action dimension perturbed."""

    beta: float = 0.2
    """Fraction of a selected column's entries that get perturbed."""

    mutation_gate: float = MUTATION_GATE
    """Probability that a non-elite member is mutated at all."""

    crossover_level: OperatorLevel = OperatorLevel.BEHAVIOR
    mutation_level: OperatorLevel = OperatorLevel.BEHAVIOR
    param_crossover_points: int = 1
    param_mutation_sigma: float = 0.1


def _offspring(p1, p2, cfg: EvolutionConfig, rng):
    if cfg.crossover_level is OperatorLevel.PARAMETER:
        return param_crossover(p1, p2, cfg.param_crossover_points, rng)
    return crossover(p1, p2, rng)


def _mutant(w, cfg: EvolutionConfig, rng):
    if cfg.mutation_level is OperatorLevel.PARAMETER:
        return param_mutation(w, cfg.param_mutation_sigma, rng)
    return b_mutation(w, cfg.alpha, cfg.beta, rng)


def evolve_generation(
    pop: Population, outcome: SelectionOutcome, cfg: EvolutionConfig, rng: np.random.Generator
) -> Population:
    """
    Produce the next generation: discarders are overwritten pairwise by the
    children of a random elite and a random winner, then every non-elite is
    mutated with probability `cfg.mutation_gate`. Elites are carried over bitwise.

    Fitness values are carried over unchanged; they are refreshed by the next
    evaluation pass.
    """
    outcome.check(pop.n)
    members = [w.copy() for w in pop.members]
    parents = outcome.winners or outcome.elites
    discarders = list(outcome.discarders)
    for k in range(0, len(discarders), 2):
        elite = pop.members[outcome.elites[rng.integers(len(outcome.elites))]]
        winner = pop.members[parents[rng.integers(len(parents))]]
        c1, c2 = _offspring(elite, winner, cfg, rng)
        members[discarders[k]] = c1
        if k + 1 < len(discarders):
            members[discarders[k + 1]] = c2

    elites = set(outcome.elites)
    for i in range(pop.n):
        if i not in elites and rng.random() < cfg.mutation_gate:
            members[i] = _mutant(members[i], cfg, rng)
    return Population(members, pop.fitness.copy(), pop.generation + 1)


@dataclasses.dataclass(eq=False)
class CemState:
    mean: PolicyRepresentation
    var: np.ndarray
    """Per-entry variance, same shape as the mean matrix."""

    top: int
    floor: float = CEM_FLOOR
    keep_best: bool = False
    best: Optional[PolicyRepresentation] = None
    """Best member of the last draw, re-inserted when `keep_best` is set."""

    def __post_init__(self):
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.var.shape != self.mean.matrix.shape:
            raise ShapeMismatch("cem variance", self.mean.matrix.shape, self.var.shape)
        if not np.all(self.var > 0.0):
            raise ConfigError("cem variances must be positive")
        if self.top < 1:
            raise ConfigError(f"cem top count must be >= 1, got {self.top}")


def cem_init(
    mean: PolicyRepresentation, sigma_init: float, top: int, keep_best: bool = False
) -> CemState:
    return CemState(mean.copy(), np.full(mean.matrix.shape, sigma_init), top, keep_best=keep_best)


def cem_sample(
    state: CemState, n: int, rng: np.random.Generator, generation: int = 0
) -> Population:
    """
    Draw `n` members from the diagonal Gaussian around the mean.
    """
    if state.top > n:
        raise ConfigError(f"cem top count {state.top} exceeds population size {n}")
    std = np.sqrt(state.var)
    mu = state.mean.matrix
    members = [PolicyRepresentation(mu + std * rng.standard_normal(mu.shape)) for _ in range(n)]
    if state.keep_best and state.best is not None:
        members[0] = state.best.copy()
    return Population(members, generation=generation)


def cem_update(state: CemState, pop: Population, fitness: Optional[np.ndarray] = None) -> CemState:
    """
    Refit the mean and per-entry variance to the top members, variance floored.
    """
    fitness = pop.fitness if fitness is None else np.asarray(fitness, dtype=np.float64)
    if state.top > pop.n:
        raise ConfigError(f"cem top count {state.top} exceeds population size {pop.n}")
    if not np.all(np.isfinite(fitness)):
        raise NonFiniteError("fitness", pop.generation)

    order = sorted(range(pop.n), key=_rank_key(fitness))[: state.top]
    stack = np.stack([pop.members[i].matrix for i in order])
    mean = stack.mean(axis=0)
    spread = ((stack - mean) ** 2).mean(axis=0)
    if not np.any(spread > 0.0):
        logger.warning("cem: top {} members coincide, variance floored", state.top)
    return dataclasses.replace(
        state,
        mean=PolicyRepresentation(mean),
        var=spread + state.floor,
        best=pop.members[order[0]].copy(),
    )


@recordable
@dataclasses.dataclass
class GenerationRecord:
    generation: int
    fitness: List[float]
    kinds: List[FitnessKind]
    elite: int
    steps: int
    """Environment steps consumed by this generation's evaluation."""
