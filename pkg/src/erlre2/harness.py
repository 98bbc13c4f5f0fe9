"""
The outer training loop, evaluation of saved runs, and the ablation matrix.

One iteration evaluates the population (Monte-Carlo or surrogate fitness,
decided by a single coin), rolls the RL agent out for one noisy episode,
performs one update step per environment step collected, evolves the
population and periodically injects the RL policy. Every environment step
spent on evaluation or exploration is counted; evaluation episodes of the
reported policy are not.
"""
import csv
import dataclasses
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger
from tqdm import tqdm

from erlre2 import checkpoint
from erlre2.config import (
    EvalPolicy,
    EvolutionMode,
    RunConfig,
    apply_overrides,
    config_from_json,
    config_to_json,
    dump_config_text,
)
from erlre2.envs import Env, ReplayBuffer, Transition, make_env, rollout
from erlre2.errors import CheckpointError, ConfigError, ErlError, UnknownAxis
from erlre2.evolution import (
    CemState,
    FitnessEstimate,
    GenerationRecord,
    Population,
    cem_init,
    cem_sample,
    cem_update,
    evaluate_fitness_mc,
    evaluate_fitness_surrogate,
    evolve_generation,
    init_population,
    select,
)
from erlre2.policy import (
    PolicyRepresentation,
    SharedRepresentation,
    init_policy,
    make_shared_representation,
)
from erlre2.records import RecordOptions, recordable, to_record
from erlre2.reinforcement import Learner, LossRecord, RlAgent, RlMode, rl_inject
from erlre2.values import make_critic, make_pevfa

THREADS_ENV = "ERL2_THREADS"
CHECKPOINT_NAME = "checkpoint.erl2"

_STREAMS = ("init", "rl", "update", "evolution", "coin", "eval", "members")


def thread_count() -> int:
    """
    Worker cap for parallel population evaluation, from ``ERL2_THREADS``.
    """
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from e
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {value}")
    return value


class Streams:
    """
    Independent random streams split from the run seed.
    """

    def __init__(self, seed: int):
        self.seed = seed
        children = np.random.SeedSequence(seed).spawn(len(_STREAMS))
        self.sequences = dict(zip(_STREAMS, children))
        self.generators = {
            name: np.random.default_rng(seq) for name, seq in self.sequences.items()
        }

    def __getitem__(self, name: str) -> np.random.Generator:
        return self.generators[name]

    def fresh(self, name: str) -> np.random.Generator:
        """A generator restarted from the stream's seed."""
        return np.random.default_rng(self.sequences[name])

    def member(self, iteration: int, index: int) -> np.random.Generator:
        """Private stream of one member in one iteration."""
        key = self.sequences["members"].spawn_key + (iteration, index)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


def make_run_env(cfg: RunConfig) -> Env:
    kwargs = dict(horizon=cfg.env_horizon) if cfg.env_horizon else {}
    return make_env(cfg.env, **kwargs)


@dataclasses.dataclass(eq=False)
class TrainState:
    learner: Learner
    population: Optional[Population] = None
    cem: Optional[CemState] = None
    steps: int = 0
    episodes: int = 0
    iteration: int = 0

    @property
    def shared(self) -> SharedRepresentation:
        return self.learner.shared


def build_state(cfg: RunConfig, env: Env, rng: np.random.Generator) -> TrainState:
    spec = env.spec
    shared = make_shared_representation(spec.state_width, cfg.shared_hidden, rng)
    d, action_dim = shared.d, spec.action_dim
    critic = agent = pevfa = None
    if cfg.rl_enabled:
        twin = cfg.mode is RlMode.TD3
        critic = make_critic(spec.state_width, action_dim, cfg.critic_hidden, twin, rng)
        agent = RlAgent.of(init_policy(d, action_dim, rng), cfg.explore_sigma)
    population = cem = None
    if cfg.uses_population:
        pevfa = make_pevfa(
            spec.state_width,
            action_dim,
            d,
            cfg.pevfa_hidden,
            cfg.mode is RlMode.TD3,
            rng,
            embedding_width=cfg.pevfa_embedding,
        )
        if cfg.evolution is EvolutionMode.CEM:
            cem = cem_init(
                init_policy(d, action_dim, rng), cfg.cem_sigma_init, cfg.cem_top, cfg.cem_keep_best
            )
            cem.floor = cfg.cem_floor
        else:
            population = init_population(cfg.population, d, action_dim, rng)
    learner = Learner(shared, critic, pevfa, agent, cfg.update_config(), spec.action_spec)
    return TrainState(learner, population, cem)


def state_entries(state: TrainState) -> Dict[str, np.ndarray]:
    learner = state.learner
    entries = {}
    entries.update(checkpoint.pack_params("shared", learner.shared))
    entries.update(checkpoint.pack_params("shared_target", learner.shared_target))
    if learner.critic is not None:
        entries.update(checkpoint.pack_params("critic", learner.critic))
        entries.update(checkpoint.pack_params("critic_target", learner.critic_target))
        entries.update(checkpoint.pack_params("w_rl", learner.agent.w))
        entries.update(checkpoint.pack_params("w_rl_target", learner.agent.target))
    if learner.pevfa is not None:
        entries.update(checkpoint.pack_params("pevfa", learner.pevfa))
        entries.update(checkpoint.pack_params("pevfa_target", learner.pevfa_target))
    if state.population is not None:
        for i, w in enumerate(state.population.members):
            entries.update(checkpoint.pack_params(f"population.{i}", w))
        entries["population_fitness"] = state.population.fitness
    if state.cem is not None:
        entries.update(checkpoint.pack_params("cem_mean", state.cem.mean))
        entries["cem_var"] = state.cem.var
        if state.cem.best is not None:
            entries.update(checkpoint.pack_params("cem_best", state.cem.best))
    return entries


def restore_state(cfg: RunConfig, env: Env, entries, meta) -> TrainState:
    """
    Rebuild a training state of `cfg`'s shapes and fill it from checkpoint entries.
    """
    state = build_state(cfg, env, np.random.default_rng(0))
    learner = state.learner
    learner.shared = checkpoint.unpack_params("shared", learner.shared, entries)
    learner.shared_target = checkpoint.unpack_params("shared_target", learner.shared, entries)
    if learner.critic is not None:
        learner.critic = checkpoint.unpack_params("critic", learner.critic, entries)
        learner.critic_target = checkpoint.unpack_params("critic_target", learner.critic, entries)
        learner.agent.w = checkpoint.unpack_params("w_rl", learner.agent.w, entries)
        learner.agent.target = checkpoint.unpack_params("w_rl_target", learner.agent.w, entries)
    if learner.pevfa is not None:
        learner.pevfa = checkpoint.unpack_params("pevfa", learner.pevfa, entries)
        learner.pevfa_target = checkpoint.unpack_params("pevfa_target", learner.pevfa, entries)
    if state.population is not None:
        members = [
            checkpoint.unpack_params(f"population.{i}", w, entries)
            for i, w in enumerate(state.population.members)
        ]
        if "population_fitness" not in entries:
            raise CheckpointError("checkpoint has no population fitness")
        state.population = Population(members, entries["population_fitness"].copy())
    if state.cem is not None:
        state.cem.mean = checkpoint.unpack_params("cem_mean", state.cem.mean, entries)
        if "cem_var" not in entries:
            raise CheckpointError("checkpoint has no cem variance")
        state.cem.var = entries["cem_var"].copy()
        if "cem_best.0" in entries:
            state.cem.best = checkpoint.unpack_params("cem_best", state.cem.mean, entries)
    state.steps = int(meta.get("steps", 0))
    state.episodes = int(meta.get("episodes", 0))
    state.iteration = int(meta.get("iteration", 0))
    return state


def save_state(path: str, cfg: RunConfig, state: TrainState, aborted: bool = False):
    meta = dict(
        config=json.loads(config_to_json(cfg)),
        steps=state.steps,
        episodes=state.episodes,
        iteration=state.iteration,
        aborted=aborted,
    )
    checkpoint.save(path, state_entries(state), meta)


def _finite_best(fitness: np.ndarray) -> int:
    masked = np.where(np.isfinite(fitness), fitness, -np.inf)
    return int(np.argmax(masked))


def policy_to_evaluate(cfg: RunConfig, state: TrainState) -> PolicyRepresentation:
    if cfg.eval_policy is EvalPolicy.RL:
        return state.learner.agent.w
    if state.cem is not None:
        return state.cem.best if state.cem.best is not None else state.cem.mean
    return state.population.members[_finite_best(state.population.fitness)]


@recordable
@dataclasses.dataclass
class EvalResult:
    mean: float
    std: float
    returns: List[float]


def run_episodes(
    shared: SharedRepresentation,
    w: PolicyRepresentation,
    env: Env,
    episodes: int,
    rng: np.random.Generator,
) -> EvalResult:
    """
    Noise-free full episodes; mean and population std of their returns.
    """
    returns = [
        rollout(shared, w, env, env.spec.horizon, 0.0, rng).episode_return
        for _ in range(episodes)
    ]
    return EvalResult(float(np.mean(returns)), float(np.std(returns)), returns)


@recordable
@dataclasses.dataclass
class MetricsRow:
    step: int
    episodes: int
    fitness_best: Optional[float] = None
    fitness_mean: Optional[float] = None
    rl_eval_return: Optional[float] = None
    surrogate_used: Optional[bool] = None
    wallclock_s: Optional[float] = None


@recordable
@dataclasses.dataclass
class RunSummary:
    best_fitness: Optional[float]
    eval_return: Optional[float]
    eval_std: Optional[float]
    total_steps: int
    episodes: int
    iterations: int
    wallclock_s: float
    aborted: bool = False


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


class RunLog:
    """
    Append-only run outputs in one directory: ``metrics.csv``, ``losses.csv``,
    ``generations.jsonl``, ``summary.json`` and the config echo.

    Rows are also kept in memory. Files are flushed after every iteration.

    The ``rl_eval_return`` column holds the return of whichever policy
    ``eval_policy`` names, so with ``eval_policy = elite`` it is the return of
    the best population member.
    """

    METRICS_HEADER = (
        "step",
        "episodes",
        "fitness_best",
        "fitness_mean",
        "rl_eval_return",
        "surrogate_used",
        "wallclock_s",
    )
    LOSSES_HEADER = ("step", "loss_critic", "loss_pevfa", "loss_actor", "loss_sharedrep")

    def __init__(self, out_dir: str, cfg: RunConfig):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.rows: List[MetricsRow] = []
        self.generations: List[GenerationRecord] = []
        self.loss_rows = 0
        self.summary: Optional[RunSummary] = None

        with open(self.path("config.txt"), "w", encoding="utf-8") as f:
            f.write(dump_config_text(cfg))
        with open(self.path("config.json"), "w", encoding="utf-8") as f:
            f.write(config_to_json(cfg) + "\n")

        self._metrics_file = open(self.path("metrics.csv"), "w", newline="", encoding="utf-8")
        self._metrics = csv.writer(self._metrics_file, lineterminator="\n")
        self._metrics.writerow(self.METRICS_HEADER)
        self._losses_file = open(self.path("losses.csv"), "w", newline="", encoding="utf-8")
        self._losses = csv.writer(self._losses_file, lineterminator="\n")
        self._losses.writerow(self.LOSSES_HEADER)
        self._generations_file = open(self.path("generations.jsonl"), "w", encoding="utf-8")

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def metrics(self, row: MetricsRow):
        if self.rows and row.step < self.rows[-1].step:
            raise ErlError(f"step counter went backwards: {row.step} < {self.rows[-1].step}")
        self.rows.append(row)
        self._metrics.writerow([_cell(getattr(row, name)) for name in self.METRICS_HEADER])

    def losses(self, records: Sequence[LossRecord]):
        for record in records:
            self._losses.writerow([_cell(getattr(record, name)) for name in self.LOSSES_HEADER])
        self.loss_rows += len(records)

    def generation(self, record: GenerationRecord):
        self.generations.append(record)
        line = to_record(record, RecordOptions(with_cls=False))
        self._generations_file.write(json.dumps(line, sort_keys=True) + "\n")

    def flush(self):
        for f in (self._metrics_file, self._losses_file, self._generations_file):
            f.flush()

    def finish(self, summary: RunSummary):
        self.summary = summary
        with open(self.path("summary.json"), "w", encoding="utf-8") as f:
            record = to_record(summary, RecordOptions(with_cls=False))
            json.dump(record, f, sort_keys=True, indent=2)
            f.write("\n")

    def close(self):
        for f in (self._metrics_file, self._losses_file, self._generations_file):
            f.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


class Trainer:
    """
    Runs the iterations of one configured training run.
    """

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg.validate()
        self.streams = Streams(cfg.seed)
        self.env = make_run_env(cfg)
        self.eval_env = make_run_env(cfg)
        self.spec = self.env.spec
        self.state = build_state(cfg, self.env, self.streams["init"])
        self.buffer = ReplayBuffer(cfg.buffer_capacity, self.spec.state_width, self.spec.action_dim)
        self.member_envs = [make_run_env(cfg) for _ in range(cfg.population)]
        self.evolution_cfg = cfg.evolution_config()
        self.threads = min(thread_count(), cfg.population) if cfg.parallel else 1
        self.last_eval: Optional[EvalResult] = None

    def _evaluate_member(
        self, i: int, w: PolicyRepresentation, use_mc: bool
    ) -> Tuple[FitnessEstimate, List[Transition]]:
        cfg, state = self.cfg, self.state
        rng = self.streams.member(state.iteration, i)
        env = self.member_envs[i]
        if use_mc:
            return evaluate_fitness_mc(state.shared, w, env, cfg.fitness_episodes, rng)
        return evaluate_fitness_surrogate(
            state.shared,
            w,
            env,
            state.learner.pevfa,
            cfg.h,
            cfg.gamma,
            rng,
            episodes=cfg.surrogate_episodes,
        )

    def evaluate_population(
        self, pop: Population, use_mc: bool
    ) -> List[Tuple[FitnessEstimate, List[Transition]]]:
        """
        Fitness of every member, in member order whether or not threads are used.
        """
        indexed = list(enumerate(pop.members))
        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as executor:
                return list(executor.map(lambda iw: self._evaluate_member(*iw, use_mc), indexed))
        return [self._evaluate_member(i, w, use_mc) for i, w in indexed]

    def _current_population(self) -> Population:
        cfg, state = self.cfg, self.state
        if state.cem is None:
            return state.population
        pop = cem_sample(state.cem, cfg.population, self.streams["evolution"], state.iteration)
        if self._inject_due():
            pop.members[-1] = state.learner.agent.w.copy()
        return pop

    def _inject_due(self) -> bool:
        period = self.cfg.injection_period
        return self.cfg.rl_enabled and period > 0 and self.state.iteration % period == 0

    def iteration(self) -> Tuple[MetricsRow, List[LossRecord], Optional[GenerationRecord]]:
        cfg, state = self.cfg, self.state
        state.iteration += 1
        collected = 0
        row = MetricsRow(step=0, episodes=0)
        generation = None

        pop = None
        if cfg.uses_population:
            pop = self._current_population()
            use_mc = self.streams["coin"].random() < cfg.p
            results = self.evaluate_population(pop, use_mc)
            pop.fitness = np.array([est.value for est, _ in results])
            for est, transitions in results:
                self.buffer.push(transitions)
                collected += est.steps_used
                state.episodes += est.episodes_used
            row.fitness_best = float(np.max(pop.fitness))
            row.fitness_mean = float(np.mean(pop.fitness))
            row.surrogate_used = not use_mc
            generation = GenerationRecord(
                generation=pop.generation,
                fitness=[float(f) for f in pop.fitness],
                kinds=[est.kind for est, _ in results],
                elite=_finite_best(pop.fitness),
                steps=collected,
            )

        if cfg.rl_enabled:
            agent = state.learner.agent
            res = rollout(
                state.shared,
                agent.w,
                self.env,
                self.spec.horizon,
                agent.explore_sigma,
                self.streams["rl"],
            )
            self.buffer.push(res.transitions)
            collected += res.steps
            state.episodes += 1

        state.steps += collected
        losses: List[LossRecord] = []
        if state.steps >= cfg.warmup_steps and len(self.buffer) >= cfg.batch_size:
            members = pop.members if pop is not None else []
            losses = state.learner.run(self.buffer, members, collected, self.streams["update"])

        if pop is not None:
            if state.cem is not None:
                state.cem = cem_update(state.cem, pop)
            else:
                outcome = select(pop, cfg.elites, self.streams["evolution"])
                pop = evolve_generation(pop, outcome, self.evolution_cfg, self.streams["evolution"])
                if self._inject_due():
                    pop = rl_inject(pop, state.learner.agent.w, cfg.elites)
                state.population = pop

        result = run_episodes(
            state.shared,
            policy_to_evaluate(cfg, state),
            self.eval_env,
            cfg.eval_episodes,
            self.streams.fresh("eval"),
        )
        row.step, row.episodes = state.steps, state.episodes
        row.rl_eval_return = result.mean
        self.last_eval = result
        logger.info(
            "iteration {}: {} steps, eval {:.3f}, best fitness {}",
            state.iteration,
            state.steps,
            result.mean,
            row.fitness_best,
        )
        return row, losses, generation


def train(cfg: RunConfig, out_dir: Optional[str] = None) -> RunLog:
    """
    Run the hybrid training loop until the step budget is spent.

    Writes metrics, losses, generation records, a summary, the config echo and
    a final checkpoint into the output directory. On any error a checkpoint
    flagged as aborted is written before the error propagates.
    """
    trainer = Trainer(cfg)
    cfg = trainer.cfg
    out_dir = out_dir or cfg.out
    ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)
    started = time.perf_counter()
    best_fitness = None

    with RunLog(out_dir, cfg) as log, tqdm(
        total=cfg.total_steps, disable=not cfg.progress, unit="step"
    ) as bar:
        logger.info(
            "training {} ({}, evolution {}) into {}",
            cfg.env,
            cfg.mode.value,
            cfg.evolution.value,
            out_dir,
        )
        try:
            while trainer.state.steps < cfg.total_steps:
                before = trainer.state.steps
                row, losses, generation = trainer.iteration()
                if cfg.log_wallclock:
                    row.wallclock_s = time.perf_counter() - started
                log.metrics(row)
                log.losses(losses)
                if generation is not None:
                    log.generation(generation)
                    if best_fitness is None or row.fitness_best > best_fitness:
                        best_fitness = row.fitness_best
                log.flush()
                bar.update(min(trainer.state.steps, cfg.total_steps) - min(before, cfg.total_steps))
                every = cfg.checkpoint_every
                if every and trainer.state.iteration % every == 0:
                    save_state(ckpt_path, cfg, trainer.state)
                if row.step == before:
                    raise ConfigError("an iteration collected no environment steps")
        except BaseException:
            logger.exception("training aborted at step {}", trainer.state.steps)
            save_state(ckpt_path, cfg, trainer.state, aborted=True)
            raise

        save_state(ckpt_path, cfg, trainer.state)
        last = trainer.last_eval
        log.finish(
            RunSummary(
                best_fitness=best_fitness,
                eval_return=None if last is None else last.mean,
                eval_std=None if last is None else last.std,
                total_steps=trainer.state.steps,
                episodes=trainer.state.episodes,
                iterations=trainer.state.iteration,
                wallclock_s=time.perf_counter() - started,
            )
        )
    return log


def evaluate(
    path: str,
    episodes: Optional[int] = None,
    seed: Optional[int] = None,
    env_name: Optional[str] = None,
) -> EvalResult:
    """
    Evaluate the policy stored in a checkpoint without exploration noise.

    With the run's own seed and episode count this reproduces the evaluation
    made at the end of training.

    :raises CheckpointError: if the checkpoint cannot be read or does not fit
        its recorded config.
    """
    entries, meta = checkpoint.load(path)
    if "config" not in meta:
        raise CheckpointError("checkpoint carries no config")
    try:
        cfg = config_from_json(json.dumps(meta["config"]))
    except ErlError as e:
        raise CheckpointError(f"checkpoint config is unreadable: {e}") from e
    if env_name is not None:
        cfg = dataclasses.replace(cfg, env=env_name)
    env = make_run_env(cfg)
    state = restore_state(cfg, env, entries, meta)
    seed = cfg.seed if seed is None else seed
    rng = Streams(seed).fresh("eval")
    w = policy_to_evaluate(cfg, state)
    result = run_episodes(state.shared, w, env, episodes or cfg.eval_episodes, rng)
    logger.info("evaluated {}: mean {:.4f}, std {:.4f}", path, result.mean, result.std)
    return result


Cells = List[Tuple[str, Dict[str, Any]]]


def _operators(base: RunConfig) -> Cells:
    levels = ("behavior", "parameter")
    return [
        (f"crossover-{c}_mutation-{m}", dict(crossover_level=c, mutation_level=m))
        for c in levels
        for m in levels
    ]


def _surrogate(base: RunConfig) -> Cells:
    return [("surrogate-on", dict(p=min(base.p, 0.8))), ("surrogate-off", dict(p=1.0))]


def _sharedrep(base: RunConfig) -> Cells:
    return [
        ("both", dict(sharedrep_terms="both")),
        ("critic-only", dict(sharedrep_terms="critic", k=0)),
        ("pevfa-only", dict(sharedrep_terms="pevfa", k=max(base.k, 1))),
    ]


def _sweep(name: str, values: Sequence[Any]) -> Callable[[RunConfig], Cells]:
    return lambda base: [(f"{name}-{v}", {name: v}) for v in values]


def _k(base: RunConfig) -> Cells:
    return [(f"k-{k}", dict(k=k)) for k in range(1, min(3, base.population) + 1)]


def _ea_only(base: RunConfig) -> Cells:
    return [
        ("hybrid", dict()),
        ("ea-with-shared-representation", dict(rl_enabled=False, eval_policy="elite")),
    ]


ABLATION_AXES: Dict[str, Callable[[RunConfig], Cells]] = {
    "operators": _operators,
    "surrogate": _surrogate,
    "sharedrep": _sharedrep,
    "k": _k,
    "alpha": _sweep("alpha", (0.1, 0.5, 1.0)),
    "p": _sweep("p", (0.0, 0.3, 0.5, 0.8, 1.0)),
    "h": _sweep("h", (10, 25, 50, 100)),
    "beta": _sweep("beta", (0.05, 0.2, 0.5, 1.0)),
    "population": _sweep("population", (3, 5, 10)),
    "ea_only": _ea_only,
}


def ablation_cells(base: RunConfig, axis: str) -> List[Tuple[str, RunConfig]]:
    """
    The configs of one ablation axis; cells differ from `base` only on that axis.

    :raises UnknownAxis: if `axis` is not one of :py:data:`ABLATION_AXES`.
    """
    if axis not in ABLATION_AXES:
        raise UnknownAxis(axis, ABLATION_AXES)
    cells = []
    for label, overrides in ABLATION_AXES[axis](base):
        cfg = apply_overrides(base, overrides)
        cfg = dataclasses.replace(cfg, out=os.path.join(base.out, axis, label))
        cells.append((label, cfg.validate()))
    return cells


@dataclasses.dataclass(eq=False)
class AblationCell:
    label: str
    cfg: RunConfig
    log: RunLog


def ablate(base: RunConfig, axis: str) -> List[AblationCell]:
    """
    Train one run per cell of `axis` with the base seed, then write
    ``ablation.csv`` summarising the cells.
    """
    cells = ablation_cells(base, axis)
    results = []
    for label, cfg in tqdm(cells, disable=not base.progress, desc=axis):
        logger.info("ablation {}: cell {}", axis, label)
        results.append(AblationCell(label, cfg, train(cfg, cfg.out)))

    os.makedirs(os.path.join(base.out, axis), exist_ok=True)
    with open(os.path.join(base.out, axis, "ablation.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("cell", "total_steps", "best_fitness", "eval_return"))
        for cell in results:
            s = cell.log.summary
            writer.writerow(
                (cell.label, s.total_steps, _cell(s.best_fitness), _cell(s.eval_return))
            )
    return results
