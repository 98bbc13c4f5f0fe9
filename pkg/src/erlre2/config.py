"""
Run configuration: defaults, named presets, validation and the flat
``key = value`` file format.
"""
import dataclasses
import enum
import json
from typing import Any, Dict, Mapping, Tuple, get_type_hints

from erlre2.envs import EnvRegistry
from erlre2.errors import ConfigError
from erlre2.evolution import EvolutionConfig, OperatorLevel
from erlre2.records import RecordOptions, from_record, recordable, to_record
from erlre2.reinforcement import RlMode, SharedRepTerms, UpdateConfig
from erlre2.types import inspect_generic_origin, is_generic


@recordable
class EvolutionMode(enum.Enum):
    GA = "ga"
    CEM = "cem"
    NONE = "none"


@recordable
class EvalPolicy(enum.Enum):
    RL = "rl"
    ELITE = "elite"


@recordable
@dataclasses.dataclass
class RunConfig:
    env: str = "pointmass"
    env_horizon: int = 0
    """Episode length override; 0 keeps the environment's own horizon."""

    mode: RlMode = RlMode.TD3
    evolution: EvolutionMode = EvolutionMode.GA
    rl_enabled: bool = True
    """False runs the population alone, still training the shared representation."""

    population: int = 5
    elites: int = 1

    p: float = 0.8
    """Probability of the Monte-Carlo fitness path in an iteration."""

    h: int = 50
    """Surrogate rollout prefix length."""

    surrogate_episodes: int = 1
    fitness_episodes: int = 1
    """Full episodes per member on the Monte-Carlo path."""

    k: int = 1
    alpha: float = 1.0
    beta: float = 0.2
    mutation_gate: float = 0.9
    crossover_level: OperatorLevel = OperatorLevel.BEHAVIOR
    mutation_level: OperatorLevel = OperatorLevel.BEHAVIOR
    param_crossover_points: int = 1
    param_mutation_sigma: float = 0.1

    cem_sigma_init: float = 1e-2
    """Initial per-entry variance of the CEM distribution."""

    cem_top: int = 2
    cem_floor: float = 1e-6
    cem_keep_best: bool = True

    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    warmup_steps: int = 1000
    """Environment steps collected before the first update."""

    lr_critic: float = 1e-3
    lr_pevfa: float = 1e-3
    lr_actor: float = 1e-3
    lr_shared: float = 1e-3
    explore_sigma: float = 0.1
    target_noise: float = 0.2
    noise_clip: float = 0.4
    policy_delay: int = 2
    sharedrep_terms: SharedRepTerms = SharedRepTerms.BOTH
    sharedrep_normalize_k: bool = False
    pevfa_per_transition: bool = False

    shared_hidden: Tuple[int, ...] = (64, 32)
    critic_hidden: Tuple[int, ...] = (64, 64)
    pevfa_hidden: Tuple[int, ...] = (64, 64)
    pevfa_embedding: int = 64
    buffer_capacity: int = 100000

    total_steps: int = 60000
    injection_period: int = 1
    """Generations between injections of the RL policy; 0 never injects."""

    eval_episodes: int = 3
    eval_policy: EvalPolicy = EvalPolicy.RL
    seed: int = 0
    parallel: bool = False
    """Evaluate population members on worker threads (capped by ERL2_THREADS)."""

    checkpoint_every: int = 0
    """Iterations between checkpoints; 0 only writes the final one."""

    log_wallclock: bool = False
    """Fill the wallclock_s column of metrics.csv; off keeps repeated runs byte-identical."""

    progress: bool = False
    out: str = "runs/erlre2"

    def validate(self) -> "RunConfig":
        """
        :raises ConfigError: on the first invalid value.
        """
        if EnvRegistry.query(name=self.env) is None:
            raise ConfigError(f"unknown environment {self.env!r}")
        for name in ("p", "alpha", "beta", "mutation_gate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.h < 0:
            raise ConfigError(f"h must be >= 0, got {self.h}")
        positive = (
            "surrogate_episodes",
            "fitness_episodes",
            "total_steps",
            "eval_episodes",
            "pevfa_embedding",
            "buffer_capacity",
            "cem_top",
        )
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("env_horizon", "warmup_steps", "injection_period", "checkpoint_every"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.shared_hidden or min(self.shared_hidden) < 1:
            raise ConfigError(f"shared_hidden needs positive widths, got {self.shared_hidden}")
        if self.cem_sigma_init <= 0.0 or self.cem_floor <= 0.0:
            raise ConfigError("cem_sigma_init and cem_floor must be positive")

        if self.evolution is EvolutionMode.NONE:
            if not self.rl_enabled:
                raise ConfigError("evolution 'none' needs the RL agent")
        else:
            if self.population < 3:
                raise ConfigError(f"population must be >= 3, got {self.population}")
            if not 1 <= self.elites < self.population:
                top = self.population - 1
                raise ConfigError(f"elites must be in [1, {top}], got {self.elites}")
            if self.k > self.population:
                raise ConfigError(f"k = {self.k} exceeds the population size {self.population}")
            if self.cem_top > self.population:
                raise ConfigError(f"cem_top = {self.cem_top} exceeds the population size")
            if not self.rl_enabled and self.h == 0 and self.p < 1.0:
                # surrogate iterations would step no environment at all
                raise ConfigError("h = 0 with p < 1 needs the RL agent to collect steps")
        if self.eval_policy is EvalPolicy.RL and not self.rl_enabled:
            raise ConfigError("eval_policy 'rl' needs the RL agent")
        self.update_config().validate()
        return self

    @property
    def uses_population(self) -> bool:
        return self.evolution is not EvolutionMode.NONE

    def update_config(self) -> UpdateConfig:
        return UpdateConfig(
            gamma=self.gamma,
            tau=self.tau,
            batch_size=self.batch_size,
            k=self.k if self.uses_population else 0,
            mode=self.mode,
            target_noise=self.target_noise,
            noise_clip=self.noise_clip,
            policy_delay=self.policy_delay,
            lr_critic=self.lr_critic,
            lr_pevfa=self.lr_pevfa,
            lr_actor=self.lr_actor,
            lr_shared=self.lr_shared,
            sharedrep_terms=self.sharedrep_terms,
            sharedrep_normalize_k=self.sharedrep_normalize_k,
            pevfa_per_transition=self.pevfa_per_transition,
            rl_enabled=self.rl_enabled,
            pevfa_enabled=self.uses_population,
        )

    def evolution_config(self) -> EvolutionConfig:
        return EvolutionConfig(
            alpha=self.alpha,
            beta=self.beta,
            mutation_gate=self.mutation_gate,
            crossover_level=self.crossover_level,
            mutation_level=self.mutation_level,
            param_crossover_points=self.param_crossover_points,
            param_mutation_sigma=self.param_mutation_sigma,
        )


def _task_presets() -> Dict[str, Dict[str, Any]]:
    td3 = {
        "halfcheetah": (0.3, 1.0, 200, 1),
        "walker": (0.8, 0.2, 50, 1),
        "swimmer": (0.3, 1.0, 200, 3),
        "hopper": (0.8, 0.2, 50, 3),
        "ant": (0.5, 0.7, 200, 1),
        "humanoid": (0.5, 0.5, 200, 1),
    }
    ddpg = {
        "halfcheetah": (0.5, 1.0, 200, 1),
        "walker": (0.8, 0.2, 50, 1),
        "swimmer": (0.3, 0.5, 200, 3),
        "hopper": (0.8, 0.7, 50, 3),
        "ant": (0.7, 0.5, 200, 1),
        "humanoid": (0.7, 0.5, 200, 1),
    }
    presets = {}
    for mode, table in (("td3", td3), ("ddpg", ddpg)):
        for task, (p, beta, h, k) in table.items():
            preset = dict(mode=mode, p=p, beta=beta, h=h, k=k)
            if task == "swimmer":
                preset["gamma"] = 0.999
            presets[f"{mode}-{task}"] = preset
    presets["full-scale"] = dict(
        shared_hidden=(400, 300),
        critic_hidden=(400, 300),
        pevfa_hidden=(400, 300),
        pevfa_embedding=64,
    )
    presets["no-surrogate"] = dict(p=1.0)
    return presets


PRESETS: Dict[str, Dict[str, Any]] = _task_presets()

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_value(name: str, text: str, cls: Any) -> Any:
    try:
        if cls is bool:
            lowered = text.lower()
            if lowered not in _TRUE | _FALSE:
                raise ValueError(text)
            return lowered in _TRUE
        if cls is int:
            return int(text)
        if cls is float:
            return float(text)
        if is_generic(cls) and inspect_generic_origin(cls) is tuple:
            items = [int(item) for item in text.split(",") if item.strip()]
            return from_record(items, cls)
        if isinstance(cls, type) and issubclass(cls, enum.Enum):
            return from_record(text.lower(), cls)
    except ValueError as e:
        raise ConfigError(f"bad value {text!r} for {name}: {e}") from e
    return text


def _field_types() -> Dict[str, Any]:
    return get_type_hints(RunConfig)


def apply_overrides(cfg: RunConfig, values: Mapping[str, Any]) -> RunConfig:
    """
    Return a copy of `cfg` with `values` applied; string values are parsed by
    the field type. A ``preset`` entry is applied before the other entries.

    :raises ConfigError: on unknown keys, unknown presets or unparsable values.
    """
    types = _field_types()
    values = dict(values)
    preset = values.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}, choose from {sorted(PRESETS)}")
        values = {**PRESETS[preset], **values}
    changes: Dict[str, Any] = {}
    for key, value in values.items():
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        changes[key] = _parse_value(key, value, types[key]) if isinstance(value, str) else value
    return dataclasses.replace(cfg, **changes)


def parse_config_text(text: str, base: RunConfig = None) -> RunConfig:
    values: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return apply_overrides(base or RunConfig(), values)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config_text(text)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config_text(cfg: RunConfig) -> str:
    """
    Every field, defaults included, in the format `parse_config_text` reads.
    """
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def config_to_json(cfg: RunConfig) -> str:
    return json.dumps(to_record(cfg, RecordOptions(with_cls=True)), sort_keys=True, indent=2)


def config_from_json(text: str) -> RunConfig:
    try:
        record = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"corrupt config record: {e}") from e
    return from_record(record, RunConfig)
