"""
Environments, rollouts and the shared replay buffer.

Environments are looked up by name through :py:class:`EnvRegistry`. Every
episode ends either by genuine termination (``terminal=True``, bootstrapping is
masked) or by reaching the horizon (``truncated=True``, ``terminal=False``).
"""
import dataclasses
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Type, TypeVar

import numpy as np
from loguru import logger
from registry import Registry

from erlre2.errors import ConfigError, ContractViolation, ShapeMismatch
from erlre2.policy import ActionSpec, PolicyRepresentation, SharedRepresentation, policy_forward
from erlre2.types import all_finite

E = TypeVar("E", bound="Env")


@dataclasses.dataclass(eq=False)
class EnvSpec:
    state_width: int
    action_spec: ActionSpec
    horizon: int
    gamma: float = 0.99

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")

    @property
    def action_dim(self) -> int:
        return self.action_spec.dim


@dataclasses.dataclass(frozen=True, eq=False)
class StepResult:
    next_state: np.ndarray
    reward: float
    terminal: bool
    truncated: bool


@dataclasses.dataclass(frozen=True, eq=False)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool
    """True only for genuine termination, never for horizon truncation."""


@dataclasses.dataclass
class EnvMeta:
    name: str


class EnvRegistry(Registry[EnvMeta]):
    @staticmethod
    def make(name: str, **kwargs) -> "Env":
        cls = EnvRegistry.query(name=name)
        if cls is None:
            raise ConfigError(f"unknown environment {name!r}")
        return cls(**kwargs)


def register_env(name: str) -> Callable[[Type[E]], Type[E]]:
    def inner(cls):
        EnvRegistry.register(name=name)(cls)
        cls.name = name
        return cls

    return inner


make_env = EnvRegistry.make


class Env:
    """
    Base class. Subclasses implement `_reset` and `_step` on their internal state.
    """

    name = "env"
    spec: EnvSpec

    def __init__(self):
        self._t = 0
        self._done = True

    def reset(
        self, rng: np.random.Generator, start: Optional[Sequence[float]] = None
    ) -> np.ndarray:
        """
        Start an episode, drawing the initial state from `rng` unless `start`
        (the internal state) is given.
        """
        self._t = 0
        self._done = False
        return self._reset(rng, start)

    def step(self, a) -> StepResult:
        if self._done:
            raise ContractViolation(f"{self.name}: step called after the episode ended")
        spec = self.spec.action_spec
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        if a.shape != (spec.dim,):
            raise ShapeMismatch(f"{self.name} action", (spec.dim,), a.shape)
        clipped = spec.clip(a)
        if not np.array_equal(clipped, a):
            logger.debug("{}: action {} clamped to {}", self.name, a, clipped)

        next_state, reward, terminal = self._step(clipped)
        self._t += 1
        truncated = not terminal and self._t >= self.spec.horizon
        self._done = terminal or truncated
        if not all_finite(next_state) or not np.isfinite(reward):
            raise ContractViolation(f"{self.name}: non-finite transition at t={self._t}")
        return StepResult(next_state, float(reward), bool(terminal), bool(truncated))

    def _reset(self, rng: np.random.Generator, start) -> np.ndarray:
        raise NotImplementedError

    def _step(self, a: np.ndarray) -> Tuple[np.ndarray, float, bool]:
        raise NotImplementedError


@register_env("pointmass")
class PointMass2D(Env):
    """
    A point in the unit box pushed by a bounded acceleration towards the origin.
    Reaching radius 0.05 terminates the episode with a +10 bonus.
    """

    DT = 0.1
    GOAL_RADIUS = 0.05
    GOAL_BONUS = 10.0

    def __init__(self, horizon: int = 100):
        super().__init__()
        self.spec = EnvSpec(4, ActionSpec([-1.0, -1.0], [1.0, 1.0]), horizon, gamma=0.99)
        self._p = np.zeros(2)
        self._v = np.zeros(2)

    def _observe(self) -> np.ndarray:
        return np.concatenate([self._p, self._v])

    def _reset(self, rng, start):
        if start is None:
            self._p = rng.uniform(-1.0, 1.0, size=2)
            self._v = np.zeros(2)
        else:
            start = np.asarray(start, dtype=np.float64)
            self._p, self._v = start[:2].copy(), start[2:4].copy()
        return self._observe()

    def _step(self, a):
        self._v = np.clip(self._v + self.DT * a, -1.0, 1.0)
        self._p = np.clip(self._p + self.DT * self._v, -1.0, 1.0)
        dist = float(np.sqrt(self._p[0] ** 2 + self._p[1] ** 2))
        terminal = dist < self.GOAL_RADIUS
        reward = -dist + (self.GOAL_BONUS if terminal else 0.0)
        return self._observe(), reward, terminal


def wrap_angle(theta: float) -> float:
    return ((theta + np.pi) % (2.0 * np.pi)) - np.pi


@register_env("pendulum")
class Pendulum(Env):
    """
    Torque-limited pendulum swing-up; theta = 0 is upright. Never terminates.
    """

    G = 10.0
    M = 1.0
    L = 1.0
    DT = 0.05
    MAX_SPEED = 8.0
    MAX_TORQUE = 2.0

    def __init__(self, horizon: int = 200):
        super().__init__()
        self.spec = EnvSpec(
            3, ActionSpec([-self.MAX_TORQUE], [self.MAX_TORQUE]), horizon, gamma=0.99
        )
        self._theta = 0.0
        self._theta_dot = 0.0

    def _observe(self) -> np.ndarray:
        return np.array([np.cos(self._theta), np.sin(self._theta), self._theta_dot])

    def _reset(self, rng, start):
        if start is None:
            self._theta = float(rng.uniform(-np.pi, np.pi))
            self._theta_dot = float(rng.uniform(-1.0, 1.0))
        else:
            self._theta, self._theta_dot = float(start[0]), float(start[1])
        return self._observe()

    def _step(self, a):
        u = float(a[0])
        th, thdot = self._theta, self._theta_dot
        reward = -(wrap_angle(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2)
        accel = 3.0 * self.G / (2.0 * self.L) * np.sin(th) + 3.0 * u / (self.M * self.L**2)
        thdot = float(np.clip(thdot + accel * self.DT, -self.MAX_SPEED, self.MAX_SPEED))
        self._theta = th + thdot * self.DT
        self._theta_dot = thdot
        return self._observe(), reward, False


@register_env("tabular-chain")
class TabularChain(Env):
    """
    Three states, two actions, deterministic tables; for value-learning oracles.

    States are one-hot vectors, the action is one continuous value whose sign
    picks the discrete action (<= 0 is action 0).
    """

    N_STATES = 3
    NEXT = np.array([[0, 1], [0, 2], [1, 2]])
    REWARD = np.array([[0.0, 0.1], [0.3, -0.2], [1.0, 0.6]])

    def __init__(self, horizon: int = 50, gamma: float = 0.9):
        super().__init__()
        self.spec = EnvSpec(self.N_STATES, ActionSpec([-1.0], [1.0]), horizon, gamma=gamma)
        self._state = 0

    @staticmethod
    def one_hot(index: int) -> np.ndarray:
        out = np.zeros(TabularChain.N_STATES)
        out[index] = 1.0
        return out

    @staticmethod
    def discrete(a) -> int:
        return int(np.asarray(a).reshape(-1)[0] > 0.0)

    @staticmethod
    def index_of(state) -> int:
        return int(np.argmax(state))

    def _reset(self, rng, start):
        self._state = 0 if start is None else int(start[0])
        return self.one_hot(self._state)

    def _step(self, a):
        k = self.discrete(a)
        reward = float(self.REWARD[self._state, k])
        self._state = int(self.NEXT[self._state, k])
        return self.one_hot(self._state), reward, False

    @classmethod
    def bellman_q(cls, policy: Sequence[int], gamma: float) -> np.ndarray:
        """
        Exact Q^pi, shape (states, actions), by solving the Bellman equations.

        :param policy: The discrete action taken in each state.
        """
        n = cls.N_STATES
        idx = np.arange(n)
        policy = np.asarray(policy)
        p_pi = np.zeros((n, n))
        p_pi[idx, cls.NEXT[idx, policy]] = 1.0
        r_pi = cls.REWARD[idx, policy]
        v = np.linalg.solve(np.eye(n) - gamma * p_pi, r_pi)
        return cls.REWARD + gamma * v[cls.NEXT]


@dataclasses.dataclass(eq=False)
class RolloutResult:
    transitions: List[Transition]
    episode_return: float
    steps: int
    terminated: bool
    """The last step was a genuine termination."""

    truncated: bool
    """The last step hit the environment horizon."""

    final_state: np.ndarray


def rollout(
    shared: SharedRepresentation,
    w: PolicyRepresentation,
    env: Env,
    max_steps: int,
    noise_sigma: float,
    rng: np.random.Generator,
) -> RolloutResult:
    """
    Run one episode prefix of at most `max_steps` steps from a fresh reset.

    Exploration noise is Gaussian with std `noise_sigma * (high - low) / 2`,
    clamped to the bounds; `max_steps = 0` only resets.
    """
    spec = env.spec.action_spec
    s = env.reset(rng)
    transitions: List[Transition] = []
    episode_return = 0.0
    terminated = truncated = False

    for _ in range(max_steps):
        a = policy_forward(shared, w, spec, s)
        if noise_sigma > 0.0:
            a = spec.clip(a + rng.normal(0.0, 1.0, size=spec.dim) * noise_sigma * spec.half_range)
        res = env.step(a)
        transitions.append(Transition(s, a, res.reward, res.next_state, res.terminal))
        episode_return += res.reward
        s = res.next_state
        terminated, truncated = res.terminal, res.truncated
        if terminated or truncated:
            break

    return RolloutResult(transitions, episode_return, len(transitions), terminated, truncated, s)


@dataclasses.dataclass(eq=False)
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    """1.0 where the transition genuinely terminated."""

    def __len__(self):
        return self.states.shape[0]

    @staticmethod
    def of(transitions: Sequence[Transition]) -> "Batch":
        return Batch(
            states=np.array([t.s for t in transitions], dtype=np.float64),
            actions=np.array([t.a for t in transitions], dtype=np.float64),
            rewards=np.array([t.r for t in transitions], dtype=np.float64),
            next_states=np.array([t.s_next for t in transitions], dtype=np.float64),
            terminals=np.array([float(t.terminal) for t in transitions]),
        )


class ReplayBuffer:
    """
    Bounded FIFO store of transitions shared by every agent.
    """

    def __init__(self, capacity: int, state_width: int, action_dim: int):
        if capacity < 1:
            raise ConfigError(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._states = np.zeros((capacity, state_width))
        self._actions = np.zeros((capacity, action_dim))
        self._rewards = np.zeros(capacity)
        self._next_states = np.zeros((capacity, state_width))
        self._terminals = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def _oldest(self) -> int:
        return (self._next - self._size) % self.capacity

    def push(self, transitions: Iterable[Transition]):
        for t in transitions:
            i = self._next
            self._states[i] = t.s
            self._actions[i] = t.a
            self._rewards[i] = t.r
            self._next_states[i] = t.s_next
            self._terminals[i] = float(t.terminal)
            self._next = (i + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def _transition(self, i: int) -> Transition:
        return Transition(
            self._states[i].copy(),
            self._actions[i].copy(),
            float(self._rewards[i]),
            self._next_states[i].copy(),
            bool(self._terminals[i]),
        )

    def __iter__(self) -> Iterator[Transition]:
        start = self._oldest()
        for k in range(self._size):
            yield self._transition((start + k) % self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """
        Draw `batch_size` transitions uniformly with replacement.
        """
        if self._size == 0:
            raise ContractViolation("cannot sample from an empty replay buffer")
        if batch_size > self._size:
            raise ContractViolation(
                f"batch of {batch_size} requested from a buffer holding {self._size}"
            )
        idx = (self._oldest() + rng.integers(0, self._size, size=batch_size)) % self.capacity
        return Batch(
            states=self._states[idx],
            actions=self._actions[idx],
            rewards=self._rewards[idx],
            next_states=self._next_states[idx],
            terminals=self._terminals[idx],
        )
