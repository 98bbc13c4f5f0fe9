import dataclasses
from typing import Optional, Sequence

import numpy as np

from erlre2.config import RunConfig
from erlre2.envs import Env, EnvSpec, TabularChain
from erlre2.nn import Activation, Layer, MlpParams
from erlre2.policy import (
    ActionSpec,
    PolicyRepresentation,
    SharedRepresentation,
    encode_state,
    make_shared_representation,
    policy_forward,
)

CHAIN_GAIN = 2.0
CHAIN_ACTION = 0.5


def make_rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)


def tiny_shared(state_width=3, hidden=(8, 4), seed=0) -> SharedRepresentation:
    return make_shared_representation(state_width, hidden, make_rng(seed))


def chain_shared() -> SharedRepresentation:
    """
    tanh(2 * one_hot): one feature per chain state.
    """
    n = TabularChain.N_STATES
    layer = Layer(CHAIN_GAIN * np.eye(n), np.zeros(n), Activation.TANH)
    return SharedRepresentation(MlpParams([layer]))


def chain_policy(choices: Sequence[int]) -> PolicyRepresentation:
    """
    A policy over `chain_shared` features taking action +-0.5, i.e. discrete
    action `choices[s]`, in chain state `s`.
    """
    n = TabularChain.N_STATES
    u = np.arctanh(CHAIN_ACTION) * np.where(np.asarray(choices) > 0, 1.0, -1.0)
    matrix = np.zeros((n + 1, 1))
    matrix[:n, 0] = u / np.tanh(CHAIN_GAIN)
    return PolicyRepresentation(matrix)


def chain_choices(shared: SharedRepresentation, w: PolicyRepresentation) -> list:
    states = np.eye(TabularChain.N_STATES)
    actions = policy_forward(shared, w, ActionSpec([-1.0], [1.0]), states)
    return [TabularChain.discrete(a) for a in actions]


class OracleValue:
    """
    Exact Q^pi of the tabular chain, looked up for the policy passed in.
    """

    def __init__(self, shared: SharedRepresentation, gamma: float):
        self.shared = shared
        self.gamma = gamma

    def value(self, s, a, w, mode=None):
        q = TabularChain.bellman_q(chain_choices(self.shared, w), self.gamma)
        return q[TabularChain.index_of(s), TabularChain.discrete(a)]


class ConstantValue:
    def __init__(self, c: float):
        self.c = c

    def value(self, s, a, w=None, mode=None):
        return self.c if np.ndim(s) == 1 else np.full(len(s), self.c)

    def action_gradient(self, s, a, w=None):
        a = np.atleast_2d(a)
        return np.full(len(a), self.c), np.zeros_like(a)


class QuadraticCritic:
    """
    Q(s, a) = -|a - target|^2.
    """

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def action_gradient(self, s, a):
        diff = np.atleast_2d(a) - self.target
        return -np.sum(diff * diff, axis=1), -2.0 * diff


class ScriptedEnv(Env):
    """
    State is the step index; rewards are read from a list.
    """

    name = "scripted"

    def __init__(self, rewards: Sequence[float], terminal_at: Optional[int] = None, horizon=None):
        super().__init__()
        self.rewards = list(rewards)
        self.terminal_at = terminal_at
        self.spec = EnvSpec(1, ActionSpec([-1.0], [1.0]), horizon or len(self.rewards))
        self._k = 0

    def _reset(self, rng, start):
        self._k = 0
        return np.array([0.0])

    def _step(self, a):
        reward = self.rewards[self._k]
        self._k += 1
        terminal = self.terminal_at is not None and self._k == self.terminal_at
        return np.array([float(self._k)]), reward, terminal


class StateValue:
    """
    Value looked up from the state index only.
    """

    def __init__(self, table):
        self.table = dict(table)

    def value(self, s, a, w=None, mode=None):
        return self.table[int(np.asarray(s).reshape(-1)[0])]


def central_difference(f, params, h: float = 1e-5) -> np.ndarray:
    """
    Central finite-difference gradient of scalar `f(params)` over the flat vector.
    """
    flat = params.flat()
    grad = np.zeros_like(flat)
    for i in range(flat.shape[0]):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        grad[i] = (f(params.from_flat(plus)) - f(params.from_flat(minus))) / (2.0 * h)
    return grad


def assert_gradients_close(analytic, numeric, rtol: float = 1e-5, atol: float = 1e-8):
    np.testing.assert_allclose(analytic, numeric, rtol=rtol, atol=atol)


def random_states(n: int, width: int, seed: int = 1) -> np.ndarray:
    return make_rng(seed).uniform(-1.0, 1.0, size=(n, width))


def features(shared: SharedRepresentation, states) -> np.ndarray:
    return encode_state(shared, states)


def tiny_run_config(out: str, **changes) -> RunConfig:
    """
    A pointmass run small enough to train in a test.
    """
    cfg = RunConfig(
        env="pointmass",
        env_horizon=10,
        population=3,
        elites=1,
        h=5,
        k=1,
        total_steps=200,
        warmup_steps=50,
        batch_size=16,
        shared_hidden=(8, 4),
        critic_hidden=(16, 16),
        pevfa_hidden=(16, 16),
        pevfa_embedding=8,
        buffer_capacity=1000,
        eval_episodes=2,
        out=out,
    )
    return dataclasses.replace(cfg, **changes).validate()
