"""
Gradient-based learning for the hybrid agent.

Each update only touches its own parameter group: TD updates move the critic or
the PeVFA, the actor update moves the RL agent's policy matrix, and the shared
representation update moves the state encoder. Target copies are used inside
TD targets only and never receive gradients.
"""
import dataclasses
import enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from erlre2.envs import Batch, ReplayBuffer
from erlre2.errors import ConfigError, NonFiniteError
from erlre2.evolution import Population
from erlre2.nn import AdamState, adam_step, mlp_backward
from erlre2.policy import (
    ActionSpec,
    PolicyRepresentation,
    SharedRepresentation,
    act,
    act_backward,
    encode_state,
    encode_state_with_cache,
    soft_update,
)
from erlre2.records import recordable
from erlre2.values import (
    CriticParams,
    PeVFAParams,
    ValueMode,
    critic_backward,
    critic_eval,
    critic_forward,
    pevfa_backward,
    pevfa_eval,
    pevfa_forward,
)


@recordable
class RlMode(enum.Enum):
    TD3 = "td3"
    DDPG = "ddpg"


@recordable
class SharedRepTerms(enum.Enum):
    BOTH = "both"
    CRITIC = "critic"
    PEVFA = "pevfa"


@dataclasses.dataclass
class UpdateConfig:
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    k: int = 1
    """
    Population members sampled into each shared-representation update;
    0 keeps only the critic term.
    """

    mode: RlMode = RlMode.TD3
    target_noise: float = 0.2
    """TD3 target-policy smoothing std, in half-ranges of the action bounds."""

    noise_clip: float = 0.4
    policy_delay: int = 2
    lr_critic: float = 1e-3
    lr_pevfa: float = 1e-3
    lr_actor: float = 1e-3
    lr_shared: float = 1e-3
    sharedrep_terms: SharedRepTerms = SharedRepTerms.BOTH
    sharedrep_normalize_k: bool = False
    """Scale the PeVFA terms of the shared-representation loss by 1/K."""

    pevfa_per_transition: bool = False
    """Draw the bootstrapping member per transition instead of once per minibatch."""

    rl_enabled: bool = True
    pevfa_enabled: bool = True

    def validate(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.k < 0:
            raise ConfigError(f"K must be >= 0, got {self.k}")
        if self.policy_delay < 1:
            raise ConfigError(f"policy delay must be >= 1, got {self.policy_delay}")
        if not (self.rl_enabled or self.pevfa_enabled):
            raise ConfigError("at least one of the RL agent and the PeVFA must be enabled")
        if not self.rl_enabled and (self.k == 0 or self.sharedrep_terms is SharedRepTerms.CRITIC):
            raise ConfigError("without the RL agent the shared representation needs PeVFA terms")
        if self.pevfa_enabled and self.k == 0 and self.sharedrep_terms is SharedRepTerms.PEVFA:
            raise ConfigError("PeVFA-only shared representation terms need K >= 1")

    @property
    def delay(self) -> int:
        return self.policy_delay if self.mode is RlMode.TD3 else 1


@dataclasses.dataclass(eq=False)
class RlAgent:
    w: PolicyRepresentation
    target: PolicyRepresentation
    explore_sigma: float = 0.1
    """Exploration noise std, in half-ranges of the action bounds."""

    @staticmethod
    def of(w: PolicyRepresentation, explore_sigma: float = 0.1) -> "RlAgent":
        return RlAgent(w, w.copy(), explore_sigma)


def _check_loss(loss: float, what: str, step: Optional[int] = None) -> float:
    if not np.isfinite(loss):
        raise NonFiniteError(f"{what} loss", step)
    return float(loss)


def critic_td_targets(
    psi_target: CriticParams,
    shared_target: SharedRepresentation,
    w_target: PolicyRepresentation,
    batch: Batch,
    cfg: UpdateConfig,
    spec: ActionSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    y = r + (1 - terminal) * gamma * min-twin Q'(s', pi'(s')), computed with the
    target encoder, with clipped smoothing noise in td3 mode.
    """
    a_next = act(encode_state(shared_target, batch.next_states), w_target, spec)
    if cfg.mode is RlMode.TD3 and cfg.target_noise > 0.0:
        noise = np.clip(
            rng.normal(0.0, cfg.target_noise, size=a_next.shape), -cfg.noise_clip, cfg.noise_clip
        )
        a_next = spec.clip(a_next + noise * spec.half_range)
    q_next = critic_eval(psi_target, batch.next_states, a_next, ValueMode.MIN)
    return batch.rewards + (1.0 - batch.terminals) * cfg.gamma * q_next


def critic_td_loss_and_grad(
    psi: CriticParams, batch: Batch, y: np.ndarray
) -> Tuple[float, CriticParams]:
    """
    Mean over heads of the squared TD error, and its gradient w.r.t. the critic.
    """
    values, caches = critic_forward(psi, batch.states, batch.actions)
    scale = 2.0 / (len(y) * len(values))
    loss = float(np.mean([np.mean((q - y) ** 2) for q in values]))
    grad_psi, _ = critic_backward(psi, caches, [scale * (q - y) for q in values])
    return loss, grad_psi


def critic_td_update(
    psi: CriticParams,
    opt: AdamState,
    psi_target: CriticParams,
    shared_target: SharedRepresentation,
    w_target: PolicyRepresentation,
    batch: Batch,
    cfg: UpdateConfig,
    spec: ActionSpec,
    rng: np.random.Generator,
) -> Tuple[CriticParams, AdamState, float]:
    y = critic_td_targets(psi_target, shared_target, w_target, batch, cfg, spec, rng)
    loss, grads = critic_td_loss_and_grad(psi, batch, y)
    _check_loss(loss, "critic", opt.step + 1)
    psi, opt = adam_step(opt, psi, grads)
    return psi, opt, loss


def _bootstrap_assignment(
    n: int, size: int, cfg: UpdateConfig, rng: np.random.Generator
) -> np.ndarray:
    if n == 0:
        raise ConfigError("PeVFA update needs a non-empty population")
    if cfg.pevfa_per_transition:
        return rng.integers(n, size=size)
    return np.full(size, rng.integers(n))


def pevfa_td_targets(
    theta_target: PeVFAParams,
    shared_target: SharedRepresentation,
    members: Sequence[PolicyRepresentation],
    batch: Batch,
    cfg: UpdateConfig,
    spec: ActionSpec,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    y = r + (1 - terminal) * gamma * min-twin Q'(s', pi_i(s'), W_i) for a member
    i drawn uniformly.

    :return: the targets and the member index used for each row.
    """
    assign = _bootstrap_assignment(len(members), len(batch), cfg, rng)
    z_next = encode_state(shared_target, batch.next_states)
    y = np.empty(len(batch))
    for i in np.unique(assign):
        rows = assign == i
        w = members[i]
        a_next = act(z_next[rows], w, spec)
        q_next = pevfa_eval(theta_target, batch.next_states[rows], a_next, w, ValueMode.MIN)
        y[rows] = batch.rewards[rows] + (1.0 - batch.terminals[rows]) * cfg.gamma * q_next
    return y, assign


def pevfa_td_loss_and_grad(
    theta: PeVFAParams,
    batch: Batch,
    y: np.ndarray,
    members: Sequence[PolicyRepresentation],
    assign: np.ndarray,
) -> Tuple[float, PeVFAParams]:
    """
    Mean over heads of the squared TD error of Q(s, a, W_assign), and its gradient.
    """
    scale = 1.0 / (len(y) * len(theta.heads))
    loss = 0.0
    acc = [np.zeros_like(a) for a in theta.arrays()]
    for i in np.unique(assign):
        rows = assign == i
        fwd = pevfa_forward(theta, batch.states[rows], batch.actions[rows], members[i])
        diffs = [q - y[rows] for q in fwd.values]
        loss += scale * sum(float(np.sum(e * e)) for e in diffs)
        grads, _ = pevfa_backward(theta, fwd, [2.0 * scale * e for e in diffs])
        acc = [total + g for total, g in zip(acc, grads.arrays())]
    return loss, theta.with_arrays(acc)


def pevfa_td_update(
    theta: PeVFAParams,
    opt: AdamState,
    theta_target: PeVFAParams,
    shared_target: SharedRepresentation,
    members: Sequence[PolicyRepresentation],
    batch: Batch,
    cfg: UpdateConfig,
    spec: ActionSpec,
    rng: np.random.Generator,
) -> Tuple[PeVFAParams, AdamState, float]:
    y, assign = pevfa_td_targets(theta_target, shared_target, members, batch, cfg, spec, rng)
    loss, grads = pevfa_td_loss_and_grad(theta, batch, y, members, assign)
    _check_loss(loss, "pevfa", opt.step + 1)
    theta, opt = adam_step(opt, theta, grads)
    return theta, opt, loss


def actor_loss_and_grad(
    w: PolicyRepresentation, critic, shared: SharedRepresentation, states, spec: ActionSpec
) -> Tuple[float, PolicyRepresentation]:
    """
    -mean Q1(s, pi_rl(s)) and its gradient w.r.t. the RL policy matrix only.

    :param critic: Anything with ``action_gradient(s, a)``, normally the critic.
    """
    z = encode_state(shared, states)
    a = act(z, w, spec)
    values, dq_da = critic.action_gradient(states, a)
    loss = -float(np.mean(values))
    _, grad_w = act_backward(z, w, spec, -dq_da / len(values))
    return loss, grad_w


def actor_update(
    w: PolicyRepresentation,
    opt: AdamState,
    critic,
    shared: SharedRepresentation,
    states,
    spec: ActionSpec,
) -> Tuple[PolicyRepresentation, AdamState, float]:
    loss, grad_w = actor_loss_and_grad(w, critic, shared, states, spec)
    _check_loss(loss, "actor", opt.step + 1)
    w, opt = adam_step(opt, w, grad_w)
    return w, opt, loss


def sample_members(n: int, k: int, rng: np.random.Generator) -> List[int]:
    if k > n:
        raise ConfigError(f"K = {k} exceeds the population size {n}")
    return [int(i) for i in rng.choice(n, size=k, replace=False)]


def shared_rep_loss_and_grad(
    shared: SharedRepresentation,
    critic,
    pevfa,
    w_rl: Optional[PolicyRepresentation],
    members: Sequence[PolicyRepresentation],
    states,
    spec: ActionSpec,
    pevfa_scale: float = 1.0,
) -> Tuple[float, SharedRepresentation]:
    """
    -mean[Q1(s, pi_rl(s)) + scale * sum_j Q_theta(s, pi_j(s), W_j)] and its gradient
    w.r.t. the encoder only. Pass `w_rl = None` to drop the critic term.

    :param critic: Anything with ``action_gradient(s, a)``.
    :param pevfa: Anything with ``action_gradient(s, a, w)``.
    """
    z, cache = encode_state_with_cache(shared, states)
    batch = z.shape[0]
    terms = [] if w_rl is None else [(w_rl, 1.0, lambda a: critic.action_gradient(states, a))]
    for w in members:
        terms.append((w, pevfa_scale, lambda a, w=w: pevfa.action_gradient(states, a, w)))
    if not terms:
        raise ConfigError("shared representation update has no value terms")

    loss = 0.0
    grad_z = np.zeros_like(z)
    for w, coef, gradient in terms:
        values, dq_da = gradient(act(z, w, spec))
        loss -= coef * float(np.mean(values))
        gz, _ = act_backward(z, w, spec, -coef * dq_da / batch)
        grad_z += gz
    grad_encoder, _ = mlp_backward(shared.encoder, cache, grad_z)
    return loss, SharedRepresentation(grad_encoder)


def shared_rep_update(
    shared: SharedRepresentation,
    opt: AdamState,
    critic,
    pevfa,
    w_rl: Optional[PolicyRepresentation],
    members: Sequence[PolicyRepresentation],
    states,
    cfg: UpdateConfig,
    spec: ActionSpec,
    rng: np.random.Generator,
) -> Tuple[SharedRepresentation, AdamState, float]:
    """
    One Adam step on the encoder, with K members sampled without replacement.
    """
    chosen = []
    if cfg.sharedrep_terms is not SharedRepTerms.CRITIC and cfg.k > 0:
        chosen = [members[i] for i in sample_members(len(members), cfg.k, rng)]
    if cfg.sharedrep_terms is SharedRepTerms.PEVFA:
        w_rl = None
    scale = 1.0 / len(chosen) if cfg.sharedrep_normalize_k and chosen else 1.0
    loss, grads = shared_rep_loss_and_grad(shared, critic, pevfa, w_rl, chosen, states, spec, scale)
    _check_loss(loss, "shared representation", opt.step + 1)
    shared, opt = adam_step(opt, shared, grads)
    return shared, opt, loss


def _rank(fitness: np.ndarray) -> List[int]:
    return sorted(range(len(fitness)), key=lambda i: (-fitness[i], i))


def rl_inject(pop: Population, w_rl: PolicyRepresentation, e_count: int = 1) -> Population:
    """
    Replace the lowest-fitness non-elite member with a copy of the RL policy.

    The replaced slot's fitness becomes NaN until the next evaluation.
    """
    order = _rank(pop.fitness)
    target = order[-1] if len(order) > e_count else None
    if target is None:
        return pop
    members = list(pop.members)
    members[target] = w_rl.copy()
    fitness = pop.fitness.copy()
    fitness[target] = np.nan
    logger.debug("injected the RL policy into slot {}", target)
    return Population(members, fitness, pop.generation)


@recordable
@dataclasses.dataclass
class LossRecord:
    step: int
    loss_critic: Optional[float] = None
    loss_pevfa: Optional[float] = None
    loss_actor: Optional[float] = None
    loss_sharedrep: Optional[float] = None


class Learner:
    """
    Owns every gradient-trained component and their target copies.

    Update order per step: PeVFA TD, critic TD, actor (every `delay` steps),
    shared representation, then targets (every `delay` steps).
    """

    def __init__(
        self,
        shared: SharedRepresentation,
        critic: Optional[CriticParams],
        pevfa: Optional[PeVFAParams],
        agent: Optional[RlAgent],
        cfg: UpdateConfig,
        spec: ActionSpec,
    ):
        cfg.validate()
        if cfg.rl_enabled and (critic is None or agent is None):
            raise ConfigError("an enabled RL agent needs a critic and a policy")
        if cfg.pevfa_enabled and pevfa is None:
            raise ConfigError("an enabled PeVFA needs parameters")
        self.cfg = cfg
        self.spec = spec
        self.shared = shared
        self.shared_target = shared.copy()
        self.shared_opt = AdamState.for_params(shared, cfg.lr_shared)

        self.critic = critic if cfg.rl_enabled else None
        self.agent = agent if cfg.rl_enabled else None
        self.pevfa = pevfa if cfg.pevfa_enabled else None
        if self.critic is not None:
            self.critic_target = self.critic.copy()
            self.critic_opt = AdamState.for_params(self.critic, cfg.lr_critic)
            self.actor_opt = AdamState.for_params(self.agent.w, cfg.lr_actor)
        if self.pevfa is not None:
            self.pevfa_target = self.pevfa.copy()
            self.pevfa_opt = AdamState.for_params(self.pevfa, cfg.lr_pevfa)

        self.updates = 0
        self.counts = dict(critic=0, pevfa=0, actor=0, sharedrep=0, targets=0)

    def step(
        self,
        buffer: ReplayBuffer,
        members: Sequence[PolicyRepresentation],
        rng: np.random.Generator,
    ) -> LossRecord:
        cfg, spec = self.cfg, self.spec
        batch = buffer.sample(cfg.batch_size, rng)
        self.updates += 1
        record = LossRecord(step=self.updates)
        use_pevfa = self.pevfa is not None and len(members) > 0

        if use_pevfa:
            self.pevfa, self.pevfa_opt, record.loss_pevfa = pevfa_td_update(
                self.pevfa,
                self.pevfa_opt,
                self.pevfa_target,
                self.shared_target,
                members,
                batch,
                cfg,
                spec,
                rng,
            )
            self.counts["pevfa"] += 1

        delayed = self.updates % cfg.delay == 0
        if self.critic is not None:
            self.critic, self.critic_opt, record.loss_critic = critic_td_update(
                self.critic,
                self.critic_opt,
                self.critic_target,
                self.shared_target,
                self.agent.target,
                batch,
                cfg,
                spec,
                rng,
            )
            self.counts["critic"] += 1
            if delayed:
                self.agent.w, self.actor_opt, record.loss_actor = actor_update(
                    self.agent.w, self.actor_opt, self.critic, self.shared, batch.states, spec
                )
                self.counts["actor"] += 1

        w_rl = self.agent.w if self.agent is not None else None
        rep_members = members if use_pevfa else []
        if w_rl is not None or rep_members:
            shared_cfg = cfg
            if not use_pevfa:
                shared_cfg = dataclasses.replace(cfg, sharedrep_terms=SharedRepTerms.CRITIC)
            self.shared, self.shared_opt, record.loss_sharedrep = shared_rep_update(
                self.shared,
                self.shared_opt,
                self.critic,
                self.pevfa,
                w_rl,
                rep_members,
                batch.states,
                shared_cfg,
                spec,
                rng,
            )
            self.counts["sharedrep"] += 1

        if delayed:
            self.update_targets()
        return record

    def update_targets(self):
        tau = self.cfg.tau
        self.shared_target = soft_update(self.shared_target, self.shared, tau)
        if self.critic is not None:
            self.critic_target = soft_update(self.critic_target, self.critic, tau)
            self.agent.target = soft_update(self.agent.target, self.agent.w, tau)
        if self.pevfa is not None:
            self.pevfa_target = soft_update(self.pevfa_target, self.pevfa, tau)
        self.counts["targets"] += 1

    def run(
        self,
        buffer: ReplayBuffer,
        members: Sequence[PolicyRepresentation],
        updates: int,
        rng: np.random.Generator,
    ) -> List[LossRecord]:
        """
        Perform `updates` update steps, one per environment step collected.
        """
        records = [self.step(buffer, members, rng) for _ in range(updates)]
        if records:
            logger.debug("{} update steps, total {}", updates, self.updates)
        return records
