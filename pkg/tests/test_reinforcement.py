import dataclasses
from collections import namedtuple

import numpy as np
import pytest

from conftest import (
    ConstantValue,
    QuadraticCritic,
    assert_gradients_close,
    central_difference,
    chain_policy,
    chain_shared,
    make_rng,
    random_states,
    tiny_shared,
)
from erlre2.envs import Batch, ReplayBuffer, TabularChain, Transition
from erlre2.errors import ConfigError
from erlre2.evolution import Population, init_population
from erlre2.nn import AdamState, adam_step
from erlre2.policy import ActionSpec, act, encode_state, init_policy, soft_update
from erlre2.reinforcement import (
    Learner,
    RlAgent,
    RlMode,
    SharedRepTerms,
    UpdateConfig,
    actor_loss_and_grad,
    actor_update,
    critic_td_loss_and_grad,
    critic_td_targets,
    critic_td_update,
    pevfa_td_loss_and_grad,
    pevfa_td_targets,
    pevfa_td_update,
    rl_inject,
    sample_members,
    shared_rep_loss_and_grad,
    shared_rep_update,
)
from erlre2.values import (
    ValueMode,
    make_critic,
    make_pevfa,
    pevfa_backward,
    pevfa_eval,
    pevfa_forward,
)

STATE_WIDTH = 3
ACTION_DIM = 2
SPEC = ActionSpec([-1.0] * ACTION_DIM, [1.0] * ACTION_DIM)

CadenceCase = namedtuple("CadenceCase", "cfg,steps,counts,name")

BadCase = namedtuple("BadCase", "run,exc,raises,name")


def case_name(case):
    return case.name


def _shared(seed=0):
    return tiny_shared(STATE_WIDTH, (8, 4), seed)


def _critic(twin=True, seed=1):
    return make_critic(STATE_WIDTH, ACTION_DIM, (8, 8), twin, make_rng(seed))


def _pevfa(twin=True, seed=2):
    return make_pevfa(STATE_WIDTH, ACTION_DIM, 4, (8, 8), twin, make_rng(seed), embedding_width=6)


def _members(n=3, seed=3):
    rng = make_rng(seed)
    return [init_policy(4, ACTION_DIM, rng) for _ in range(n)]


def _batch(n=6, seed=4, terminal_every=3) -> Batch:
    rng = make_rng(seed)
    return Batch(
        states=rng.uniform(-1.0, 1.0, size=(n, STATE_WIDTH)),
        actions=rng.uniform(-1.0, 1.0, size=(n, ACTION_DIM)),
        rewards=rng.normal(size=n),
        next_states=rng.uniform(-1.0, 1.0, size=(n, STATE_WIDTH)),
        terminals=np.array([float(i % terminal_every == 0) for i in range(n)]),
    )


def _buffer(n=64, seed=5) -> ReplayBuffer:
    batch = _batch(n, seed)
    buffer = ReplayBuffer(n, STATE_WIDTH, ACTION_DIM)
    buffer.push(
        Transition(s, a, r, s_next, bool(t))
        for s, a, r, s_next, t in zip(
            batch.states, batch.actions, batch.rewards, batch.next_states, batch.terminals
        )
    )
    return buffer


def _learner(cfg: UpdateConfig, seed=0) -> Learner:
    twin = cfg.mode is RlMode.TD3
    agent = RlAgent.of(init_policy(4, ACTION_DIM, make_rng(seed)))
    return Learner(_shared(seed), _critic(twin), _pevfa(twin), agent, cfg, SPEC)


def generate_cadence_cases():
    small = dict(batch_size=8, k=2)
    return [
        CadenceCase(
            name="td3 delays the actor and the targets",
            cfg=UpdateConfig(mode=RlMode.TD3, policy_delay=2, **small),
            steps=4,
            counts=dict(critic=4, pevfa=4, actor=2, sharedrep=4, targets=2),
        ),
        CadenceCase(
            name="ddpg updates everything every step",
            cfg=UpdateConfig(mode=RlMode.DDPG, policy_delay=2, **small),
            steps=3,
            counts=dict(critic=3, pevfa=3, actor=3, sharedrep=3, targets=3),
        ),
        CadenceCase(
            name="without the RL agent only the value side of the population trains",
            cfg=UpdateConfig(rl_enabled=False, **small),
            steps=4,
            counts=dict(critic=0, pevfa=4, actor=0, sharedrep=4, targets=2),
        ),
        CadenceCase(
            name="without the PeVFA the critic drives the shared representation",
            cfg=UpdateConfig(pevfa_enabled=False, k=0, batch_size=8),
            steps=2,
            counts=dict(critic=2, pevfa=0, actor=1, sharedrep=2, targets=1),
        ),
    ]


def generate_bad_cases():
    return [
        BadCase(
            name="gamma of one",
            run=lambda: UpdateConfig(gamma=1.0).validate(),
            exc=ConfigError,
            raises=dict(match="gamma must lie in"),
        ),
        BadCase(
            name="zero tau",
            run=lambda: UpdateConfig(tau=0.0).validate(),
            exc=ConfigError,
            raises=dict(match="tau must lie in"),
        ),
        BadCase(
            name="negative K",
            run=lambda: UpdateConfig(k=-1).validate(),
            exc=ConfigError,
            raises=dict(match="K must be >= 0"),
        ),
        BadCase(
            name="nothing to train",
            run=lambda: UpdateConfig(rl_enabled=False, pevfa_enabled=False).validate(),
            exc=ConfigError,
            raises=dict(match="at least one of"),
        ),
        BadCase(
            name="critic-only shared representation without the RL agent",
            run=lambda: UpdateConfig(
                rl_enabled=False, sharedrep_terms=SharedRepTerms.CRITIC
            ).validate(),
            exc=ConfigError,
            raises=dict(match="needs PeVFA terms"),
        ),
        BadCase(
            name="PeVFA-only shared representation with K of zero",
            run=lambda: UpdateConfig(k=0, sharedrep_terms=SharedRepTerms.PEVFA).validate(),
            exc=ConfigError,
            raises=dict(match="need K >= 1"),
        ),
        BadCase(
            name="K larger than the population",
            run=lambda: sample_members(2, 3, make_rng()),
            exc=ConfigError,
            raises=dict(match="exceeds the population size"),
        ),
        BadCase(
            name="shared representation update without any value term",
            run=lambda: shared_rep_loss_and_grad(
                _shared(), None, None, None, [], random_states(4, STATE_WIDTH), SPEC
            ),
            exc=ConfigError,
            raises=dict(match="no value terms"),
        ),
        BadCase(
            name="enabled RL agent without a critic",
            run=lambda: Learner(_shared(), None, _pevfa(), None, UpdateConfig(), SPEC),
            exc=ConfigError,
            raises=dict(match="needs a critic"),
        ),
    ]


class TestGradients:
    @pytest.mark.parametrize("twin", [True, False], ids=["twin", "single"])
    def test_critic_td_loss(self, twin):
        psi = _critic(twin)
        batch = _batch()
        y = make_rng(6).normal(size=len(batch))

        _, grads = critic_td_loss_and_grad(psi, batch, y)

        numeric = central_difference(lambda p: critic_td_loss_and_grad(p, batch, y)[0], psi)
        assert_gradients_close(grads.flat(), numeric)

    @pytest.mark.parametrize("twin", [True, False], ids=["twin", "single"])
    def test_pevfa_td_loss(self, twin):
        theta = _pevfa(twin)
        members = _members(2)
        batch = _batch()
        y = make_rng(7).normal(size=len(batch))
        assign = np.array([0, 1, 1, 0, 1, 0])

        _, grads = pevfa_td_loss_and_grad(theta, batch, y, members, assign)

        numeric = central_difference(
            lambda p: pevfa_td_loss_and_grad(p, batch, y, members, assign)[0], theta
        )
        assert_gradients_close(grads.flat(), numeric)

    def test_actor_loss(self):
        shared, psi = _shared(), _critic()
        w = init_policy(4, ACTION_DIM, make_rng(8))
        states = random_states(6, STATE_WIDTH)

        _, grad_w = actor_loss_and_grad(w, psi, shared, states, SPEC)

        numeric = central_difference(
            lambda p: actor_loss_and_grad(p, psi, shared, states, SPEC)[0], w
        )
        assert_gradients_close(grad_w.flat(), numeric)

    @pytest.mark.parametrize("with_rl", [True, False], ids=["critic and pevfa", "pevfa only"])
    def test_shared_rep_loss(self, with_rl):
        shared, psi, theta = _shared(), _critic(), _pevfa()
        w_rl = init_policy(4, ACTION_DIM, make_rng(8)) if with_rl else None
        members = _members(2)
        states = random_states(6, STATE_WIDTH)

        _, grads = shared_rep_loss_and_grad(shared, psi, theta, w_rl, members, states, SPEC)

        numeric = central_difference(
            lambda p: shared_rep_loss_and_grad(p, psi, theta, w_rl, members, states, SPEC)[0],
            shared,
        )
        assert_gradients_close(grads.flat(), numeric)


class TestLosses:
    @pytest.mark.parametrize("twin", [True, False], ids=["twin", "single"])
    def test_td_loss_of_a_zero_critic(self, twin):
        psi = _critic(twin).zeros_like()
        batch = _batch(4)

        loss, _ = critic_td_loss_and_grad(psi, batch, np.full(4, 6.0))

        assert loss == pytest.approx(36.0)

    def test_terminal_transitions_do_not_bootstrap(self):
        batch = dataclasses.replace(_batch(5), terminals=np.ones(5))

        y = critic_td_targets(
            _critic(), _shared(), _members(1)[0], batch, UpdateConfig(), SPEC, make_rng()
        )

        np.testing.assert_array_equal(y, batch.rewards)

    def test_ddpg_targets_carry_no_smoothing_noise(self):
        cfg = UpdateConfig(mode=RlMode.DDPG)
        args = (_critic(twin=False), _shared(), _members(1)[0], _batch(), cfg, SPEC)

        np.testing.assert_array_equal(
            critic_td_targets(*args, make_rng(1)), critic_td_targets(*args, make_rng(2))
        )

    def test_td3_targets_are_smoothed(self):
        args = (_critic(), _shared(), _members(1)[0], _batch(), UpdateConfig(), SPEC)

        a = critic_td_targets(*args, make_rng(1))
        b = critic_td_targets(*args, make_rng(2))

        assert not np.array_equal(a, b)

    def test_pevfa_targets_bootstrap_from_the_assigned_member(self):
        theta, shared, members = _pevfa(), _shared(), _members(3)
        batch = _batch(8, terminal_every=100)
        cfg = UpdateConfig(gamma=0.5, pevfa_per_transition=True)

        y, assign = pevfa_td_targets(theta, shared, members, batch, cfg, SPEC, make_rng())

        for row, i in enumerate(assign):
            s_next = batch.next_states[row]
            a_next = act(encode_state(shared, s_next), members[i], SPEC)
            q = pevfa_eval(theta, s_next, a_next, members[i])
            bootstrap = (1.0 - batch.terminals[row]) * 0.5 * q
            assert y[row] == pytest.approx(batch.rewards[row] + bootstrap)

    @pytest.mark.parametrize("per_transition", [True, False], ids=["per transition", "per batch"])
    def test_bootstrap_member_assignment(self, per_transition):
        cfg = UpdateConfig(pevfa_per_transition=per_transition)

        _, assign = pevfa_td_targets(
            _pevfa(), _shared(), _members(3), _batch(64), cfg, SPEC, make_rng()
        )

        assert (len(np.unique(assign)) > 1) == per_transition

    def test_normalized_k_scales_the_population_terms(self):
        states = random_states(4, STATE_WIDTH)
        w_rl, members = _members(1)[0], _members(2)

        loss, grads = shared_rep_loss_and_grad(
            _shared(), ConstantValue(1.0), ConstantValue(2.0), w_rl, members, states, SPEC, 0.5
        )

        assert loss == pytest.approx(-(1.0 + 0.5 * (2.0 + 2.0)))
        assert np.all(grads.flat() == 0.0)

    def test_pevfa_only_terms_drop_the_critic(self):
        states = random_states(4, STATE_WIDTH)

        loss, _ = shared_rep_loss_and_grad(
            _shared(), ConstantValue(1.0), ConstantValue(2.0), None, _members(2), states, SPEC
        )

        assert loss == pytest.approx(-4.0)

    @pytest.mark.parametrize("case", generate_bad_cases(), ids=case_name)
    def test_bad_cases(self, case: BadCase):
        with pytest.raises(case.exc, **case.raises):
            case.run()


class TestParameterPartition:
    def test_shared_rep_update_moves_only_the_encoder(self):
        shared, psi, theta = _shared(), _critic(), _pevfa()
        w_rl, members = _members(1, seed=9)[0], _members(3)
        before = [x.checksum() for x in (w_rl, psi, theta, *members)]
        cfg = UpdateConfig(k=2)

        moved, _, _ = shared_rep_update(
            shared,
            AdamState.for_params(shared),
            psi,
            theta,
            w_rl,
            members,
            random_states(8, STATE_WIDTH),
            cfg,
            SPEC,
            make_rng(),
        )

        assert [x.checksum() for x in (w_rl, psi, theta, *members)] == before
        assert moved.checksum() != shared.checksum()

    def test_actor_update_moves_only_the_rl_policy(self):
        shared, psi, theta = _shared(), _critic(), _pevfa()
        w = _members(1, seed=9)[0]
        before = [x.checksum() for x in (shared, psi, theta)]

        moved, _, _ = actor_update(
            w, AdamState.for_params(w), psi, shared, random_states(8, STATE_WIDTH), SPEC
        )

        assert [x.checksum() for x in (shared, psi, theta)] == before
        assert moved.checksum() != w.checksum()

    def test_td_updates_leave_policies_and_encoder_alone(self):
        shared, psi, theta = _shared(), _critic(), _pevfa()
        members = _members(2)
        w_target = _members(1, seed=9)[0]
        before = [x.checksum() for x in (shared, w_target, *members)]
        batch, cfg = _batch(), UpdateConfig()

        psi_opt, theta_opt = AdamState.for_params(psi), AdamState.for_params(theta)

        new_psi, _, _ = critic_td_update(
            psi, psi_opt, psi.copy(), shared, w_target, batch, cfg, SPEC, make_rng()
        )
        new_theta, _, _ = pevfa_td_update(
            theta, theta_opt, theta.copy(), shared, members, batch, cfg, SPEC, make_rng()
        )

        assert [x.checksum() for x in (shared, w_target, *members)] == before
        assert new_psi.checksum() != psi.checksum()
        assert new_theta.checksum() != theta.checksum()


class TestLearner:
    @pytest.mark.parametrize("case", generate_cadence_cases(), ids=case_name)
    def test_update_cadence(self, case: CadenceCase):
        learner = _learner(case.cfg)
        members = _members(3)

        records = learner.run(_buffer(), members, case.steps, make_rng())

        assert learner.counts == case.counts
        assert [r.step for r in records] == list(range(1, case.steps + 1))

    def test_targets_hold_still_between_delayed_steps(self):
        learner = _learner(UpdateConfig(batch_size=8, policy_delay=2))
        target = learner.critic_target.checksum()
        shared_target = learner.shared_target.checksum()

        learner.step(_buffer(), _members(3), make_rng())

        assert learner.critic_target.checksum() == target
        assert learner.shared_target.checksum() == shared_target

        learner.step(_buffer(), _members(3), make_rng(1))

        assert learner.critic_target.checksum() != target
        assert learner.shared_target.checksum() != shared_target

    def test_loss_record_fields(self):
        learner = _learner(UpdateConfig(batch_size=8, policy_delay=2))

        first, second = learner.run(_buffer(), _members(3), 2, make_rng())

        assert first.loss_actor is None and second.loss_actor is not None
        for record in (first, second):
            assert record.loss_critic is not None and np.isfinite(record.loss_critic)
            assert record.loss_pevfa is not None and np.isfinite(record.loss_pevfa)
            assert record.loss_sharedrep is not None

    def test_empty_population_skips_the_pevfa(self):
        learner = _learner(UpdateConfig(batch_size=8, k=0))

        record = learner.step(_buffer(), [], make_rng())

        assert record.loss_pevfa is None
        assert learner.counts["pevfa"] == 0 and learner.counts["sharedrep"] == 1


class TestInjection:
    def test_replaces_the_worst_member(self):
        pop = init_population(4, 4, ACTION_DIM, make_rng())
        pop.fitness = np.array([3.0, 1.0, 4.0, 2.0])
        w_rl = _members(1, seed=9)[0]

        injected = rl_inject(pop, w_rl)

        assert injected.members[1].checksum() == w_rl.checksum()
        assert injected.members[1] is not w_rl
        assert np.isnan(injected.fitness[1])
        for i in (0, 2, 3):
            assert injected.members[i].checksum() == pop.members[i].checksum()
            assert injected.fitness[i] == pop.fitness[i]

    def test_population_of_elites_only_is_left_alone(self):
        pop = Population(_members(2), np.array([1.0, 2.0]))

        assert rl_inject(pop, _members(1, seed=9)[0], e_count=2) is pop


class TestConvergence:
    def test_actor_reaches_the_critic_optimum(self):
        # optimum: zero weights and bias arctanh(target) for every action column
        shared = _shared()
        states = random_states(32, STATE_WIDTH)
        critic = QuadraticCritic([0.3, -0.4])
        w = init_policy(4, ACTION_DIM, make_rng(10))
        opt = AdamState.for_params(w, lr=1e-2)

        for step in range(20000):
            opt = dataclasses.replace(opt, lr=max(1e-2 * 0.9995**step, 1e-6))
            w, opt, _ = actor_update(w, opt, critic, shared, states, SPEC)

        actions = act(encode_state(shared, states), w, SPEC)
        np.testing.assert_allclose(actions, np.tile([0.3, -0.4], (32, 1)), atol=1e-3)

    @pytest.mark.parametrize("per_transition", [False, True], ids=["per-batch", "per-transition"])
    def test_pevfa_learns_the_exact_action_values_of_every_member(self, per_transition):
        gamma, tau = 0.5, 0.05
        shared = chain_shared()
        members = [chain_policy([1, 1, 1]), chain_policy([0, 1, 0])]
        chain_spec = ActionSpec([-1.0], [1.0])
        cfg = UpdateConfig(gamma=gamma, tau=tau, pevfa_per_transition=per_transition)

        pairs = [(s, k) for s in range(TabularChain.N_STATES) for k in (0, 1)]
        transitions = [
            Transition(
                TabularChain.one_hot(s),
                np.array([0.5 if k else -0.5]),
                float(TabularChain.REWARD[s, k]),
                TabularChain.one_hot(TabularChain.NEXT[s, k]),
                False,
            )
            for s, k in pairs
        ]
        buffer = ReplayBuffer(4 * len(pairs), 3, 1)
        buffer.push(transitions * 4)
        one = Batch.of(transitions)

        theta = make_pevfa(3, 1, 3, (32, 32), False, make_rng(), embedding_width=8)
        target = theta.copy()
        opt = AdamState.for_params(theta, lr=1e-3)
        rng = make_rng(8)
        for step in range(30000):
            if step == 20000:
                opt = dataclasses.replace(opt, lr=1e-4)
            batch = buffer.sample(2 * len(pairs), rng)
            theta, opt, _ = pevfa_td_update(
                theta, opt, target, shared, members, batch, cfg, chain_spec, rng
            )
            target = soft_update(target, theta, tau)

        for i, choices in enumerate(([1, 1, 1], [0, 1, 0])):
            q = TabularChain.bellman_q(choices, gamma)
            learned = pevfa_eval(theta, one.states, one.actions, members[i])
            expected = np.array([q[s, k] for s, k in pairs])
            np.testing.assert_allclose(learned, expected, atol=1e-2)

    @pytest.mark.parametrize("per_transition", [False, True], ids=["per-batch", "per-transition"])
    def test_single_member_pevfa_update_is_a_plain_critic_update(self, per_transition):
        theta = _pevfa()
        target = _pevfa(seed=5)
        shared = _shared()
        w = _members(1)[0]
        batch = _batch(n=8)
        cfg = UpdateConfig(gamma=0.9, pevfa_per_transition=per_transition)
        opt = AdamState.for_params(theta, lr=1e-2)

        updated, _, loss = pevfa_td_update(
            theta, opt, target, shared, [w], batch, cfg, SPEC, make_rng(3)
        )

        a_next = act(encode_state(shared, batch.next_states), w, SPEC)
        q_next = pevfa_eval(target, batch.next_states, a_next, w, ValueMode.MIN)
        y = batch.rewards + (1.0 - batch.terminals) * 0.9 * q_next
        fwd = pevfa_forward(theta, batch.states, batch.actions, w)
        heads = len(fwd.values)
        expected_loss = float(np.mean([np.mean((q - y) ** 2) for q in fwd.values]))
        grads, _ = pevfa_backward(
            theta, fwd, [2.0 * (q - y) / (len(y) * heads) for q in fwd.values]
        )
        expected, _ = adam_step(opt, theta, grads)
        assert loss == pytest.approx(expected_loss, rel=1e-10, abs=1e-12)
        np.testing.assert_allclose(updated.flat(), expected.flat(), rtol=1e-10, atol=1e-12)
