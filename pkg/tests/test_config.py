import dataclasses
from collections import namedtuple

import pytest

from erlre2.config import (
    PRESETS,
    EvalPolicy,
    EvolutionMode,
    RunConfig,
    config_from_json,
    config_to_json,
    dump_config_text,
    load_config,
    parse_config_text,
)
from erlre2.errors import ConfigError
from erlre2.evolution import OperatorLevel
from erlre2.reinforcement import RlMode, SharedRepTerms

GoodCase = namedtuple("GoodCase", "text,changes,name")

BadCase = namedtuple("BadCase", "run,exc,raises,name")


def case_name(case):
    return case.name


def generate_good_cases():
    return [
        GoodCase(
            name="integers and floats",
            text="population = 7\nelites = 2\nalpha = 0.5\np = 1\n",
            changes=dict(population=7, elites=2, alpha=0.5, p=1.0),
        ),
        GoodCase(
            name="booleans in several spellings",
            text="rl_enabled = no\ncem_keep_best = OFF\nparallel = yes\neval_policy = elite\n",
            changes=dict(
                rl_enabled=False, cem_keep_best=False, parallel=True, eval_policy=EvalPolicy.ELITE
            ),
        ),
        GoodCase(
            name="tuples of widths",
            text="shared_hidden = 32, 16\npevfa_hidden = 8\n",
            changes=dict(shared_hidden=(32, 16), pevfa_hidden=(8,)),
        ),
        GoodCase(
            name="enums are case-insensitive",
            text="mode = DDPG\nevolution = Cem\ncrossover_level = parameter\n",
            changes=dict(
                mode=RlMode.DDPG,
                evolution=EvolutionMode.CEM,
                crossover_level=OperatorLevel.PARAMETER,
            ),
        ),
        GoodCase(
            name="comments and blank lines",
            text="# a run\n\nseed = 4  # trailing\n   \nenv = pendulum\n",
            changes=dict(seed=4, env="pendulum"),
        ),
        GoodCase(
            name="preset then overrides",
            text="h = 10\npreset = td3-swimmer\n",
            changes=dict(mode=RlMode.TD3, p=0.3, beta=1.0, h=10, k=3, gamma=0.999),
        ),
        GoodCase(
            name="ddpg preset parses its mode",
            text="preset = ddpg-hopper\nsharedrep_terms = pevfa\n",
            changes=dict(
                mode=RlMode.DDPG, p=0.8, beta=0.7, h=50, k=3, sharedrep_terms=SharedRepTerms.PEVFA
            ),
        ),
    ]


def generate_bad_cases():
    return [
        BadCase(
            name="unknown key",
            run=lambda: parse_config_text("populaton = 3\n"),
            exc=ConfigError,
            raises=dict(match="unknown config key 'populaton'"),
        ),
        BadCase(
            name="duplicate key",
            run=lambda: parse_config_text("seed = 1\nseed = 2\n"),
            exc=ConfigError,
            raises=dict(match="line 2: duplicate key 'seed'"),
        ),
        BadCase(
            name="missing equals sign",
            run=lambda: parse_config_text("seed 4\n"),
            exc=ConfigError,
            raises=dict(match="expected 'key = value'"),
        ),
        BadCase(
            name="integer that is not a number",
            run=lambda: parse_config_text("seed = four\n"),
            exc=ConfigError,
            raises=dict(match="bad value 'four' for seed"),
        ),
        BadCase(
            name="unknown enum value",
            run=lambda: parse_config_text("mode = ppo\n"),
            exc=ConfigError,
            raises=dict(match="bad value 'ppo' for mode"),
        ),
        BadCase(
            name="unreadable boolean",
            run=lambda: parse_config_text("rl_enabled = maybe\n"),
            exc=ConfigError,
            raises=dict(match="for rl_enabled"),
        ),
        BadCase(
            name="tuple of words",
            run=lambda: parse_config_text("shared_hidden = a,b\n"),
            exc=ConfigError,
            raises=dict(match="for shared_hidden"),
        ),
        BadCase(
            name="unknown preset",
            run=lambda: parse_config_text("preset = td3-atari\n"),
            exc=ConfigError,
            raises=dict(match="unknown preset 'td3-atari'"),
        ),
        BadCase(
            name="probability out of range",
            run=lambda: RunConfig(p=1.5).validate(),
            exc=ConfigError,
            raises=dict(match=r"p must lie in \[0, 1\]"),
        ),
        BadCase(
            name="population too small",
            run=lambda: RunConfig(population=2).validate(),
            exc=ConfigError,
            raises=dict(match="population must be >= 3"),
        ),
        BadCase(
            name="every member an elite",
            run=lambda: RunConfig(population=3, elites=3).validate(),
            exc=ConfigError,
            raises=dict(match=r"elites must be in \[1, 2\]"),
        ),
        BadCase(
            name="k larger than the population",
            run=lambda: RunConfig(population=3, k=4).validate(),
            exc=ConfigError,
            raises=dict(match="k = 4 exceeds the population size 3"),
        ),
        BadCase(
            name="cem top larger than the population",
            run=lambda: RunConfig(population=3, cem_top=4).validate(),
            exc=ConfigError,
            raises=dict(match="cem_top = 4 exceeds"),
        ),
        BadCase(
            name="rl evaluation without an agent",
            run=lambda: RunConfig(rl_enabled=False).validate(),
            exc=ConfigError,
            raises=dict(match="eval_policy 'rl' needs the RL agent"),
        ),
        BadCase(
            name="surrogate prefix of zero without an agent",
            run=lambda: RunConfig(
                rl_enabled=False, eval_policy=EvalPolicy.ELITE, h=0, p=0.5
            ).validate(),
            exc=ConfigError,
            raises=dict(match="h = 0 with p < 1 needs the RL agent"),
        ),
        BadCase(
            name="ga with pevfa-only terms and k of zero",
            run=lambda: RunConfig(sharedrep_terms=SharedRepTerms.PEVFA, k=0).validate(),
            exc=ConfigError,
            raises=dict(match="need K >= 1"),
        ),
        BadCase(
            name="cem with pevfa-only terms and k of zero",
            run=lambda: RunConfig(
                evolution=EvolutionMode.CEM, sharedrep_terms=SharedRepTerms.PEVFA, k=0
            ).validate(),
            exc=ConfigError,
            raises=dict(match="need K >= 1"),
        ),
        BadCase(
            name="nothing left to train",
            run=lambda: RunConfig(
                evolution=EvolutionMode.NONE, rl_enabled=False, eval_policy=EvalPolicy.ELITE
            ).validate(),
            exc=ConfigError,
            raises=dict(match="evolution 'none' needs the RL agent"),
        ),
        BadCase(
            name="unknown environment",
            run=lambda: RunConfig(env="halfcheetah").validate(),
            exc=ConfigError,
            raises=dict(match="unknown environment 'halfcheetah'"),
        ),
        BadCase(
            name="empty shared representation",
            run=lambda: RunConfig(shared_hidden=()).validate(),
            exc=ConfigError,
            raises=dict(match="shared_hidden needs positive widths"),
        ),
    ]


class TestParseConfig:
    @pytest.mark.parametrize("case", generate_good_cases(), ids=case_name)
    def test_parse(self, case: GoodCase):
        assert parse_config_text(case.text) == dataclasses.replace(RunConfig(), **case.changes)

    @pytest.mark.parametrize("case", generate_bad_cases(), ids=case_name)
    def test_bad_cases(self, case: BadCase):
        with pytest.raises(case.exc, **case.raises):
            case.run()

    def test_parse_on_top_of_a_base(self):
        base = RunConfig(seed=9, population=4)

        cfg = parse_config_text("population = 6\n", base)

        assert cfg.seed == 9 and cfg.population == 6
        assert base.population == 4

    def test_load_from_a_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("env = tabular-chain\ntotal_steps = 500\n", encoding="utf-8")

        cfg = load_config(str(path))

        assert cfg.env == "tabular-chain" and cfg.total_steps == 500

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(str(tmp_path / "absent.cfg"))


class TestConfigRoundTrip:
    def test_text_round_trip(self):
        cfg = RunConfig(
            mode=RlMode.DDPG,
            evolution=EvolutionMode.CEM,
            shared_hidden=(16,),
            cem_sigma_init=3e-4,
            tau=0.1 + 0.2,
            rl_enabled=False,
            eval_policy=EvalPolicy.ELITE,
            out="runs/round trip",
        )

        assert parse_config_text(dump_config_text(cfg)) == cfg

    def test_dump_lists_every_field(self):
        text = dump_config_text(RunConfig())

        keys = [line.split(" = ")[0] for line in text.splitlines()]
        assert keys == [f.name for f in dataclasses.fields(RunConfig)]

    def test_json_round_trip(self):
        cfg = RunConfig(sharedrep_terms=SharedRepTerms.CRITIC, k=0, pevfa_hidden=(8, 8))

        assert config_from_json(config_to_json(cfg)) == cfg

    def test_corrupt_json(self):
        with pytest.raises(ConfigError, match="corrupt config record"):
            config_from_json("{env: pointmass")


class TestPresets:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_every_preset_validates(self, name):
        cfg = parse_config_text(f"preset = {name}\n")

        assert cfg.validate() is cfg

    def test_swimmer_presets_discount_less(self):
        assert parse_config_text("preset = td3-swimmer\n").gamma == 0.999
        assert parse_config_text("preset = ddpg-swimmer\n").gamma == 0.999
        assert parse_config_text("preset = td3-walker\n").gamma == 0.99

    def test_no_surrogate_preset(self):
        assert parse_config_text("preset = no-surrogate\n").p == 1.0


class TestDerivedConfigs:
    def test_rl_only_run_has_no_pevfa_terms(self):
        cfg = RunConfig(evolution=EvolutionMode.NONE, k=2).validate()

        update = cfg.update_config()

        assert update.k == 0
        assert not update.pevfa_enabled and update.rl_enabled
        assert not cfg.uses_population

    def test_update_config_carries_the_run_values(self):
        cfg = RunConfig(gamma=0.9, k=2, policy_delay=3, mode=RlMode.DDPG)

        update = cfg.update_config()

        assert (update.gamma, update.k, update.policy_delay, update.mode) == (
            0.9,
            2,
            3,
            RlMode.DDPG,
        )
        assert update.pevfa_enabled

    def test_evolution_config_carries_the_operator_values(self):
        cfg = RunConfig(alpha=0.3, beta=0.6, mutation_level=OperatorLevel.PARAMETER)

        evolution = cfg.evolution_config()

        assert (evolution.alpha, evolution.beta) == (0.3, 0.6)
        assert evolution.mutation_level is OperatorLevel.PARAMETER

    def test_rl_only_run_accepts_pevfa_only_terms(self):
        cfg = RunConfig(evolution=EvolutionMode.NONE, sharedrep_terms=SharedRepTerms.PEVFA, k=0)

        assert cfg.validate() is cfg

    @pytest.mark.parametrize(
        "changes",
        [dict(p=1.0), dict(rl_enabled=True, eval_policy=EvalPolicy.RL)],
        ids=["monte-carlo only", "with the agent"],
    )
    def test_zero_surrogate_prefix_is_fine_when_steps_are_collected(self, changes):
        cfg = RunConfig(rl_enabled=False, eval_policy=EvalPolicy.ELITE, h=0, p=0.5)

        cfg = dataclasses.replace(cfg, **changes)

        assert cfg.validate() is cfg
