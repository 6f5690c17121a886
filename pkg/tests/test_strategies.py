"""Strategy kernels: postconditions, distributions, and scalar/vector parity."""

import numpy as np
import pytest

from kprlab.errors import ConfigError
from kprlab.game import FeedbackLevel, GameConfig, Mode, equal_utilities
from kprlab.rng import RngStream
from kprlab.strategies import (
    AgentState,
    GroupView,
    Observation,
    StrategyId,
    StrategyMix,
    choose,
    choose_with_word,
    expand_mix,
    init_agent,
    make_observation,
    make_rule,
    parse_mix,
    resolve_mix,
    update,
)

ALL_IDS = list(StrategyId)


def params_for(strategy_id, m):
    if strategy_id is StrategyId.RANK_BIASED:
        return {"weights": [float(m - k) for k in range(m)]}
    return {}


def fresh_agent(strategy_id, m=5, seed=1):
    return init_agent(strategy_id, params_for(strategy_id, m), m, RngStream(seed, "init"))


def observe(state, choice, payoff, round_index=0):
    obs = Observation(round_index, choice, payoff, payoff > 0)
    return update(state, obs)


class TestInit:
    @pytest.mark.parametrize("strategy_id", ALL_IDS)
    def test_consumes_exactly_one_word(self, strategy_id):
        stream = RngStream(3, "init")
        init_agent(strategy_id, params_for(strategy_id, 4), 4, stream)
        assert stream.draws == 1

    def test_stable_home_in_range_and_fixed(self):
        state = fresh_agent(StrategyId.STABLE, m=7)
        assert 0 <= state.home < 7
        stream = RngStream(2, "c")
        picks = {choose(state, stream) for _ in range(20)}
        assert picks == {state.home}

    def test_reinforcement_starts_flat(self):
        state = fresh_agent(StrategyId.REINFORCEMENT, m=3)
        assert state.propensities == [1.0, 1.0, 1.0]
        custom = init_agent(
            StrategyId.REINFORCEMENT, {"init": 2.5}, 3, RngStream(1, "i")
        )
        assert custom.propensities == [2.5, 2.5, 2.5]

    def test_memory_empty_before_first_round(self):
        for strategy_id in ALL_IDS:
            assert fresh_agent(strategy_id).memory is None


class TestParamValidation:
    def test_unknown_param_rejected(self):
        with pytest.raises(ConfigError):
            make_rule(StrategyId.UNIFORM_RANDOM, 3, {"bogus": 1})

    def test_probabilities_bounded(self):
        with pytest.raises(ConfigError):
            make_rule(StrategyId.NOISE_TRADER, 3, {"p_noise": 1.5})
        with pytest.raises(ConfigError):
            make_rule(StrategyId.INTERMEDIATE, 3, {"p_switch": -0.1})

    def test_reinforcement_init_positive(self):
        with pytest.raises(ConfigError):
            make_rule(StrategyId.REINFORCEMENT, 3, {"init": 0.0})

    def test_rank_biased_needs_weights(self):
        with pytest.raises(ConfigError):
            make_rule(StrategyId.RANK_BIASED, 3, {})
        with pytest.raises(ConfigError):
            make_rule(StrategyId.RANK_BIASED, 3, {"weights": [1.0, 2.0]})
        with pytest.raises(ConfigError):
            make_rule(StrategyId.RANK_BIASED, 3, {"weights": [1.0, 0.0, 1.0]})

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ConfigError):
            StrategyId.parse("clever_bot")


class TestChoosePostconditions:
    @pytest.mark.parametrize("strategy_id", ALL_IDS)
    def test_choice_in_range_and_one_word(self, strategy_id):
        state = fresh_agent(strategy_id, m=6)
        stream = RngStream(5, "c")
        for round_index in range(50):
            before = stream.draws
            pick = choose(state, stream)
            assert stream.draws == before + 1
            assert 0 <= pick < 6
            observe(state, pick, 1.0 if pick % 2 == 0 else 0.0, round_index)

    def test_stick_if_won_repeats_after_win(self):
        state = fresh_agent(StrategyId.STICK_IF_WON, m=5)
        observe(state, 3, 1.0)
        stream = RngStream(9, "c")
        assert all(choose(state, stream) == 3 for _ in range(25))

    def test_stick_if_won_leaves_after_loss(self):
        state = fresh_agent(StrategyId.STICK_IF_WON, m=4)
        observe(state, 2, 0.0)
        stream = RngStream(10, "c")
        picks = {choose(state, stream) for _ in range(200)}
        assert 2 not in picks
        assert picks == {0, 1, 3}

    def test_stick_if_won_include_current_can_stay(self):
        state = init_agent(
            StrategyId.STICK_IF_WON, {"include_current": True}, 4, RngStream(1, "i")
        )
        observe(state, 2, 0.0)
        stream = RngStream(11, "c")
        picks = {choose(state, stream) for _ in range(200)}
        assert picks == {0, 1, 2, 3}

    def test_uniform_covers_everything(self):
        state = fresh_agent(StrategyId.UNIFORM_RANDOM, m=4)
        stream = RngStream(12, "c")
        picks = {choose(state, stream) for _ in range(200)}
        assert picks == {0, 1, 2, 3}


class TestDistributions:
    def test_rank_biased_frequencies(self):
        # weights (3, 1): restaurant 0 should receive 75% of draws
        rule = make_rule(StrategyId.RANK_BIASED, 2, {"weights": [3.0, 1.0]})
        words = RngStream(20, "rb").words(100_000)
        view = GroupView(
            last_choice=np.full(100_000, -1, dtype=np.int64),
            last_won=np.zeros(100_000, dtype=bool),
        )
        picks = rule.choose_block(words, view)
        assert abs((picks == 0).mean() - 0.75) < 0.01

    def test_reinforcement_follows_propensities(self):
        rule = make_rule(StrategyId.REINFORCEMENT, 3, {})
        count = 30_000
        words = RngStream(21, "rf").words(count)
        propensities = np.tile(np.array([2.0, 1.0, 1.0]), (count, 1))
        view = GroupView(
            last_choice=np.zeros(count, dtype=np.int64),
            last_won=np.zeros(count, dtype=bool),
            propensities=propensities,
        )
        picks = rule.choose_block(words, view)
        assert abs((picks == 0).mean() - 0.5) < 0.015
        assert abs((picks == 1).mean() - 0.25) < 0.015

    def test_switch_rates_near_nominal_at_large_m(self):
        # resample includes the current restaurant, so the observed switch
        # rate is p * (1 - 1/m); at m=100 that sits inside p +- 0.02
        rounds = 10_000
        for strategy_id, p in [
            (StrategyId.NOISE_TRADER, 0.9),
            (StrategyId.INTERMEDIATE, 0.15),
        ]:
            state = fresh_agent(strategy_id, m=100, seed=30)
            stream = RngStream(31, "sw")
            switches = 0
            last = choose(state, stream)
            observe(state, last, 0.0, 0)
            for round_index in range(1, rounds):
                pick = choose(state, stream)
                switches += pick != last
                observe(state, pick, 0.0, round_index)
                last = pick
            assert abs(switches / (rounds - 1) - p) < 0.02

    def test_stable_never_switches(self):
        state = fresh_agent(StrategyId.STABLE, m=10, seed=32)
        stream = RngStream(33, "st")
        picks = [choose(state, stream) for _ in range(500)]
        assert len(set(picks)) == 1


class TestUpdate:
    def test_reinforcement_example(self):
        state = fresh_agent(StrategyId.REINFORCEMENT, m=3)
        observe(state, 2, 1.0)
        assert state.propensities == [1.0, 1.0, 2.0]
        assert state.cumulative_score == 1.0

    def test_zero_payoff_leaves_propensities(self):
        state = fresh_agent(StrategyId.REINFORCEMENT, m=3)
        observe(state, 1, 0.0)
        assert state.propensities == [1.0, 1.0, 1.0]
        assert state.cumulative_score == 0.0

    def test_propensities_monotone_under_positive_payoffs(self):
        state = fresh_agent(StrategyId.REINFORCEMENT, m=4)
        stream = RngStream(40, "m")
        previous = list(state.propensities)
        for round_index in range(100):
            pick = choose(state, stream)
            observe(state, pick, 0.5, round_index)
            assert all(now >= then for now, then in zip(state.propensities, previous))
            previous = list(state.propensities)

    def test_memory_holds_last_observation(self):
        state = fresh_agent(StrategyId.UNIFORM_RANDOM)
        obs = Observation(4, 2, 1.0, True, occupancy=(1, 1, 1, 0, 0))
        update(state, obs)
        assert state.memory == obs
        assert state.memory.round_index == 4


class TestScalarVectorParity:
    @pytest.mark.parametrize("strategy_id", ALL_IDS)
    def test_block_equals_scalar_stepping(self, strategy_id):
        m, count = 6, 40
        params = params_for(strategy_id, m)
        rule = make_rule(strategy_id, m, params)
        init_words = RngStream(50, "init").words(count)
        home = rule.init_home(init_words)
        last_choice = np.array([k % m for k in range(count)], dtype=np.int64)
        last_choice[::7] = -1  # some agents have no memory yet
        last_won = np.array([k % 3 == 0 for k in range(count)], dtype=bool)
        propensities = None
        if rule.uses_propensities:
            propensities = (
                RngStream(51, "prop").words(count * m).astype(np.float64).reshape(count, m)
                % 97
                + 1.0
            )
        words = RngStream(52, "choice").words(count)
        block_view = GroupView(last_choice, last_won, propensities, home)
        block = rule.choose_block(words, block_view)
        for i in range(count):
            state = AgentState(
                strategy_id=rule.id,
                params=dict(rule.params),
                m=m,
                memory=(
                    None
                    if last_choice[i] < 0
                    else Observation(0, int(last_choice[i]), 1.0 if last_won[i] else 0.0, bool(last_won[i]))
                ),
                propensities=(
                    [float(v) for v in propensities[i]] if propensities is not None else None
                ),
                home=int(home[i]) if home is not None else None,
            )
            assert choose_with_word(state, int(words[i])) == int(block[i])


class TestObservationFiltering:
    def make(self, level):
        config = GameConfig(Mode.KPR, 3, 3, equal_utilities(3), 10, 1, level)
        return make_observation(config, 5, 1, (0, 2, 2), (1.0, 0.0, 1.0), (1, 0, 2))

    def test_own_only(self):
        obs = self.make(FeedbackLevel.OWN_ONLY)
        assert obs.occupancy is None and obs.full_profile is None
        assert obs.own_choice == 2 and obs.own_payoff == 0.0 and not obs.won

    def test_occupancy(self):
        obs = self.make(FeedbackLevel.OCCUPANCY)
        assert obs.occupancy == (1, 0, 2)
        assert obs.full_profile is None

    def test_full(self):
        obs = self.make(FeedbackLevel.FULL)
        assert obs.occupancy == (1, 0, 2)
        assert obs.full_profile == (0, 2, 2)


class TestMix:
    def config(self, n=6, m=3):
        return GameConfig(Mode.KPR, n, m, equal_utilities(m), 10, 1)

    def test_parse_and_expand(self):
        mix = parse_mix(
            [
                {"strategy_id": "stable", "count": 2},
                {"strategy_id": "noise_trader", "count": 4, "params": {"p_noise": 0.5}},
            ]
        )
        resolved = resolve_mix(mix, self.config())
        agents = expand_mix(resolved)
        assert len(agents) == 6
        assert agents[0]["strategy_id"] == "stable"
        assert agents[2]["params"]["p_noise"] == 0.5

    def test_counts_must_cover_players(self):
        mix = [StrategyMix(StrategyId.STABLE, 5)]
        with pytest.raises(ConfigError):
            resolve_mix(mix, self.config(n=6))

    def test_rank_biased_inherits_utilities(self):
        config = GameConfig(Mode.KPR, 2, 2, (3.0, 1.0), 10, 1)
        resolved = resolve_mix([StrategyMix(StrategyId.RANK_BIASED, 2)], config)
        assert tuple(resolved[0].params["weights"]) == (3.0, 1.0)

    def test_bad_entries_rejected(self):
        with pytest.raises(ConfigError):
            parse_mix([{"count": 2}])
        with pytest.raises(ConfigError):
            parse_mix([{"strategy_id": "stable", "count": 0}])
        with pytest.raises(ConfigError):
            parse_mix([{"strategy_id": "stable", "extra": 1}])
        with pytest.raises(ConfigError):
            parse_mix("stable")
