"""Decision rules for agents and the state they carry between rounds.

The catalog spans zero-information play (uniform), the classic
crowd-avoiding heuristic (repeat after a win, move after a loss),
rank-chasing, cumulative reinforcement learning, and three behavioural
archetypes told apart by how often they switch: a noise trader that
resamples almost every round, a stable agent that never moves, and an
intermediate occasional switcher.

Every rule is implemented once, as an array kernel over a block of agents.
The scalar API (`init_agent` / `choose` / `update`) wraps the same kernels
with one-element arrays, so stepping agents one at a time is bit-identical
to the vectorised population engine.  Each `choose` consumes exactly one
random word and each `init_agent` exactly one, whatever the rule; that
fixed budget is what keeps draw positions stable across code paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError
from .game import FeedbackLevel, GameConfig
from .rng import (
    RngStream,
    bernoulli_threshold,
    bernoulli_words,
    categorical_rows,
    categorical_words,
    low32_below,
    randbelow_words,
)


class StrategyId(str, Enum):
    UNIFORM_RANDOM = "uniform_random"
    STICK_IF_WON = "stick_if_won"
    RANK_BIASED = "rank_biased"
    REINFORCEMENT = "reinforcement"
    NOISE_TRADER = "noise_trader"
    STABLE = "stable"
    INTERMEDIATE = "intermediate"

    @classmethod
    def parse(cls, value: "str | StrategyId") -> "StrategyId":
        if isinstance(value, StrategyId):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown strategy: {value!r}") from None


@dataclass(frozen=True)
class Observation:
    """What one agent is shown after a round, already feedback-filtered."""

    round_index: int
    own_choice: int
    own_payoff: float
    won: bool
    occupancy: tuple[int, ...] | None = None
    full_profile: tuple[int, ...] | None = None


@dataclass
class AgentState:
    """Per-agent state threaded through the scalar step API."""

    strategy_id: StrategyId
    params: dict
    m: int
    memory: Observation | None = None
    propensities: list[float] | None = None
    home: int | None = None
    cumulative_score: float = 0.0


@dataclass
class GroupView:
    """Array view of a block of same-rule agents, as kernels consume it."""

    last_choice: np.ndarray  # int64; -1 marks "no memory yet"
    last_won: np.ndarray  # bool
    propensities: np.ndarray | None = None  # float64 (agents, m)
    home: np.ndarray | None = None  # int64


def _require_params(params: Mapping, allowed: dict, strategy: str) -> dict:
    resolved = dict(allowed)
    for key, value in params.items():
        if key not in allowed:
            raise ConfigError(f"{strategy} got unknown parameter {key!r}")
        resolved[key] = value
    return resolved


def _check_probability(value, name: str) -> float:
    try:
        p = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a number") from None
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"{name} must be in [0, 1], got {p}")
    return p


class Rule:
    """One decision rule bound to (m, params); stateless across agents."""

    id: StrategyId
    uses_propensities = False
    uses_home = False

    def __init__(self, m: int, params: Mapping) -> None:
        if m <= 0:
            raise ConfigError("m must be positive")
        self.m = m
        self.params = self._resolve(params)

    def _resolve(self, params: Mapping) -> dict:
        return _require_params(params, {}, self.id.value)

    def init_home(self, words: np.ndarray) -> np.ndarray | None:
        """Consume the per-agent init words; only STABLE keeps the result."""
        return None

    def initial_propensity(self) -> float:
        raise ConfigError(f"{self.id.value} keeps no propensities")

    def choose_block(self, words: np.ndarray, view: GroupView) -> np.ndarray:
        raise NotImplementedError


class UniformRandom(Rule):
    id = StrategyId.UNIFORM_RANDOM

    def choose_block(self, words: np.ndarray, view: GroupView) -> np.ndarray:
        return randbelow_words(words, self.m)


class StickIfWon(Rule):
    """Repeat the last choice after a win; after a loss (or before any
    history) draw afresh.  By default the lost restaurant is excluded from
    the redraw; `include_current` keeps it in the pool."""

    id = StrategyId.STICK_IF_WON

    def _resolve(self, params: Mapping) -> dict:
        resolved = _require_params(params, {"include_current": False}, self.id.value)
        resolved["include_current"] = bool(resolved["include_current"])
        return resolved

    def choose_block(self, words: np.ndarray, view: GroupView) -> np.ndarray:
        m = self.m
        fresh = view.last_choice < 0
        anywhere = randbelow_words(words, m)
        if m == 1:
            return anywhere
        if self.params["include_current"]:
            moved = anywhere
        else:
            shrunk = randbelow_words(words, m - 1)
            moved = shrunk + (shrunk >= view.last_choice)
        stay_or_move = np.where(view.last_won, view.last_choice, moved)
        return np.where(fresh, anywhere, stay_or_move).astype(np.int64)


class RankBiased(Rule):
    """Sample restaurant k with probability proportional to its weight.

    Weights default to the game's utilities; the simulator injects them
    when expanding a strategy mix."""

    id = StrategyId.RANK_BIASED

    def _resolve(self, params: Mapping) -> dict:
        resolved = _require_params(params, {"weights": None}, self.id.value)
        weights = resolved["weights"]
        if weights is None:
            raise ConfigError("rank_biased requires a weights vector")
        weights = tuple(float(w) for w in weights)
        if len(weights) != self.m:
            raise ConfigError("rank_biased weights must have one entry per restaurant")
        if any(w <= 0 for w in weights):
            raise ConfigError("rank_biased weights must be positive")
        resolved["weights"] = weights
        return resolved

    def __init__(self, m: int, params: Mapping) -> None:
        super().__init__(m, params)
        self._cumulative = np.cumsum(np.asarray(self.params["weights"], dtype=np.float64))

    def choose_block(self, words: np.ndarray, view: GroupView) -> np.ndarray:
        return categorical_words(words, self._cumulative)


class Reinforcement(Rule):
    """Cumulative-payoff reinforcement: propensities start flat and grow by
    realised payoffs; choices are proportional to propensities."""

    id = StrategyId.REINFORCEMENT
    uses_propensities = True

    def _resolve(self, params: Mapping) -> dict:
        resolved = _require_params(params, {"init": 1.0}, self.id.value)
        init = float(resolved["init"])
        if init <= 0:
            raise ConfigError("reinforcement init must be positive")
        resolved["init"] = init
        return resolved

    def initial_propensity(self) -> float:
        return self.params["init"]

    def choose_block(self, words: np.ndarray, view: GroupView) -> np.ndarray:
        assert view.propensities is not None
        return categorical_rows(words, np.cumsum(view.propensities, axis=1))


class _ResampleRule(Rule):
    """Shared kernel: with probability p draw uniformly (current restaurant
    included), otherwise repeat; first round always draws."""

    prob_key = ""

    def _threshold(self) -> int:
        return bernoulli_threshold(self.params[self.prob_key])

    def __init__(self, m: int, params: Mapping) -> None:
        super().__init__(m, params)
        self._thr = self._threshold()

    def choose_block(self, words: np.ndarray, view: GroupView) -> np.ndarray:
        anywhere = low32_below(words, self.m)
        resample = bernoulli_words(words, self._thr)
        fresh = view.last_choice < 0
        repeat_or_move = np.where(resample, anywhere, view.last_choice)
        return np.where(fresh, anywhere, repeat_or_move).astype(np.int64)


class NoiseTrader(_ResampleRule):
    id = StrategyId.NOISE_TRADER
    prob_key = "p_noise"

    def _resolve(self, params: Mapping) -> dict:
        resolved = _require_params(params, {"p_noise": 0.9}, self.id.value)
        resolved["p_noise"] = _check_probability(resolved["p_noise"], "p_noise")
        return resolved


class Intermediate(_ResampleRule):
    id = StrategyId.INTERMEDIATE
    prob_key = "p_switch"

    def _resolve(self, params: Mapping) -> dict:
        resolved = _require_params(params, {"p_switch": 0.15}, self.id.value)
        resolved["p_switch"] = _check_probability(resolved["p_switch"], "p_switch")
        return resolved


class Stable(Rule):
    """Draw one restaurant at initialisation and never leave it."""

    id = StrategyId.STABLE
    uses_home = True

    def init_home(self, words: np.ndarray) -> np.ndarray:
        return randbelow_words(words, self.m)

    def choose_block(self, words: np.ndarray, view: GroupView) -> np.ndarray:
        assert view.home is not None
        return view.home.astype(np.int64)


RULES: dict[StrategyId, type[Rule]] = {
    cls.id: cls
    for cls in (
        UniformRandom,
        StickIfWon,
        RankBiased,
        Reinforcement,
        NoiseTrader,
        Stable,
        Intermediate,
    )
}


def _freeze(value):
    if isinstance(value, Mapping):
        return tuple(sorted((k, _freeze(v)) for k, v in value.items()))
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    return value


_rule_cache: dict[tuple, Rule] = {}


def make_rule(strategy_id: "str | StrategyId", m: int, params: Mapping) -> Rule:
    """Build (or fetch from cache) the rule for one strategy binding."""
    sid = StrategyId.parse(strategy_id)
    key = (sid, m, _freeze(params))
    try:
        return _rule_cache[key]
    except (KeyError, TypeError):
        pass
    rule = RULES[sid](m, params)
    try:
        _rule_cache[key] = rule
    except TypeError:
        pass
    return rule


def init_agent(
    strategy_id: "str | StrategyId", params: Mapping, m: int, rng: RngStream
) -> AgentState:
    """Create one agent, consuming exactly one word from `rng`."""
    rule = make_rule(strategy_id, m, params)
    word = np.array([rng.word()], dtype=np.uint64)
    home = rule.init_home(word)
    propensities = [rule.initial_propensity()] * m if rule.uses_propensities else None
    return AgentState(
        strategy_id=rule.id,
        params=dict(rule.params),
        m=m,
        memory=None,
        propensities=propensities,
        home=None if home is None else int(home[0]),
        cumulative_score=0.0,
    )


def choose_with_word(state: AgentState, word: int) -> int:
    """Pick the agent's next restaurant from one already-drawn word."""
    rule = make_rule(state.strategy_id, state.m, state.params)
    memory = state.memory
    view = GroupView(
        last_choice=np.array(
            [-1 if memory is None else memory.own_choice], dtype=np.int64
        ),
        last_won=np.array([memory.won if memory else False], dtype=bool),
        propensities=(
            np.array([state.propensities], dtype=np.float64)
            if state.propensities is not None
            else None
        ),
        home=np.array([state.home], dtype=np.int64) if state.home is not None else None,
    )
    words = np.array([word], dtype=np.uint64)
    choice = int(rule.choose_block(words, view)[0])
    if not 0 <= choice < state.m:
        raise AssertionError("rule produced an out-of-range choice")
    return choice


def choose(state: AgentState, rng: RngStream) -> int:
    """Pick the agent's next restaurant, consuming exactly one word."""
    return choose_with_word(state, rng.word())


def update(state: AgentState, observation: Observation) -> AgentState:
    """Fold one round's observation into the agent state (in place)."""
    state.memory = observation
    state.cumulative_score += observation.own_payoff
    if state.propensities is not None:
        state.propensities[observation.own_choice] += observation.own_payoff
    return state


def make_observation(
    config: GameConfig,
    round_index: int,
    agent: int,
    choices: Sequence[int],
    payoffs: Sequence[float],
    arrivals: Sequence[int],
) -> Observation:
    """Build the feedback-filtered observation one agent receives."""
    level = config.feedback_level
    return Observation(
        round_index=round_index,
        own_choice=int(choices[agent]),
        own_payoff=float(payoffs[agent]),
        won=payoffs[agent] > 0,
        occupancy=tuple(int(a) for a in arrivals) if level >= FeedbackLevel.OCCUPANCY else None,
        full_profile=tuple(int(c) for c in choices) if level >= FeedbackLevel.FULL else None,
    )


@dataclass(frozen=True)
class StrategyMix:
    """One entry of a population: `count` agents sharing a rule binding."""

    strategy_id: StrategyId
    count: int
    params: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "strategy_id": self.strategy_id.value,
            "count": self.count,
            "params": dict(self.params),
        }


def parse_mix(entries: Sequence[Mapping]) -> list[StrategyMix]:
    """Parse a JSON-shaped strategy mix (list of id/count/params objects)."""
    if not isinstance(entries, Sequence) or isinstance(entries, (str, bytes)):
        raise ConfigError("strategy mix must be an array")
    mix = []
    for entry in entries:
        if not isinstance(entry, Mapping):
            raise ConfigError("strategy mix entries must be objects")
        unknown = set(entry) - {"strategy_id", "count", "params"}
        if unknown:
            raise ConfigError(f"unknown strategy mix fields: {sorted(unknown)}")
        if "strategy_id" not in entry:
            raise ConfigError("strategy mix entry missing strategy_id")
        count = entry.get("count", 1)
        if not isinstance(count, int) or isinstance(count, bool) or count <= 0:
            raise ConfigError("strategy mix count must be a positive integer")
        params = entry.get("params", {})
        if not isinstance(params, Mapping):
            raise ConfigError("strategy mix params must be an object")
        mix.append(
            StrategyMix(StrategyId.parse(entry["strategy_id"]), count, dict(params))
        )
    return mix


def resolve_mix(
    mix: Sequence[StrategyMix], config: GameConfig
) -> list[StrategyMix]:
    """Validate a mix against a config and fill config-derived defaults.

    Rank-biased entries inherit the game's utilities as weights unless the
    entry supplies its own.  Counts must sum to the player count, and every
    rule binding is constructed once here so bad parameters fail early.
    """
    resolved = []
    total = 0
    for entry in mix:
        params = dict(entry.params)
        if entry.strategy_id is StrategyId.RANK_BIASED and "weights" not in params:
            params["weights"] = list(config.utilities)
        make_rule(entry.strategy_id, config.m_restaurants, params)
        resolved.append(StrategyMix(entry.strategy_id, entry.count, params))
        total += entry.count
    if total != config.n_players:
        raise ConfigError(
            f"strategy mix covers {total} agents, config has {config.n_players}"
        )
    return resolved


def expand_mix(mix: Sequence[StrategyMix]) -> list[dict]:
    """Per-agent assignment records, in agent index order."""
    agents = []
    for entry in mix:
        record = {"strategy_id": entry.strategy_id.value, "params": dict(entry.params)}
        agents.extend(dict(record) for _ in range(entry.count))
    return agents
