"""Game definitions and single-round resolution.

Two modes share one configuration type.  In the restaurant mode, n agents
simultaneously pick one of m restaurants; every restaurant that received
at least one arrival serves exactly one of them, chosen uniformly, and the
served agent collects that restaurant's utility.  In the minority mode
(two options, equal stakes), everyone on the strictly less-crowded side
scores one point and an exact tie pays nobody.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Sequence

from .errors import ConfigError, InvalidProfileError, WrongModeError
from .rng import RngStream


class Mode(str, Enum):
    KPR = "KPR"
    MINORITY = "MINORITY"


class FeedbackLevel(IntEnum):
    """How much of a resolved round a participant is shown.

    Ordered: higher levels reveal strictly more.  OWN_ONLY exposes the
    participant's own choice and payoff, OCCUPANCY adds per-restaurant
    arrival counts, FULL adds the entire choice profile.
    """

    OWN_ONLY = 0
    OCCUPANCY = 1
    FULL = 2

    @classmethod
    def parse(cls, value: "str | int | FeedbackLevel") -> "FeedbackLevel":
        if isinstance(value, FeedbackLevel):
            return value
        if isinstance(value, str):
            try:
                return cls[value.upper()]
            except KeyError:
                raise ConfigError(f"unknown feedback level: {value!r}") from None
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown feedback level: {value!r}") from None


def ranked_utilities(m: int) -> tuple[float, ...]:
    """Strictly decreasing utilities (m, m-1, ..., 1) / m for ranked play."""
    if m <= 0:
        raise ConfigError("m must be positive")
    return tuple((m - k) / m for k in range(m))


def equal_utilities(m: int) -> tuple[float, ...]:
    """All-equal unit utilities for unranked play."""
    if m <= 0:
        raise ConfigError("m must be positive")
    return (1.0,) * m


_CONFIG_FIELDS = (
    "mode",
    "n_players",
    "m_restaurants",
    "utilities",
    "horizon",
    "seed",
    "feedback_level",
)


@dataclass(frozen=True)
class GameConfig:
    """Complete rules of one game instance.

    Utilities must be positive and non-increasing (restaurant 0 is the best
    ranked one); the minority mode requires exactly two equally valued
    options.  `seed` fixes every random draw the run will make.
    """

    mode: Mode
    n_players: int
    m_restaurants: int
    utilities: tuple[float, ...]
    horizon: int
    seed: int
    feedback_level: FeedbackLevel = FeedbackLevel.OWN_ONLY

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "feedback_level", FeedbackLevel.parse(self.feedback_level))
        for name in ("n_players", "m_restaurants", "horizon"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ConfigError(f"{name} must be a positive integer")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an integer in [0, 2**64)")
        utilities = tuple(float(u) for u in self.utilities)
        object.__setattr__(self, "utilities", utilities)
        if len(utilities) != self.m_restaurants:
            raise ConfigError("utilities must have one entry per restaurant")
        if any(u <= 0 for u in utilities):
            raise ConfigError("utilities must be positive")
        if any(a < b for a, b in zip(utilities, utilities[1:])):
            raise ConfigError("utilities must be non-increasing")
        if self.mode is Mode.MINORITY:
            if self.m_restaurants != 2:
                raise ConfigError("minority mode requires exactly two options")
            if utilities[0] != utilities[1]:
                raise ConfigError("minority mode requires equal utilities")

    @property
    def is_ranked(self) -> bool:
        """True when at least one utility strictly dominates a later one."""
        return any(a > b for a, b in zip(self.utilities, self.utilities[1:]))

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "n_players": self.n_players,
            "m_restaurants": self.m_restaurants,
            "utilities": list(self.utilities),
            "horizon": self.horizon,
            "seed": self.seed,
            "feedback_level": self.feedback_level.name,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "GameConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - set(_CONFIG_FIELDS)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        missing = set(_CONFIG_FIELDS) - {"feedback_level"} - set(data)
        if missing:
            raise ConfigError(f"missing config fields: {sorted(missing)}")
        try:
            mode = Mode(data["mode"])
        except ValueError:
            raise ConfigError(f"unknown mode: {data['mode']!r}") from None
        utilities = data["utilities"]
        if not isinstance(utilities, (list, tuple)):
            raise ConfigError("utilities must be an array")
        return cls(
            mode=mode,
            n_players=data["n_players"],
            m_restaurants=data["m_restaurants"],
            utilities=tuple(utilities),
            horizon=data["horizon"],
            seed=data["seed"],
            feedback_level=FeedbackLevel.parse(data.get("feedback_level", "OWN_ONLY")),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def loads(cls, text: str) -> "GameConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        return cls.from_json_dict(data)


@dataclass(frozen=True)
class RoundOutcome:
    """Everything a resolved round produced.

    `arrivals[r]` counts agents at restaurant r; `winner[r]` is the served
    agent's index (None where empty); `payoffs[i]` is agent i's score this
    round; `occupied_count` is the number of non-empty restaurants.
    """

    arrivals: tuple[int, ...]
    winner: tuple[int | None, ...]
    payoffs: tuple[float, ...]
    occupied_count: int

    def to_json_dict(self) -> dict:
        return {
            "arrivals": list(self.arrivals),
            "winner": list(self.winner),
            "payoffs": list(self.payoffs),
            "occupied_count": self.occupied_count,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "RoundOutcome":
        return cls(
            arrivals=tuple(int(a) for a in data["arrivals"]),
            winner=tuple(None if w is None else int(w) for w in data["winner"]),
            payoffs=tuple(float(p) for p in data["payoffs"]),
            occupied_count=int(data["occupied_count"]),
        )


def validate_profile(config: GameConfig, profile: Sequence[int]) -> tuple[int, ...]:
    """Check a choice profile against a config; return it as a tuple."""
    choices = tuple(profile)
    if len(choices) != config.n_players:
        raise InvalidProfileError(
            f"profile has {len(choices)} choices, expected {config.n_players}"
        )
    m = config.m_restaurants
    for agent, choice in enumerate(choices):
        if not isinstance(choice, int) or isinstance(choice, bool):
            raise InvalidProfileError(f"agent {agent} choice must be an integer")
        if not 0 <= choice < m:
            raise InvalidProfileError(
                f"agent {agent} chose {choice}, outside [0, {m})"
            )
    return choices


def resolve_round(
    config: GameConfig, profile: Sequence[int], rng: RngStream
) -> RoundOutcome:
    """Resolve one simultaneous restaurant round.

    Each occupied restaurant serves exactly one of its arrivals, chosen
    uniformly; everyone else gets nothing.  Consumes exactly one word from
    `rng` per occupied restaurant, in restaurant order.
    """
    if config.mode is not Mode.KPR:
        raise WrongModeError("resolve_round applies to the restaurant mode only")
    choices = validate_profile(config, profile)
    m = config.m_restaurants
    arrivals = [0] * m
    queue: list[list[int]] = [[] for _ in range(m)]
    for agent, choice in enumerate(choices):
        arrivals[choice] += 1
        queue[choice].append(agent)
    winner: list[int | None] = [None] * m
    payoffs = [0.0] * config.n_players
    occupied = 0
    for restaurant, group in enumerate(queue):
        if not group:
            continue
        occupied += 1
        served = group[rng.randbelow(len(group))]
        winner[restaurant] = served
        payoffs[served] = config.utilities[restaurant]
    return RoundOutcome(tuple(arrivals), tuple(winner), tuple(payoffs), occupied)


def resolve_minority_round(
    config: GameConfig, profile: Sequence[int]
) -> RoundOutcome:
    """Resolve one minority round: strictly smaller side scores 1 each.

    An exact split pays nobody.  Deterministic; consumes no randomness.
    """
    if config.mode is not Mode.MINORITY:
        raise WrongModeError("resolve_minority_round applies to the minority mode only")
    choices = validate_profile(config, profile)
    ones = sum(choices)
    zeros = config.n_players - ones
    if zeros < ones:
        winning: int | None = 0
    elif ones < zeros:
        winning = 1
    else:
        winning = None
    payoffs = tuple(
        1.0 if winning is not None and choice == winning else 0.0 for choice in choices
    )
    occupied = int(zeros > 0) + int(ones > 0)
    return RoundOutcome((zeros, ones), (None, None), payoffs, occupied)


def utilization(outcome: RoundOutcome, config: GameConfig) -> float:
    """Fraction of restaurants that served someone this round."""
    if config.mode is not Mode.KPR:
        raise WrongModeError("utilization applies to the restaurant mode only")
    return outcome.occupied_count / config.m_restaurants


@dataclass(frozen=True)
class GameStreams:
    """The named draw streams one game run consumes.

    Purposes never share draws and replications use disjoint label
    prefixes, so consuming more words for one purpose (or adding
    replications) never perturbs the others.
    """

    init: RngStream
    choices: RngStream
    tiebreak: RngStream
    defaults: RngStream

    @classmethod
    def for_replication(cls, seed: int, replication: int = 0) -> "GameStreams":
        prefix = f"rep{replication}"
        return cls(
            init=RngStream(seed, f"{prefix}/init"),
            choices=RngStream(seed, f"{prefix}/choices"),
            tiebreak=RngStream(seed, f"{prefix}/tiebreak"),
            defaults=RngStream(seed, f"{prefix}/defaults"),
        )
