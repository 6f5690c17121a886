"""Exact pure-strategy equilibrium analysis on small instances.

Expected payoffs under uniform tie-breaking are rational numbers
(utility over arrival count), so every check here runs in exact
`fractions.Fraction` arithmetic: a profile is certified or refuted, never
"equal within tolerance".  Exhaustive enumeration walks all m**n profiles
and refuses politely when that count exceeds a caller-visible guard.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

from .errors import CapacityGuardError, ConfigError, WrongModeError
from .game import GameConfig, Mode, validate_profile

DEFAULT_MAX_PROFILES = 10**6


def _exact_utilities(config: GameConfig) -> list[Fraction]:
    return [Fraction(u) for u in config.utilities]


def _arrival_counts(profile: Sequence[int], m: int) -> list[int]:
    counts = [0] * m
    for choice in profile:
        counts[choice] += 1
    return counts


def expected_payoffs(
    config: GameConfig, profile: Sequence[int]
) -> tuple[Fraction, ...]:
    """Exact expected payoff per agent: utility of the pick, split by crowd.

    An agent among k arrivals at restaurant r is served with probability
    1/k, so its expectation is utilities[r] / k.
    """
    if config.mode is not Mode.KPR:
        raise WrongModeError("equilibrium analysis applies to the restaurant mode")
    choices = validate_profile(config, profile)
    utilities = _exact_utilities(config)
    counts = _arrival_counts(choices, config.m_restaurants)
    return tuple(utilities[c] / counts[c] for c in choices)


@dataclass(frozen=True)
class Deviation:
    """A strictly profitable unilateral move refuting a Nash claim."""

    agent: int
    target: int
    gain: Fraction


@dataclass(frozen=True)
class NashCheck:
    is_nash: bool
    deviation: Deviation | None

    def __bool__(self) -> bool:
        return self.is_nash


def _find_deviation(
    counts: Sequence[int], choices: Sequence[int], utilities: Sequence[Fraction], m: int
) -> Deviation | None:
    # Moving to r' lands among counts[r'] + 1 arrivals; staying keeps 1/k of
    # the current utility.  Comparison is exact, so ties are never "improving".
    for agent, current in enumerate(choices):
        stay = utilities[current] / counts[current]
        for target in range(m):
            if target == current:
                continue
            move = utilities[target] / (counts[target] + 1)
            if move > stay:
                return Deviation(agent, target, move - stay)
    return None


def is_pure_nash(config: GameConfig, profile: Sequence[int]) -> NashCheck:
    """Certify a profile as a pure Nash equilibrium or produce a witness.

    The witness is the first profitable deviation in (agent, target) scan
    order, with its exact gain.
    """
    if config.mode is not Mode.KPR:
        raise WrongModeError("equilibrium analysis applies to the restaurant mode")
    choices = validate_profile(config, profile)
    counts = _arrival_counts(choices, config.m_restaurants)
    deviation = _find_deviation(
        counts, choices, _exact_utilities(config), config.m_restaurants
    )
    return NashCheck(deviation is None, deviation)


def best_response(
    config: GameConfig, profile: Sequence[int], agent: int
) -> tuple[int, ...]:
    """All payoff-maximising restaurants for one agent, others held fixed."""
    if config.mode is not Mode.KPR:
        raise WrongModeError("equilibrium analysis applies to the restaurant mode")
    choices = validate_profile(config, profile)
    if not 0 <= agent < config.n_players:
        raise ConfigError(f"agent index {agent} out of range")
    counts = _arrival_counts(choices, config.m_restaurants)
    utilities = _exact_utilities(config)
    current = choices[agent]
    best: list[int] = []
    best_value: Fraction | None = None
    for target in range(config.m_restaurants):
        crowd = counts[target] if target == current else counts[target] + 1
        value = utilities[target] / crowd
        if best_value is None or value > best_value:
            best, best_value = [target], value
        elif value == best_value:
            best.append(target)
    return tuple(best)


@dataclass(frozen=True)
class NashReport:
    """Result of exhaustively enumerating pure profiles of one instance."""

    config: GameConfig
    profiles_examined: int
    pure_nash: tuple[tuple[int, ...], ...]
    per_profile_expected_payoffs: dict

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "profiles_examined": self.profiles_examined,
            "pure_nash": [list(p) for p in self.pure_nash],
            "per_profile_expected_payoffs": {
                ",".join(map(str, profile)): [str(v) for v in payoffs]
                for profile, payoffs in self.per_profile_expected_payoffs.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def to_text(self) -> str:
        lines = [
            f"instance: n={self.config.n_players} m={self.config.m_restaurants} "
            f"utilities={list(self.config.utilities)}",
            f"profiles examined: {self.profiles_examined}",
            f"pure Nash equilibria: {len(self.pure_nash)}",
        ]
        for profile in self.pure_nash:
            payoffs = self.per_profile_expected_payoffs[profile]
            shown = " ".join(str(v) for v in payoffs)
            lines.append(f"  profile {list(profile)}  expected payoffs: {shown}")
        return "\n".join(lines)


def _all_profiles(n: int, m: int) -> Iterator[tuple[int, ...]]:
    return itertools.product(range(m), repeat=n)


def enumerate_pure_nash(
    config: GameConfig, max_profiles: int = DEFAULT_MAX_PROFILES
) -> NashReport:
    """Enumerate every pure profile and keep the Nash ones.

    Refuses instances with more than `max_profiles` profiles instead of
    silently grinding: the caller sees the bound that was exceeded.
    """
    if config.mode is not Mode.KPR:
        raise WrongModeError("equilibrium analysis applies to the restaurant mode")
    if max_profiles < 1:
        raise ConfigError("max_profiles must be positive")
    n, m = config.n_players, config.m_restaurants
    total = m**n
    if total > max_profiles:
        raise CapacityGuardError(
            f"{m}**{n} = {total} profiles exceeds the guard of {max_profiles}"
        )
    utilities = _exact_utilities(config)
    equilibria: list[tuple[int, ...]] = []
    payoffs_at: dict[tuple[int, ...], tuple[Fraction, ...]] = {}
    for profile in _all_profiles(n, m):
        counts = _arrival_counts(profile, m)
        if _find_deviation(counts, profile, utilities, m) is None:
            equilibria.append(profile)
            payoffs_at[profile] = tuple(
                utilities[c] / counts[c] for c in profile
            )
    return NashReport(
        config=config,
        profiles_examined=total,
        pure_nash=tuple(equilibria),
        per_profile_expected_payoffs=payoffs_at,
    )


__all__ = [
    "DEFAULT_MAX_PROFILES",
    "Deviation",
    "NashCheck",
    "NashReport",
    "best_response",
    "enumerate_pure_nash",
    "expected_payoffs",
    "is_pure_nash",
]
