"""Monte Carlo driver: whole games, replicated batches, and trace files.

The per-round loop is vectorised over agents (grouped by strategy-mix
entry), but it draws from the same labelled streams, one word per agent
per round, that the scalar agent API uses, so a game stepped one agent at
a time reproduces these traces exactly.  Replication k of a batch draws
from streams labelled `rep{k}/...`; a single `run_game` is replication 0,
which makes a one-replication batch literally the same game.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .game import GameConfig, GameStreams, Mode, RoundOutcome, utilization
from .rng import RngStream, randbelow_words
from .strategies import (
    GroupView,
    StrategyMix,
    expand_mix,
    make_rule,
    parse_mix,
    resolve_mix,
)


class TraceSource(str, Enum):
    SIMULATED = "SIMULATED"
    REPLAYED_SESSION = "REPLAYED_SESSION"


@dataclass(frozen=True)
class Trace:
    """One complete game: config, who played what, and every outcome.

    `strategy_assignment[i]` records agent i's rule binding (replayed
    sessions label human seats with strategy_id "human").  Round t holds
    the full choice profile and its outcome; `per_round_utilization` is
    recomputed from the outcomes, never trusted from input.
    """

    config: GameConfig
    strategy_assignment: tuple[dict, ...]
    rounds: tuple[tuple[tuple[int, ...], RoundOutcome], ...]
    per_round_utilization: tuple[float, ...]
    source: TraceSource

    @property
    def horizon_played(self) -> int:
        return len(self.rounds)

    def choices_array(self) -> np.ndarray:
        """(rounds, agents) int array of choices."""
        return np.array([choices for choices, _ in self.rounds], dtype=np.int64)

    def payoffs_array(self) -> np.ndarray:
        """(rounds, agents) float array of payoffs."""
        return np.array(
            [outcome.payoffs for _, outcome in self.rounds], dtype=np.float64
        )

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "strategy_assignment": [
                {"strategy_id": a["strategy_id"], "params": _jsonable(a["params"])}
                for a in self.strategy_assignment
            ],
            "rounds": [
                {"choices": list(choices), "outcome": outcome.to_json_dict()}
                for choices, outcome in self.rounds
            ],
            "per_round_utilization": list(self.per_round_utilization),
            "source": self.source.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))

    def to_csv(self) -> str:
        """Flat per-agent-round rows: round, agent, choice, won, payoff."""
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["round", "agent", "choice", "won", "payoff"])
        for t, (choices, outcome) in enumerate(self.rounds):
            for agent, choice in enumerate(choices):
                payoff = outcome.payoffs[agent]
                writer.writerow([t, agent, choice, int(payoff > 0), repr(payoff)])
        return out.getvalue()


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def make_trace(
    config: GameConfig,
    strategy_assignment: Sequence[dict],
    rounds: Sequence[tuple[Sequence[int], RoundOutcome]],
    source: TraceSource,
) -> Trace:
    """Assemble a trace, recomputing utilization from the outcomes."""
    packed = tuple((tuple(choices), outcome) for choices, outcome in rounds)
    if config.mode is Mode.KPR:
        series = tuple(utilization(outcome, config) for _, outcome in packed)
    else:
        series = tuple(
            outcome.occupied_count / config.m_restaurants for _, outcome in packed
        )
    return Trace(
        config=config,
        strategy_assignment=tuple(dict(a) for a in strategy_assignment),
        rounds=packed,
        per_round_utilization=series,
        source=TraceSource(source),
    )


def trace_from_json(text: str) -> Trace:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"trace is not valid JSON: {exc}") from None
    return trace_from_json_dict(data)


def trace_from_json_dict(data: dict) -> Trace:
    required = {
        "config",
        "strategy_assignment",
        "rounds",
        "per_round_utilization",
        "source",
    }
    if not isinstance(data, dict) or not required <= set(data):
        raise DataError("trace object is missing required fields")
    config = GameConfig.from_json_dict(data["config"])
    assignment = []
    for record in data["strategy_assignment"]:
        if "strategy_id" not in record:
            raise DataError("assignment record missing strategy_id")
        assignment.append(
            {"strategy_id": record["strategy_id"], "params": record.get("params", {})}
        )
    if len(assignment) != config.n_players:
        raise DataError("assignment length does not match player count")
    rounds = []
    for row in data["rounds"]:
        outcome = RoundOutcome.from_json_dict(row["outcome"])
        rounds.append((tuple(int(c) for c in row["choices"]), outcome))
    try:
        source = TraceSource(data["source"])
    except ValueError:
        raise DataError(f"unknown trace source: {data['source']!r}") from None
    trace = make_trace(config, assignment, rounds, source)
    recorded = tuple(float(u) for u in data["per_round_utilization"])
    if recorded != trace.per_round_utilization:
        raise DataError("per_round_utilization is inconsistent with outcomes")
    return trace


class _Population:
    """Array-of-agents state for one run, grouped by strategy-mix entry."""

    def __init__(self, config: GameConfig, mix: Sequence[StrategyMix], init: RngStream):
        self.n = config.n_players
        m = config.m_restaurants
        self.groups = []
        start = 0
        for entry in mix:
            rule = make_rule(entry.strategy_id, m, entry.params)
            self.groups.append((rule, slice(start, start + entry.count)))
            start += entry.count
        if start != self.n:
            raise ConfigError("strategy mix does not cover every agent")
        words = init.words(self.n)  # one init word per agent, index order
        self.last_choice = np.full(self.n, -1, dtype=np.int64)
        self.last_won = np.zeros(self.n, dtype=bool)
        self.score = np.zeros(self.n, dtype=np.float64)
        self.home = np.zeros(self.n, dtype=np.int64)
        self.propensities: dict[int, np.ndarray] = {}
        for gi, (rule, block) in enumerate(self.groups):
            drawn = rule.init_home(words[block])
            if drawn is not None:
                self.home[block] = drawn
            if rule.uses_propensities:
                size = block.stop - block.start
                self.propensities[gi] = np.full(
                    (size, m), rule.initial_propensity(), dtype=np.float64
                )

    def choose(self, words: np.ndarray) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        for gi, (rule, block) in enumerate(self.groups):
            view = GroupView(
                last_choice=self.last_choice[block],
                last_won=self.last_won[block],
                propensities=self.propensities.get(gi),
                home=self.home[block],
            )
            out[block] = rule.choose_block(words[block], view)
        return out

    def observe(self, choices: np.ndarray, payoffs: np.ndarray) -> None:
        won = payoffs > 0
        for gi, (rule, block) in enumerate(self.groups):
            if rule.uses_propensities:
                prop = self.propensities[gi]
                rows = np.arange(block.stop - block.start)
                prop[rows, choices[block]] += payoffs[block]
        self.score += payoffs
        self.last_choice = choices.copy()
        self.last_won = won


def _resolve_kpr_block(
    choices: np.ndarray, m: int, utilities: np.ndarray, tiebreak: RngStream
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Vectorised twin of `resolve_round`: same word budget, same winners."""
    n = choices.shape[0]
    arrivals = np.bincount(choices, minlength=m)
    occupied_idx = np.flatnonzero(arrivals)
    words = tiebreak.words(occupied_idx.size)
    order = np.argsort(choices, kind="stable")  # agents grouped by restaurant
    starts = np.concatenate(([0], np.cumsum(arrivals)[:-1]))
    counts = arrivals[occupied_idx]
    picks = randbelow_words(words, counts)
    served = order[starts[occupied_idx] + picks]
    winner = np.full(m, -1, dtype=np.int64)
    winner[occupied_idx] = served
    payoffs = np.zeros(n, dtype=np.float64)
    payoffs[served] = utilities[occupied_idx]
    return arrivals, winner, payoffs, int(occupied_idx.size)


def _resolve_minority_block(
    choices: np.ndarray, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    ones = int(choices.sum())
    zeros = n - ones
    payoffs = np.zeros(n, dtype=np.float64)
    if zeros < ones:
        payoffs[choices == 0] = 1.0
    elif ones < zeros:
        payoffs[choices == 1] = 1.0
    arrivals = np.array([zeros, ones], dtype=np.int64)
    winner = np.full(2, -1, dtype=np.int64)
    return arrivals, winner, payoffs, int(zeros > 0) + int(ones > 0)


@dataclass
class _RunArrays:
    choices: np.ndarray  # (T, n)
    arrivals: np.ndarray  # (T, m)
    winner: np.ndarray  # (T, m), -1 where empty
    payoffs: np.ndarray  # (T, n)
    occupied: np.ndarray  # (T,)
    utilization: np.ndarray  # (T,)


def _simulate_arrays(
    config: GameConfig, mix: Sequence[StrategyMix], replication: int
) -> _RunArrays:
    streams = GameStreams.for_replication(config.seed, replication)
    population = _Population(config, mix, streams.init)
    n, m, horizon = config.n_players, config.m_restaurants, config.horizon
    utilities = np.asarray(config.utilities, dtype=np.float64)
    out = _RunArrays(
        choices=np.empty((horizon, n), dtype=np.int64),
        arrivals=np.empty((horizon, m), dtype=np.int64),
        winner=np.empty((horizon, m), dtype=np.int64),
        payoffs=np.empty((horizon, n), dtype=np.float64),
        occupied=np.empty(horizon, dtype=np.int64),
        utilization=np.empty(horizon, dtype=np.float64),
    )
    minority = config.mode is Mode.MINORITY
    for t in range(horizon):
        words = streams.choices.words(n)  # one word per agent, index order
        choices = population.choose(words)
        if minority:
            arrivals, winner, payoffs, occupied = _resolve_minority_block(choices, n)
        else:
            arrivals, winner, payoffs, occupied = _resolve_kpr_block(
                choices, m, utilities, streams.tiebreak
            )
        out.choices[t] = choices
        out.arrivals[t] = arrivals
        out.winner[t] = winner
        out.payoffs[t] = payoffs
        out.occupied[t] = occupied
        out.utilization[t] = occupied / m
        population.observe(choices, payoffs)
    return out


def _arrays_to_rounds(
    arrays: _RunArrays,
) -> list[tuple[tuple[int, ...], RoundOutcome]]:
    rounds = []
    for t in range(arrays.choices.shape[0]):
        winner = tuple(None if w < 0 else int(w) for w in arrays.winner[t])
        outcome = RoundOutcome(
            arrivals=tuple(int(a) for a in arrays.arrivals[t]),
            winner=winner,
            payoffs=tuple(float(p) for p in arrays.payoffs[t]),
            occupied_count=int(arrays.occupied[t]),
        )
        rounds.append((tuple(int(c) for c in arrays.choices[t]), outcome))
    return rounds


def run_game(
    config: GameConfig,
    mix: Sequence[StrategyMix],
    replication: int = 0,
) -> Trace:
    """Play one full game deterministically and return its trace.

    `replication` selects the draw-stream family; batches use consecutive
    values, and the default 0 is what a one-replication batch plays.
    """
    resolved = resolve_mix(mix, config)
    arrays = _simulate_arrays(config, resolved, replication)
    return make_trace(
        config, expand_mix(resolved), _arrays_to_rounds(arrays), TraceSource.SIMULATED
    )


def default_burn_in(horizon: int) -> int:
    """Half the horizon, the default transient cut for batch statistics."""
    return horizon // 2


@dataclass(frozen=True)
class BatchResult:
    """Summary statistics over replicated runs of one configuration."""

    config: GameConfig
    mix: tuple[StrategyMix, ...]
    replications: int
    burn_in: int
    mean_utilization: float
    utilization_std: float
    mean_convergence_time: float | None
    attendance_variance_per_agent: float | None

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_json_dict(),
            "strategies": [entry.to_json_dict() for entry in self.mix],
            "replications": self.replications,
            "burn_in": self.burn_in,
            "mean_utilization": self.mean_utilization,
            "utilization_std": self.utilization_std,
            "mean_convergence_time": self.mean_convergence_time,
            "attendance_variance_per_agent": self.attendance_variance_per_agent,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))


def _first_sustained(series: np.ndarray, threshold: float, window: int) -> int | None:
    """First index t with series[t : t + window] all >= threshold."""
    if window <= 0:
        raise ConfigError("window must be positive")
    hits = series >= threshold
    if hits.size < window:
        return None
    run = np.convolve(hits.astype(np.int64), np.ones(window, dtype=np.int64), "valid")
    full = np.flatnonzero(run == window)
    return int(full[0]) if full.size else None


def convergence_time(
    trace: Trace, threshold: float = 1.0, window: int = 10
) -> int | None:
    """First round from which utilization stays at or above the threshold
    for `window` consecutive rounds; None if that never happens."""
    series = np.asarray(trace.per_round_utilization, dtype=np.float64)
    return _first_sustained(series, threshold, window)


def utilization_stats(trace: Trace, burn_in: int | None = None) -> tuple[float, float]:
    """(mean, sample std) of post-burn-in per-round utilization."""
    if burn_in is None:
        burn_in = default_burn_in(trace.horizon_played)
    series = np.asarray(trace.per_round_utilization[burn_in:], dtype=np.float64)
    if series.size == 0:
        raise DataError("burn-in leaves no rounds to average")
    std = float(series.std(ddof=1)) if series.size > 1 else 0.0
    return float(series.mean()), std


def run_batch(
    config: GameConfig,
    mix: Sequence[StrategyMix],
    replications: int,
    burn_in: int | None = None,
    convergence_threshold: float = 1.0,
    convergence_window: int = 10,
) -> BatchResult:
    """Run independent replications and pool their post-burn-in statistics.

    Replication k draws from the `rep{k}` stream family, so results are
    identical for identical inputs and unchanged by reordering.
    """
    if replications < 1:
        raise ConfigError("replications must be at least 1")
    if burn_in is None:
        burn_in = default_burn_in(config.horizon)
    if not 0 <= burn_in < config.horizon:
        raise ConfigError("burn_in must be in [0, horizon)")
    resolved = resolve_mix(mix, config)
    minority = config.mode is Mode.MINORITY
    kept = []
    convergence_times = []
    attendance = []
    for k in range(replications):
        arrays = _simulate_arrays(config, resolved, k)
        kept.append(arrays.utilization[burn_in:])
        if minority:
            side = arrays.arrivals[burn_in:, 0].astype(np.float64)
            attendance.append(float(side.var(ddof=1)) / config.n_players)
        else:
            when = _first_sustained(
                arrays.utilization, convergence_threshold, convergence_window
            )
            if when is not None:
                convergence_times.append(when)
    pooled = np.concatenate(kept)
    mean_conv = (
        float(np.mean(convergence_times)) if convergence_times else None
    )
    return BatchResult(
        config=config,
        mix=tuple(resolved),
        replications=replications,
        burn_in=burn_in,
        mean_utilization=float(pooled.mean()),
        utilization_std=float(pooled.std(ddof=1)) if pooled.size > 1 else 0.0,
        mean_convergence_time=mean_conv,
        attendance_variance_per_agent=(
            float(np.mean(attendance)) if attendance else None
        ),
    )


__all__ = [
    "BatchResult",
    "Trace",
    "TraceSource",
    "convergence_time",
    "default_burn_in",
    "make_trace",
    "parse_mix",
    "run_batch",
    "run_game",
    "trace_from_json",
    "trace_from_json_dict",
    "utilization_stats",
]
