"""Live experiment sessions: lobby, synchronized rounds, logs, and replay.

A session walks LOBBY -> CHOOSING -> RESOLVED -> (next CHOOSING | FINISHED).
Humans occupy the first seats and submit choices through tokens; bot seats
run catalog strategies and submit the moment a round opens.  Every state
change appends one record to an append-only JSONL event log with gap-free
sequence numbers, and :func:`replay_log` folds a finished (or partial) log
back into the exact trace format the simulator emits, so live data flows
into the same analytics.

Determinism: a session draws from the same labelled streams as replication
0 of the simulator, one init word per seat and one choice word per seat per
round (human seats burn theirs), so an all-bot session reproduces
`run_game` round for round.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from hashlib import sha256
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .errors import (
    AuthError,
    ConfigError,
    InvalidProfileError,
    PhaseError,
    ReplayError,
)
from .game import (
    FeedbackLevel,
    GameConfig,
    GameStreams,
    Mode,
    RoundOutcome,
    resolve_minority_round,
    resolve_round,
)
from .simulate import Trace, TraceSource, make_trace
from .strategies import (
    StrategyMix,
    choose_with_word,
    expand_mix,
    init_agent,
    make_observation,
    parse_mix,
    resolve_mix,
    update,
)


class Phase(str, Enum):
    LOBBY = "LOBBY"
    CHOOSING = "CHOOSING"
    RESOLVED = "RESOLVED"
    FINISHED = "FINISHED"


class EventKind(str, Enum):
    CREATED = "CREATED"
    JOINED = "JOINED"
    CHOICE_SUBMITTED = "CHOICE_SUBMITTED"
    TIMEOUT_DEFAULTED = "TIMEOUT_DEFAULTED"
    ROUND_RESOLVED = "ROUND_RESOLVED"
    FINISHED = "FINISHED"


@dataclass(frozen=True)
class SessionEvent:
    """One appended log record; seq numbers are dense from zero."""

    seq: int
    timestamp: float
    kind: EventKind
    payload: dict

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "timestamp": self.timestamp,
                "kind": self.kind.value,
                "payload": self.payload,
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json_line(cls, line: str) -> "SessionEvent":
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayError(f"corrupt log line: {exc}") from None
        try:
            return cls(
                seq=int(data["seq"]),
                timestamp=float(data["timestamp"]),
                kind=EventKind(data["kind"]),
                payload=dict(data["payload"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ReplayError(f"corrupt log record: {exc}") from None


class SeatKind(str, Enum):
    HUMAN = "HUMAN"
    BOT = "BOT"


@dataclass
class Seat:
    index: int
    kind: SeatKind
    token: str
    strategy_id: str | None = None
    params: dict = field(default_factory=dict)
    joined: bool = False
    agent: AgentState | None = None


@dataclass(frozen=True)
class Roster:
    """Seats for a session: `humans` human slots, then bot strategy mix."""

    humans: int
    bots: tuple[StrategyMix, ...]

    def __post_init__(self) -> None:
        if self.humans < 0:
            raise ConfigError("human seat count must be non-negative")

    @property
    def bot_count(self) -> int:
        return sum(entry.count for entry in self.bots)

    def to_json_dict(self) -> dict:
        return {
            "humans": self.humans,
            "bots": [entry.to_json_dict() for entry in self.bots],
        }

    @classmethod
    def from_json_dict(cls, data: Mapping) -> "Roster":
        if not isinstance(data, Mapping):
            raise ConfigError("roster must be an object")
        unknown = set(data) - {"humans", "bots"}
        if unknown:
            raise ConfigError(f"unknown roster fields: {sorted(unknown)}")
        humans = data.get("humans", 0)
        if not isinstance(humans, int) or isinstance(humans, bool) or humans < 0:
            raise ConfigError("roster humans must be a non-negative integer")
        return cls(humans=humans, bots=tuple(parse_mix(data.get("bots", []))))


def _derive_token(session_id: str, purpose: str) -> str:
    return sha256(f"{session_id}/{purpose}".encode()).hexdigest()[:20]


class SessionEngine:
    """One live session; thread-safe; framework-free.

    The HTTP/WebSocket layer is a thin shell around this class, and tests
    drive it directly with an injected clock.
    """

    def __init__(
        self,
        config: GameConfig,
        roster: Roster,
        *,
        session_id: str | None = None,
        round_seconds: float = 15.0,
        pause_seconds: float = 0.0,
        log_dir: "str | Path | None" = None,
        clock: Callable[[], float] = time.time,
    ) -> None:
        if round_seconds <= 0:
            raise ConfigError("round_seconds must be positive")
        if pause_seconds < 0:
            raise ConfigError("pause_seconds must be non-negative")
        self.config = config
        resolved_bots = (
            tuple(resolve_mix(roster.bots, _bot_config(config, roster)))
            if roster.bots
            else ()
        )
        self.roster = Roster(roster.humans, resolved_bots)
        if roster.humans + self.roster.bot_count != config.n_players:
            raise ConfigError(
                f"roster seats {roster.humans + self.roster.bot_count} "
                f"!= n_players {config.n_players}"
            )
        self.session_id = session_id or uuid.uuid4().hex[:12]
        self.round_seconds = float(round_seconds)
        self.pause_seconds = float(pause_seconds)
        self._clock = clock
        self._lock = threading.RLock()
        self._subscribers: list[Callable[[SessionEvent, dict], None]] = []

        self.experimenter_token = _derive_token(self.session_id, "experimenter")
        self._seats: list[Seat] = []
        for i in range(self.roster.humans):
            self._seats.append(
                Seat(index=i, kind=SeatKind.HUMAN, token=_derive_token(self.session_id, f"seat{i}"))
            )
        index = self.roster.humans
        for entry in self.roster.bots:
            for _ in range(entry.count):
                self._seats.append(
                    Seat(
                        index=index,
                        kind=SeatKind.BOT,
                        token=_derive_token(self.session_id, f"seat{index}"),
                        strategy_id=entry.strategy_id.value,
                        params=dict(entry.params),
                        joined=True,
                    )
                )
                index += 1
        self._by_token = {seat.token: seat for seat in self._seats}

        self._streams = GameStreams.for_replication(config.seed, 0)
        # Every seat consumes one init word in index order; human seats
        # burn theirs so bot draws sit exactly where the simulator puts them.
        for seat in self._seats:
            if seat.kind is SeatKind.BOT:
                seat.agent = init_agent(
                    seat.strategy_id, seat.params, config.m_restaurants, self._streams.init
                )
            else:
                self._streams.init.word()

        self.phase = Phase.LOBBY
        self.round = 0
        self.deadline: float | None = None
        self._resolved_at: float | None = None
        self.events: list[SessionEvent] = []
        self.event_envelopes: list[dict] = []
        self._submitted: dict[int, int] = {}
        self._defaulted_now: set[int] = set()
        self.rounds: list[tuple[tuple[int, ...], RoundOutcome]] = []
        self._history: list[list[dict]] = [[] for _ in self._seats]
        self._scores = [0.0] * len(self._seats)

        self._log_path: Path | None = None
        self._log_file = None
        if log_dir is not None:
            directory = Path(log_dir)
            directory.mkdir(parents=True, exist_ok=True)
            self._log_path = directory / f"{self.session_id}.log"
            self._log_file = self._log_path.open("w", encoding="utf-8")

        self._append(
            EventKind.CREATED,
            {
                "session_id": self.session_id,
                "config": config.to_json_dict(),
                "roster": self.roster.to_json_dict(),
                "round_seconds": self.round_seconds,
                "pause_seconds": self.pause_seconds,
            },
        )
        with self._lock:
            if self._humans_missing() == 0:
                self._start()
                self._pump()

    # -- public API ---------------------------------------------------------

    @property
    def log_path(self) -> Path | None:
        return self._log_path

    @property
    def join_tokens(self) -> list[str]:
        """Tokens for the human seats, in seat order."""
        return [s.token for s in self._seats if s.kind is SeatKind.HUMAN]

    def subscribe(self, callback: Callable[[SessionEvent, dict], None]) -> None:
        """Register callback(event, envelope); called under the engine lock."""
        self._subscribers.append(callback)

    def join(self, token: str) -> dict:
        """Claim a human seat.  Idempotent: re-joining acks the same seat."""
        with self._lock:
            seat = self._seat_for(token)
            if seat.kind is not SeatKind.HUMAN:
                raise AuthError("bots do not join")
            if not seat.joined:
                if self.phase is not Phase.LOBBY:
                    raise PhaseError("session already started")
                seat.joined = True
                self._append(EventKind.JOINED, {"participant": seat.index})
                if self._humans_missing() == 0:
                    self._start()
            self._pump()
            return {"participant": seat.index, "session_id": self.session_id}

    def submit_choice(self, token: str, restaurant: int) -> dict:
        """Record one human choice for the current round (last write wins)."""
        with self._lock:
            seat = self._seat_for(token)
            if seat.kind is not SeatKind.HUMAN:
                raise AuthError("bot seats are driven by the engine")
            if self.phase is not Phase.CHOOSING:
                raise PhaseError(f"cannot submit during {self.phase.value}")
            if not isinstance(restaurant, int) or isinstance(restaurant, bool):
                raise InvalidProfileError("restaurant index must be an integer")
            if not 0 <= restaurant < self.config.m_restaurants:
                raise InvalidProfileError(
                    f"restaurant {restaurant} outside [0, {self.config.m_restaurants})"
                )
            resubmission = seat.index in self._submitted
            self._submitted[seat.index] = restaurant
            round_index = self.round
            self._append(
                EventKind.CHOICE_SUBMITTED,
                {
                    "round": round_index,
                    "participant": seat.index,
                    "choice": restaurant,
                    "actor": "human",
                    "resubmission": resubmission,
                },
            )
            self._pump()
            return {
                "participant": seat.index,
                "round": round_index,
                "choice": restaurant,
                "resubmission": resubmission,
            }

    def advance_on_deadline(self, now: float | None = None) -> None:
        """Close the current round because its deadline passed."""
        with self._lock:
            if self.phase is not Phase.CHOOSING:
                raise PhaseError(f"no round open during {self.phase.value}")
            moment = self._clock() if now is None else now
            assert self.deadline is not None
            if moment < self.deadline:
                raise PhaseError("deadline has not passed yet")
            self._default_missing()
            self._resolve_current()
            self._pump()

    def force_advance(self, token: str) -> None:
        """Experimenter control: close the round (or pause) immediately."""
        with self._lock:
            self._require_experimenter(token)
            if self.phase is Phase.CHOOSING:
                self._default_missing()
                self._resolve_current()
                self._pump()
            elif self.phase is Phase.RESOLVED:
                self._next_round()
                self._pump()
            else:
                raise PhaseError(f"nothing to advance during {self.phase.value}")

    def end(self, token: str) -> None:
        """Experimenter control: finish the session now."""
        with self._lock:
            self._require_experimenter(token)
            if self.phase is Phase.FINISHED:
                raise PhaseError("session already finished")
            self._finish("ended_by_experimenter")

    def tick(self, now: float | None = None) -> None:
        """Poll hook: apply any deadline or pause expiry that is due."""
        with self._lock:
            moment = self._clock() if now is None else now
            if (
                self.phase is Phase.CHOOSING
                and self.deadline is not None
                and moment >= self.deadline
            ):
                self._default_missing()
                self._resolve_current()
            self._pump(moment)

    def get_state(self, token: str) -> dict:
        """Current state, filtered for whoever the token identifies."""
        with self._lock:
            if token == self.experimenter_token:
                return self._experimenter_state()
            seat = self._seat_for(token)
            return self._participant_state(seat)

    def get_log_text(self, token: str) -> str:
        with self._lock:
            self._require_experimenter(token)
            return "".join(e.to_json_line() + "\n" for e in self.events)

    def events_since(self, seq: int) -> list[tuple[SessionEvent, dict]]:
        """Events with sequence number strictly greater than `seq`."""
        with self._lock:
            start = max(seq + 1, 0)
            return list(zip(self.events[start:], self.event_envelopes[start:]))

    def outcome_view(self, seat_index: int, round_index: int) -> dict:
        """One participant's feedback-filtered view of a resolved round."""
        with self._lock:
            if not 0 <= round_index < len(self.rounds):
                raise PhaseError(f"round {round_index} not resolved")
            choices, outcome = self.rounds[round_index]
            return self._filtered_outcome(seat_index, round_index, choices, outcome)

    def trace(self) -> Trace:
        """The rounds played so far, as a replayed-session trace."""
        with self._lock:
            return make_trace(
                self.config, _assignment_for(self.roster), list(self.rounds), TraceSource.REPLAYED_SESSION
            )

    def close(self) -> None:
        with self._lock:
            if self._log_file is not None and not self._log_file.closed:
                self._log_file.close()

    # -- internals ----------------------------------------------------------

    def _seat_for(self, token: str) -> Seat:
        seat = self._by_token.get(token)
        if seat is None:
            raise AuthError("unknown token")
        return seat

    def _require_experimenter(self, token: str) -> None:
        if token != self.experimenter_token:
            raise AuthError("experimenter token required")

    def _humans_missing(self) -> int:
        return sum(1 for s in self._seats if s.kind is SeatKind.HUMAN and not s.joined)

    def _append(self, kind: EventKind, payload: dict) -> SessionEvent:
        event = SessionEvent(
            seq=len(self.events),
            timestamp=self._clock(),
            kind=kind,
            payload=payload,
        )
        self.events.append(event)
        if self._log_file is not None and not self._log_file.closed:
            self._log_file.write(event.to_json_line() + "\n")
            self._log_file.flush()
        envelope = {
            "session_id": self.session_id,
            "round": self.round,
            "phase": self.phase.value,
            "seq": event.seq,
        }
        self.event_envelopes.append(envelope)
        for callback in list(self._subscribers):
            callback(event, envelope)
        return event

    def _start(self) -> None:
        self._begin_round()

    def _begin_round(self) -> None:
        self.phase = Phase.CHOOSING
        self._submitted = {}
        self._defaulted_now = set()
        self.deadline = self._clock() + self.round_seconds
        self._resolved_at = None
        # One choice word per seat per round, index order, exactly as the
        # simulator draws them; human words are burnt unused.
        words = self._streams.choices.words(self.config.n_players)
        for seat in self._seats:
            if seat.kind is not SeatKind.BOT:
                continue
            choice = choose_with_word(seat.agent, int(words[seat.index]))
            self._submitted[seat.index] = choice
            self._append(
                EventKind.CHOICE_SUBMITTED,
                {
                    "round": self.round,
                    "participant": seat.index,
                    "choice": choice,
                    "actor": "bot",
                    "resubmission": False,
                },
            )

    def _all_submitted(self) -> bool:
        return len(self._submitted) == len(self._seats)

    def _default_missing(self) -> None:
        # Deadline rule: silent seats repeat their previous choice; a seat
        # with no history yet gets a uniform draw from the defaults stream.
        for seat in self._seats:
            if seat.index in self._submitted:
                continue
            history = self._history[seat.index]
            if history:
                choice = history[-1]["choice"]
                rule = "repeat_last"
            else:
                choice = self._streams.defaults.randbelow(self.config.m_restaurants)
                rule = "uniform"
            self._submitted[seat.index] = choice
            self._defaulted_now.add(seat.index)
            self._append(
                EventKind.TIMEOUT_DEFAULTED,
                {
                    "round": self.round,
                    "participant": seat.index,
                    "choice": choice,
                    "rule": rule,
                },
            )

    def _resolve_current(self) -> None:
        profile = tuple(self._submitted[i] for i in range(len(self._seats)))
        if self.config.mode is Mode.MINORITY:
            outcome = resolve_minority_round(self.config, profile)
        else:
            outcome = resolve_round(self.config, profile, self._streams.tiebreak)
        self.rounds.append((profile, outcome))
        round_index = self.round
        for seat in self._seats:
            payoff = outcome.payoffs[seat.index]
            self._scores[seat.index] += payoff
            self._history[seat.index].append(
                {
                    "round": round_index,
                    "choice": profile[seat.index],
                    "payoff": payoff,
                    "won": payoff > 0,
                    "defaulted": seat.index in self._defaulted_now,
                }
            )
            if seat.kind is SeatKind.BOT:
                observation = make_observation(
                    self.config, round_index, seat.index, profile, outcome.payoffs, outcome.arrivals
                )
                update(seat.agent, observation)
        self.phase = Phase.RESOLVED
        self._resolved_at = self._clock()
        self.deadline = None
        self._append(
            EventKind.ROUND_RESOLVED,
            {
                "round": round_index,
                "choices": list(profile),
                "outcome": outcome.to_json_dict(),
            },
        )

    def _next_round(self) -> None:
        self.round += 1
        if self.round >= self.config.horizon:
            self._finish("horizon")
        else:
            self._begin_round()

    def _finish(self, reason: str) -> None:
        self.phase = Phase.FINISHED
        self.deadline = None
        self._append(
            EventKind.FINISHED,
            {"rounds_played": len(self.rounds), "reason": reason},
        )
        if self._log_file is not None and not self._log_file.closed:
            self._log_file.close()

    def _pump(self, now: float | None = None) -> None:
        # Drive every transition that needs no further input.  Iterative on
        # purpose: an all-bot session resolves its whole horizon here.
        while True:
            if self.phase is Phase.CHOOSING and self._all_submitted():
                self._resolve_current()
                continue
            if self.phase is Phase.RESOLVED:
                if self.pause_seconds <= 0:
                    self._next_round()
                    continue
                moment = self._clock() if now is None else now
                assert self._resolved_at is not None
                if moment >= self._resolved_at + self.pause_seconds:
                    self._next_round()
                    continue
            break

    def _participant_state(self, seat: Seat) -> dict:
        state = {
            "session_id": self.session_id,
            "round": self.round,
            "phase": self.phase.value,
            "seq": len(self.events) - 1,
            "server_time": self._clock(),
            "deadline": self.deadline,
            "you": {
                "participant": seat.index,
                "joined": seat.joined,
                "cumulative_score": self._scores[seat.index],
                "submitted_this_round": (
                    self.phase is Phase.CHOOSING and seat.index in self._submitted
                ),
            },
        }
        if self.phase is Phase.LOBBY:
            state["roster"] = {
                "joined_humans": self.roster.humans - self._humans_missing(),
                "expected_humans": self.roster.humans,
                "n_players": self.config.n_players,
            }
            return state
        state["game"] = {
            "mode": self.config.mode.value,
            "n_players": self.config.n_players,
            "m_restaurants": self.config.m_restaurants,
            "utilities": list(self.config.utilities),
            "horizon": self.config.horizon,
            "feedback_level": self.config.feedback_level.name,
        }
        state["history"] = [dict(h) for h in self._history[seat.index]]
        if self.rounds:
            last = len(self.rounds) - 1
            choices, outcome = self.rounds[last]
            state["last_outcome"] = self._filtered_outcome(seat.index, last, choices, outcome)
        else:
            state["last_outcome"] = None
        return state

    def _filtered_outcome(
        self,
        seat_index: int,
        round_index: int,
        choices: tuple[int, ...],
        outcome: RoundOutcome,
    ) -> dict:
        view = {
            "round": round_index,
            "your_choice": choices[seat_index],
            "your_payoff": outcome.payoffs[seat_index],
            "you_won": outcome.payoffs[seat_index] > 0,
        }
        level = self.config.feedback_level
        if level >= FeedbackLevel.OCCUPANCY:
            view["occupancy"] = list(outcome.arrivals)
            view["occupied_count"] = outcome.occupied_count
        if level >= FeedbackLevel.FULL:
            view["choices"] = list(choices)
        return view

    def _experimenter_state(self) -> dict:
        utilization_series = [
            outcome.occupied_count / self.config.m_restaurants
            for _, outcome in self.rounds
        ]
        return {
            "session_id": self.session_id,
            "round": self.round,
            "phase": self.phase.value,
            "seq": len(self.events) - 1,
            "server_time": self._clock(),
            "deadline": self.deadline,
            "config": self.config.to_json_dict(),
            "roster": [
                {
                    "participant": s.index,
                    "kind": s.kind.value,
                    "joined": s.joined,
                    "strategy_id": s.strategy_id,
                    "submitted_this_round": (
                        self.phase is Phase.CHOOSING and s.index in self._submitted
                    ),
                    "cumulative_score": self._scores[s.index],
                }
                for s in self._seats
            ],
            "submissions_received": (
                len(self._submitted) if self.phase is Phase.CHOOSING else None
            ),
            "rounds_played": len(self.rounds),
            "utilization_series": utilization_series,
            "last_round": (
                {
                    "choices": list(self.rounds[-1][0]),
                    "outcome": self.rounds[-1][1].to_json_dict(),
                }
                if self.rounds
                else None
            ),
        }


def _bot_config(config: GameConfig, roster: Roster) -> GameConfig:
    # resolve_mix checks counts against n_players; bots cover only their
    # share of the seats, so validate against that sub-count.
    bot_count = sum(e.count for e in roster.bots)
    if bot_count == 0:
        return config
    return GameConfig(
        mode=config.mode,
        n_players=bot_count,
        m_restaurants=config.m_restaurants,
        utilities=config.utilities,
        horizon=config.horizon,
        seed=config.seed,
        feedback_level=config.feedback_level,
    )


def _assignment_for(roster: Roster) -> list[dict]:
    assignment = [{"strategy_id": "human", "params": {}} for _ in range(roster.humans)]
    assignment.extend(expand_mix(roster.bots))
    return assignment


def replay_log(source: "str | Path | Iterable[str]") -> Trace:
    """Rebuild a trace from a session's JSONL event log.

    Validates dense sequence numbers and per-round consistency; partial
    sessions (no FINISHED record) replay the rounds they did resolve.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ReplayError(f"cannot read log: {exc}") from None
    else:
        lines = [line.rstrip("\n") for line in source]
    events = [SessionEvent.from_json_line(line) for line in lines if line.strip()]
    if not events:
        raise ReplayError("log is empty")
    for position, event in enumerate(events):
        if event.seq != position:
            raise ReplayError(
                f"sequence gap: expected seq {position}, found {event.seq}"
            )
    head = events[0]
    if head.kind is not EventKind.CREATED:
        raise ReplayError("log does not start with a CREATED record")
    try:
        config = GameConfig.from_json_dict(head.payload["config"])
        roster = Roster.from_json_dict(head.payload["roster"])
    except KeyError as exc:
        raise ReplayError(f"CREATED record missing {exc}") from None
    rounds: list[tuple[tuple[int, ...], RoundOutcome]] = []
    for event in events[1:]:
        if event.kind is not EventKind.ROUND_RESOLVED:
            continue
        payload = event.payload
        try:
            round_index = int(payload["round"])
            choices = tuple(int(c) for c in payload["choices"])
            outcome = RoundOutcome.from_json_dict(payload["outcome"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ReplayError(f"corrupt ROUND_RESOLVED record: {exc}") from None
        if round_index != len(rounds):
            raise ReplayError(
                f"round records out of order: expected {len(rounds)}, found {round_index}"
            )
        if len(choices) != config.n_players:
            raise ReplayError(f"round {round_index} has a malformed profile")
        if sum(outcome.arrivals) != config.n_players:
            raise ReplayError(f"round {round_index} arrivals do not cover all agents")
        counts = [0] * config.m_restaurants
        for choice in choices:
            if not 0 <= choice < config.m_restaurants:
                raise ReplayError(f"round {round_index} has an out-of-range choice")
            counts[choice] += 1
        if tuple(counts) != outcome.arrivals:
            raise ReplayError(f"round {round_index} arrivals disagree with choices")
        rounds.append((choices, outcome))
    return make_trace(config, _assignment_for(roster), rounds, TraceSource.REPLAYED_SESSION)


__all__ = [
    "EventKind",
    "Phase",
    "Roster",
    "SeatKind",
    "SessionEngine",
    "SessionEvent",
    "replay_log",
]
