"""Live session engine: phases, events, defaults, filtering, replay."""

import json
import threading

import pytest

from kprlab.errors import AuthError, ConfigError, PhaseError, ReplayError
from kprlab.game import FeedbackLevel, GameConfig, Mode, equal_utilities, resolve_round
from kprlab.rng import RngStream
from kprlab.session import (
    EventKind,
    Phase,
    Roster,
    SessionEngine,
    SessionEvent,
    replay_log,
)
from kprlab.simulate import TraceSource, run_game
from kprlab.strategies import StrategyId, StrategyMix


class FakeClock:
    def __init__(self, start=1000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


def kpr_config(n, m, horizon, seed=5, feedback=FeedbackLevel.OWN_ONLY):
    return GameConfig(Mode.KPR, n, m, equal_utilities(m), horizon, seed, feedback)


def bot_mix(*entries):
    return tuple(StrategyMix(sid, count) for sid, count in entries)


def make_engine(config, humans=0, bots=(), **kwargs):
    return SessionEngine(config, Roster(humans, bots), **kwargs)


class TestLobby:
    def test_waits_for_humans(self):
        engine = make_engine(
            kpr_config(3, 3, 4),
            humans=2,
            bots=bot_mix((StrategyId.STABLE, 1)),
        )
        assert engine.phase is Phase.LOBBY
        tokens = engine.join_tokens
        engine.join(tokens[0])
        assert engine.phase is Phase.LOBBY
        engine.join(tokens[1])
        assert engine.phase is Phase.CHOOSING
        assert engine.round == 0

    def test_join_is_idempotent(self):
        engine = make_engine(kpr_config(2, 2, 3), humans=2)
        token = engine.join_tokens[0]
        first = engine.join(token)
        again = engine.join(token)
        assert first == again
        joined = [e for e in engine.events if e.kind is EventKind.JOINED]
        assert len(joined) == 1

    def test_unknown_token_rejected(self):
        engine = make_engine(kpr_config(2, 2, 3), humans=2)
        with pytest.raises(AuthError):
            engine.join("nope")
        with pytest.raises(AuthError):
            engine.submit_choice("nope", 0)

    def test_roster_must_fill_seats(self):
        with pytest.raises(ConfigError):
            make_engine(kpr_config(4, 2, 3), humans=1, bots=bot_mix((StrategyId.STABLE, 1)))

    def test_tokens_are_deterministic(self):
        a = make_engine(kpr_config(2, 2, 3), humans=2, session_id="fixed")
        b = make_engine(kpr_config(2, 2, 3), humans=2, session_id="fixed")
        assert a.join_tokens == b.join_tokens
        assert a.experimenter_token == b.experimenter_token
        assert len(set(a.join_tokens)) == 2

    def test_humans_seat_before_bots(self):
        engine = make_engine(
            kpr_config(4, 3, 2), humans=2, bots=bot_mix((StrategyId.STABLE, 2))
        )
        assignment = [a["strategy_id"] for a in engine.trace().strategy_assignment]
        assert assignment == ["human", "human", "stable", "stable"]


class TestPureBotSessions:
    def test_rounds_match_the_simulator(self):
        config = kpr_config(6, 3, 15, seed=21)
        mix = bot_mix(
            (StrategyId.STABLE, 2),
            (StrategyId.STICK_IF_WON, 2),
            (StrategyId.UNIFORM_RANDOM, 2),
        )
        engine = make_engine(config, bots=mix)
        assert engine.phase is Phase.FINISHED
        simulated = run_game(config, list(mix))
        assert tuple(engine.rounds) == simulated.rounds

    def test_trace_source_is_replayed_session(self):
        config = kpr_config(3, 3, 5)
        engine = make_engine(config, bots=bot_mix((StrategyId.UNIFORM_RANDOM, 3)))
        trace = engine.trace()
        assert trace.source is TraceSource.REPLAYED_SESSION
        assert trace.rounds == run_game(config, [StrategyMix(StrategyId.UNIFORM_RANDOM, 3)]).rounds

    def test_minority_sessions_resolve(self):
        config = GameConfig(Mode.MINORITY, 5, 2, equal_utilities(2), 8, 3)
        engine = make_engine(config, bots=bot_mix((StrategyId.UNIFORM_RANDOM, 5)))
        assert engine.phase is Phase.FINISHED
        assert len(engine.rounds) == 8


class TestHumanFlow:
    def setup_engine(self, **kwargs):
        clock = FakeClock()
        config = kwargs.pop("config", None) or kpr_config(3, 3, 3, seed=9)
        engine = make_engine(
            config,
            humans=1,
            bots=bot_mix((StrategyId.STABLE, 2)),
            clock=clock,
            round_seconds=10.0,
            **kwargs,
        )
        token = engine.join_tokens[0]
        engine.join(token)
        return engine, token, clock

    def test_submit_resolves_when_everyone_is_in(self):
        engine, token, _ = self.setup_engine()
        assert engine.phase is Phase.CHOOSING
        result = engine.submit_choice(token, 1)
        assert result == {
            "participant": 0,
            "round": 0,
            "choice": 1,
            "resubmission": False,
        }
        # bots had already submitted, so the round resolves and the next opens
        assert engine.round == 1
        assert engine.phase is Phase.CHOOSING
        assert len(engine.rounds) == 1
        assert engine.rounds[0][0][0] == 1

    def test_last_write_wins(self):
        # two humans: the round stays open after the first submission, so
        # that seat can overwrite its choice before the other seat closes it
        clock = FakeClock()
        engine = make_engine(
            kpr_config(2, 4, 2, seed=9),
            humans=2,
            clock=clock,
            round_seconds=10.0,
        )
        one, two = engine.join_tokens
        engine.join(one)
        engine.join(two)
        engine.submit_choice(one, 0)
        resub = engine.submit_choice(one, 3)
        assert resub["resubmission"] is True
        engine.submit_choice(two, 1)
        assert engine.rounds[0][0] == (3, 1)

    def test_timeout_defaults_fresh_seat_uses_uniform_draw(self):
        engine, token, clock = self.setup_engine()
        clock.advance(11.0)
        engine.tick()
        defaulted = [e for e in engine.events if e.kind is EventKind.TIMEOUT_DEFAULTED]
        assert len(defaulted) == 1
        payload = defaulted[0].payload
        assert payload["participant"] == 0
        assert payload["rule"] == "uniform"
        expected = RngStream(engine.config.seed, "rep0/defaults").randbelow(3)
        assert payload["choice"] == expected

    def test_timeout_defaults_repeat_last_choice(self):
        engine, token, clock = self.setup_engine()
        engine.submit_choice(token, 2)
        assert engine.round == 1
        clock.advance(11.0)
        engine.tick()
        defaulted = [e for e in engine.events if e.kind is EventKind.TIMEOUT_DEFAULTED]
        assert len(defaulted) == 1
        assert defaulted[0].payload["rule"] == "repeat_last"
        assert defaulted[0].payload["choice"] == 2
        assert engine.rounds[1][0][0] == 2

    def test_deadline_not_passed_is_an_error(self):
        engine, _, _ = self.setup_engine()
        with pytest.raises(PhaseError):
            engine.advance_on_deadline()

    def test_horizon_finishes_session(self):
        engine, token, _ = self.setup_engine()
        for _ in range(3):
            engine.submit_choice(token, 0)
        assert engine.phase is Phase.FINISHED
        assert engine.events[-1].kind is EventKind.FINISHED
        assert engine.events[-1].payload == {"rounds_played": 3, "reason": "horizon"}
        with pytest.raises(PhaseError):
            engine.submit_choice(token, 0)

    def test_force_advance_defaults_and_resolves(self):
        engine, token, _ = self.setup_engine()
        engine.force_advance(engine.experimenter_token)
        assert len(engine.rounds) == 1
        kinds = [e.kind for e in engine.events]
        assert EventKind.TIMEOUT_DEFAULTED in kinds

    def test_force_advance_requires_experimenter(self):
        engine, token, _ = self.setup_engine()
        with pytest.raises(AuthError):
            engine.force_advance(token)

    def test_end_finishes_early(self):
        engine, token, _ = self.setup_engine()
        engine.submit_choice(token, 0)
        engine.end(engine.experimenter_token)
        assert engine.phase is Phase.FINISHED
        assert engine.events[-1].payload["reason"] == "ended_by_experimenter"
        assert engine.events[-1].payload["rounds_played"] == 1

    def test_pause_holds_resolved_phase(self):
        clock = FakeClock()
        engine = make_engine(
            kpr_config(1, 3, 2, seed=9),
            humans=1,
            clock=clock,
            round_seconds=10.0,
            pause_seconds=5.0,
        )
        token = engine.join_tokens[0]
        engine.join(token)
        engine.submit_choice(token, 0)
        assert engine.phase is Phase.RESOLVED
        engine.tick()
        assert engine.phase is Phase.RESOLVED
        clock.advance(5.0)
        engine.tick()
        assert engine.phase is Phase.CHOOSING
        assert engine.round == 1


class TestNoMutationOnRejection:
    def test_wrong_phase_submission_appends_nothing(self):
        clock = FakeClock()
        engine = make_engine(
            kpr_config(1, 3, 3, seed=9),
            humans=1,
            clock=clock,
            pause_seconds=60.0,
        )
        token = engine.join_tokens[0]
        engine.join(token)
        engine.submit_choice(token, 0)
        assert engine.phase is Phase.RESOLVED
        before = len(engine.events)
        with pytest.raises(PhaseError):
            engine.submit_choice(token, 1)
        assert len(engine.events) == before
        assert engine.rounds[0][0] == (0,)

    def test_bad_restaurant_rejected_without_effect(self):
        engine = make_engine(kpr_config(2, 3, 2), humans=2)
        for token in engine.join_tokens:
            engine.join(token)
        before = len(engine.events)
        with pytest.raises(ConfigError):
            engine.submit_choice(engine.join_tokens[0], 3)
        with pytest.raises(ConfigError):
            engine.submit_choice(engine.join_tokens[0], -1)
        with pytest.raises(ConfigError):
            engine.submit_choice(engine.join_tokens[0], True)
        assert len(engine.events) == before

    def test_late_join_rejected(self):
        engine = make_engine(kpr_config(2, 2, 2), humans=2)
        one, two = engine.join_tokens
        engine.join(one)
        engine.join(two)
        # both seats are claimed; a fresh join of an unclaimed seat cannot
        # happen mid-game, so simulate by rebuilding the seat state
        engine._by_token[one].joined = False
        with pytest.raises(PhaseError):
            engine.join(one)


class TestResolutionOracle:
    def test_round_resolution_matches_scalar_resolver(self):
        # the engine's tiebreaks must come from the same positions the
        # simulator would use: replay every profile against a fresh stream
        config = kpr_config(4, 3, 6, seed=33)
        engine = make_engine(config, bots=bot_mix((StrategyId.UNIFORM_RANDOM, 4)))
        stream = RngStream(config.seed, "rep0/tiebreak")
        for choices, outcome in engine.rounds:
            assert resolve_round(config, choices, stream) == outcome


class TestEvents:
    def finished_engine(self):
        config = kpr_config(3, 3, 2, seed=14)
        return make_engine(config, bots=bot_mix((StrategyId.UNIFORM_RANDOM, 3)))

    def test_created_is_first_and_complete(self):
        engine = self.finished_engine()
        head = engine.events[0]
        assert head.kind is EventKind.CREATED
        assert head.seq == 0
        assert head.payload["session_id"] == engine.session_id
        assert head.payload["config"] == engine.config.to_json_dict()
        assert head.payload["roster"]["humans"] == 0

    def test_sequence_is_dense(self):
        engine = self.finished_engine()
        assert [e.seq for e in engine.events] == list(range(len(engine.events)))

    def test_bot_choices_are_logged_as_bot(self):
        engine = self.finished_engine()
        submissions = [e for e in engine.events if e.kind is EventKind.CHOICE_SUBMITTED]
        assert len(submissions) == 6
        assert all(e.payload["actor"] == "bot" for e in submissions)

    def test_round_resolved_payload_is_consistent(self):
        engine = self.finished_engine()
        resolved = [e for e in engine.events if e.kind is EventKind.ROUND_RESOLVED]
        assert len(resolved) == 2
        for event in resolved:
            choices = event.payload["choices"]
            outcome = event.payload["outcome"]
            assert len(choices) == 3
            assert sum(outcome["arrivals"]) == 3

    def test_envelopes_carry_session_round_phase_seq(self):
        engine = self.finished_engine()
        assert len(engine.event_envelopes) == len(engine.events)
        for event, envelope in zip(engine.events, engine.event_envelopes):
            assert envelope["seq"] == event.seq
            assert envelope["session_id"] == engine.session_id
            assert envelope["phase"] in {p.value for p in Phase}
            assert 0 <= envelope["round"] <= engine.config.horizon

    def test_events_since_filters_strictly(self):
        engine = self.finished_engine()
        tail = engine.events_since(3)
        assert [e.seq for e, _ in tail] == list(range(4, len(engine.events)))
        assert engine.events_since(len(engine.events)) == []

    def test_subscribers_see_every_event(self):
        seen = []
        config = kpr_config(2, 2, 2, seed=4)
        engine = make_engine(config, humans=2)
        engine.subscribe(lambda event, envelope: seen.append(event.seq))
        for token in engine.join_tokens:
            engine.join(token)
        for _ in range(2):
            for token in engine.join_tokens:
                if engine.phase is Phase.CHOOSING:
                    engine.submit_choice(token, 0)
        already = len([e for e in engine.events if e.seq not in seen])
        assert seen == [e.seq for e in engine.events[already:]]

    def test_event_json_round_trip(self):
        engine = self.finished_engine()
        for event in engine.events:
            line = event.to_json_line()
            back = SessionEvent.from_json_line(line)
            assert back == event
            record = json.loads(line)
            assert set(record) == {"seq", "timestamp", "kind", "payload"}


class TestStateFiltering:
    def engine_at_level(self, level):
        clock = FakeClock()
        config = kpr_config(2, 3, 3, seed=11, feedback=level)
        engine = make_engine(config, humans=1, bots=bot_mix((StrategyId.STABLE, 1)), clock=clock)
        token = engine.join_tokens[0]
        engine.join(token)
        engine.submit_choice(token, 1)
        return engine, token

    def test_own_only_hides_everything_else(self):
        engine, token = self.engine_at_level(FeedbackLevel.OWN_ONLY)
        state = engine.get_state(token)
        outcome = state["last_outcome"]
        assert outcome["your_choice"] == 1
        assert "occupancy" not in outcome
        assert "choices" not in outcome
        assert set(outcome) == {"round", "your_choice", "your_payoff", "you_won"}

    def test_occupancy_level_adds_counts_only(self):
        engine, token = self.engine_at_level(FeedbackLevel.OCCUPANCY)
        outcome = engine.get_state(token)["last_outcome"]
        assert sum(outcome["occupancy"]) == 2
        assert "choices" not in outcome

    def test_full_level_shows_the_profile(self):
        engine, token = self.engine_at_level(FeedbackLevel.FULL)
        outcome = engine.get_state(token)["last_outcome"]
        assert outcome["choices"][0] == 1
        assert len(outcome["choices"]) == 2

    def test_participant_state_never_includes_other_histories(self):
        engine, token = self.engine_at_level(FeedbackLevel.OWN_ONLY)
        state = engine.get_state(token)
        assert state["you"]["participant"] == 0
        assert "roster" not in state
        assert all(entry["round"] >= 0 for entry in state["history"])

    def test_experimenter_sees_everything(self):
        engine, _ = self.engine_at_level(FeedbackLevel.OWN_ONLY)
        state = engine.get_state(engine.experimenter_token)
        assert state["rounds_played"] == 1
        assert state["last_round"]["choices"][0] == 1
        assert len(state["roster"]) == 2
        assert state["utilization_series"]

    def test_lobby_state_shows_roster_fill_only(self):
        engine = make_engine(kpr_config(2, 2, 2), humans=2)
        token = engine.join_tokens[0]
        state = engine.get_state(token)
        assert state["phase"] == "LOBBY"
        assert state["roster"] == {
            "joined_humans": 0,
            "expected_humans": 2,
            "n_players": 2,
        }
        assert "game" not in state

    def test_log_text_requires_experimenter(self):
        engine, token = self.engine_at_level(FeedbackLevel.OWN_ONLY)
        with pytest.raises(AuthError):
            engine.get_log_text(token)
        text = engine.get_log_text(engine.experimenter_token)
        first = json.loads(text.splitlines()[0])
        assert first["seq"] == 0 and first["kind"] == "CREATED"

    def test_outcome_view_bounds_checked(self):
        engine, _ = self.engine_at_level(FeedbackLevel.OWN_ONLY)
        with pytest.raises(PhaseError):
            engine.outcome_view(0, 5)


class TestConcurrency:
    def test_parallel_submissions_resolve_once(self):
        engine = make_engine(kpr_config(8, 4, 1, seed=2), humans=8)
        for token in engine.join_tokens:
            engine.join(token)
        barrier = threading.Barrier(8)
        errors = []

        def submit(token, choice):
            barrier.wait()
            try:
                engine.submit_choice(token, choice)
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [
            threading.Thread(target=submit, args=(token, i % 4))
            for i, token in enumerate(engine.join_tokens)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        resolved = [e for e in engine.events if e.kind is EventKind.ROUND_RESOLVED]
        assert len(resolved) == 1
        assert engine.phase is Phase.FINISHED


class TestLogAndReplay:
    def test_log_file_replays_to_the_same_trace(self, tmp_path):
        config = kpr_config(5, 3, 10, seed=41)
        engine = make_engine(
            config,
            bots=bot_mix((StrategyId.STICK_IF_WON, 3), (StrategyId.UNIFORM_RANDOM, 2)),
            log_dir=tmp_path,
        )
        assert engine.log_path is not None and engine.log_path.exists()
        replayed = replay_log(engine.log_path)
        assert replayed == engine.trace()
        assert replayed.source is TraceSource.REPLAYED_SESSION

    def test_replayed_bot_session_equals_simulator_rounds(self, tmp_path):
        config = kpr_config(4, 4, 12, seed=77)
        mix = bot_mix((StrategyId.REINFORCEMENT, 4))
        engine = make_engine(config, bots=mix, log_dir=tmp_path)
        replayed = replay_log(engine.log_path)
        simulated = run_game(config, list(mix))
        assert replayed.rounds == simulated.rounds
        assert replayed.per_round_utilization == simulated.per_round_utilization

    def test_partial_log_replays_resolved_rounds(self, tmp_path):
        clock = FakeClock()
        engine = make_engine(
            kpr_config(1, 3, 5, seed=9),
            humans=1,
            clock=clock,
            log_dir=tmp_path,
        )
        token = engine.join_tokens[0]
        engine.join(token)
        engine.submit_choice(token, 0)
        engine.submit_choice(token, 2)
        engine.close()
        trace = replay_log(engine.log_path)
        assert trace.horizon_played == 2
        assert trace.rounds[1][0] == (2,)

    def test_sequence_gap_is_named(self, tmp_path):
        engine = make_engine(
            kpr_config(2, 2, 2, seed=3),
            bots=bot_mix((StrategyId.UNIFORM_RANDOM, 2)),
            log_dir=tmp_path,
        )
        lines = engine.log_path.read_text().splitlines()
        del lines[3]
        with pytest.raises(ReplayError) as err:
            replay_log(lines)
        assert "expected seq 3, found 4" in str(err.value)

    def test_log_must_start_with_created(self):
        lines = [
            '{"seq": 0, "timestamp": 0, "kind": "JOINED", "payload": {"participant": 0}}'
        ]
        with pytest.raises(ReplayError):
            replay_log(lines)

    def test_empty_log_rejected(self):
        with pytest.raises(ReplayError):
            replay_log([])

    def test_tampered_choices_detected(self, tmp_path):
        engine = make_engine(
            kpr_config(3, 3, 1, seed=6),
            bots=bot_mix((StrategyId.UNIFORM_RANDOM, 3)),
            log_dir=tmp_path,
        )
        lines = engine.log_path.read_text().splitlines()
        doctored = []
        for line in lines:
            record = json.loads(line)
            if record["kind"] == "ROUND_RESOLVED":
                record["payload"]["choices"][0] = (
                    record["payload"]["choices"][0] + 1
                ) % 3
            doctored.append(json.dumps(record))
        with pytest.raises(ReplayError):
            replay_log(doctored)

    def test_hand_written_log_replays(self):
        config = kpr_config(2, 2, 1, seed=0)
        lines = [
            json.dumps(
                {
                    "seq": 0,
                    "timestamp": 0.0,
                    "kind": "CREATED",
                    "payload": {
                        "session_id": "byhand",
                        "config": config.to_json_dict(),
                        "roster": {"humans": 2, "bots": []},
                        "round_seconds": 15.0,
                        "pause_seconds": 0.0,
                    },
                }
            ),
            json.dumps(
                {
                    "seq": 1,
                    "timestamp": 1.0,
                    "kind": "ROUND_RESOLVED",
                    "payload": {
                        "round": 0,
                        "choices": [0, 1],
                        "outcome": {
                            "arrivals": [1, 1],
                            "winner": [0, 1],
                            "payoffs": [1.0, 1.0],
                            "occupied_count": 2,
                        },
                    },
                }
            ),
        ]
        trace = replay_log(lines)
        assert trace.rounds[0][0] == (0, 1)
        assert trace.per_round_utilization == (1.0,)
        assert [a["strategy_id"] for a in trace.strategy_assignment] == ["human", "human"]
