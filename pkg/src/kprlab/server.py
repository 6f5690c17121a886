"""HTTP and WebSocket shell around the session engine.

The wire protocol is JSON both ways.  Every server-to-client message
carries the envelope (session_id, round, phase, seq) captured when its
event happened, so clients can discard stale or out-of-order deliveries.
WebSocket push and the `/events` polling endpoint format messages through
the same filter, so a client that can't hold a socket open sees exactly
the same stream.  Feedback filtering happens here and in the engine, never
in the client: a participant's traffic simply never contains what their
feedback level hides.
"""

from __future__ import annotations

import asyncio
import time
from contextlib import asynccontextmanager
from typing import Any

import uvicorn
from fastapi import FastAPI, HTTPException, Query, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import PlainTextResponse

from .errors import (
    AuthError,
    CapacityGuardError,
    ConfigError,
    DataError,
    KprError,
    PhaseError,
    SessionError,
)
from .game import GameConfig
from .session import EventKind, Phase, Roster, SeatKind, SessionEngine, SessionEvent


class SessionManager:
    """Owns every live engine and the directory their logs land in."""

    def __init__(self, log_dir: str | None = None) -> None:
        self.log_dir = log_dir
        self.sessions: dict[str, SessionEngine] = {}

    def create(
        self,
        config: GameConfig,
        roster: Roster,
        *,
        round_seconds: float = 15.0,
        pause_seconds: float = 0.0,
        session_id: str | None = None,
    ) -> SessionEngine:
        engine = SessionEngine(
            config,
            roster,
            session_id=session_id,
            round_seconds=round_seconds,
            pause_seconds=pause_seconds,
            log_dir=self.log_dir,
        )
        if engine.session_id in self.sessions:
            raise ConfigError(f"session {engine.session_id} already exists")
        self.sessions[engine.session_id] = engine
        return engine

    def get(self, session_id: str) -> SessionEngine:
        engine = self.sessions.get(session_id)
        if engine is None:
            raise KeyError(session_id)
        return engine


def _http_error(exc: KprError) -> HTTPException:
    if isinstance(exc, AuthError):
        return HTTPException(status_code=403, detail=str(exc))
    if isinstance(exc, PhaseError):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, (ConfigError, DataError, CapacityGuardError)):
        return HTTPException(status_code=422, detail=str(exc))
    return HTTPException(status_code=500, detail=str(exc))


def _seat_index_for(engine: SessionEngine, token: str) -> int | None:
    """None for the experimenter, the seat index for a participant."""
    if token == engine.experimenter_token:
        return None
    seat = engine._by_token.get(token)
    if seat is None:
        raise AuthError("unknown token")
    return seat.index


def message_for(
    engine: SessionEngine,
    seat_index: int | None,
    event: SessionEvent,
    envelope: dict,
) -> dict | None:
    """Format one event for one connection; None means "not for them".

    The experimenter (seat_index None) sees full payloads.  Participants
    see their own submissions and a feedback-filtered outcome; events about
    other seats are dropped entirely rather than redacted.
    """
    base = {"kind": event.kind.value.lower(), **envelope}
    payload = event.payload
    if seat_index is None:
        base.update(payload)
        return base
    if event.kind is EventKind.CREATED:
        return base
    if event.kind is EventKind.JOINED:
        base["participant"] = payload["participant"]
        return base
    if event.kind in (EventKind.CHOICE_SUBMITTED, EventKind.TIMEOUT_DEFAULTED):
        if payload["participant"] != seat_index:
            return None
        base.update(payload)
        return base
    if event.kind is EventKind.ROUND_RESOLVED:
        base["outcome"] = engine.outcome_view(seat_index, payload["round"])
        return base
    if event.kind is EventKind.FINISHED:
        base.update(payload)
        return base
    return None


def _state_message(engine: SessionEngine, token: str) -> dict:
    state = engine.get_state(token)
    return {"kind": "state", **state}


async def _supervise(engine: SessionEngine) -> None:
    # Poll-driven liveness: apply deadline and pause expiries until done.
    try:
        while engine.phase is not Phase.FINISHED:
            engine.tick()
            await asyncio.sleep(0.05)
    except asyncio.CancelledError:
        pass


def create_app(manager: SessionManager | None = None) -> FastAPI:
    manager = manager or SessionManager()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        for task in app.state.supervisors.values():
            task.cancel()

    app = FastAPI(title="kprlab session server", lifespan=lifespan)
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.manager = manager
    app.state.supervisors = {}
    app.state.listeners = {}

    def _engine(session_id: str) -> SessionEngine:
        try:
            return manager.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session") from None

    def _attach_fanout(engine: SessionEngine) -> None:
        # One engine listener wakes every connected websocket's drain loop.
        queues: set[tuple[asyncio.Queue, asyncio.AbstractEventLoop]] = set()
        app.state.listeners[engine.session_id] = queues

        def fanout(event: SessionEvent, envelope: dict) -> None:
            for queue, loop in list(queues):
                loop.call_soon_threadsafe(queue.put_nowait, event.seq)

        engine.subscribe(fanout)

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok", "time": time.time()}

    @app.post("/sessions", status_code=201)
    async def create_session(body: dict) -> dict:
        try:
            config = GameConfig.from_json_dict(body.get("config", {}))
            roster = Roster.from_json_dict(body.get("roster", {}))
            engine = manager.create(
                config,
                roster,
                round_seconds=float(body.get("round_seconds", 15.0)),
                pause_seconds=float(body.get("pause_seconds", 0.0)),
                session_id=body.get("session_id"),
            )
        except KprError as exc:
            raise _http_error(exc) from None
        _attach_fanout(engine)
        if engine.phase is not Phase.FINISHED:
            app.state.supervisors[engine.session_id] = asyncio.create_task(
                _supervise(engine)
            )
        return {
            "session_id": engine.session_id,
            "join_tokens": engine.join_tokens,
            "experimenter_token": engine.experimenter_token,
            "config": engine.config.to_json_dict(),
            "phase": engine.phase.value,
            "log_path": str(engine.log_path) if engine.log_path else None,
        }

    @app.get("/sessions/{session_id}/state")
    async def get_state(session_id: str, token: str = Query(...)) -> dict:
        engine = _engine(session_id)
        try:
            return _state_message(engine, token)
        except KprError as exc:
            raise _http_error(exc) from None

    @app.post("/sessions/{session_id}/join")
    async def join(session_id: str, body: dict) -> dict:
        engine = _engine(session_id)
        try:
            ack = engine.join(str(body.get("token", "")))
        except KprError as exc:
            raise _http_error(exc) from None
        return {"kind": "join_ack", **ack}

    @app.post("/sessions/{session_id}/choose")
    async def choose(session_id: str, body: dict) -> dict:
        engine = _engine(session_id)
        restaurant = body.get("restaurant")
        try:
            ack = engine.submit_choice(str(body.get("token", "")), restaurant)
        except KprError as exc:
            raise _http_error(exc) from None
        return {"kind": "choice_ack", **ack}

    @app.post("/sessions/{session_id}/advance")
    async def advance(session_id: str, body: dict) -> dict:
        engine = _engine(session_id)
        try:
            engine.force_advance(str(body.get("token", "")))
        except KprError as exc:
            raise _http_error(exc) from None
        return {"kind": "advance_ack", "phase": engine.phase.value, "round": engine.round}

    @app.post("/sessions/{session_id}/end")
    async def end(session_id: str, body: dict) -> dict:
        engine = _engine(session_id)
        try:
            engine.end(str(body.get("token", "")))
        except KprError as exc:
            raise _http_error(exc) from None
        return {"kind": "end_ack", "phase": engine.phase.value}

    @app.get("/sessions/{session_id}/events")
    async def events(
        session_id: str, token: str = Query(...), since: int = Query(-1)
    ) -> dict:
        engine = _engine(session_id)
        try:
            seat_index = _seat_index_for(engine, token)
        except KprError as exc:
            raise _http_error(exc) from None
        messages = []
        for event, envelope in engine.events_since(since):
            message = message_for(engine, seat_index, event, envelope)
            if message is not None:
                messages.append(message)
        return {
            "kind": "events",
            "session_id": engine.session_id,
            "latest_seq": len(engine.events) - 1,
            "messages": messages,
        }

    @app.get("/sessions/{session_id}/log")
    async def log(session_id: str, token: str = Query(...)) -> PlainTextResponse:
        engine = _engine(session_id)
        try:
            text = engine.get_log_text(token)
        except KprError as exc:
            raise _http_error(exc) from None
        return PlainTextResponse(text, media_type="application/x-ndjson")

    @app.websocket("/sessions/{session_id}/ws")
    async def websocket_endpoint(websocket: WebSocket, session_id: str) -> None:
        token = websocket.query_params.get("token", "")
        try:
            engine = manager.get(session_id)
        except KeyError:
            await websocket.close(code=4404)
            return
        try:
            seat_index = _seat_index_for(engine, token)
        except AuthError:
            await websocket.close(code=4403)
            return
        await websocket.accept()
        queue: asyncio.Queue = asyncio.Queue()
        loop = asyncio.get_running_loop()
        entry = (queue, loop)
        queues = app.state.listeners.get(session_id)
        if queues is not None:
            queues.add(entry)
        try:
            await websocket.send_json(_state_message(engine, token))
            last_sent = len(engine.events) - 1

            async def drain() -> None:
                nonlocal last_sent
                while True:
                    await queue.get()
                    for event, envelope in engine.events_since(last_sent):
                        message = message_for(engine, seat_index, event, envelope)
                        last_sent = event.seq
                        if message is not None:
                            await websocket.send_json(message)

            drain_task = asyncio.create_task(drain())
            try:
                while True:
                    request = await websocket.receive_json()
                    await _handle_ws_request(websocket, engine, token, request)
            finally:
                drain_task.cancel()
        except WebSocketDisconnect:
            pass
        finally:
            if queues is not None:
                queues.discard(entry)

    async def _handle_ws_request(
        websocket: WebSocket, engine: SessionEngine, token: str, request: Any
    ) -> None:
        if not isinstance(request, dict):
            await websocket.send_json({"kind": "error", "error": "bad_request"})
            return
        kind = request.get("kind")
        try:
            if kind == "choose":
                ack = engine.submit_choice(token, request.get("restaurant"))
                await websocket.send_json({"kind": "choice_ack", **ack})
            elif kind == "join":
                ack = engine.join(token)
                await websocket.send_json({"kind": "join_ack", **ack})
            elif kind == "state":
                await websocket.send_json(_state_message(engine, token))
            elif kind == "force_advance":
                engine.force_advance(token)
                await websocket.send_json(
                    {"kind": "advance_ack", "phase": engine.phase.value, "round": engine.round}
                )
            elif kind == "end":
                engine.end(token)
                await websocket.send_json({"kind": "end_ack", "phase": engine.phase.value})
            else:
                await websocket.send_json({"kind": "error", "error": "unknown_kind"})
        except SessionError as exc:
            await websocket.send_json(
                {"kind": "error", "error": type(exc).__name__, "detail": str(exc)}
            )
        except KprError as exc:
            await websocket.send_json(
                {"kind": "error", "error": type(exc).__name__, "detail": str(exc)}
            )

    return app


def serve(
    manager: SessionManager,
    host: str = "127.0.0.1",
    port: int = 8000,
    log_level: str = "warning",
) -> None:
    """Run the server until interrupted (blocking)."""
    uvicorn.run(create_app(manager), host=host, port=port, log_level=log_level)


__all__ = ["SessionManager", "create_app", "message_for", "serve"]
