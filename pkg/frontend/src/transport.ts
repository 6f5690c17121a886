/*
 * Two interchangeable channels speak the same protocol: a WebSocket for
 * the live path and a fetch poller as the fallback. Client code programs
 * against the Channel interface and cannot tell which one is underneath.
 */

import {
  parseServerMessage,
  type CreateSessionResponse,
  type EventsPage,
  type ServerMessage,
  type StateMessage,
} from "./protocol";

export interface ClientRequest {
  kind: "join" | "choose" | "state" | "force_advance" | "end";
  restaurant?: number;
}

export type MessageHandler = (message: ServerMessage) => void;

export interface Channel {
  send(request: ClientRequest): void;
  onMessage(handler: MessageHandler): void;
  onDrop(handler: () => void): void;
  close(): void;
}

export type Timer = ReturnType<typeof setTimeout>;

export interface TimerHooks {
  setTimer?: (fn: () => void, ms: number) => Timer;
  clearTimer?: (timer: Timer) => void;
}

// -- HTTP API ----------------------------------------------------------------

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  url: string,
  init?: {
    method?: string;
    headers?: Record<string, string>;
    body?: string;
  },
) => Promise<{
  ok: boolean;
  status: number;
  text(): Promise<string>;
}>;

/** Thin wrapper over the REST endpoints; throws ApiError on non-2xx. */
export class HttpApi {
  private readonly fetchImpl: FetchLike;

  constructor(
    readonly baseUrl: string,
    fetchImpl?: FetchLike,
  ) {
    this.fetchImpl = fetchImpl ?? ((url, init) => globalThis.fetch(url, init));
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    let data: unknown = null;
    if (text) {
      try {
        data = JSON.parse(text);
      } catch {
        data = text;
      }
    }
    if (!response.ok) {
      const detail =
        typeof data === "object" && data !== null && "detail" in data
          ? String((data as { detail: unknown }).detail)
          : text;
      throw new ApiError(response.status, detail);
    }
    return data;
  }

  health(): Promise<unknown> {
    return this.request("GET", "/health");
  }

  createSession(body: {
    config: Record<string, unknown>;
    roster: Record<string, unknown>;
    round_seconds?: number;
    pause_seconds?: number;
    session_id?: string;
  }): Promise<CreateSessionResponse> {
    return this.request("POST", "/sessions", body) as Promise<CreateSessionResponse>;
  }

  state(sessionId: string, token: string): Promise<StateMessage> {
    return this.request(
      "GET",
      `/sessions/${sessionId}/state?token=${encodeURIComponent(token)}`,
    ) as Promise<StateMessage>;
  }

  join(sessionId: string, token: string): Promise<ServerMessage> {
    return this.request("POST", `/sessions/${sessionId}/join`, { token }) as Promise<ServerMessage>;
  }

  choose(sessionId: string, token: string, restaurant: number): Promise<ServerMessage> {
    return this.request("POST", `/sessions/${sessionId}/choose`, {
      token,
      restaurant,
    }) as Promise<ServerMessage>;
  }

  advance(sessionId: string, token: string): Promise<ServerMessage> {
    return this.request("POST", `/sessions/${sessionId}/advance`, { token }) as Promise<ServerMessage>;
  }

  end(sessionId: string, token: string): Promise<ServerMessage> {
    return this.request("POST", `/sessions/${sessionId}/end`, { token }) as Promise<ServerMessage>;
  }

  events(sessionId: string, token: string, since: number): Promise<EventsPage> {
    return this.request(
      "GET",
      `/sessions/${sessionId}/events?token=${encodeURIComponent(token)}&since=${since}`,
    ) as Promise<EventsPage>;
  }

  async logText(sessionId: string, token: string): Promise<string> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/sessions/${sessionId}/log?token=${encodeURIComponent(token)}`,
    );
    const text = await response.text();
    if (!response.ok) throw new ApiError(response.status, text);
    return text;
  }
}

// -- WebSocket channel ---------------------------------------------------------

/** The subset of the WebSocket surface both browsers and ws expose. */
export interface WireSocket {
  send(data: string): void;
  close(code?: number): void;
  onopen: ((event: unknown) => void) | null;
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: ((event: unknown) => void) | null;
  onerror: ((event: unknown) => void) | null;
  readyState: number;
}

export type SocketFactory = (url: string) => WireSocket;

const SOCKET_OPEN = 1;

export interface WebSocketChannelOptions extends TimerHooks {
  reconnectMs?: number;
}

export function sessionSocketUrl(baseUrl: string, sessionId: string, token: string): string {
  const ws = baseUrl.replace(/^http/, "ws");
  return `${ws}/sessions/${sessionId}/ws?token=${encodeURIComponent(token)}`;
}

/**
 * One persistent socket. Requests sent before the socket opens are queued
 * and flushed on open; after an unexpected close the channel notifies the
 * drop handlers and reconnects, and the server pushes a fresh state
 * snapshot on every accept, which is what resynchronizes the client.
 */
export class WebSocketChannel implements Channel {
  private socket: WireSocket | null = null;
  private readonly handlers: MessageHandler[] = [];
  private readonly dropHandlers: Array<() => void> = [];
  private readonly outbox: string[] = [];
  private retryTimer: Timer | null = null;
  private closed = false;
  private readonly reconnectMs: number;
  private readonly setTimer: (fn: () => void, ms: number) => Timer;
  private readonly clearTimer: (timer: Timer) => void;

  constructor(
    private readonly url: string,
    private readonly factory: SocketFactory,
    options: WebSocketChannelOptions = {},
  ) {
    this.reconnectMs = options.reconnectMs ?? 1000;
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = options.clearTimer ?? ((timer) => clearTimeout(timer));
    this.connect();
  }

  private connect(): void {
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      for (const data of this.outbox.splice(0)) socket.send(data);
    };
    socket.onmessage = (event) => {
      const message = parseServerMessage(String(event.data));
      if (message === null) return;
      for (const handler of [...this.handlers]) handler(message);
    };
    socket.onclose = () => {
      if (this.socket !== socket) return;
      this.socket = null;
      if (this.closed) return;
      for (const handler of [...this.dropHandlers]) handler();
      this.retryTimer = this.setTimer(() => {
        this.retryTimer = null;
        this.connect();
      }, this.reconnectMs);
    };
    socket.onerror = () => {
      try {
        socket.close();
      } catch {
        // Already dead; onclose drives the retry.
      }
    };
  }

  send(request: ClientRequest): void {
    const data = JSON.stringify(request);
    if (this.socket !== null && this.socket.readyState === SOCKET_OPEN) {
      this.socket.send(data);
    } else if (!this.closed) {
      this.outbox.push(data);
    }
  }

  onMessage(handler: MessageHandler): void {
    this.handlers.push(handler);
  }

  onDrop(handler: () => void): void {
    this.dropHandlers.push(handler);
  }

  close(): void {
    this.closed = true;
    if (this.retryTimer !== null) {
      this.clearTimer(this.retryTimer);
      this.retryTimer = null;
    }
    if (this.socket !== null) {
      try {
        this.socket.close();
      } catch {
        // Nothing left to close.
      }
      this.socket = null;
    }
  }
}

// -- polling channel -----------------------------------------------------------

export interface PollingChannelOptions extends TimerHooks {
  intervalMs?: number;
}

/**
 * Fallback channel: the event feed arrives by polling GET /events with a
 * cursor and requests go out as individual REST calls whose response
 * bodies are delivered like any other message.
 */
export class PollingChannel implements Channel {
  private since = -1;
  private readonly handlers: MessageHandler[] = [];
  private readonly dropHandlers: Array<() => void> = [];
  private pollTimer: Timer | null = null;
  private closed = false;
  private degraded = false;
  private readonly intervalMs: number;
  private readonly setTimer: (fn: () => void, ms: number) => Timer;
  private readonly clearTimer: (timer: Timer) => void;

  constructor(
    private readonly api: HttpApi,
    private readonly sessionId: string,
    private readonly token: string,
    options: PollingChannelOptions = {},
  ) {
    this.intervalMs = options.intervalMs ?? 1000;
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = options.clearTimer ?? ((timer) => clearTimeout(timer));
    this.send({ kind: "state" });
    this.schedulePoll(0);
  }

  send(request: ClientRequest): void {
    void this.dispatch(request);
  }

  private async dispatch(request: ClientRequest): Promise<void> {
    try {
      let response: ServerMessage;
      switch (request.kind) {
        case "state":
          response = await this.api.state(this.sessionId, this.token);
          break;
        case "join":
          response = await this.api.join(this.sessionId, this.token);
          break;
        case "choose":
          response = await this.api.choose(this.sessionId, this.token, request.restaurant ?? -1);
          break;
        case "force_advance":
          response = await this.api.advance(this.sessionId, this.token);
          break;
        case "end":
          response = await this.api.end(this.sessionId, this.token);
          break;
      }
      if (!this.closed) this.deliver(response);
    } catch (error) {
      if (this.closed) return;
      if (error instanceof ApiError) {
        this.deliver({ kind: "error", error: `http_${error.status}`, detail: error.detail });
      } else {
        this.noteDrop();
      }
    }
  }

  private deliver(message: ServerMessage): void {
    for (const handler of [...this.handlers]) handler(message);
  }

  private schedulePoll(delayMs: number): void {
    if (this.closed) return;
    this.pollTimer = this.setTimer(() => {
      this.pollTimer = null;
      void this.poll();
    }, delayMs);
  }

  private async poll(): Promise<void> {
    try {
      const page = await this.api.events(this.sessionId, this.token, this.since);
      if (this.closed) return;
      // latest_seq moves the cursor even when every event in the window
      // was filtered away for this seat.
      this.since = Math.max(this.since, page.latest_seq);
      if (this.degraded) {
        // Back from a network failure: resume through a fresh snapshot.
        this.degraded = false;
        this.send({ kind: "state" });
      }
      for (const message of page.messages) this.deliver(message);
    } catch (error) {
      if (this.closed) return;
      if (!(error instanceof ApiError)) this.noteDrop();
    }
    this.schedulePoll(this.intervalMs);
  }

  private noteDrop(): void {
    if (this.degraded) return;
    this.degraded = true;
    for (const handler of [...this.dropHandlers]) handler();
  }

  onMessage(handler: MessageHandler): void {
    this.handlers.push(handler);
  }

  onDrop(handler: () => void): void {
    this.dropHandlers.push(handler);
  }

  close(): void {
    this.closed = true;
    if (this.pollTimer !== null) {
      this.clearTimer(this.pollTimer);
      this.pollTimer = null;
    }
  }
}
