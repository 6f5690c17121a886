import { describe, expect, it } from "vitest";

import type { ServerMessage } from "../src/protocol";
import {
  ApiError,
  HttpApi,
  PollingChannel,
  WebSocketChannel,
  sessionSocketUrl,
  type FetchLike,
  type Timer,
  type WireSocket,
} from "../src/transport";

function jsonResponse(status: number, body: unknown) {
  return {
    ok: status >= 200 && status < 300,
    status,
    text: () => Promise.resolve(JSON.stringify(body)),
  };
}

describe("HttpApi", () => {
  it("builds urls and decodes bodies", async () => {
    const calls: Array<{ url: string; method?: string; body?: string }> = [];
    const fetchImpl: FetchLike = (url, init) => {
      calls.push({ url, method: init?.method, body: init?.body });
      return Promise.resolve(jsonResponse(200, { kind: "join_ack", participant: 0 }));
    };
    const api = new HttpApi("http://h:1", fetchImpl);
    const ack = await api.join("abc", "tok/en");
    expect(ack).toMatchObject({ kind: "join_ack" });
    expect(calls[0].url).toBe("http://h:1/sessions/abc/join");
    expect(calls[0].method).toBe("POST");
    expect(JSON.parse(calls[0].body ?? "")).toEqual({ token: "tok/en" });

    await api.events("abc", "tok/en", 7);
    expect(calls[1].url).toBe("http://h:1/sessions/abc/events?token=tok%2Fen&since=7");
  });

  it("throws ApiError with the server detail on a 4xx", async () => {
    const fetchImpl: FetchLike = () =>
      Promise.resolve(jsonResponse(403, { detail: "experimenter token required" }));
    const api = new HttpApi("http://h:1", fetchImpl);
    await expect(api.state("abc", "bad")).rejects.toThrowError(ApiError);
    await expect(api.state("abc", "bad")).rejects.toThrow(/experimenter token required/);
  });
});

describe("sessionSocketUrl", () => {
  it("swaps the scheme and carries the token", () => {
    expect(sessionSocketUrl("http://h:8000", "s1", "t?k")).toBe(
      "ws://h:8000/sessions/s1/ws?token=t%3Fk",
    );
    expect(sessionSocketUrl("https://h", "s1", "t")).toBe("wss://h/sessions/s1/ws?token=t");
  });
});

/** Scripted socket: the test opens, feeds, and closes it by hand. */
class FakeSocket implements WireSocket {
  static instances: FakeSocket[] = [];
  sent: string[] = [];
  readyState = 0;
  onopen: ((event: unknown) => void) | null = null;
  onmessage: ((event: { data: unknown }) => void) | null = null;
  onclose: ((event: unknown) => void) | null = null;
  onerror: ((event: unknown) => void) | null = null;

  constructor(readonly url: string) {
    FakeSocket.instances.push(this);
  }

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.readyState = 3;
    this.onclose?.({});
  }

  open(): void {
    this.readyState = 1;
    this.onopen?.({});
  }

  feed(message: unknown): void {
    this.onmessage?.({ data: JSON.stringify(message) });
  }
}

describe("WebSocketChannel", () => {
  it("queues requests until the socket opens", () => {
    FakeSocket.instances = [];
    const channel = new WebSocketChannel("ws://x", (url) => new FakeSocket(url));
    channel.send({ kind: "join" });
    const socket = FakeSocket.instances[0];
    expect(socket.sent).toEqual([]);
    socket.open();
    expect(socket.sent).toEqual(['{"kind":"join"}']);
    channel.send({ kind: "choose", restaurant: 2 });
    expect(socket.sent).toHaveLength(2);
  });

  it("delivers parsed messages and skips unparseable frames", () => {
    FakeSocket.instances = [];
    const received: ServerMessage[] = [];
    const channel = new WebSocketChannel("ws://x", (url) => new FakeSocket(url));
    channel.onMessage((message) => received.push(message));
    const socket = FakeSocket.instances[0];
    socket.open();
    socket.feed({ kind: "end_ack", phase: "FINISHED" });
    socket.onmessage?.({ data: "not json" });
    expect(received).toEqual([{ kind: "end_ack", phase: "FINISHED" }]);
    channel.close();
  });

  it("notifies drops and reconnects through the timer", () => {
    FakeSocket.instances = [];
    const timers: Array<() => void> = [];
    let drops = 0;
    const channel = new WebSocketChannel("ws://x", (url) => new FakeSocket(url), {
      reconnectMs: 10,
      setTimer: (fn) => {
        timers.push(fn);
        return 0 as unknown as Timer;
      },
      clearTimer: () => {},
    });
    channel.onDrop(() => {
      drops += 1;
    });
    const first = FakeSocket.instances[0];
    first.open();
    first.close();
    expect(drops).toBe(1);
    expect(timers).toHaveLength(1);
    timers[0]();
    expect(FakeSocket.instances).toHaveLength(2); // fresh socket after the drop
    channel.close();
    expect(FakeSocket.instances[1].readyState).toBe(3);
  });

  it("stays quiet after an intentional close", () => {
    FakeSocket.instances = [];
    let drops = 0;
    const channel = new WebSocketChannel("ws://x", (url) => new FakeSocket(url));
    channel.onDrop(() => {
      drops += 1;
    });
    FakeSocket.instances[0].open();
    channel.close();
    expect(drops).toBe(0);
    expect(FakeSocket.instances).toHaveLength(1);
  });
});

/** Routes the REST surface PollingChannel uses onto canned responses. */
function pollingFetch(pages: Array<{ latest_seq: number; messages: ServerMessage[] }>) {
  const calls: string[] = [];
  let page = 0;
  const fetchImpl: FetchLike = (url) => {
    calls.push(url);
    if (url.includes("/events")) {
      const body = pages[Math.min(page, pages.length - 1)];
      page += 1;
      return Promise.resolve(
        jsonResponse(200, { kind: "events", session_id: "s1", ...body }),
      );
    }
    if (url.includes("/state")) {
      return Promise.resolve(
        jsonResponse(200, {
          kind: "state",
          session_id: "s1",
          round: 0,
          phase: "LOBBY",
          seq: 0,
          server_time: 0,
          deadline: null,
          you: { participant: 0, joined: false, cumulative_score: 0, submitted_this_round: false },
          roster: { joined_humans: 0, expected_humans: 1, n_players: 2 },
        }),
      );
    }
    if (url.includes("/choose")) {
      return Promise.resolve(jsonResponse(422, { detail: "restaurant 9 outside [0, 2)" }));
    }
    return Promise.resolve(jsonResponse(200, { kind: "join_ack", participant: 0, session_id: "s1" }));
  };
  return { fetchImpl, calls };
}

function flushAsync(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

describe("PollingChannel", () => {
  it("fetches state up front, then advances the cursor from latest_seq", async () => {
    const { fetchImpl, calls } = pollingFetch([
      { latest_seq: 4, messages: [] }, // everything filtered away, cursor still moves
      {
        latest_seq: 5,
        messages: [
          {
            kind: "joined",
            session_id: "s1",
            round: 0,
            phase: "LOBBY",
            seq: 5,
            participant: 0,
          },
        ],
      },
    ]);
    const timers: Array<() => void> = [];
    const api = new HttpApi("http://h", fetchImpl);
    const received: ServerMessage[] = [];
    const channel = new PollingChannel(api, "s1", "tok", {
      intervalMs: 1,
      setTimer: (fn) => {
        timers.push(fn);
        return 0 as unknown as Timer;
      },
      clearTimer: () => {},
    });
    channel.onMessage((message) => received.push(message));
    await flushAsync();
    expect(received.some((m) => m.kind === "state")).toBe(true);
    timers.shift()?.(); // first poll
    await flushAsync();
    timers.shift()?.(); // second poll
    await flushAsync();
    expect(received.some((m) => m.kind === "joined")).toBe(true);
    expect(calls.filter((u) => u.includes("since=-1"))).toHaveLength(1);
    expect(calls.some((u) => u.includes("since=4"))).toBe(true);
    channel.close();
  });

  it("delivers REST rejections as error messages", async () => {
    const { fetchImpl } = pollingFetch([{ latest_seq: -1, messages: [] }]);
    const api = new HttpApi("http://h", fetchImpl);
    const received: ServerMessage[] = [];
    const channel = new PollingChannel(api, "s1", "tok", {
      intervalMs: 1,
      setTimer: () => 0 as unknown as Timer,
      clearTimer: () => {},
    });
    channel.onMessage((message) => received.push(message));
    channel.send({ kind: "choose", restaurant: 9 });
    await flushAsync();
    const failure = received.find((m) => m.kind === "error");
    expect(failure).toMatchObject({ kind: "error", error: "http_422" });
    channel.close();
  });
});
