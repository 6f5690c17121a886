/*
 * Participant-side session client.
 *
 * The client owns no game state. Every field it exposes arrived in a
 * server message, and the server's sequence number always wins: older
 * messages are discarded, a stale snapshot triggers one refresh, and a
 * reconnect resynchronizes through the state push the server sends on
 * every accept.
 */

import {
  hasEnvelope,
  isOutcomeView,
  isParticipantState,
  type ErrorMessage,
  type EventMessage,
  type FinishedMessage,
  type ParticipantStateMessage,
  type ServerMessage,
} from "./protocol";
import type { Channel, Timer, TimerHooks } from "./transport";

export interface SessionClientOptions extends TimerHooks {
  /** Millisecond clock, injectable for tests. */
  now?: () => number;
  /** How long to wait before re-asking for state while a pause holds. */
  refreshDelayMs?: number;
}

export class SessionClient {
  state: ParticipantStateMessage | null = null;
  lastSeq = -1;
  connected = false;
  finished: FinishedMessage | null = null;
  lastError: ErrorMessage | null = null;
  /** Round index of the latest own timeout default, for the view marker. */
  defaultedRound: number | null = null;

  private clockSkewSeconds = 0;
  private refreshTimer: Timer | null = null;
  private stateRequested = false;
  private readonly changeHandlers: Array<() => void> = [];
  private readonly now: () => number;
  private readonly refreshDelayMs: number;
  private readonly setTimer: (fn: () => void, ms: number) => Timer;
  private readonly clearTimer: (timer: Timer) => void;

  constructor(
    private readonly channel: Channel,
    options: SessionClientOptions = {},
  ) {
    this.now = options.now ?? (() => Date.now());
    this.refreshDelayMs = options.refreshDelayMs ?? 500;
    this.setTimer = options.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
    this.clearTimer = options.clearTimer ?? ((timer) => clearTimeout(timer));
    channel.onMessage((message) => this.handle(message));
    channel.onDrop(() => {
      this.connected = false;
      this.emit();
    });
  }

  join(): void {
    this.channel.send({ kind: "join" });
  }

  choose(restaurant: number): void {
    this.channel.send({ kind: "choose", restaurant });
  }

  requestState(): void {
    if (this.stateRequested) return;
    this.stateRequested = true;
    this.channel.send({ kind: "state" });
  }

  onChange(handler: () => void): void {
    this.changeHandlers.push(handler);
  }

  /** Seconds left on the server's deadline, by the server's own clock. */
  countdownSeconds(): number | null {
    if (this.state === null || this.state.deadline === null) return null;
    const serverNow = this.now() / 1000 + this.clockSkewSeconds;
    return Math.max(0, this.state.deadline - serverNow);
  }

  close(): void {
    this.cancelRefresh();
    this.channel.close();
  }

  private emit(): void {
    for (const handler of [...this.changeHandlers]) handler();
  }

  private handle(message: ServerMessage): void {
    if (message.kind === "state") {
      this.stateRequested = false;
      if (!isParticipantState(message)) return;
      if (this.state !== null && message.seq < this.lastSeq) {
        // Stale snapshot (reordered delivery): refresh the view instead.
        this.requestState();
        return;
      }
      this.state = message;
      this.lastSeq = message.seq;
      this.connected = true;
      this.clockSkewSeconds = message.server_time - this.now() / 1000;
      this.scheduleRefreshIfHolding();
      this.emit();
      return;
    }
    if (message.kind === "error") {
      this.lastError = message;
      this.emit();
      return;
    }
    if (message.kind === "join_ack") {
      // The lobby may have flipped straight into CHOOSING; only a snapshot
      // carries the new deadline.
      this.requestState();
      return;
    }
    if (message.kind === "choice_ack") {
      if (this.state !== null && message.round === this.state.round) {
        this.state.you.submitted_this_round = true;
      }
      this.emit();
      return;
    }
    if (!hasEnvelope(message)) return;
    if (message.seq <= this.lastSeq) return; // duplicate or out of order
    // Forward gaps are normal: events about other seats are filtered out
    // before they reach a participant.
    this.lastSeq = message.seq;
    this.applyEvent(message as EventMessage);
  }

  private applyEvent(event: EventMessage): void {
    const state = this.state;
    if (state !== null) {
      state.phase = event.phase;
      state.round = event.round;
      state.seq = event.seq;
    }
    switch (event.kind) {
      case "joined": {
        if (state?.roster !== undefined) state.roster.joined_humans += 1;
        if (state !== null && event.participant === state.you.participant) {
          state.you.joined = true;
        }
        // Bot submissions open the first round silently for participants.
        this.requestState();
        break;
      }
      case "choice_submitted": {
        // Only own submissions are delivered to a participant channel.
        if (state !== null) state.you.submitted_this_round = true;
        break;
      }
      case "timeout_defaulted": {
        this.defaultedRound = event.round;
        break;
      }
      case "round_resolved": {
        if (state !== null && isOutcomeView(event.outcome)) {
          const outcome = event.outcome;
          state.last_outcome = outcome;
          state.you.cumulative_score += outcome.your_payoff;
          state.you.submitted_this_round = false;
          state.history = [
            ...(state.history ?? []),
            {
              round: outcome.round,
              choice: outcome.your_choice,
              payoff: outcome.your_payoff,
              won: outcome.you_won,
              defaulted: this.defaultedRound === outcome.round,
            },
          ];
        }
        // The next round opens without any participant-visible push.
        this.requestState();
        break;
      }
      case "finished": {
        this.finished = event;
        this.cancelRefresh();
        this.requestState();
        break;
      }
      case "created":
        break;
    }
    this.emit();
  }

  private scheduleRefreshIfHolding(): void {
    // A RESOLVED pause ends server-side with no participant-visible event,
    // so keep nudging the state until the phase moves on.
    this.cancelRefresh();
    if (this.state === null || this.state.phase !== "RESOLVED") return;
    this.refreshTimer = this.setTimer(() => {
      this.refreshTimer = null;
      this.requestState();
    }, this.refreshDelayMs);
  }

  private cancelRefresh(): void {
    if (this.refreshTimer !== null) {
      this.clearTimer(this.refreshTimer);
      this.refreshTimer = null;
    }
  }
}
