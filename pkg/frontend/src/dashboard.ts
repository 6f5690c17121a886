/*
 * Experimenter-side client: roster status, live utilization series, and
 * the pacing controls. Follows the same staleness discipline as the
 * participant client; the utilization chart gains exactly one point per
 * resolved round and a state snapshot always replaces the whole series.
 */

import {
  hasEnvelope,
  isExperimenterState,
  isOutcomeView,
  type ErrorMessage,
  type EventMessage,
  type ExperimenterStateMessage,
  type FinishedMessage,
  type ServerMessage,
} from "./protocol";
import type { Channel } from "./transport";

export interface ExperimenterClientOptions {
  now?: () => number;
}

export class ExperimenterClient {
  state: ExperimenterStateMessage | null = null;
  /** One utilization point per resolved round, in round order. */
  series: number[] = [];
  lastSeq = -1;
  connected = false;
  finished: FinishedMessage | null = null;
  lastError: ErrorMessage | null = null;

  private clockSkewSeconds = 0;
  private stateRequested = false;
  private readonly changeHandlers: Array<() => void> = [];
  private readonly now: () => number;

  constructor(
    private readonly channel: Channel,
    options: ExperimenterClientOptions = {},
  ) {
    this.now = options.now ?? (() => Date.now());
    channel.onMessage((message) => this.handle(message));
    channel.onDrop(() => {
      this.connected = false;
      this.emit();
    });
  }

  forceAdvance(): void {
    this.channel.send({ kind: "force_advance" });
  }

  end(): void {
    this.channel.send({ kind: "end" });
  }

  requestState(): void {
    if (this.stateRequested) return;
    this.stateRequested = true;
    this.channel.send({ kind: "state" });
  }

  onChange(handler: () => void): void {
    this.changeHandlers.push(handler);
  }

  countdownSeconds(): number | null {
    if (this.state === null || this.state.deadline === null) return null;
    const serverNow = this.now() / 1000 + this.clockSkewSeconds;
    return Math.max(0, this.state.deadline - serverNow);
  }

  close(): void {
    this.channel.close();
  }

  private emit(): void {
    for (const handler of [...this.changeHandlers]) handler();
  }

  private handle(message: ServerMessage): void {
    if (message.kind === "state") {
      this.stateRequested = false;
      if (!isExperimenterState(message)) return;
      if (this.state !== null && message.seq < this.lastSeq) {
        this.requestState();
        return;
      }
      this.state = message;
      this.lastSeq = message.seq;
      this.connected = true;
      this.series = [...message.utilization_series];
      this.clockSkewSeconds = message.server_time - this.now() / 1000;
      this.emit();
      return;
    }
    if (message.kind === "error") {
      this.lastError = message;
      this.emit();
      return;
    }
    if (message.kind === "advance_ack" || message.kind === "end_ack") {
      // The phase moved; pull the authoritative snapshot behind it.
      this.requestState();
      return;
    }
    if (message.kind === "join_ack" || message.kind === "choice_ack") return;
    if (!hasEnvelope(message)) return;
    if (message.seq <= this.lastSeq) return;
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
        const row = state?.roster.find((r) => r.participant === event.participant);
        if (row !== undefined) row.joined = true;
        break;
      }
      case "choice_submitted":
      case "timeout_defaulted": {
        const row = state?.roster.find((r) => r.participant === event.participant);
        if (row !== undefined) row.submitted_this_round = true;
        if (state !== null) {
          state.submissions_received = state.roster.filter(
            (r) => r.submitted_this_round,
          ).length;
        }
        break;
      }
      case "round_resolved": {
        if (isOutcomeView(event.outcome)) break; // wrong shape for this seat
        const outcome = event.outcome;
        if (event.round === this.series.length && state !== null) {
          this.series.push(outcome.occupied_count / state.config.m_restaurants);
          state.rounds_played = this.series.length;
          state.utilization_series = [...this.series];
          state.last_round = {
            choices: event.choices ?? [],
            outcome,
          };
          state.submissions_received = null;
          for (const row of state.roster) {
            row.cumulative_score += outcome.payoffs[row.participant] ?? 0;
            row.submitted_this_round = false;
          }
        } else {
          // A missed round slipped past the cursor; resync instead of guessing.
          this.requestState();
        }
        break;
      }
      case "finished": {
        this.finished = event;
        this.requestState();
        break;
      }
      case "created":
        break;
    }
    this.emit();
  }
}
