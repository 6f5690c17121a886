/*
 * Wire protocol types for the session service.
 *
 * Everything here mirrors the JSON the server actually sends. The client
 * never invents fields: if a view needs a value, it has to exist in one
 * of these shapes first.
 */

export type Phase = "LOBBY" | "CHOOSING" | "RESOLVED" | "FINISHED";
export type GameMode = "KPR" | "MINORITY";
export type FeedbackLevel = "OWN_ONLY" | "OCCUPANCY" | "FULL";
export type SeatKind = "HUMAN" | "BOT";

export interface GameConfig {
  mode: GameMode;
  n_players: number;
  m_restaurants: number;
  utilities: number[];
  horizon: number;
  seed: number;
  feedback_level: FeedbackLevel;
}

export interface RosterBots {
  strategy_id: string;
  count: number;
  params?: Record<string, unknown>;
}

export interface Roster {
  humans: number;
  bots: RosterBots[];
}

/** Stamped on every event and state message the server pushes. */
export interface Envelope {
  session_id: string;
  round: number;
  phase: Phase;
  seq: number;
}

/** A resolved round as the game core reports it (experimenter copy). */
export interface RoundOutcomeRecord {
  arrivals: number[];
  winner: (number | null)[];
  payoffs: number[];
  occupied_count: number;
}

/**
 * A resolved round filtered down to what one participant may see.
 * occupancy/occupied_count appear from the OCCUPANCY feedback level up,
 * choices only at FULL. At OWN_ONLY none of them are present.
 */
export interface OutcomeView {
  round: number;
  your_choice: number;
  your_payoff: number;
  you_won: boolean;
  occupancy?: number[];
  occupied_count?: number;
  choices?: number[];
}

export interface HistoryEntry {
  round: number;
  choice: number;
  payoff: number;
  won: boolean;
  defaulted: boolean;
}

// -- event messages (lowercase kinds on the wire) ---------------------------

export interface CreatedMessage extends Envelope {
  kind: "created";
  // Participants get the bare envelope; the full payload is experimenter-only.
  config?: GameConfig;
  roster?: Roster;
  round_seconds?: number;
  pause_seconds?: number;
}

export interface JoinedMessage extends Envelope {
  kind: "joined";
  participant: number;
}

export interface ChoiceSubmittedMessage extends Envelope {
  kind: "choice_submitted";
  round: number;
  participant: number;
  choice: number;
  actor: "human" | "bot";
  resubmission: boolean;
}

export interface TimeoutDefaultedMessage extends Envelope {
  kind: "timeout_defaulted";
  round: number;
  participant: number;
  choice: number;
  rule: "repeat_last" | "uniform";
}

export interface RoundResolvedMessage extends Envelope {
  kind: "round_resolved";
  outcome: OutcomeView | RoundOutcomeRecord;
  choices?: number[];
}

export interface FinishedMessage extends Envelope {
  kind: "finished";
  rounds_played: number;
  reason: string;
}

export type EventMessage =
  | CreatedMessage
  | JoinedMessage
  | ChoiceSubmittedMessage
  | TimeoutDefaultedMessage
  | RoundResolvedMessage
  | FinishedMessage;

const EVENT_KINDS = new Set([
  "created",
  "joined",
  "choice_submitted",
  "timeout_defaulted",
  "round_resolved",
  "finished",
]);

// -- state snapshots ---------------------------------------------------------

export interface ParticipantYou {
  participant: number;
  joined: boolean;
  cumulative_score: number;
  submitted_this_round: boolean;
}

export interface LobbyRoster {
  joined_humans: number;
  expected_humans: number;
  n_players: number;
}

export interface ParticipantGame {
  mode: GameMode;
  n_players: number;
  m_restaurants: number;
  utilities: number[];
  horizon: number;
  feedback_level: FeedbackLevel;
}

export interface ParticipantStateMessage extends Envelope {
  kind: "state";
  server_time: number;
  deadline: number | null;
  you: ParticipantYou;
  roster?: LobbyRoster;
  game?: ParticipantGame;
  history?: HistoryEntry[];
  last_outcome?: OutcomeView | null;
}

export interface RosterRow {
  participant: number;
  kind: SeatKind;
  joined: boolean;
  strategy_id: string | null;
  submitted_this_round: boolean;
  cumulative_score: number;
}

export interface ExperimenterStateMessage extends Envelope {
  kind: "state";
  server_time: number;
  deadline: number | null;
  config: GameConfig;
  roster: RosterRow[];
  submissions_received: number | null;
  rounds_played: number;
  utilization_series: number[];
  last_round: { choices: number[]; outcome: RoundOutcomeRecord } | null;
}

export type StateMessage = ParticipantStateMessage | ExperimenterStateMessage;

// -- acknowledgements and errors ---------------------------------------------

export interface JoinAckMessage {
  kind: "join_ack";
  participant: number;
  session_id: string;
}

export interface ChoiceAckMessage {
  kind: "choice_ack";
  participant: number;
  round: number;
  choice: number;
  resubmission: boolean;
}

export interface AdvanceAckMessage {
  kind: "advance_ack";
  phase: Phase;
  round: number;
}

export interface EndAckMessage {
  kind: "end_ack";
  phase: Phase;
}

export interface ErrorMessage {
  kind: "error";
  error: string;
  detail?: string;
}

export type AckMessage =
  | JoinAckMessage
  | ChoiceAckMessage
  | AdvanceAckMessage
  | EndAckMessage;

export type ServerMessage = StateMessage | EventMessage | AckMessage | ErrorMessage;

/** Response page of GET /sessions/{id}/events. */
export interface EventsPage {
  kind: "events";
  session_id: string;
  latest_seq: number;
  messages: EventMessage[];
}

/** Response of POST /sessions. */
export interface CreateSessionResponse {
  session_id: string;
  join_tokens: string[];
  experimenter_token: string;
  config: GameConfig;
  phase: Phase;
  log_path: string | null;
}

/** One line of the append-only session log (uppercase kinds on disk). */
export interface LogRecord {
  seq: number;
  timestamp: number;
  kind:
    | "CREATED"
    | "JOINED"
    | "CHOICE_SUBMITTED"
    | "TIMEOUT_DEFAULTED"
    | "ROUND_RESOLVED"
    | "FINISHED";
  payload: Record<string, unknown>;
}

// -- guards and small helpers --------------------------------------------------

export function isStateMessage(message: ServerMessage): message is StateMessage {
  return message.kind === "state";
}

export function isParticipantState(
  message: StateMessage,
): message is ParticipantStateMessage {
  return "you" in message;
}

export function isExperimenterState(
  message: StateMessage,
): message is ExperimenterStateMessage {
  return "utilization_series" in message;
}

export function isEventMessage(message: ServerMessage): message is EventMessage {
  return EVENT_KINDS.has(message.kind);
}

export function isOutcomeView(
  outcome: OutcomeView | RoundOutcomeRecord,
): outcome is OutcomeView {
  return "your_choice" in outcome;
}

/** Events and state snapshots carry an envelope; acks and errors do not. */
export function hasEnvelope(
  message: ServerMessage,
): message is ServerMessage & Envelope {
  return typeof (message as Partial<Envelope>).seq === "number";
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  if (typeof (data as { kind?: unknown }).kind !== "string") return null;
  return data as ServerMessage;
}

/** Parse the NDJSON log download into records; throws on a corrupt line. */
export function parseLogText(text: string): LogRecord[] {
  const records: LogRecord[] = [];
  for (const line of text.split("\n")) {
    if (!line.trim()) continue;
    const record = JSON.parse(line) as LogRecord;
    if (typeof record.seq !== "number" || typeof record.kind !== "string") {
      throw new Error(`malformed log line: ${line}`);
    }
    records.push(record);
  }
  return records;
}

/** Rank utilities only mean anything when they actually differ. */
export function rankedUtilities(utilities: number[]): boolean {
  return new Set(utilities).size > 1;
}
