/*
 * Plain HTML renderers: server-delivered snapshot in, markup out. Keeping
 * them string-to-string makes the no-hidden-information rule testable. A
 * value the wire protocol did not deliver cannot show up in the output,
 * because the renderers have nowhere else to read it from.
 */

import {
  rankedUtilities,
  type ExperimenterStateMessage,
  type OutcomeView,
  type ParticipantStateMessage,
  type Phase,
} from "./protocol";

export function escapeHtml(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function formatPayoff(payoff: number): string {
  return Number.isInteger(payoff) ? String(payoff) : payoff.toFixed(3);
}

function phaseBadge(phase: Phase, connected: boolean): string {
  const link = connected ? "" : ` <span class="offline">reconnecting</span>`;
  return `<span class="phase phase-${phase.toLowerCase()}">${phase}</span>${link}`;
}

function countdownLabel(seconds: number | null): string {
  if (seconds === null) return "";
  return `<span class="countdown" data-panel="countdown">${Math.ceil(seconds)}s</span>`;
}

// -- participant ---------------------------------------------------------------

export interface ParticipantViewModel {
  state: ParticipantStateMessage;
  connected: boolean;
  showScore: boolean;
  countdownSeconds: number | null;
  defaultedRound: number | null;
}

export function renderParticipantView(model: ParticipantViewModel): string {
  const { state } = model;
  const parts: string[] = [];
  parts.push(
    `<header class="bar">${phaseBadge(state.phase, model.connected)}` +
      `${countdownLabel(model.countdownSeconds)}</header>`,
  );
  if (state.phase === "LOBBY") {
    const roster = state.roster;
    const progress =
      roster === undefined
        ? ""
        : `${roster.joined_humans} of ${roster.expected_humans} players here, ` +
          `${roster.n_players} seats in the game`;
    parts.push(
      `<section class="lobby"><p>waiting for the room to fill</p>` +
        `<p data-panel="lobby">${escapeHtml(progress)}</p></section>`,
    );
    return wrap(parts, model);
  }
  const game = state.game;
  if (game !== undefined) {
    parts.push(
      `<p class="round-label">round ${state.round + 1} of ${game.horizon}</p>`,
    );
    parts.push(renderRestaurantGrid(model));
  }
  const outcome = state.last_outcome;
  if (outcome !== null && outcome !== undefined) {
    parts.push(renderOutcomeCard(outcome, model));
  }
  if (state.phase === "FINISHED") {
    parts.push(`<section class="done" data-panel="finished">session finished</section>`);
  }
  return wrap(parts, model);
}

function wrap(parts: string[], model: ParticipantViewModel): string {
  if (model.showScore) {
    const score = model.state.you.cumulative_score;
    parts.push(
      `<footer data-panel="score">total score ${escapeHtml(formatPayoff(score))}</footer>`,
    );
  }
  return `<div class="participant">${parts.join("\n")}</div>`;
}

function renderRestaurantGrid(model: ParticipantViewModel): string {
  const game = model.state.game;
  if (game === undefined) return "";
  const active = model.connected && model.state.phase === "CHOOSING";
  const ranked = rankedUtilities(game.utilities);
  const submitted = model.state.you.submitted_this_round;
  const buttons: string[] = [];
  for (let r = 0; r < game.m_restaurants; r += 1) {
    const label = ranked
      ? `${r}<small class="utility">worth ${escapeHtml(game.utilities[r])}</small>`
      : String(r);
    buttons.push(
      `<button class="restaurant" data-choice="${r}"${active ? "" : " disabled"}>${label}</button>`,
    );
  }
  const note = submitted
    ? `<p class="submitted" data-panel="submitted">choice is in; you can still change it</p>`
    : "";
  return `<section class="grid" data-panel="restaurants">${buttons.join("")}${note}</section>`;
}

function renderOutcomeCard(outcome: OutcomeView, model: ParticipantViewModel): string {
  const defaulted =
    model.defaultedRound === outcome.round
      ? ` <span class="defaulted" data-panel="defaulted">defaulted</span>`
      : "";
  const verdict = outcome.you_won
    ? `you were served, payoff ${escapeHtml(formatPayoff(outcome.your_payoff))}`
    : "you were not served";
  const parts = [
    `<p>round ${outcome.round + 1}: picked ${outcome.your_choice}, ${verdict}${defaulted}</p>`,
  ];
  if (outcome.occupancy !== undefined) {
    const peak = Math.max(1, ...outcome.occupancy);
    const bars = outcome.occupancy
      .map(
        (count, r) =>
          `<div class="bar-row"><span>${r}</span>` +
          `<div class="bar" style="width:${(100 * count) / peak}%"></div>` +
          `<span>${count}</span></div>`,
      )
      .join("");
    parts.push(`<div class="occupancy" data-panel="occupancy">${bars}</div>`);
  }
  if (outcome.choices !== undefined) {
    const rows = outcome.choices
      .map((choice, agent) => `<tr><td>${agent}</td><td>${choice}</td></tr>`)
      .join("");
    parts.push(
      `<table class="choices" data-panel="choices">` +
        `<thead><tr><th>player</th><th>choice</th></tr></thead>` +
        `<tbody>${rows}</tbody></table>`,
    );
  }
  return `<section class="outcome" data-panel="outcome">${parts.join("")}</section>`;
}

// -- experimenter ----------------------------------------------------------------

export interface DashboardViewModel {
  state: ExperimenterStateMessage;
  series: number[];
  connected: boolean;
  countdownSeconds: number | null;
}

/** Polyline points for the utilization chart, one vertex per round. */
export function chartPath(series: number[], width: number, height: number): string {
  if (series.length === 0) return "";
  const step = series.length > 1 ? width / (series.length - 1) : 0;
  return series
    .map((value, index) => {
      const x = series.length > 1 ? index * step : width / 2;
      const y = height - value * height;
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}

export function renderDashboardView(model: DashboardViewModel): string {
  const { state } = model;
  const canPace = model.connected && (state.phase === "CHOOSING" || state.phase === "RESOLVED");
  const canEnd = model.connected && state.phase !== "FINISHED";
  const canDownload = state.phase === "FINISHED";
  const submissions =
    state.submissions_received === null
      ? "-"
      : `${state.submissions_received} / ${state.roster.length}`;
  const rows = state.roster
    .map(
      (row) =>
        `<tr><td>${row.participant}</td><td>${row.kind}</td>` +
        `<td>${escapeHtml(row.strategy_id ?? "human")}</td>` +
        `<td>${row.joined ? "yes" : "no"}</td>` +
        `<td>${row.submitted_this_round ? "yes" : "no"}</td>` +
        `<td>${escapeHtml(formatPayoff(row.cumulative_score))}</td></tr>`,
    )
    .join("");
  const chart =
    `<svg viewBox="0 0 400 120" class="chart" data-panel="chart">` +
    `<polyline fill="none" stroke="currentColor" stroke-width="2" ` +
    `points="${chartPath(model.series, 400, 120)}"/></svg>`;
  return `<div class="dashboard">
<header class="bar">${phaseBadge(state.phase, model.connected)}${countdownLabel(model.countdownSeconds)}
  <span class="session-id">${escapeHtml(state.session_id)}</span></header>
<section class="stats">
  <span data-panel="rounds">rounds played: ${state.rounds_played}</span>
  <span data-panel="submissions">submissions: ${escapeHtml(submissions)}</span>
</section>
<section class="utilization">
  <h2>utilization by round</h2>
  ${chart}
</section>
<table class="roster" data-panel="roster">
  <thead><tr><th>seat</th><th>kind</th><th>strategy</th><th>joined</th><th>submitted</th><th>score</th></tr></thead>
  <tbody>${rows}</tbody>
</table>
<section class="controls" data-panel="controls">
  <button data-action="force-advance"${canPace ? "" : " disabled"}>force advance</button>
  <button data-action="end"${canEnd ? "" : " disabled"}>end session</button>
  <button data-action="download-log"${canDownload ? "" : " disabled"}>download log</button>
</section>
</div>`;
}

// -- session setup -----------------------------------------------------------------

/** The form the experimenter uses to start a session from the landing page. */
export function renderCreateForm(): string {
  return `<form class="create" data-panel="create">
  <label>players <input name="players" type="number" value="10" min="1"></label>
  <label>restaurants <input name="restaurants" type="number" value="10" min="1"></label>
  <label>rounds <input name="rounds" type="number" value="10" min="1"></label>
  <label>seed <input name="seed" type="number" value="0"></label>
  <label>human seats <input name="humans" type="number" value="1" min="0"></label>
  <label>mode <select name="mode"><option>KPR</option><option>MINORITY</option></select></label>
  <label>feedback <select name="feedback">
    <option>OWN_ONLY</option><option>OCCUPANCY</option><option>FULL</option>
  </select></label>
  <label>utilities <input name="utilities" placeholder="blank for equal"></label>
  <label>bot strategy <select name="strategy">
    <option>stick_if_won</option><option>uniform_random</option><option>rank_biased</option>
    <option>reinforcement</option><option>noise_trader</option><option>stable</option>
    <option>intermediate</option>
  </select></label>
  <label>round seconds <input name="round_seconds" type="number" value="15" step="0.5"></label>
  <button data-action="create">start session</button>
</form>`;
}

export function renderJoinForm(): string {
  return `<form class="join" data-panel="join">
  <label>session <input name="session" required></label>
  <label>token <input name="token" required></label>
  <button data-action="join-session">join as participant</button>
  <button data-action="monitor-session">open dashboard</button>
</form>`;
}
