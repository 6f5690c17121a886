/*
 * Browser entry point. Wires the session clients to the page: one
 * persistent WebSocket per connection, event delegation for clicks, and
 * a repaint driven by client change notifications plus a countdown tick.
 */

import { SessionClient } from "./client";
import { ExperimenterClient } from "./dashboard";
import {
  HttpApi,
  WebSocketChannel,
  sessionSocketUrl,
  type SocketFactory,
} from "./transport";
import {
  renderCreateForm,
  renderDashboardView,
  renderJoinForm,
  renderParticipantView,
} from "./views";

const socketFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as ReturnType<SocketFactory>;

interface PageParams {
  server: string;
  session: string | null;
  token: string | null;
  role: "play" | "monitor" | null;
}

function readParams(): PageParams {
  const params = new URLSearchParams(window.location.search);
  const role = params.get("role");
  return {
    server: params.get("server") ?? window.location.origin,
    session: params.get("session"),
    token: params.get("token"),
    role: role === "play" || role === "monitor" ? role : null,
  };
}

function mount(): HTMLElement {
  const root = document.getElementById("app");
  if (root === null) throw new Error("missing #app container");
  return root;
}

function runParticipant(root: HTMLElement, params: PageParams): void {
  const channel = new WebSocketChannel(
    sessionSocketUrl(params.server, params.session ?? "", params.token ?? ""),
    socketFactory,
  );
  const client = new SessionClient(channel);
  let showScore = true;

  const repaint = () => {
    if (client.state === null) {
      root.innerHTML = `<p class="waiting">connecting</p>`;
      return;
    }
    root.innerHTML =
      renderParticipantView({
        state: client.state,
        connected: client.connected,
        showScore,
        countdownSeconds: client.countdownSeconds(),
        defaultedRound: client.defaultedRound,
      }) +
      `<label class="score-toggle"><input type="checkbox" data-action="toggle-score"` +
      `${showScore ? " checked" : ""}> show running score</label>`;
  };

  client.onChange(repaint);
  window.setInterval(repaint, 250); // keeps the countdown moving
  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const choice = target.closest<HTMLElement>("[data-choice]")?.dataset.choice;
    if (choice !== undefined) {
      client.choose(Number(choice));
      return;
    }
    if (target.matches("[data-action=toggle-score]")) {
      showScore = (target as HTMLInputElement).checked;
      repaint();
    }
  });
  client.join();
  repaint();
}

function runDashboard(root: HTMLElement, params: PageParams): void {
  const api = new HttpApi(params.server);
  const channel = new WebSocketChannel(
    sessionSocketUrl(params.server, params.session ?? "", params.token ?? ""),
    socketFactory,
  );
  const client = new ExperimenterClient(channel);

  const repaint = () => {
    if (client.state === null) {
      root.innerHTML = `<p class="waiting">connecting</p>`;
      return;
    }
    root.innerHTML = renderDashboardView({
      state: client.state,
      series: client.series,
      connected: client.connected,
      countdownSeconds: client.countdownSeconds(),
    });
  };

  client.onChange(repaint);
  window.setInterval(repaint, 250);
  root.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (target === null || target.hasAttribute("disabled")) return;
    const action = target.dataset.action;
    if (action === "force-advance") client.forceAdvance();
    if (action === "end") client.end();
    if (action === "download-log") {
      void api
        .logText(params.session ?? "", params.token ?? "")
        .then((text) => {
          const blob = new Blob([text], { type: "application/x-ndjson" });
          const anchor = document.createElement("a");
          anchor.href = URL.createObjectURL(blob);
          anchor.download = `${params.session}.jsonl`;
          anchor.click();
          URL.revokeObjectURL(anchor.href);
        })
        .catch((error) => window.alert(`log download failed: ${error}`));
    }
  });
  repaint();
}

function runLanding(root: HTMLElement, params: PageParams): void {
  root.innerHTML =
    `<h1>restaurant game sessions</h1>` + renderJoinForm() + renderCreateForm();
  const api = new HttpApi(params.server);

  root.addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest<HTMLElement>("[data-action]");
    if (target === null) return;
    event.preventDefault();
    const form = target.closest("form");
    if (form === null) return;
    const fields = new FormData(form);
    const value = (name: string) => String(fields.get(name) ?? "");

    if (target.dataset.action === "join-session" || target.dataset.action === "monitor-session") {
      const role = target.dataset.action === "join-session" ? "play" : "monitor";
      const query = new URLSearchParams({
        server: params.server,
        session: value("session"),
        token: value("token"),
        role,
      });
      window.location.search = query.toString();
      return;
    }

    if (target.dataset.action === "create") {
      const players = Number(value("players"));
      const restaurants = Number(value("restaurants"));
      const humans = Number(value("humans"));
      const utilities = value("utilities")
        ? value("utilities").split(",").map(Number)
        : Array(restaurants).fill(1);
      const body = {
        config: {
          mode: value("mode"),
          n_players: players,
          m_restaurants: restaurants,
          utilities,
          horizon: Number(value("rounds")),
          seed: Number(value("seed")),
          feedback_level: value("feedback"),
        },
        roster: {
          humans,
          bots:
            players - humans > 0
              ? [{ strategy_id: value("strategy"), count: players - humans }]
              : [],
        },
        round_seconds: Number(value("round_seconds")),
      };
      void api
        .createSession(body)
        .then((created) => {
          const lines = [
            `session ${created.session_id}`,
            ...created.join_tokens.map((token, i) => `player ${i}: token ${token}`),
            `experimenter token: ${created.experimenter_token}`,
          ];
          window.alert(lines.join("\n"));
          const query = new URLSearchParams({
            server: params.server,
            session: created.session_id,
            token: created.experimenter_token,
            role: "monitor",
          });
          window.location.search = query.toString();
        })
        .catch((error) => window.alert(`session not created: ${error}`));
    }
  });
}

function main(): void {
  const root = mount();
  const params = readParams();
  if (params.session !== null && params.token !== null && params.role === "play") {
    runParticipant(root, params);
  } else if (params.session !== null && params.token !== null && params.role === "monitor") {
    runDashboard(root, params);
  } else {
    runLanding(root, params);
  }
}

main();
