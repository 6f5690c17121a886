"""Command line entry points.

Subcommands: simulate (traces and replicated batches), nash (exhaustive
pure-equilibrium reports), analyze (switch statistics, behaviour bands,
treatment comparison), replay (event log to trace), serve (the live
session server).  Exit codes: 0 success, 2 usage or configuration error,
3 bad or insufficient data, 4 refused capacity guard.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analytics import (
    ClassifierThresholds,
    classify_behavior,
    compare_treatments,
    switch_rate_bars_json,
    switch_statistics,
    utilization_series_csv,
)
from .equilibrium import DEFAULT_MAX_PROFILES, enumerate_pure_nash
from .errors import CapacityGuardError, ConfigError, DataError, KprError
from .game import (
    FeedbackLevel,
    GameConfig,
    Mode,
    equal_utilities,
    ranked_utilities,
)
from .session import Roster, replay_log
from .simulate import (
    Trace,
    default_burn_in,
    parse_mix,
    run_batch,
    run_game,
    trace_from_json,
    utilization_stats,
)
from .strategies import StrategyId, StrategyMix

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CAPACITY = 4


def _parse_param_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_strategy_flag(flag: str) -> tuple[StrategyId, int | None, dict]:
    """NAME[:COUNT][:k=v,k=v,...]; COUNT omitted fills remaining seats."""
    parts = flag.split(":")
    strategy = StrategyId.parse(parts[0])
    count: int | None = None
    params: dict = {}
    rest = parts[1:]
    if rest and "=" not in rest[0]:
        try:
            count = int(rest[0])
        except ValueError:
            raise ConfigError(f"bad count in strategy flag {flag!r}") from None
        if count <= 0:
            raise ConfigError(f"strategy count must be positive in {flag!r}")
        rest = rest[1:]
    if rest:
        if len(rest) > 1 or not rest[0]:
            raise ConfigError(f"malformed strategy flag {flag!r}")
        for pair in rest[0].split(","):
            if "=" not in pair:
                raise ConfigError(f"expected key=value in strategy flag {flag!r}")
            key, _, raw = pair.partition("=")
            params[key.strip()] = _parse_param_value(raw.strip())
    return strategy, count, params


def _build_mix(
    flags: list[str], n_players: int, reserved: int = 0
) -> list[StrategyMix]:
    """Turn --strategy flags into a mix covering n_players - reserved seats."""
    parsed = [parse_strategy_flag(s) for s in flags]
    fills = [p for p in parsed if p[1] is None]
    if len(fills) > 1:
        raise ConfigError("only one --strategy entry may omit its count")
    fixed = sum(p[1] for p in parsed if p[1] is not None)
    available = n_players - reserved
    mix = []
    for strategy, count, params in parsed:
        if count is None:
            count = available - fixed
            if count <= 0:
                raise ConfigError("strategy counts already cover every seat")
        mix.append(StrategyMix(strategy, count, params))
    return mix


def _parse_utilities(raw: str, m: int) -> tuple[float, ...]:
    if raw == "equal":
        return equal_utilities(m)
    if raw == "ranked":
        return ranked_utilities(m)
    try:
        values = tuple(float(part) for part in raw.split(","))
    except ValueError:
        raise ConfigError(f"bad utilities {raw!r}") from None
    return values


def _load_config_file(path: str) -> tuple[dict, list[dict]]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    strategies = data.pop("strategies", [])
    if not isinstance(strategies, list):
        raise ConfigError("config file strategies must be an array")
    return data, strategies


def _config_from_args(args: argparse.Namespace) -> tuple[GameConfig, list[StrategyMix]]:
    """Merge config file and flags (flags win) into a validated config."""
    base: dict = {}
    file_strategies: list[dict] = []
    if args.config:
        base, file_strategies = _load_config_file(args.config)
    if args.mode is not None:
        base["mode"] = args.mode.upper()
    if args.players is not None:
        base["n_players"] = args.players
    if args.restaurants is not None:
        base["m_restaurants"] = args.restaurants
    if args.rounds is not None:
        base["horizon"] = args.rounds
    if args.seed is not None:
        base["seed"] = args.seed
    if args.feedback is not None:
        base["feedback_level"] = args.feedback.upper()
    base.setdefault("mode", "KPR")
    base.setdefault("feedback_level", "OWN_ONLY")
    if "m_restaurants" not in base:
        raise ConfigError("--restaurants (or a config file) is required")
    if args.utilities is not None:
        base["utilities"] = list(_parse_utilities(args.utilities, base["m_restaurants"]))
    elif "utilities" not in base:
        base["utilities"] = list(equal_utilities(base["m_restaurants"]))
    if "n_players" not in base:
        raise ConfigError("--players (or a config file) is required")
    if "horizon" not in base:
        raise ConfigError("--rounds (or a config file) is required")
    if "seed" not in base:
        raise ConfigError("--seed (or a config file) is required")
    config = GameConfig.from_json_dict(base)
    strategy_flags = getattr(args, "strategy", None) or []
    reserved = getattr(args, "humans", 0) or 0
    if strategy_flags:
        mix = _build_mix(strategy_flags, config.n_players, reserved)
    elif file_strategies:
        mix = parse_mix(file_strategies)
    else:
        mix = []
    return config, mix


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--mode", choices=["kpr", "minority"], help="game mode")
    parser.add_argument("--players", type=int, help="number of agents")
    parser.add_argument("--restaurants", type=int, help="number of restaurants")
    parser.add_argument("--rounds", type=int, help="horizon in rounds")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument(
        "--utilities",
        help='comma list, or "equal" / "ranked"',
    )
    parser.add_argument(
        "--feedback",
        choices=["own_only", "occupancy", "full"],
        help="feedback level shown to participants",
    )


def _echo_config(config: GameConfig, mix: list[StrategyMix]) -> None:
    effective = config.to_json_dict()
    effective["strategies"] = [entry.to_json_dict() for entry in mix]
    print(f"config: {json.dumps(effective, sort_keys=True)}")


def _write_text(path: str, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _cmd_simulate(args: argparse.Namespace) -> int:
    config, mix = _config_from_args(args)
    if not mix:
        raise ConfigError("simulate needs at least one --strategy (or config strategies)")
    burn_in = args.burn_in if args.burn_in is not None else default_burn_in(config.horizon)
    if args.replications < 1:
        raise ConfigError("--replications must be at least 1")
    if args.replications == 1:
        trace = run_game(config, mix)
        _echo_config(trace.config, mix)
        mean, std = utilization_stats(trace, burn_in)
        print(
            f"rounds: {trace.horizon_played}  burn-in: {burn_in}  "
            f"mean utilization: {mean:.6f}  std: {std:.6f}"
        )
        if args.output:
            text = trace.to_csv() if args.format == "csv" else trace.to_json()
            _write_text(args.output, text)
            print(f"trace written: {args.output}")
        return EXIT_OK
    if args.format == "csv":
        raise ConfigError("csv output applies to single traces, not batches")
    result = run_batch(config, mix, args.replications, burn_in)
    _echo_config(result.config, list(result.mix))
    print(
        f"replications: {result.replications}  burn-in: {result.burn_in}  "
        f"mean utilization: {result.mean_utilization:.6f}  "
        f"std: {result.utilization_std:.6f}"
    )
    if result.mean_convergence_time is not None:
        print(f"mean convergence time: {result.mean_convergence_time:.2f}")
    if result.attendance_variance_per_agent is not None:
        print(
            "attendance variance per agent: "
            f"{result.attendance_variance_per_agent:.6f}"
        )
    if args.output:
        _write_text(args.output, result.to_json())
        print(f"batch written: {args.output}")
    return EXIT_OK


def _cmd_nash(args: argparse.Namespace) -> int:
    args.strategy = []
    if args.rounds is None and not args.config:
        args.rounds = 1  # horizon is irrelevant to equilibrium structure
    if args.seed is None and not args.config:
        args.seed = 0
    config, _ = _config_from_args(args)
    report = enumerate_pure_nash(config, max_profiles=args.max_profiles)
    print(report.to_text())
    if args.output:
        _write_text(args.output, report.to_json())
        print(f"report written: {args.output}")
    return EXIT_OK


def _load_trace(path: str) -> Trace:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read trace {path}: {exc}") from None
    return trace_from_json(text)


def _format_rate(rate: float, ci: float) -> str:
    import math

    if math.isnan(rate):
        return "n/a"
    return f"{rate:.4f} +- {ci:.4f}"


def _cmd_analyze(args: argparse.Namespace) -> int:
    traces = [_load_trace(path) for path in args.traces]
    primary = traces[0]
    stats = switch_statistics(primary)
    print(
        f"trace: {args.traces[0]}  rounds: {primary.horizon_played}  "
        f"agents: {primary.config.n_players}  source: {primary.source.value}"
    )
    print(
        "switch rate | after win: "
        f"{_format_rate(stats.p_switch_given_win, stats.ci95_win)}"
        "  after loss: "
        f"{_format_rate(stats.p_switch_given_loss, stats.ci95_loss)}"
    )
    thresholds = ClassifierThresholds(stable=args.stable_threshold, noise=args.noise_threshold)
    labels = None
    try:
        labels = classify_behavior(primary, thresholds)
    except DataError as exc:
        print(f"classification skipped: {exc}")
    if labels is not None:
        bands = {"STABLE": 0, "INTERMEDIATE": 0, "NOISE_TRADER": 0}
        for label in labels:
            bands[label.band.value] += 1
        print(
            f"bands: stable {bands['STABLE']}  intermediate {bands['INTERMEDIATE']}  "
            f"noise_trader {bands['NOISE_TRADER']}"
        )
    comparison = None
    if args.compare:
        arm_b = [_load_trace(path) for path in args.compare]
        comparison = compare_treatments(traces, arm_b, args.burn_in)
        print(
            f"comparison: diff {comparison.difference:+.6f}  "
            f"t {comparison.t_statistic:.3f}  dof {comparison.dof:.1f}  "
            f"95% CI [{comparison.ci95_low:.6f}, {comparison.ci95_high:.6f}]"
        )
    if args.output:
        outdir = Path(args.output)
        outdir.mkdir(parents=True, exist_ok=True)
        _write_text(
            str(outdir / "switch_stats.json"),
            json.dumps(stats.to_json_dict(), sort_keys=True, separators=(",", ":")),
        )
        if labels is not None:
            _write_text(
                str(outdir / "behavior_bands.json"),
                json.dumps(
                    [label.to_json_dict() for label in labels],
                    sort_keys=True,
                    separators=(",", ":"),
                ),
            )
        _write_text(str(outdir / "utilization.csv"), utilization_series_csv(primary))
        _write_text(str(outdir / "switch_bars.json"), switch_rate_bars_json(primary))
        if comparison is not None:
            _write_text(
                str(outdir / "comparison.json"),
                json.dumps(
                    comparison.to_json_dict(), sort_keys=True, separators=(",", ":")
                ),
            )
        print(f"analysis written: {outdir}")
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    trace = replay_log(args.log)
    mean = (
        sum(trace.per_round_utilization) / len(trace.per_round_utilization)
        if trace.per_round_utilization
        else float("nan")
    )
    print(
        f"replayed {trace.horizon_played} rounds of session log {args.log}  "
        f"mean utilization: {mean:.6f}"
    )
    if args.output:
        text = trace.to_csv() if args.format == "csv" else trace.to_json()
        _write_text(args.output, text)
        print(f"trace written: {args.output}")
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    from .server import SessionManager, serve

    manager = SessionManager(log_dir=args.log_dir)
    if not args.no_session:
        config, mix = _config_from_args(args)
        roster = Roster(humans=args.humans, bots=tuple(mix))
        engine = manager.create(
            config,
            roster,
            round_seconds=args.round_seconds,
            pause_seconds=args.pause_seconds,
            session_id=args.session_id,
        )
        _echo_config(config, list(engine.roster.bots))
        print(
            json.dumps(
                {
                    "session_id": engine.session_id,
                    "join_tokens": engine.join_tokens,
                    "experimenter_token": engine.experimenter_token,
                    "log_path": str(engine.log_path) if engine.log_path else None,
                },
                sort_keys=True,
            ),
            flush=True,
        )
    print(f"serving on http://{args.host}:{args.port}", flush=True)
    serve(manager, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpr",
        description="Crowd-avoidance game laboratory: simulate, certify, analyse, host.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one game or a replicated batch")
    _add_config_flags(p_sim)
    p_sim.add_argument(
        "--strategy",
        action="append",
        metavar="NAME[:COUNT][:k=v,...]",
        help="strategy mix entry (repeatable); one entry may omit COUNT",
    )
    p_sim.add_argument("--replications", type=int, default=1)
    p_sim.add_argument("--burn-in", type=int, default=None)
    p_sim.add_argument("--output", help="file for the trace or batch result")
    p_sim.add_argument("--format", choices=["json", "csv"], default="json")
    p_sim.set_defaults(func=_cmd_simulate)

    p_nash = sub.add_parser("nash", help="enumerate pure equilibria exhaustively")
    _add_config_flags(p_nash)
    p_nash.add_argument("--max-profiles", type=int, default=DEFAULT_MAX_PROFILES)
    p_nash.add_argument("--output", help="file for the JSON report")
    p_nash.set_defaults(func=_cmd_nash)

    p_an = sub.add_parser("analyze", help="switch statistics, bands, comparisons")
    p_an.add_argument("traces", nargs="+", help="trace JSON files (treatment arm A)")
    p_an.add_argument(
        "--compare", nargs="+", metavar="TRACE", help="treatment arm B trace files"
    )
    p_an.add_argument("--burn-in", type=int, default=None)
    p_an.add_argument("--stable-threshold", type=float, default=0.02)
    p_an.add_argument("--noise-threshold", type=float, default=0.5)
    p_an.add_argument("--output", help="directory for analysis files")
    p_an.set_defaults(func=_cmd_analyze)

    p_rep = sub.add_parser("replay", help="rebuild a trace from a session log")
    p_rep.add_argument("log", help="JSONL event log file")
    p_rep.add_argument("--output", help="file for the reconstructed trace")
    p_rep.add_argument("--format", choices=["json", "csv"], default="json")
    p_rep.set_defaults(func=_cmd_replay)

    p_srv = sub.add_parser("serve", help="host live sessions over HTTP/WebSocket")
    _add_config_flags(p_srv)
    p_srv.add_argument(
        "--strategy",
        action="append",
        metavar="NAME[:COUNT][:k=v,...]",
        help="bot strategy mix entry (repeatable)",
    )
    p_srv.add_argument("--humans", type=int, default=0, help="human seats")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)
    p_srv.add_argument("--round-seconds", type=float, default=15.0)
    p_srv.add_argument("--pause-seconds", type=float, default=0.0)
    p_srv.add_argument("--log-dir", default="session-logs")
    p_srv.add_argument("--session-id", default=None)
    p_srv.add_argument(
        "--no-session", action="store_true", help="start the server with no session"
    )
    p_srv.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CapacityGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KprError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
