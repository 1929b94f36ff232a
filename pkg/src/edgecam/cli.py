"""Command-line entry point."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import harness
from .energy import load_trace, synth_solar_trace, write_trace
from .gpforecast import ForecastWindow, backtest


def _base_config(args) -> harness.ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ExperimentConfig()
    over = harness.parse_overrides(args.set or [])
    if getattr(args, "days", None) is not None:
        over["days"] = args.days
        if "warmup_days_excluded" not in over and cfg.warmup_days_excluded >= args.days:
            over["warmup_days_excluded"] = 0
    if getattr(args, "policies", None):
        over["policies"] = args.policies
    return replace(cfg, **over)


def _print_reports(reports) -> None:
    for r in reports:
        print(f"{r.policy:12s} {r.cost_label:18s} recall {r.recall_mean:.4f} +- {r.recall_std:.4f}  "
              f"downtime {r.downtime_mean:8.2f} min/day  zero-downtime days "
              f"{r.zero_downtime_fraction():.2f}")


def cmd_simulate(args) -> int:
    cfg = _base_config(args)
    over = {}
    if args.policy:
        over["policy"] = args.policy
    if args.seed is not None:
        over.update(seed_base=args.seed, seeds=1)
    cfg = replace(cfg, **over)
    report = harness.run_experiment(cfg)
    harness.emit_report([report], args.out)
    _print_reports([report])
    return 0


def cmd_sweep_static(args) -> int:
    cfg = _base_config(args)
    try:
        costs = [float(c) for c in args.costs.split(",") if c.strip()]
    except ValueError:
        raise harness.ConfigError("costs: expected comma-separated numbers") from None
    reports = harness.sweep_static_cost(cfg, costs)
    harness.emit_report(reports, args.out)
    _print_reports(reports)
    return 0


def cmd_dynamic(args) -> int:
    cfg = _base_config(args)
    reports = harness.run_dynamic_cost(cfg)
    harness.emit_report(reports, args.out)
    _print_reports(reports)
    return 0


def cmd_backtest(args) -> int:
    trace = load_trace(args.trace)
    window = ForecastWindow(fit_days=args.fit_days, horizon_h=args.horizon_h)
    first = int(-(-(trace.start + window.fit_days * 86400.0) // 86400.0))
    last = int(trace.end // 86400.0)
    days = min(args.days, last - first) if args.days else last - first
    if days < 1:
        raise ValueError("trace too short: need fit_days of history plus one test day")
    result = backtest([trace], days, window=window, start_day=first)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "forecast_log.csv")
    print(f"days {days}  rmse_gp {result.rmse_gp:.1f} J  rmse_persistence {result.rmse_persistence:.1f} J")
    return 0


def cmd_synth(args) -> int:
    trace = synth_solar_trace(args.days, seed=args.seed, camera=args.camera,
                              history_days=args.history_days)
    write_trace(trace, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgecam", description="Energy-harvesting camera network simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--days", type=int)
        sp.add_argument("--out", default=out_default)

    sp = sub.add_parser("simulate", help="run one policy over the configured seeds")
    common(sp, "results/simulate")
    sp.add_argument("--policy")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep-static", help="static transmission-cost sweep")
    common(sp, "results/static")
    sp.add_argument("--costs", default="25,45,65,85", help="nJ/bit values")
    sp.add_argument("--policies")
    sp.set_defaults(func=cmd_sweep_static)

    sp = sub.add_parser("dynamic-cost", help="per-epoch random transmission cost")
    common(sp, "results/dynamic")
    sp.add_argument("--policies")
    sp.set_defaults(func=cmd_dynamic)

    sp = sub.add_parser("backtest-gp", help="rolling GP forecast backtest on a harvest trace")
    sp.add_argument("--trace", required=True)
    sp.add_argument("--days", type=int, default=0, help="test days (0 = all available)")
    sp.add_argument("--fit-days", type=float, default=7.0)
    sp.add_argument("--horizon-h", type=float, default=6.0)
    sp.add_argument("--out", default="results/backtest")
    sp.set_defaults(func=cmd_backtest)

    sp = sub.add_parser("synth-trace", help="write a synthetic solar harvest trace")
    sp.add_argument("--days", type=int, default=15)
    sp.add_argument("--history-days", type=int, default=7)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--camera", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI reports every failure on one line
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
