"""Command-line front end: ``efhc run``, ``efhc sweep`` and ``efhc verify``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, dump_config, parse_config
from .engine import (CSV_COLUMNS, SWEEP_COLUMNS, RunResult, intercom_monitor, monte_carlo,
                     run_experiment)
from .learning import OracleDidNotConverge, centralized_oracle, global_loss
from .policies import POLICIES
from .topology import sample_snapshot

log = logging.getLogger("efhc")


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_metrics_csv(result: RunResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in result:
            w.writerow([_fmt(x) for x in rec.csv_row()])


def summary_lines(result: RunResult) -> list[str]:
    cfg = result.config
    final = result.final
    lines = [
        f"policy: {cfg.policy}",
        f"devices: {cfg.m}  iterations: {cfg.total_iterations}  r: {result.r:g}",
        f"final mean accuracy: {final.mean_accuracy:.6g}",
        f"cumulative transmission score: {final.score_cum:.6g}",
        f"global loss at average model: {final.global_loss:.6g}",
        f"consensus error (max / mean): {final.consensus_max:.6g} / {final.consensus_mean:.6g}",
    ]
    world = result.extra.get("world")
    if world is not None:
        try:
            oracle = centralized_oracle(world.task, world.shards)
            w_bar = result.extra["w_bar"]
            gap = global_loss(world.task, w_bar, world.shards) - oracle.F
            lines.append(f"optimality gap F(w_bar) - F*: {gap:.6g} (F* = {oracle.F:.6g})")
        except OracleDidNotConverge as err:
            lines.append(f"optimality gap: unavailable ({err})")
    if len(result.broadcasts):
        rate = result.broadcasts.mean(axis=0)
        lines.append("broadcast rate per device: " + " ".join(f"{x:.3f}" for x in rate))
        rep = intercom_monitor(result.broadcasts, cfg.B2_budget)
        lines.append(f"max inter-broadcast gap: {rep.B2_empirical}  implied window: {rep.B_bound}")
        if cfg.B2_budget is not None:
            lines.append(f"devices exceeding B2 = {cfg.B2_budget}: {rep.violations or 'none'}")
    return lines


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    updates = {}
    if getattr(args, "policy", None) and args.command == "run":
        updates["policy"] = args.policy
    if args.seed is not None:
        updates.update({f"seeds.{k}": args.seed for k in cfg.seeds.model_dump()})
    return cfg.with_updates(**updates) if updates else cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_experiment(cfg)
    write_metrics_csv(result, out / "metrics.csv")
    (out / "summary.txt").write_text("\n".join(summary_lines(result)) + "\n")
    (out / "config.json").write_text(dump_config(cfg) + "\n")
    if args.edgelist:
        # snapshots are a pure function of (seed, k), so the trace can be replayed here
        process = result.extra["world"].process
        with open(out / "topology.edgelist", "w") as fh:
            fh.write(f"# m={cfg.m} format: k i j\n")
            for k in range(cfg.total_iterations):
                sample_snapshot(process, k).write_edgelist(fh)
    print(f"wrote {out / 'metrics.csv'} ({len(result)} rows) and {out / 'summary.txt'}")
    return 0


def _grid(text: str) -> list[float]:
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad connectivity grid {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("connectivity grid must hold positive numbers")
    return values


def cmd_sweep(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    policies = [args.policy] if args.policy else None
    rows = monte_carlo(cfg, runs=args.runs, connectivity_grid=args.connectivity_grid,
                       policies=policies)
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row.connectivity), row.policy, row.runs,
                        _fmt(row.mean_accuracy_at_budget), _fmt(row.mean_final_accuracy),
                        _fmt(row.mean_score_cum)])
    for row in rows:
        log.info("connectivity=%g policy=%s topology seeds=%s", row.connectivity, row.policy,
                 row.seeds)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_all

    checks = run_all(seed=args.seed or 0)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.ok]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text("\n".join(c.line() for c in checks) + "\n")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="efhc", description="Event-triggered decentralized "
                                "federated learning simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True, help="JSON config file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--policy", choices=POLICIES)
    run.add_argument("--seed", type=int, help="set every seed to this value")
    run.add_argument("--edgelist", action="store_true",
                     help="also write the per-iteration graph trace as 'k i j' lines")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="Monte Carlo sweep over connectivity and policies")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--policy", choices=POLICIES, help="restrict the sweep to one policy")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--runs", type=int, help="replicas per cell")
    sweep.add_argument("--connectivity-grid", type=_grid, help="comma-separated radii")
    sweep.set_defaults(func=cmd_sweep)

    verify = sub.add_parser("verify", help="run the invariant suites")
    verify.add_argument("--out")
    verify.add_argument("--seed", type=int)
    verify.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "runs", None) is not None and args.runs < 1:
        print("error: --runs must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
