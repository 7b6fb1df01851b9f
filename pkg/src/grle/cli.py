"""Command-line entry point.

    grle run            one episode: task log, slot log, metrics row, checkpoint, figure
    grle sweep          policies x device counts x seeds, aggregate CSV and figures
    grle oracle-compare per-slot normalised reward against exhaustive search
    grle recompute      re-derive a run's metrics from its CSV files

Configuration comes from a TOML file (``--config``), then ``GRLE_<KEY>``
environment variables, then command-line flags. ``--print-default-config``
prints every key with its default. Exit codes: 0 ok, 1 user error,
2 internal error.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import metrics, plotting
from .episode import METRIC_COLUMNS, EpisodeLog, run_episode, write_metrics_csv
from .nn import TopologyMismatch, load_params, save_params
from .policies import POLICY_NAMES, OracleCapExceeded, UnknownPolicy, make_policy
from .recompute import compare_run
from .scenarios import ConfigError, ScenarioConfig, config_from_mapping, load_config

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
USER_ERRORS = (ConfigError, UnknownPolicy, OracleCapExceeded, TopologyMismatch, FileNotFoundError)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _name_list(text: str) -> list[str]:
    return [x.strip().lower() for x in text.split(",") if x.strip()]


def _default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _config(args: argparse.Namespace, **extra) -> ScenarioConfig:
    return load_config(args.config, seed=args.seed, slots=args.slots, oracle_cap=args.oracle_cap,
                       devices=getattr(args, "devices", None), **extra)


def _write_run(log: EpisodeLog, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    log.write_task_csv(out / "log.csv")
    log.write_slot_csv(out / "slots.csv")
    write_metrics_csv(out / "metrics.csv", [log.metrics_row()])
    (out / "config.toml").write_text(log.config.to_toml())


def _summary(row: dict, out: Path) -> str:
    keys = ("policy", "seed", "devices", "slots", "ssp", "avg_accuracy", "avg_throughput",
            "mean_reward", "mean_q_hat", "final_loss")
    parts = []
    for k in keys:
        v = row[k]
        if v == "":
            continue
        parts.append(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}")
    return " ".join(parts) + f" out={out}"


def cmd_run(args: argparse.Namespace) -> int:
    config = _config(args)
    policy = make_policy(args.policy, config)
    actor = getattr(policy, "actor", None)
    if args.init_checkpoint:
        if actor is None:
            raise ConfigError(f"policy {args.policy} has no parameters to load")
        load_params(args.init_checkpoint, actor.params)
    log = run_episode(config, policy, oracle=args.oracle)
    out = Path(args.out)
    _write_run(log, out)
    if actor is not None:
        save_params(out / "checkpoint.npz", actor.params,
                    {"policy": args.policy, "seed": config.seed, "slots": config.slots})
    rewards = [s.reward for s in log.slots]
    traces = {"reward (MA-50)": metrics.moving_average(rewards, 50)}
    if args.oracle:
        traces = {"normalised reward (MA-50)": metrics.moving_average(log.q_hat, 50)}
    plotting.plot_traces(out / "reward.svg", traces, ylabel=next(iter(traces)),
                         title=f"{args.policy}, M={config.devices}")
    print(_summary(log.metrics_row(), out))
    return EXIT_OK


def _sweep_cell(cell: tuple[dict, str, int, int, str]) -> dict:
    values, name, devices, seed, out = cell
    config = config_from_mapping({**values, "devices": devices, "seed": seed})
    log = run_episode(config, make_policy(name, config))
    _write_run(log, Path(out))
    row = log.metrics_row()
    row["reward_ma"] = metrics.moving_average([s.reward for s in log.slots], 50).tolist()
    return row


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _config(args)
    for name in args.policies:
        if name not in POLICY_NAMES:
            raise UnknownPolicy(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")
    out = Path(args.out)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    values = dict(vars(base))
    cells = [(values, name, m, s, str(cells_dir / f"{name}_M{m}_s{s}"))
             for name in args.policies for m in args.device_counts for s in args.seeds]

    results: list[dict | None] = [None] * len(cells)
    failures: list[tuple[tuple, str]] = []
    if args.jobs <= 1:
        for i, cell in enumerate(cells):
            try:
                results[i] = _sweep_cell(cell)
            except Exception as exc:  # keep going, report at the end
                failures.append((cell, f"{type(exc).__name__}: {exc}"))
    else:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_sweep_cell, c) for c in cells]
            for i, (cell, fut) in enumerate(zip(cells, futures)):
                try:
                    results[i] = fut.result()
                except Exception as exc:
                    failures.append((cell, f"{type(exc).__name__}: {exc}"))

    rows = [r for r in results if r is not None]
    write_metrics_csv(out / "sweep.csv", [{k: r[k] for k in METRIC_COLUMNS} for r in rows])
    summary = _sweep_summary(rows)
    with open(out / "sweep_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("policy", "devices", "runs", "ssp", "avg_accuracy", "avg_throughput", "mean_reward"))
        w.writerows(summary)
    if rows:
        _sweep_figures(out, summary, rows)
    for cell, msg in failures:
        _, name, m, s, _ = cell
        print(f"failed cell policy={name} devices={m} seed={s}: {msg}", file=sys.stderr)
    print(f"sweep: {len(rows)} of {len(cells)} cells ok, results in {out / 'sweep.csv'}")
    return EXIT_OK if not failures else EXIT_INTERNAL


def _sweep_summary(rows: list[dict]) -> list[tuple]:
    groups: dict[tuple[str, int], list[dict]] = {}
    for r in rows:
        groups.setdefault((r["policy"], r["devices"]), []).append(r)
    out = []
    for (name, m), rs in groups.items():
        means = [metrics.sequential_mean([r[k] for r in rs])
                 for k in ("ssp", "avg_accuracy", "avg_throughput", "mean_reward")]
        out.append((name, m, len(rs), *means))
    return out


def _sweep_figures(out: Path, summary: list[tuple], rows: list[dict]) -> None:
    labels = {"ssp": "service success probability", "avg_accuracy": "average accuracy",
              "avg_throughput": "throughput (tasks/ms)"}
    for col, (key, label) in enumerate(labels.items(), start=3):
        series: dict[str, tuple[list[int], list[float]]] = {}
        for entry in sorted(summary, key=lambda e: (e[0], e[1])):
            xs, ys = series.setdefault(entry[0], ([], []))
            xs.append(entry[1])
            ys.append(entry[col])
        name = "accuracy" if key == "avg_accuracy" else key.replace("avg_", "")
        plotting.plot_vs_devices(out / f"{name}.svg", series, ylabel=label)
    traces: dict[str, list[float]] = {}
    for r in sorted(rows, key=lambda r: (r["policy"], r["devices"], r["seed"])):
        traces[f"{r['policy']} M={r['devices']} seed={r['seed']}"] = r["reward_ma"]
    plotting.plot_traces(out / "reward.svg", traces, ylabel="slot reward (MA-50)")


def cmd_oracle_compare(args: argparse.Namespace) -> int:
    config = _config(args)
    policy = make_policy(args.policy, config)
    log = run_episode(config, policy, oracle=True)
    out = Path(args.out)
    _write_run(log, out)
    q = log.q_hat
    ma = metrics.moving_average(q, 50)
    with open(out / "qhat.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("slot", "q_hat", "q_hat_ma50"))
        for s, a, b in zip(log.slots, q, ma):
            w.writerow((s.k, a, float(b)))
    plotting.plot_traces(out / "qhat.svg", {args.policy: ma}, ylabel="normalised reward (MA-50)",
                         title=f"{args.policy} vs exhaustive search, M={config.devices}", hline=1.0)
    mean_q = metrics.sequential_mean(q)
    tail = metrics.sequential_mean(q[-500:])
    print(f"policy={args.policy} seed={config.seed} devices={config.devices} slots={len(q)} "
          f"mean_q_hat={mean_q:.6g} last500_q_hat={tail:.6g} out={out}")
    return EXIT_OK


def cmd_recompute(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if not (run_dir / "metrics.csv").exists():
        raise FileNotFoundError(f"{run_dir} holds no metrics.csv")
    diffs = compare_run(run_dir)
    for k, reported, fresh in diffs:
        print(f"MISMATCH {k}: reported {reported!r}, recomputed {fresh!r}")
    if diffs:
        return EXIT_USER
    print(f"ok: metrics in {run_dir / 'metrics.csv'} match the logs")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML scenario file (see --print-default-config)")
    common.add_argument("--seed", type=int, help="scenario and network seed")
    common.add_argument("--slots", type=int, help="number of time slots K")
    common.add_argument("--devices", type=int, help="number of IoT devices M")
    common.add_argument("--oracle-cap", type=int, dest="oracle_cap",
                        help="largest joint action space the exhaustive search will enumerate")
    common.add_argument("--out", default="out", help="output directory (default: out)")

    parser = argparse.ArgumentParser(prog="grle", description=__doc__.split("\n\n")[0],
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--print-default-config", action="store_true",
                        help="print the default configuration as TOML and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("run", parents=[common], help="run one episode")
    p.add_argument("--policy", default="grle", help=f"one of {', '.join(POLICY_NAMES)}")
    p.add_argument("--oracle", action="store_true",
                   help="also solve every slot exhaustively and log the normalised reward")
    p.add_argument("--init-checkpoint", help="start the actor from this checkpoint.npz")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="policies x device counts x seeds")
    p.add_argument("--policies", type=_name_list, default=["grle", "grl"],
                   help="comma-separated policy names (default: grle,grl)")
    p.add_argument("--device-counts", type=_int_list, dest="device_counts", default=[2, 6, 10, 14],
                   help="comma-separated M values (default: 2,6,10,14)")
    p.add_argument("--seeds", type=_int_list, default=[0],
                   help="comma-separated seeds (default: 0)")
    p.add_argument("--jobs", type=int, default=_default_jobs(),
                   help="worker processes (default: available cores)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle-compare", parents=[common],
                       help="normalised reward of a policy against exhaustive search")
    p.add_argument("--policy", default="grle", help=f"one of {', '.join(POLICY_NAMES)}")
    p.set_defaults(func=cmd_oracle_compare)

    p = sub.add_parser("recompute", help="check a run's metrics.csv against its logs")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_recompute)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        sys.stdout.write(ScenarioConfig().to_toml())
        return EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USER
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
