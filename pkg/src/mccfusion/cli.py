"""Command-line entry point.

Runs a scenario preset as a paired-seed Monte Carlo and writes three
files into ``--out``:

``<name>.csv``
    the reference and the a-priori x/y estimate of every filter for run 0,
    one row per step after burn-in (``xref,yref,kf-x,kf-y,mcckf-x,mcckf-y``
    with the default filters)
``<name>-stats.txt`` / ``<name>-stats.csv``
    mean, median, 75%tile and 25%tile of the per-run x/y RMSE

``<name>`` is ``non-intermittent`` for scenario 1 and ``intermittent``
for scenario 2. The exit status is 0 only if every run finished and every
file was written.
"""

import argparse
import os
import sys
from pathlib import Path

from .config import RunConfig, build_config, describe_keys, parse_config, with_overrides
from .errors import ConfigError, InvalidParameterError
from .simharness import FILTERS, StatsTable, run_monte_carlo

OUTPUT_NAMES = {1: "non-intermittent", 2: "intermittent"}
STAT_ROWS = (("mean", "mean"), ("median", "median"), ("75%tile", "p75"), ("25%tile", "p25"))


def _float(v) -> str:
    # repr gives the shortest round-tripping decimal and ignores the locale
    return repr(float(v))


def emit_trajectory_csv(logs, path, burn_in: int = 0, filters=None):
    """Write reference and per-filter x/y estimates, one row per step.

    ``logs`` maps filter name to an index-aligned :class:`EpisodeLog`.
    Rows ``burn_in`` onwards are written; the reference columns come from
    the first log.
    """
    filters = [f for f in FILTERS if f in logs] if filters is None else list(filters)
    if not filters:
        raise InvalidParameterError("need at least one log")
    first = logs[filters[0]]
    n = len(first)
    if any(len(logs[f]) != n for f in filters):
        raise InvalidParameterError("logs are not index-aligned")
    cols = [first.reference[burn_in:, 0], first.reference[burn_in:, 1]]
    header = ["xref", "yref"]
    for f in filters:
        header += [f"{f}-x", f"{f}-y"]
        cols += [logs[f].estimate[burn_in:, 0], logs[f].estimate[burn_in:, 1]]
    lines = [",".join(header)]
    lines += [",".join(_float(c[k]) for c in cols) for k in range(n - burn_in)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def stats_cells(table: StatsTable):
    """Header and 4-decimal rows shared by the text and CSV outputs."""
    header = ["", *(f"{f}-{axis}" for f in table.filters for axis in ("x", "y"))]
    rows = []
    for label, key in STAT_ROWS:
        rows.append([label, *(f"{table.stats[f][axis][key]:.4f}"
                              for f in table.filters for axis in ("x", "y"))])
    return header, rows


def emit_stats(table: StatsTable, path):
    """Write ``<path>.txt`` (aligned table) and ``<path>.csv`` with equal values."""
    missing = [f for f in table.filters if f not in table.stats]
    if missing:
        raise InvalidParameterError(f"no completed runs for {', '.join(missing)}")
    path = Path(path)
    header, rows = stats_cells(table)
    width = max(len(c) for c in header + [c for r in rows for c in r])
    title = f"Position RMSE [m], scenario {table.scenario}, {table.runs} runs"
    text = [title, "  ".join(c.rjust(width) for c in header)]
    text += ["  ".join(c.rjust(width) for c in r) for r in rows]
    txt_path, csv_path = path.with_suffix(".txt"), path.with_suffix(".csv")
    txt_path.write_text("\n".join(text) + "\n", encoding="utf-8", newline="\n")
    csv = [",".join(["stat", *header[1:]])] + [",".join(r) for r in rows]
    csv_path.write_text("\n".join(csv) + "\n", encoding="utf-8", newline="\n")
    return txt_path, csv_path


def _filter_list(text):
    names = [t.strip() for t in text.split(",") if t.strip()]
    bad = [n for n in names if n not in FILTERS]
    if not names or bad:
        raise argparse.ArgumentTypeError(f"choose a non-empty subset of {','.join(FILTERS)}")
    return names


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mccfusion",
        description="Closed-loop quadrotor Monte Carlo comparing the Kalman filter and MCC-KF.",
        epilog="config keys (flat 'key = value', [section] headers allowed):\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", type=Path, help="config file; missing keys take their defaults")
    p.add_argument("--scenario", type=int, choices=(1, 2),
                   help="1: every sensor every step, 2: UWB and camera with probability 0.1")
    p.add_argument("--filters", type=_filter_list, help="comma-separated, default kf,mcckf")
    p.add_argument("--seed", type=_seed, help="master seed (default 0)")
    p.add_argument("--runs", type=_positive, help="Monte-Carlo runs per filter (default 20)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default .)")
    p.add_argument("--workers", type=_positive, default=os.cpu_count() or 1,
                   help="worker processes (default: CPU count; results do not depend on it)")
    return p


def run(cfg: RunConfig, out: Path, workers: int = 1):
    """Run the Monte Carlo and write the output files; returns (paths, table)."""
    table = run_monte_carlo(cfg.scenario, cfg.filters, n_runs=cfg.runs, keep_logs=True,
                            workers=workers)
    out.mkdir(parents=True, exist_ok=True)
    name = OUTPUT_NAMES[cfg.scenario.scenario]
    paths = []
    if all(f in table.logs for f in cfg.filters):
        traj = out / f"{name}.csv"
        emit_trajectory_csv(table.logs, traj, cfg.scenario.burn_in, cfg.filters)
        paths.append(traj)
    if all(f in table.stats for f in cfg.filters):
        paths += emit_stats(table, out / f"{name}-stats")
    return paths, table


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config) if args.config else build_config({})
        cfg = with_overrides(cfg, scenario=args.scenario, filters=args.filters,
                             seed=args.seed, runs=args.runs)
        paths, table = run(cfg, args.out, args.workers)
    except (ConfigError, InvalidParameterError) as err:
        print(f"mccfusion: error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"mccfusion: cannot write output: {err}", file=sys.stderr)
        return 3
    for filt, failed in table.failures.items():
        for j, msg in failed:
            print(f"mccfusion: {filt} run {j} aborted: {msg}", file=sys.stderr)
    for path in paths:
        print(path)
    if table.failure_count:
        print(f"mccfusion: {table.failure_count} run(s) failed", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
