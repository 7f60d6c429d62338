"""Command-line experiment runner.

    mfg-suite run --config cfg.yaml --out DIR [--seed S] [--jobs N] [--timing]
    mfg-suite sweep --config cfg.yaml --out DIR [--jobs N]
    mfg-suite compare DIR [DIR ...] [--json]

`run` executes its config (expanding the sweep section if one is present;
`sweep` requires one). Sweep points run in a process pool (--jobs) and write
into disjoint subdirectories named key=value, one level per swept parameter.
--out defaults to $MFG_SUITE_OUT, then ./mfg-runs.
"""

from __future__ import annotations

import argparse
import json
import sys
from multiprocessing import get_context
from pathlib import Path

from .runner import (
    ConfigError,
    MissingArtifact,
    default_output_root,
    execute_run,
    expand_sweep,
    load_config,
    read_exploitability,
)


def _run_point(job):
    cfg, out_dir, timing = job
    execute_run(cfg, out_dir, timing=timing)
    return str(out_dir)


def _cmd_run(args, require_sweep: bool) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if require_sweep and not cfg.get("sweep"):
        raise ConfigError("sweep: section required by the sweep command")
    out_root = Path(args.out) if args.out else default_output_root()
    jobs = []
    for rel, resolved in expand_sweep(cfg):
        if args.seed is not None:
            resolved["seed"] = args.seed
        jobs.append((resolved, out_root / rel, args.timing))
    if args.jobs > 1 and len(jobs) > 1:
        with get_context("spawn").Pool(args.jobs) as pool:
            done = pool.map(_run_point, jobs)
    else:
        done = [_run_point(job) for job in jobs]
    for path in done:
        print(path)
    return 0


def _cmd_compare(args) -> int:
    rows = []
    for run_dir in args.directories:
        gaps = read_exploitability(run_dir)
        rows.append(
            {"run": str(run_dir), "final": float(gaps[-1]), "best": float(gaps.min()),
             "iterations": int(len(gaps))}
        )
    rows.sort(key=lambda r: r["final"])
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        width = max(len(r["run"]) for r in rows)
        print(f"{'run':<{width}}  {'final':>12}  {'best':>12}  iters")
        for r in rows:
            print(f"{r['run']:<{width}}  {r['final']:>12.6g}  {r['best']:>12.6g}  {r['iterations']:>5}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mfg-suite", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    for verb in ("run", "sweep"):
        p = sub.add_parser(verb)
        p.add_argument("--config", required=True, help="YAML config file")
        p.add_argument("--out", default=None, help="output root (default $MFG_SUITE_OUT)")
        p.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--timing", action="store_true",
                       help="write measured wall seconds (breaks byte-reproducibility)")

    p = sub.add_parser("compare")
    p.add_argument("directories", nargs="+", help="run directories to summarize")
    p.add_argument("--json", action="store_true", help="machine-readable output")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, require_sweep=False)
        if args.command == "sweep":
            return _cmd_run(args, require_sweep=True)
        return _cmd_compare(args)
    except (ConfigError, MissingArtifact) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # solver assertion failures et al: nonzero exit
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
