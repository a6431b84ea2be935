"""``eemcast`` command line: run, summarize, plot, oracle, check.

Environment overrides: ``EEMCAST_OUTPUT_DIR`` (output directory) and
``EEMCAST_WORKERS`` (process pool size).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..netmodel import generate_channels
from ..oracle import MAX_ORACLE_ANTENNAS, chain_report, enumerate_subsets
from ..sca import active_counts_ok, derive_seed, run_variants
from .config import ConfigError, load_config
from .experiment import (
    OK_STATUSES,
    channel_seed,
    read_records,
    run_experiment,
    summarize,
    write_summary,
)
from .plots import emit_plots, plot_convergence, read_traces

log = logging.getLogger("eemcast")


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    path = run_experiment(cfg, resume=args.resume)
    print(path)
    return 0


def _cmd_summarize(args) -> int:
    axes, table = summarize(args.csv)
    if args.out:
        with open(args.out, "w") as fh:
            write_summary(axes, table, fh)
        print(args.out)
    else:
        write_summary(axes, table, sys.stdout)
    return 0


def _cmd_plot(args) -> int:
    csv_path = Path(args.csv)
    out_dir = Path(args.out_dir or csv_path.parent)
    axes, table = summarize(csv_path)
    written = emit_plots(axes, table, out_dir, stem=csv_path.stem) if axes else []
    traces_path = csv_path.with_suffix(".traces.csv")
    if traces_path.exists():
        traces = read_traces(traces_path)
        first = {}
        for (task, trial, variant), phases in sorted(traces.items()):
            if variant == "full" and len(first) < args.traces:
                first[f"trial {trial} (task {task})"] = phases
        if first:
            written.append(plot_convergence(first, out_dir / f"{csv_path.stem}_convergence.svg"))
    for p in written:
        print(p)
    return 0


def _cmd_oracle(args) -> int:
    cfg_exp = load_config(args.config)
    out_dir = cfg_exp.csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    alphas = [float(a) for a in args.alphas.split(",")] if args.alphas else [cfg_exp.sca.alpha]
    status = 0
    for gi, point in enumerate(cfg_exp.grid()):
        cfg, pm, opts = cfg_exp.at(point)
        if cfg.num_antennas > MAX_ORACLE_ANTENNAS:
            print(f"error: oracle limited to {MAX_ORACLE_ANTENNAS} antennas", file=sys.stderr)
            return 2
        for trial in range(cfg_exp.trials):
            H = generate_channels(cfg, channel_seed(cfg_exp.seed, trial))
            seed = derive_seed(cfg_exp.seed, trial)
            orc = enumerate_subsets(cfg, H, pm, opts, seed=seed)
            path = out_dir / f"{cfg_exp.name}_oracle_p{gi}_t{trial}.csv"
            with open(path, "w") as fh:
                orc.to_csv(fh)
            alg = run_variants(cfg, H, pm, opts, seed=seed, variants=("full",))["full"]
            gap = orc.best_ee - alg.ee if alg.status in OK_STATUSES else float("nan")
            print(f"point={point} trial={trial} oracle={orc.best_ee:.9g} "
                  f"algorithm1={alg.ee:.9g} gap={gap:.3g} feasible_patterns={orc.num_feasible}")
            if gap < -1e-4:
                status = 1
            if args.chain:
                rep = chain_report(cfg, H, pm, alphas, opts, seed=seed, oracle=orc)
                for line in rep.lines():
                    print("  " + line)
    return status


def _check_instance(cfg, H, pm, opts, seed, variants) -> list[str]:
    problems = []
    results = run_variants(cfg, H, pm, opts, seed=seed, variants=variants)
    for name, res in results.items():
        tr = np.asarray(res.relaxed_trace)
        if tr.size > 1 and np.min(np.diff(tr)) < -1e-9:
            problems.append(f"{name}: relaxed trace decreases by {-np.min(np.diff(tr)):.3g}")
        if res.status not in OK_STATUSES:
            continue
        sinr = res.sinr
        target = cfg.sinr_targets
        if np.any(sinr < target * (1 - 1e-6)):
            problems.append(f"{name}: SINR below target")
        if np.any(res.antenna_powers > pm.max_antenna_power + 1e-6):
            problems.append(f"{name}: per-antenna power above cap")
        if not active_counts_ok(res, cfg):
            problems.append(f"{name}: fewer active antennas than groups with QoS")
        if abs(res.ee - res.sum_rate / res.total_power) > 1e-9:
            problems.append(f"{name}: EE not recomputable from rate and power")
    return problems


def _cmd_check(args) -> int:
    cfg_exp = load_config(args.config)
    failures = 0
    trials = min(cfg_exp.trials, args.trials) if args.trials else cfg_exp.trials
    for point in cfg_exp.grid():
        cfg, pm, opts = cfg_exp.at(point)
        for trial in range(trials):
            H = generate_channels(cfg, channel_seed(cfg_exp.seed, trial))
            problems = _check_instance(cfg, H, pm, opts, derive_seed(cfg_exp.seed, trial), cfg_exp.variants)
            tag = f"point={point} trial={trial}"
            if problems:
                failures += 1
                for p in problems:
                    print(f"FAIL {tag}: {p}")
            else:
                print(f"ok   {tag}")
    if args.csv:
        _, rows = read_records(args.csv)
        by_trial: dict = {}
        for r in rows:
            if r["status"] in OK_STATUSES and abs(r["ee_nats"] - r["sum_rate_nats"] / r["total_power_w"]) > 1e-9:
                failures += 1
                print(f"FAIL csv trial={r['trial']} {r['variant']}: EE column inconsistent")
            by_trial.setdefault((r["trial"],) + tuple(r.get(a) for a in ("alpha", "P_RF", "N", "gamma_bar_db")),
                                set()).add(r["channel_hash"])
        mixed = [k for k, v in by_trial.items() if len(v) > 1]
        if mixed:
            failures += 1
            print(f"FAIL csv: variants saw different channels in {len(mixed)} trial(s)")
    print(f"{'PASS' if not failures else 'FAIL'}: {failures} failing instance(s)")
    return 0 if not failures else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eemcast", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config and write the trial CSV")
    p.add_argument("config")
    p.add_argument("--resume", action="store_true", help="continue an interrupted run")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("summarize", help="mean EE and bootstrap intervals per grid point and variant")
    p.add_argument("csv")
    p.add_argument("-o", "--out")
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("plot", help="SVG line charts and a convergence plot")
    p.add_argument("csv")
    p.add_argument("--out-dir")
    p.add_argument("--traces", type=int, default=3, help="trials shown in the convergence plot")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("oracle", help="exhaustive subset search for every trial of a config")
    p.add_argument("config")
    p.add_argument("--chain", action="store_true", help="also print the relaxation ordering report")
    p.add_argument("--alphas", help="comma separated alphas for --chain")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("check", help="run the invariant checks on a config")
    p.add_argument("config")
    p.add_argument("--trials", type=int, help="cap on trials per grid point")
    p.add_argument("--csv", help="also validate an existing trial CSV")
    p.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
