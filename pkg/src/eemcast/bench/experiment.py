"""Seeded Monte-Carlo trials, CSV output and aggregation."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..netmodel import generate_channels
from ..oracle import enumerate_subsets
from ..sca import derive_seed, run_variants
from .config import SWEEP_AXES, ExperimentConfig

log = logging.getLogger(__name__)

SCHEMA = "eemcast-trials v1"
INCOMPLETE_MARKER = "# incomplete: rerun with --resume"

RECORD_FIELDS = [
    "trial", "seed", "variant", "status", "ee_nats", "ee_bits", "sum_rate_nats",
    "tx_power_w", "total_power_w", "mean_active_antenna_power_w",
    "active_per_bs", "active_total", "near_binary", "relaxed_objective",
    "sca_iterations", "restorations", "channel_hash", "oracle_ee",
]


@dataclass
class TrialRecord:
    trial: int
    seed: int
    variant: str
    status: str
    ee_nats: float
    ee_bits: float
    sum_rate_nats: float
    tx_power_w: float
    total_power_w: float
    mean_active_antenna_power_w: float
    active_per_bs: str
    active_total: int
    near_binary: int
    relaxed_objective: float
    sca_iterations: int
    restorations: int
    channel_hash: str
    oracle_ee: float | None = None


def channel_seed(master: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(trial)])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _task(args):
    """All variants of one (grid point, trial); runs in a worker process."""
    cfg_exp, point, trial = args
    cfg, pm, opts = cfg_exp.at(point)
    t0 = time.perf_counter()
    H = generate_channels(cfg, channel_seed(cfg_exp.seed, trial))
    init_seed = derive_seed(cfg_exp.seed, trial)
    results = run_variants(cfg, H, pm, opts, seed=init_seed, variants=cfg_exp.variants)
    oracle_ee = None
    if cfg_exp.oracle:
        oracle_ee = enumerate_subsets(cfg, H, pm, opts, seed=init_seed).best_ee
    digest = H.digest()
    records, traces = [], []
    for variant in cfg_exp.variants:
        res = results[variant]
        active = res.a.active_counts() if res.a is not None and res.w is not None else ()
        n_active = int(sum(active))
        its = res.iterations
        rec = TrialRecord(
            trial=trial,
            seed=int(cfg_exp.seed),
            variant=variant,
            status=res.status,
            ee_nats=float(res.ee),
            ee_bits=float(res.ee_bits),
            sum_rate_nats=float(res.sum_rate),
            tx_power_w=float(res.transmit_power),
            total_power_w=float(res.total_power),
            mean_active_antenna_power_w=float(res.transmit_power / n_active) if n_active else 0.0,
            active_per_bs=";".join(str(c) for c in active),
            active_total=n_active,
            near_binary=res.near_binary_count(opts.epsilon),
            relaxed_objective=float(res.relaxed_trace[-1]) if res.relaxed_trace else float("nan"),
            sca_iterations=int(its.get("relaxed", 0) + its.get("refit", 0)),
            restorations=int(res.restorations),
            channel_hash=digest,
            oracle_ee=oracle_ee,
        )
        records.append(rec)
        for phase, tr in (("relaxed", res.relaxed_trace), ("refit", res.refit_trace)):
            for it, val in enumerate(tr):
                traces.append((trial, variant, phase, it + 1, float(val)))
    return point, records, traces, time.perf_counter() - t0


def tasks(cfg_exp: ExperimentConfig):
    return [(cfg_exp, point, trial) for point in cfg_exp.grid() for trial in range(cfg_exp.trials)]


def _header(cfg_exp: ExperimentConfig) -> list[str]:
    axes = [a for a in SWEEP_AXES if a in cfg_exp.sweep]
    return [
        f"# {SCHEMA} name={cfg_exp.name} trials={cfg_exp.trials} seed={cfg_exp.seed} "
        f"variants={','.join(cfg_exp.variants)}",
        ",".join(axes + RECORD_FIELDS),
    ]


def _rows(cfg_exp, point, records) -> list[str]:
    axes = [a for a in SWEEP_AXES if a in cfg_exp.sweep]
    out = []
    for rec in records:
        d = asdict(rec)
        vals = [_fmt(point[a]) for a in axes] + [_fmt(d[f]) for f in RECORD_FIELDS]
        out.append(",".join(vals))
    return out


def run_experiment(cfg_exp: ExperimentConfig, resume: bool = False) -> Path:
    """Run every (grid point, trial) task and write the trial CSV.

    Sidecars next to the CSV: ``*.traces.csv`` (objective traces) and
    ``*.timing.csv`` (wall time per task, kept out of the main file so that
    reruns are byte-identical).
    """
    path = cfg_exp.csv_path
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_path = path.with_suffix(".traces.csv")
    timing_path = path.with_suffix(".timing.csv")
    all_tasks = tasks(cfg_exp)
    per_task = len(cfg_exp.variants)
    header = _header(cfg_exp)

    done = 0
    kept_rows: list[str] = []
    if resume and path.exists():
        lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
        if lines and lines[0] == header[1]:
            body = lines[1:]
            done = len(body) // per_task
            kept_rows = body[: done * per_task]
        log.info("resuming after %d of %d tasks", done, len(all_tasks))

    pending = all_tasks[done:]
    with open(path, "w") as fh, open(trace_path, "a" if done else "w") as tfh, \
            open(timing_path, "a" if done else "w") as wfh:
        fh.write("\n".join(header + kept_rows) + "\n")
        if not done:
            tfh.write("task,trial,variant,phase,iteration,objective\n")
            wfh.write("task,wall_time_s\n")
        fh.flush()
        workers = cfg_exp.num_workers
        pool = ProcessPoolExecutor(workers) if workers > 1 else None
        try:
            results = pool.map(_task, pending) if pool else map(_task, pending)
            for idx, (point, records, traces, wall) in enumerate(results, start=done):
                fh.write("\n".join(_rows(cfg_exp, point, records)) + "\n")
                fh.flush()
                for tr in traces:
                    tfh.write(f"{idx},{tr[0]},{tr[1]},{tr[2]},{tr[3]},{tr[4]!r}\n")
                wfh.write(f"{idx},{wall:.3f}\n")
        except KeyboardInterrupt:
            fh.write(INCOMPLETE_MARKER + "\n")
            raise
        finally:
            if pool:
                pool.shutdown(cancel_futures=True)
    return path


def read_records(path) -> tuple[list[str], list[dict]]:
    """Return (sweep axes, rows) of a trial CSV; numeric columns are converted."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    axes = [c for c in reader.fieldnames if c in SWEEP_AXES]
    rows = []
    for row in reader:
        for key in axes + ["ee_nats", "ee_bits", "sum_rate_nats", "tx_power_w", "total_power_w",
                           "mean_active_antenna_power_w", "relaxed_objective", "oracle_ee"]:
            row[key] = float(row[key]) if row.get(key) not in (None, "") else None
        for key in ("trial", "seed", "active_total", "near_binary", "sca_iterations", "restorations"):
            row[key] = int(row[key])
        rows.append(row)
    return axes, rows


OK_STATUSES = ("ok", "refit-infeasible-fallback")


def bootstrap_ci(values, level: float = 0.95, resamples: int = 2000, seed: int = 0):
    values = np.asarray(values, float)
    if values.size == 0:
        return float("nan"), float("nan")
    if values.size == 1:
        return float(values[0]), float(values[0])
    rng = np.random.default_rng(seed)
    means = values[rng.integers(0, values.size, (resamples, values.size))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def summarize(path) -> tuple[list[str], list[dict]]:
    """Mean EE with a 95% bootstrap interval per (grid point, variant)."""
    axes, rows = read_records(path)
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        key = tuple(row[a] for a in axes) + (row["variant"],)
        groups.setdefault(key, []).append(row)
    table = []
    for key, grp in groups.items():
        ok = [r for r in grp if r["status"] in OK_STATUSES]
        ee = [r["ee_nats"] for r in ok]
        lo, hi = bootstrap_ci(ee)
        entry = dict(zip(axes, key[:-1]))
        entry.update(
            variant=key[-1],
            n=len(grp),
            n_ok=len(ok),
            mean_ee_nats=float(np.mean(ee)) if ee else float("nan"),
            ci_lo=lo,
            ci_hi=hi,
            mean_ee_bits=float(np.mean(ee) / np.log(2)) if ee else float("nan"),
            mean_near_binary=float(np.mean([r["near_binary"] for r in ok])) if ok else float("nan"),
            mean_active=float(np.mean([r["active_total"] for r in ok])) if ok else float("nan"),
            mean_tx_power_w=float(np.mean([r["tx_power_w"] for r in ok])) if ok else float("nan"),
            mean_active_antenna_power_w=(
                float(np.mean([r["mean_active_antenna_power_w"] for r in ok])) if ok else float("nan")
            ),
        )
        gaps = [r["oracle_ee"] - r["ee_nats"] for r in ok if r["oracle_ee"] is not None]
        entry["mean_oracle_gap"] = float(np.mean(gaps)) if gaps else None
        table.append(entry)
    return axes, table


def write_summary(axes, table, fh) -> None:
    if not table:
        return
    fields = list(table[0].keys())
    writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for entry in table:
        writer.writerow({k: _fmt(v) for k, v in entry.items()})
