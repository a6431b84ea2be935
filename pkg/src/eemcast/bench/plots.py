"""Static SVG charts built from summary tables and trace sidecars."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Fixed metadata keeps the SVG bytes stable between runs.
_SVG_META = {"Date": None, "Creator": None}
matplotlib.rcParams["svg.hashsalt"] = "eemcast"

_LABELS = {
    "alpha": r"$\alpha$",
    "P_RF": r"$P_{RF}$ [W]",
    "N": "antennas per BS",
    "gamma_bar_db": r"$\bar\Gamma$ [dB]",
}


def _series(axes, table, x_axis):
    """Group rows into lines keyed by (variant, values of the other axes)."""
    others = [a for a in axes if a != x_axis]
    lines: dict[tuple, list[tuple[float, dict]]] = {}
    for row in table:
        key = (row["variant"],) + tuple((a, row[a]) for a in others)
        lines.setdefault(key, []).append((float(row[x_axis]), row))
    for pts in lines.values():
        pts.sort(key=lambda p: p[0])
    return lines


def emit_plots(axes, table, out_dir, stem: str = "summary", metric: str = "mean_ee_nats") -> list[Path]:
    """One line chart per sweep axis with one series per variant."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for x_axis in axes:
        fig, ax = plt.subplots(figsize=(6, 4))
        for key, pts in sorted(_series(axes, table, x_axis).items(), key=lambda kv: str(kv[0])):
            label = key[0] + "".join(f", {a}={v:g}" for a, v in key[1:])
            xs = [p[0] for p in pts]
            ys = [p[1][metric] for p in pts]
            line, = ax.plot(xs, ys, marker="o", label=label)
            if metric == "mean_ee_nats" and all("ci_lo" in p[1] for p in pts):
                ax.fill_between(xs, [p[1]["ci_lo"] for p in pts], [p[1]["ci_hi"] for p in pts],
                                color=line.get_color(), alpha=0.15, linewidth=0)
        ax.set_xlabel(_LABELS.get(x_axis, x_axis))
        ax.set_ylabel("energy efficiency [nats/J]" if metric == "mean_ee_nats" else metric)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{stem}_{x_axis}.svg"
        fig.savefig(path, format="svg", metadata=_SVG_META)
        plt.close(fig)
        written.append(path)
    return written


def read_traces(path) -> dict[tuple[int, int, str], dict[str, list[float]]]:
    """Trace sidecar as ``{(task, trial, variant): {phase: [objective, ...]}}``."""
    out: dict = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            key = (int(row["task"]), int(row["trial"]), row["variant"])
            out.setdefault(key, {}).setdefault(row["phase"], []).append(float(row["objective"]))
    return out


def plot_convergence(traces, out_path, final_ee: dict | None = None) -> Path:
    """Relaxed objective per iteration, with the post-refit EE as a flat line.

    ``traces`` maps a label to ``{"relaxed": [...], "refit": [...]}``; the flat
    line uses ``final_ee[label]`` when given, else the last refit value.
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for label in sorted(traces, key=str):
        phases = traces[label]
        relaxed = phases.get("relaxed", [])
        if not relaxed:
            continue
        line, = ax.plot(range(1, len(relaxed) + 1), relaxed, marker=".", label=f"{label} relaxed")
        flat = (final_ee or {}).get(label)
        if flat is None and phases.get("refit"):
            flat = phases["refit"][-1]
        if flat is not None:
            ax.axhline(flat, color=line.get_color(), linestyle="--", linewidth=1,
                       label=f"{label} after refit")
    ax.set_xlabel("SCA iteration")
    ax.set_ylabel("energy efficiency [nats/J]")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return out_path
