"""Figure rendering for the CLI report paths.

Each sweep or simulation command writes a PNG next to its CSV so results
can be eyeballed without a separate plotting step.  Figures are rendered
headless via the Agg backend.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_weak(rows: list[dict], path: str) -> None:
    """Weak-scaling efficiency vs width, one line per particle count."""
    fig, ax = plt.subplots(figsize=(7, 5))
    by_n: dict[int, list[dict]] = {}
    for row in rows:
        by_n.setdefault(row["n"], []).append(row)
    for n, series in sorted(by_n.items()):
        series = sorted(series, key=lambda r: r["width"])
        ax.plot(
            [r["width"] for r in series],
            [r["efficiency_vs_width1"] for r in series],
            marker="o",
            label=f"n = {n}",
        )
    ax.set_xscale("log", base=2)
    ax.set_ylim(bottom=0.0)
    ax.set_xlabel("width (PEs)")
    ax.set_ylabel("weak scaling efficiency vs width 1")
    ax.set_title(f"Weak scaling, {rows[0]['axis']} axis")
    ax.grid(True, linestyle="--", alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_strong(rows: list[dict], path: str) -> None:
    """Strong-scaling total cycles vs width with the minimum marked."""
    rows = sorted(rows, key=lambda r: r["width"])
    widths = [r["width"] for r in rows]
    cycles = [r["total_cycles"] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.plot(widths, cycles, marker="o")
    best = min(rows, key=lambda r: r["total_cycles"])
    ax.scatter(
        [best["width"]],
        [best["total_cycles"]],
        marker="*",
        s=220,
        color="crimson",
        zorder=3,
        label=f"minimum at width {best['width']}",
    )
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("width (PEs)")
    ax.set_ylabel("modeled total cycles")
    ax.set_title(f"Strong scaling, {rows[0]['axis']} axis")
    ax.grid(True, linestyle="--", alpha=0.4)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_fullsim(rows: list[dict], path: str) -> None:
    """Per-regime figure of merit and peak load factors."""
    regimes = [r["regime"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4.5))
    ax1.bar(regimes, [r["fom_lookups_per_s"] for r in rows], color="#4878a8")
    ax1.set_ylabel("lookups / s")
    ax1.set_title("Figure of merit")
    ax1.tick_params(axis="x", rotation=15)
    x = range(len(rows))
    width = 0.38
    ax2.bar(
        [i - width / 2 for i in x],
        [r["peak_load_before"] for r in rows],
        width,
        label="after sort",
    )
    ax2.bar(
        [i + width / 2 for i in x],
        [r["peak_load_after"] for r in rows],
        width,
        label="after diffusion",
    )
    ax2.axhline(1.0, color="gray", linestyle="--", linewidth=1)
    ax2.set_xticks(list(x), regimes)
    ax2.set_ylabel("peak load factor")
    ax2.set_title("Load imbalance")
    ax2.tick_params(axis="x", rotation=15)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
