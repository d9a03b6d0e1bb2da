"""Chart rendering for the report drivers. Every figure lands next to the
CSV it visualizes; the CSVs stay the authoritative plot-ready output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_eval_scatter(rows, path, w: float, title: str = "") -> None:
    """Baseline vs method expansions, log-log, with the break-even line."""
    paired = [(r.baseline_expansions, r.method_expansions) for r in rows
              if r.baseline_status == "solved" and r.method_status == "solved"]
    fig, ax = plt.subplots(figsize=(5, 5))
    if paired:
        xs, ys = zip(*paired)
        ax.scatter(xs, ys, s=18, alpha=0.7, edgecolors="none")
        lo = min(min(xs), min(ys))
        hi = max(max(xs), max(ys))
        ax.plot([lo, hi], [lo, hi], "k--", linewidth=1, label="break-even")
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(f"weighted A* (w={w:g}) expansions")
    ax.set_ylabel("residual-guided expansions")
    ax.set_title(title or "Per-problem search work")
    ax.legend(loc="upper left")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_bench_lines(k_values, series, path) -> None:
    """Expansions-per-sample vs K for the three collection methods.
    ``series`` maps label -> list aligned with k_values."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for label, values in series.items():
        ax.plot(k_values, values, marker="o", label=label)
    ax.set_xlabel("local window size K (cells)")
    ax.set_ylabel("expansions per sample")
    ax.set_yscale("log")
    ax.set_xticks(list(k_values))
    ax.set_title("Collection work per training sample")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_online_curve(rounds, speedups, path, w: float) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(rounds, speedups, marker="o")
    ax.axhline(1.0, color="k", linewidth=1, linestyle="--")
    ax.set_xlabel("retraining round")
    ax.set_ylabel(f"median speedup vs weighted A* (w={w:g})")
    ax.set_xticks(list(rounds))
    ax.set_title("Online improvement from planning alone")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
