"""Offline rendering of metrics into figures and delimited files.

Everything here consumes the metrics rows written by the harness (or the
in-memory equivalents) and produces PNG figures plus CSV next to them; no
training state is required, so reports can be regenerated at any time from
a run directory.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _rows(records) -> list[dict]:
    return [r if isinstance(r, dict) else r.to_dict() for r in records]


# ======================================================================
# Single-run figures
# ======================================================================


def render_run_figures(records, out_dir: str) -> list[str]:
    """Training curves, LR schedule, and (when hiding was active) hiding
    dynamics.  Returns the written paths."""
    rows = _rows(records)
    os.makedirs(out_dir, exist_ok=True)
    epochs = np.arange(len(rows))
    written = []

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(epochs, [r["train_loss"] for r in rows], color="tab:red", lw=1.5)
    ax1.set_ylabel("train loss")
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [r["test_top1"] for r in rows], color="tab:blue", lw=1.5)
    ax2.set_ylabel("test top-1")
    ax2.set_xlabel("epoch")
    ax2.grid(alpha=0.3)
    _mark_phases(ax1, rows)
    fig.tight_layout()
    path = os.path.join(out_dir, "training_curves.png")
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(epochs, [r["eta_e"] for r in rows], color="tab:green", lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("effective learning rate")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = os.path.join(out_dir, "lr_schedule.png")
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    written.append(path)

    if any(r["f_e"] > 0 for r in rows):
        n = max(r["forward_count"] for r in rows) or 1
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot(epochs, [r["f_e"] for r in rows], label="F_e (scheduled)", lw=1.5)
        ax.plot(epochs, [r["f_star"] for r in rows], label="F* (actually hidden)", lw=1.5)
        ax.plot(epochs, [r["moved_back"] / n for r in rows], label="moved back / N", lw=1.2)
        ax.plot(epochs, [r["hidden_again"] / n for r in rows], label="hidden again / N", lw=1.2)
        ax.set_xlabel("epoch")
        ax.set_ylabel("fraction of samples")
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, "hiding_dynamics.png")
        fig.savefig(path, dpi=_DPI)
        plt.close(fig)
        written.append(path)

    return written


def _mark_phases(ax, rows) -> None:
    # shade the counting phase of a forgetting run, if present
    counting = [i for i, r in enumerate(rows) if r.get("phase") == "counting"]
    if counting:
        ax.axvspan(counting[0], counting[-1] + 0.5, color="gray", alpha=0.15)


def write_run_csv(records, path: str) -> None:
    rows = _rows(records)
    fields = ["epoch", "phase", "train_loss", "test_top1", "f_e", "f_star",
              "moved_back", "hidden_again", "forward_count", "backward_count",
              "eta_e", "wall_clock_ms"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


# ======================================================================
# Comparison outputs
# ======================================================================

_TABLE_COLUMNS = [
    ("strategy", "strategy"),
    ("best top-1", None),
    ("diff vs baseline", None),
    ("backward passes", "total_backward_mean"),
    ("wall clock (s)", None),
]


def format_comparison_table(rows: list[dict]) -> str:
    """Aligned fixed-width text table of a comparison's aggregate rows."""
    table = [[c[0] for c in _TABLE_COLUMNS]]
    for r in rows:
        diff = r.get("diff_vs_baseline")
        table.append([
            r["strategy"],
            f"{r['best_top1_mean']:.4f} +/- {r['best_top1_std']:.4f}",
            "--" if diff is None or r["strategy"] == "baseline" else f"{diff:+.4f}",
            f"{r['total_backward_mean']:,.0f}",
            f"{r['wall_clock_ms_mean'] / 1000.0:.2f}",
        ])
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_comparison_csv(rows: list[dict], path: str) -> None:
    fields = ["strategy", "repeats", "best_top1_mean", "best_top1_std",
              "diff_vs_baseline", "total_backward_mean", "wall_clock_ms_mean"]
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def render_compare_figures(cells: dict, strategies: list, out_dir: str) -> list[str]:
    """Mean accuracy-vs-epoch curves per strategy plus a backward-pass bar
    chart.  ``cells`` maps (strategy, seed) to {"records", "summary"}."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for s in strategies:
        runs = [v["records"] for (st, _), v in sorted(cells.items()) if st == s]
        if not runs:
            continue
        longest = max(len(r) for r in runs)
        curve = np.full((len(runs), longest), np.nan)
        for i, r in enumerate(runs):
            curve[i, : len(r)] = [row["test_top1"] for row in _rows(r)]
        mean = np.nanmean(curve, axis=0)
        ax.plot(np.arange(longest), mean, label=s, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean test top-1")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = os.path.join(out_dir, "accuracy_vs_epoch.png")
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 4))
    totals = []
    for s in strategies:
        vals = [v["summary"]["total_backward"] for (st, _), v in cells.items() if st == s]
        totals.append(float(np.mean(vals)) if vals else 0.0)
    ax.bar(strategies, totals, color="tab:purple", alpha=0.8)
    ax.set_ylabel("mean total backward passes")
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    path = os.path.join(out_dir, "backward_passes.png")
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    written.append(path)

    return written


# ======================================================================
# Lemma verification outputs
# ======================================================================


def write_lemma_csv(reports: list, path: str) -> None:
    fields = ["name", "eta", "steps", "trials", "sigma2", "lam", "c_hat",
              "r_sigma", "bound", "empirical", "stderr", "passed",
              "deterministic", "exact_expected", "exact_rel_err"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(fields)
        for r in reports:
            writer.writerow([getattr(r, k) for k in fields])


def format_lemma_lines(reports: list) -> str:
    lines = []
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        extra = ""
        if r.deterministic and r.exact_rel_err is not None:
            extra = f"  exact rel err {r.exact_rel_err:.2e}"
        lines.append(
            f"[{status}] {r.name:<24} eta={r.eta:<8.4g} T={r.steps:<4d} "
            f"empirical={r.empirical:.6g} bound={r.bound:.6g}{extra}"
        )
    n_pass = sum(r.passed for r in reports)
    lines.append(f"{n_pass}/{len(reports)} cells within bound")
    return "\n".join(lines)
