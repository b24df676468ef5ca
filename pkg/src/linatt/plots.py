"""Rendering of benchmark and training reports as figures, next to the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .bench import BenchRecord  # noqa: E402
from .training import TrainingReport  # noqa: E402


def _by_method(records: list[BenchRecord]) -> dict[str, list[BenchRecord]]:
    grouped: dict[str, list[BenchRecord]] = {}
    for r in records:
        if not r.skipped:
            grouped.setdefault(r.method, []).append(r)
    for rows in grouped.values():
        rows.sort(key=lambda r: r.n)
    return grouped


def plot_scaling(records: list[BenchRecord], path) -> Path:
    """Two panels: wall time and auxiliary memory vs sequence length, log-log."""
    grouped = _by_method(records)
    fig, (ax_time, ax_mem) = plt.subplots(1, 2, figsize=(9, 3.6))
    for method, rows in sorted(grouped.items()):
        ns = [r.n for r in rows]
        ax_time.errorbar(ns, [r.time_ms_mean for r in rows],
                         yerr=[r.time_ms_std for r in rows], marker="o",
                         capsize=2, label=method)
        ax_mem.plot(ns, [max(r.peak_aux_bytes, 1) for r in rows], marker="s", label=method)
    for ax, ylabel in ((ax_time, "time per pass [ms]"), (ax_mem, "aux memory [bytes]")):
        ax.set_xscale("log", base=2)
        ax.set_yscale("log")
        ax.set_xlabel("sequence length N")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
    ax_time.legend(fontsize=8)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def plot_latency(records: list[BenchRecord], path) -> Path:
    """Per-token decoding time vs position, log-log."""
    grouped = _by_method(records)
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for method, rows in sorted(grouped.items()):
        ax.errorbar([r.n for r in rows], [r.time_ms_mean for r in rows],
                    yerr=[r.time_ms_std for r in rows], marker="o", capsize=2,
                    label=method)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("position in sequence")
    ax.set_ylabel("time per token [ms]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def plot_training(report: TrainingReport, path, title: str = "copy task") -> Path:
    """Loss curve over updates, annotated with the final held-out accuracy."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    steps = [s for s, _, _ in report.steps]
    ax.plot(steps, report.losses(), lw=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("update")
    ax.set_ylabel("training loss [nats]")
    label = "diverged" if report.failed else f"accuracy {report.final_accuracy:.4f}"
    ax.set_title(f"{title} ({label})", fontsize=10)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out = Path(path)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
