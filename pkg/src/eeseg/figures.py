"""Render report curves (mIoU versus cumulative GFLOPs) to image files."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import EvalReport


def save_report_figure(report: EvalReport, path: str) -> None:
    save_comparison_figure([(report.policy, report)], path)


def save_comparison_figure(reports: Sequence[tuple[str, EvalReport]], path: str) -> None:
    """One quality/cost curve per policy, exits marked along each curve."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, report in reports:
        x = [r.gflops for r in report.rows]
        y = [r.miou for r in report.rows]
        ax.plot(x, y, marker="o", markersize=4, linewidth=1.5, label=label)
        for r in report.rows:
            ax.annotate(
                f"{r.exit}", (r.gflops, r.miou),
                textcoords="offset points", xytext=(4, 4), fontsize=7,
            )
    ax.set_xlabel("cumulative GFLOPs per image")
    ax.set_ylabel("mIoU")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
