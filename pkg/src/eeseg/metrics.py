"""Segmentation quality and cost reporting: confusion matrices, mIoU, GFLOPs.

Reports follow the per-exit layout of early-exit evaluation tables: at every
exit, the full-frame "anytime" prediction scores pixels frozen at or before
that exit with their frozen label and still-active pixels with the current
exit's argmax; cost is the mean cumulative FLOPs through that exit.

mIoU is computed in exact rational arithmetic over the integer confusion
counts (then converted once to float), so it is exactly invariant under
class permutations regardless of summation order.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DataFormatError, UndefinedMetricError, UsageError
from .model import AdaptiveResult
from .tensor import argmax_channels


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[g, p] = number of evaluated pixels with ground truth g predicted p."""

    counts: np.ndarray  # (K, K) int64

    def __post_init__(self) -> None:
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DataFormatError("confusion matrix must be square")
        if (c < 0).any():
            raise DataFormatError("confusion counts must be nonnegative")
        c = np.ascontiguousarray(c)
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merged(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def accumulate_confusion(
    pred: np.ndarray,
    gt: np.ndarray,
    num_classes: int,
    ignore_label: int | None = None,
) -> ConfusionMatrix:
    """Confusion matrix of one prediction/ground-truth pair; ignored pixels skipped."""
    pred = np.asarray(pred).reshape(-1).astype(np.int64)
    gt = np.asarray(gt).reshape(-1).astype(np.int64)
    if pred.shape != gt.shape:
        raise DataFormatError("prediction and ground truth differ in size")
    valid = np.ones(gt.shape, dtype=bool) if ignore_label is None else gt != ignore_label
    g, p = gt[valid], pred[valid]
    if g.size:
        if g.min() < 0 or g.max() >= num_classes:
            raise DataFormatError(f"ground-truth class out of range 0..{num_classes - 1}")
        if p.min() < 0 or p.max() >= num_classes:
            raise DataFormatError(f"predicted class out of range 0..{num_classes - 1}")
    counts = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def miou(cm: ConfusionMatrix) -> tuple[float, np.ndarray]:
    """(mIoU, per-class IoU) with zero-denominator classes excluded as NaN.

    IoU_k = counts[k, k] / (row_k + col_k - counts[k, k]). The mean over the
    included classes is taken as an exact rational before the final float
    conversion.
    """
    c = cm.counts
    k = cm.num_classes
    per_class = np.full(k, np.nan)
    included: list[Fraction] = []
    for i in range(k):
        tp = int(c[i, i])
        denom = int(c[i, :].sum()) + int(c[:, i].sum()) - tp
        if denom == 0:
            continue
        per_class[i] = tp / denom
        included.append(Fraction(tp, denom))
    if not included:
        raise UndefinedMetricError("every class denominator is zero; mIoU undefined")
    return float(sum(included) / len(included)), per_class


@dataclass(frozen=True)
class ExitRow:
    exit: int
    miou: float
    per_class_iou: tuple[float, ...]
    gflops: float


@dataclass(frozen=True)
class EvalReport:
    """Per-exit quality/cost table plus identifiers of what produced it."""

    rows: tuple[ExitRow, ...]
    policy: str
    num_images: int
    model_id: str
    dataset_id: str
    run_config: dict

    def to_json_bytes(self) -> bytes:
        doc = {
            "version": 1,
            "policy": self.policy,
            "num_images": self.num_images,
            "model_id": self.model_id,
            "dataset_id": self.dataset_id,
            "run_config": self.run_config,
            "exits": [
                {
                    "exit": r.exit,
                    "miou": r.miou,
                    "gflops": r.gflops,
                    "per_class_iou": [
                        None if np.isnan(v) else v for v in r.per_class_iou
                    ],
                }
                for r in self.rows
            ],
        }
        return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")

    def to_csv_bytes(self) -> bytes:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["exit", "miou", "gflops"])
        for r in self.rows:
            w.writerow([r.exit, repr(r.miou), repr(r.gflops)])
        return out.getvalue().encode("utf-8")


def anytime_prediction(result: AdaptiveResult, exit_index: int) -> np.ndarray:
    """Full-frame labels at one exit: frozen pixels keep their frozen class."""
    live_cls, _ = argmax_channels(result.per_exit_probs[exit_index - 1])
    frozen = result.canvas.exit_map <= exit_index
    return np.where(frozen, result.canvas.class_map, live_cls)


def build_report(
    results: Sequence[AdaptiveResult],
    gts: Sequence[np.ndarray],
    num_classes: int,
    policy: str,
    ignore_label: int | None = None,
    model_id: str = "",
    dataset_id: str = "",
    run_config: dict | None = None,
) -> EvalReport:
    """Aggregate per-image adaptive results into the per-exit report."""
    if len(results) != len(gts) or not results:
        raise UsageError("need one ground truth per result, at least one image")
    n_exits = len(results[0].per_exit_probs)
    if any(len(r.per_exit_probs) != n_exits for r in results):
        raise UsageError("results come from differently configured models")
    rows = []
    for n in range(1, n_exits + 1):
        cm = ConfusionMatrix(np.zeros((num_classes, num_classes), dtype=np.int64))
        flops_sum = 0
        for result, gt in zip(results, gts):
            pred = anytime_prediction(result, n)
            cm = cm.merged(accumulate_confusion(pred, gt, num_classes, ignore_label))
            flops_sum += result.ledger.cumulative_at_exit(n)
        score, per_class = miou(cm)
        gflops = flops_sum / len(results) / 1e9
        rows.append(ExitRow(n, score, tuple(per_class), gflops))
    return EvalReport(
        rows=tuple(rows),
        policy=policy,
        num_images=len(results),
        model_id=model_id,
        dataset_id=dataset_id,
        run_config=run_config or {},
    )


def format_comparison_table(reports: Sequence[tuple[str, EvalReport]]) -> str:
    """Text table with one row per policy and mIoU/GFLOPs columns per exit."""
    if not reports:
        raise UsageError("no reports to format")
    n_exits = len(reports[0][1].rows)
    header = ["Method"] + [
        col for n in range(1, n_exits + 1) for col in (f"mIoU@{n}", f"GFLOPs@{n}")
    ]
    lines = [header]
    for label, report in reports:
        row = [label]
        for r in report.rows:
            row.append(f"{r.miou:.4f}")
            row.append(f"{r.gflops:.6f}")
        lines.append(row)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    rendered = []
    for line in lines:
        rendered.append("  ".join(cell.rjust(w) for cell, w in zip(line, widths)))
    return "\n".join(rendered) + "\n"
