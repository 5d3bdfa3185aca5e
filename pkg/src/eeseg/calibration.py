"""Per-class threshold calibration from training-set prediction statistics.

Pipeline: stream dense forward passes over a labeled dataset, accumulating
for every exit n and ground-truth class k the mean predicted probability
vector over all pixels of class k; average those means across exits so
information from every exit is shared; reduce each class's averaged vector
to a confidence gap (top-1 minus top-2 probability); and inversely rescale
the gaps into masking thresholds on [alpha, beta], so the most confidently
predicted class gets the lowest threshold alpha and the least confident one
gets beta.

Calibration probabilities always come from unmasked passes. This keeps the
statistics independent of any threshold choice; masked passes would make
thresholds depend on themselves.

Classes that never occur in the dataset are flagged absent: they are
excluded from the rescaling extrema and conservatively pinned to beta.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .model import MultiExitNet, forward_dense
from .parallel import ordered_parallel_map
from .tensor import Tensor
from .thresholds import ThresholdVector, load_thresholds, save_thresholds

__all__ = [
    "ClassMeanTable",
    "ClassConfidenceMatrix",
    "ThresholdVector",
    "accumulate_class_means",
    "average_over_layers",
    "confidence_gaps",
    "scale_thresholds",
    "save_thresholds",
    "load_thresholds",
]


@dataclass(frozen=True)
class ClassMeanTable:
    """means[n, k] = mean probability vector at exit n over pixels of class k.

    counts[k] is the number of contributing pixels; rows with counts[k] == 0
    are absent (their mean rows are NaN placeholders, never silent zeros).
    """

    means: np.ndarray  # (N, K, K) float64
    counts: np.ndarray  # (K,) int64

    def __post_init__(self) -> None:
        m = np.asarray(self.means, dtype=np.float64)
        c = np.asarray(self.counts, dtype=np.int64)
        if m.ndim != 3 or m.shape[1] != m.shape[2] or c.shape != (m.shape[1],):
            raise ConfigurationError("class-mean table must be (N, K, K) with K counts")
        present = c > 0
        rows = m[:, present, :]
        if rows.size:
            if not np.isfinite(rows).all():
                raise ConfigurationError("present class means contain non-finite values")
            sums = rows.sum(axis=2)
            if (rows < -1e-12).any() or (rows > 1 + 1e-12).any() or (np.abs(sums - 1) > 1e-5).any():
                raise ConfigurationError("present class means are not probability vectors")
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "counts", c)

    @property
    def num_exits(self) -> int:
        return self.means.shape[0]

    @property
    def num_classes(self) -> int:
        return self.means.shape[1]

    @property
    def absent_classes(self) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.counts == 0))


@dataclass(frozen=True)
class ClassConfidenceMatrix:
    """Row k is the across-exit average of class k's mean probability vector."""

    rows: np.ndarray  # (K, K) float64
    counts: np.ndarray  # (K,) int64

    @property
    def num_classes(self) -> int:
        return self.rows.shape[0]

    @property
    def absent_classes(self) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.counts == 0))


def accumulate_class_means(
    net: MultiExitNet,
    dataset: Iterable[tuple[Tensor, np.ndarray]],
    ignore_label: int | None = None,
    jobs: int = 1,
) -> ClassMeanTable:
    """Stream (image, label map) pairs and build the per-exit class means.

    Labels must be in 0..K-1 or equal ignore_label; ignored pixels belong to
    no class and are skipped. Accumulation runs in float64 sums plus integer
    counts, so the dataset never needs to be resident in memory. With
    jobs > 1 the dense passes run on worker threads; partial sums are merged
    in dataset order, keeping the result deterministic.
    """
    k_classes = net.config.num_classes
    n_exits = net.config.num_exits
    sums = np.zeros((n_exits, k_classes, k_classes), dtype=np.float64)
    counts = np.zeros(k_classes, dtype=np.int64)
    n_images = 0

    def run(pair: tuple[Tensor, np.ndarray]) -> tuple[Tensor, np.ndarray, list[Tensor]]:
        image, labels = pair
        return image, labels, forward_dense(net, image)

    for image, labels, probs in ordered_parallel_map(run, dataset, jobs):
        labels = np.asarray(labels)
        if labels.shape != (image.height, image.width):
            raise DataFormatError(
                f"label map shape {labels.shape} does not match image {image.shape}"
            )
        flat = labels.reshape(-1).astype(np.int64)
        valid = np.ones(flat.shape, dtype=bool) if ignore_label is None else flat != ignore_label
        picked = flat[valid]
        if picked.size and (picked.min() < 0 or picked.max() >= k_classes):
            raise DataFormatError(
                f"labels out of range 0..{k_classes - 1}: "
                f"[{picked.min()}, {picked.max()}]"
            )
        for n, p in enumerate(probs):
            flat_p = p.data.reshape(k_classes, -1).T.astype(np.float64)
            np.add.at(sums[n], picked, flat_p[valid])
        counts += np.bincount(picked, minlength=k_classes)
        n_images += 1
    if n_images == 0:
        raise DataFormatError("empty dataset: no images to calibrate on")
    means = np.full_like(sums, np.nan)
    present = counts > 0
    means[:, present, :] = sums[:, present, :] / counts[present][None, :, None]
    return ClassMeanTable(means, counts)


def average_over_layers(table: ClassMeanTable) -> ClassConfidenceMatrix:
    """Average each class's mean vectors across exits; absent flags propagate."""
    return ClassConfidenceMatrix(table.means.mean(axis=0), table.counts.copy())


def confidence_gaps(matrix: ClassConfidenceMatrix) -> np.ndarray:
    """Top-1 minus top-2 probability per class row; NaN for absent classes.

    A wide gap means the class is predicted with little competition, i.e.
    it is easy; a narrow gap means frequent confusion with another class.
    """
    if matrix.num_classes < 2:
        raise ConfigurationError("need at least 2 classes")
    gaps = np.full(matrix.num_classes, np.nan)
    for k in range(matrix.num_classes):
        if matrix.counts[k] == 0:
            continue
        top2 = np.partition(matrix.rows[k], -2)[-2:]
        gaps[k] = top2[1] - top2[0]
    return gaps


def scale_thresholds(gaps: np.ndarray, alpha: float, beta: float) -> ThresholdVector:
    """Inversely rescale confidence gaps into thresholds on [alpha, beta].

    One affine update: the widest-gap class lands exactly on alpha, the
    narrowest exactly on beta, everything else in between in reversed gap
    order (more confidence, lower threshold, earlier exit). Absent classes
    (NaN gaps) are excluded from the extrema and pinned to beta; if all
    present gaps are equal the rescale is degenerate and every threshold
    falls back to beta.
    """
    gaps = np.asarray(gaps, dtype=np.float64)
    if not (0.0 < alpha < beta <= 1.0):
        raise ConfigurationError(
            f"need 0 < alpha < beta <= 1, got alpha={alpha} beta={beta}"
        )
    present = ~np.isnan(gaps)
    if not present.any():
        raise ConfigurationError("no present classes to scale thresholds for")
    absent = tuple(int(i) for i in np.flatnonzero(~present))
    values = np.full(gaps.shape, beta, dtype=np.float64)
    g = gaps[present]
    gmin, gmax = g.min(), g.max()
    if gmax > gmin:
        scaled = (1.0 - (g - gmin) / (gmax - gmin)) * (beta - alpha) + alpha
        # pin the extrema exactly; fp rounding in the affine form can be off
        # by an ulp
        scaled[g == gmax] = alpha
        scaled[g == gmin] = beta
        values[present] = scaled
    return ThresholdVector(values, alpha, beta, absent)
