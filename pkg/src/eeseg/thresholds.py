"""Per-class masking thresholds and their JSON round trip.

A threshold vector holds one masking threshold per class, each inside
[alpha, beta]. Classes that never occurred in the calibration set are
flagged absent; they are pinned to beta (the most conservative choice)
and carry that provenance through serialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataFormatError


@dataclass(frozen=True)
class ThresholdVector:
    """K per-class thresholds with the scaling range and absent-class flags."""

    values: np.ndarray
    alpha: float
    beta: float
    absent_classes: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ConfigurationError("threshold vector must be 1-D and non-empty")
        if not self.alpha < self.beta:
            raise ConfigurationError(f"alpha {self.alpha} must be < beta {self.beta}")
        lo = min(self.alpha, 0.0)
        if (v < self.alpha - 1e-15).any() or (v > self.beta + 1e-15).any():
            raise ConfigurationError(
                f"thresholds must lie in [{self.alpha}, {self.beta}], got range "
                f"[{v.min()}, {v.max()}] (lo={lo})"
            )
        bad = [c for c in self.absent_classes if not 0 <= c < v.size]
        if bad:
            raise ConfigurationError(f"absent class indices out of range: {bad}")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "absent_classes", tuple(sorted(self.absent_classes)))

    @property
    def num_classes(self) -> int:
        return int(self.values.size)

    def present_values(self) -> np.ndarray:
        keep = np.ones(self.num_classes, dtype=bool)
        keep[list(self.absent_classes)] = False
        return self.values[keep]


def save_thresholds(tv: ThresholdVector) -> bytes:
    doc = {
        "version": 1,
        "alpha": tv.alpha,
        "beta": tv.beta,
        "num_classes": tv.num_classes,
        "thresholds": [float(x) for x in tv.values],
        "absent_classes": list(tv.absent_classes),
    }
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def load_thresholds(data: bytes) -> ThresholdVector:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"thresholds file is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise DataFormatError("unsupported thresholds file version")
    try:
        alpha = float(doc["alpha"])
        beta = float(doc["beta"])
        k = int(doc["num_classes"])
        values = [float(x) for x in doc["thresholds"]]
        absent = tuple(int(c) for c in doc.get("absent_classes", []))
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"thresholds file missing or malformed field: {e}") from e
    if len(values) != k:
        raise DataFormatError(f"expected {k} thresholds, file has {len(values)}")
    if not alpha < beta:
        raise DataFormatError(f"alpha {alpha} must be < beta {beta}")
    arr = np.asarray(values, dtype=np.float64)
    if (arr < 0.0).any() or (arr > 1.0).any():
        raise DataFormatError("thresholds out of [0, 1] range")
    try:
        return ThresholdVector(arr, alpha, beta, absent)
    except ConfigurationError as e:
        raise DataFormatError(str(e)) from e
