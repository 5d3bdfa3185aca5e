"""Exit policies and the per-exit mask/canvas update.

Three policies: Dense never finalizes a pixel early, Uniform finalizes on a
single global confidence threshold, PerClass looks the threshold up by the
pixel's predicted class. In every case the rule is strict: a pixel finalizes
when its top probability strictly exceeds the applicable threshold, and it
is then predicted as its argmax class. The argmax is policy-independent;
the policy only gates whether finalization happens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ConfigurationError
from .masking import PixelMask, PredictionCanvas
from .tensor import Tensor, argmax_channels
from .thresholds import ThresholdVector


@dataclass(frozen=True)
class DensePolicy:
    """Never finalize early; every pixel runs the full network."""


@dataclass(frozen=True)
class UniformPolicy:
    """One global threshold t in (0, 1] for every class."""

    threshold: float

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigurationError(f"uniform threshold must be in (0, 1], got {self.threshold}")


@dataclass(frozen=True)
class PerClassPolicy:
    """Per-class thresholds; the argmax class selects which threshold applies."""

    thresholds: ThresholdVector


ExitPolicy = Union[DensePolicy, UniformPolicy, PerClassPolicy]


def describe_policy(policy: ExitPolicy) -> str:
    if isinstance(policy, DensePolicy):
        return "dense"
    if isinstance(policy, UniformPolicy):
        return f"uniform:{policy.threshold!r}"
    return "cbt:" + ",".join(repr(float(t)) for t in policy.thresholds.values)


def should_finalize(pi: np.ndarray, policy: ExitPolicy) -> Optional[int]:
    """Finalization decision for one pixel's probability vector.

    Returns the argmax class j (lowest index on ties) when pi[j] strictly
    exceeds the applicable threshold, else None.
    """
    pi = np.asarray(pi, dtype=np.float64)
    j = int(np.argmax(pi))
    if isinstance(policy, DensePolicy):
        return None
    if isinstance(policy, UniformPolicy):
        return j if pi[j] > policy.threshold else None
    tv = policy.thresholds
    if tv.num_classes != pi.size:
        raise ConfigurationError(
            f"policy has {tv.num_classes} thresholds, pixel has {pi.size} classes"
        )
    return j if pi[j] > tv.values[j] else None


def update_mask(
    mask: PixelMask,
    probs: Tensor,
    policy: ExitPolicy,
    canvas: PredictionCanvas,
    exit_index: int,
) -> tuple[PixelMask, PredictionCanvas]:
    """Apply the finalization rule at one exit over the active pixels.

    Pixels whose decision fires leave the mask and enter the canvas with
    this exit index; everything else is untouched. The new active set is a
    subset of the old one by construction. Per-pixel decisions are
    independent, so evaluation order does not matter.
    """
    if isinstance(policy, DensePolicy):
        return mask, canvas
    cls, conf = argmax_channels(probs)
    conf64 = conf.astype(np.float64)
    if isinstance(policy, UniformPolicy):
        passed = conf64 > policy.threshold
    else:
        tv = policy.thresholds
        if tv.num_classes != probs.channels:
            raise ConfigurationError(
                f"policy has {tv.num_classes} thresholds, model has {probs.channels} classes"
            )
        passed = conf64 > tv.values[cls]
    newly = mask.bits & passed
    if newly.any():
        canvas.finalize(newly, cls, exit_index)
    return mask.intersect(~newly), canvas


def finalize_remaining(
    mask: PixelMask,
    probs: Tensor,
    canvas: PredictionCanvas,
    exit_index: int,
) -> tuple[PixelMask, PredictionCanvas]:
    """Unconditionally finalize every still-active pixel with its argmax.

    Used at the last exit so the pass always produces a complete labeling,
    regardless of thresholds.
    """
    cls, _ = argmax_channels(probs)
    remaining = mask.bits.copy()
    if remaining.any():
        canvas.finalize(remaining, cls, exit_index)
    return mask.intersect(~remaining), canvas


def equivalent_uniform(tv: ThresholdVector) -> Optional[float]:
    """The single value all present-class thresholds share, or None."""
    present = tv.present_values()
    if present.size == 0:
        return None
    first = float(present[0])
    return first if bool((present == present[0]).all()) else None
