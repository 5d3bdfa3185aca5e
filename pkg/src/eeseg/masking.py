"""Masked execution: pixel masks, gated convolution, exact FLOPs accounting.

A convolution output position is either active (computed) or frozen (its
previously computed value is carried through unchanged). Reads are never
gated: an active position may read frozen neighbours, which hold the
features they had when they froze. The FLOPs ledger charges only active
output positions, using a fixed convention of 2 FLOPs per multiply-accumulate
plus 1 FLOP per bias add; activation, softmax and argmax are not charged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, UsageError
from .tensor import ConvParams, Tensor, conv2d


@dataclass(frozen=True)
class PixelMask:
    """Immutable H x W activity map; True = still active, False = frozen.

    The pipeline only ever derives new masks through `intersect`, so the
    active set can shrink but never grow.
    """

    bits: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.dtype != np.bool_:
            raise ConfigurationError(f"mask must be 2-D boolean, got {b.dtype} {b.shape}")
        b = np.ascontiguousarray(b)
        b.flags.writeable = False
        object.__setattr__(self, "bits", b)

    @classmethod
    def full(cls, height: int, width: int) -> "PixelMask":
        return cls(np.ones((height, width), dtype=np.bool_))

    def intersect(self, keep: np.ndarray) -> "PixelMask":
        """New mask active exactly where this mask and `keep` are both true."""
        keep = np.asarray(keep, dtype=np.bool_)
        if keep.shape != self.bits.shape:
            raise ConfigurationError("intersection shape mismatch")
        return PixelMask(self.bits & keep)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def active_count(self) -> int:
        return int(self.bits.sum())


@dataclass
class PredictionCanvas:
    """Pass-local record of finalized pixels: class label and finalizing exit.

    A pixel is finalized exactly when it is inactive in the current mask;
    entries are write-once (a finalized pixel is never re-examined).
    """

    class_map: np.ndarray
    exit_map: np.ndarray
    finalized: np.ndarray

    @classmethod
    def empty(cls, height: int, width: int) -> "PredictionCanvas":
        return cls(
            class_map=np.full((height, width), -1, dtype=np.int64),
            exit_map=np.zeros((height, width), dtype=np.int64),
            finalized=np.zeros((height, width), dtype=np.bool_),
        )

    def finalize(self, where: np.ndarray, classes: np.ndarray, exit_index: int) -> None:
        """Mark `where` pixels finalized with their class; rejects rewrites."""
        if (self.finalized & where).any():
            raise UsageError("attempt to re-finalize already finalized pixels")
        self.class_map[where] = classes[where]
        self.exit_map[where] = exit_index
        self.finalized[where] = True

    @property
    def complete(self) -> bool:
        return bool(self.finalized.all())


def cost_per_position(params: ConvParams) -> int:
    """FLOPs to compute one output position: (2*k*k*C_in + 1) * C_out."""
    k = params.kernel_size
    return (2 * k * k * params.in_channels + 1) * params.out_channels


def masked_conv2d(
    input: Tensor, params: ConvParams, mask: PixelMask, carry: Tensor
) -> tuple[Tensor, int]:
    """Convolution gated on output positions.

    Active positions take the dense convolution value (same reduction order
    as `conv2d`, so an all-active mask is bitwise identical to the dense
    path); frozen positions take `carry`. Returns the output and the FLOPs
    charged: active_count * cost_per_position(params).
    """
    out_shape = (params.out_channels, input.height, input.width)
    if carry.shape != out_shape:
        raise ConfigurationError(
            f"carry shape {carry.shape} does not match conv output {out_shape}"
        )
    if (mask.height, mask.width) != (input.height, input.width):
        raise ConfigurationError("mask dimensions do not match input")
    active = mask.active_count
    if active == 0:
        return carry, 0
    dense = conv2d(input, params)
    out = np.where(mask.bits, dense.data, carry.data)
    return Tensor(out), active * cost_per_position(params)


@dataclass
class FlopsLedger:
    """Per-stage FLOPs entries plus cumulative totals at each exit boundary.

    Stage ids and exit indices must be recorded in strictly increasing
    pipeline order; cumulative exit totals are therefore nondecreasing.
    """

    entries: list[tuple[int, int]] = field(default_factory=list)
    exit_totals: list[tuple[int, int]] = field(default_factory=list)

    def record(self, stage_id: int, flops: int) -> None:
        if self.entries and stage_id <= self.entries[-1][0]:
            raise UsageError(
                f"stage id {stage_id} recorded after {self.entries[-1][0]}"
            )
        if flops < 0:
            raise UsageError("negative flops")
        self.entries.append((stage_id, int(flops)))

    def mark_exit(self, exit_index: int) -> None:
        if self.exit_totals and exit_index <= self.exit_totals[-1][0]:
            raise UsageError(
                f"exit {exit_index} marked after {self.exit_totals[-1][0]}"
            )
        self.exit_totals.append((exit_index, self.total))

    @property
    def total(self) -> int:
        return sum(f for _, f in self.entries)

    def cumulative_at_exit(self, exit_index: int) -> int:
        for idx, total in self.exit_totals:
            if idx == exit_index:
                return total
        raise UsageError(f"no exit boundary recorded for exit {exit_index}")
