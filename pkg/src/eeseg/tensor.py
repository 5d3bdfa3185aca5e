"""Dense rank-3 tensor primitives: convolution, activation, softmax, argmax.

Values are float32 end to end; convolution reductions accumulate in float64
with a fixed summation order so that repeated runs (and the masked execution
path, which reuses this routine) are bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Tensor:
    """Immutable (channels, height, width) array of finite float32 values."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ConfigurationError(f"tensor must have 3 axes, got shape {arr.shape}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise ConfigurationError("tensor contains non-finite values")
        object.__setattr__(self, "data", _readonly(arr))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class ConvParams:
    """Weights for a stride-1, zero-padded ("same") 2-D convolution.

    weights: (out_channels, in_channels, k, k) float32, k odd.
    bias:    (out_channels,) float32.
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float32)
        b = np.asarray(self.bias, dtype=np.float32)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ConfigurationError(f"conv weights must be (out, in, k, k), got {w.shape}")
        if w.shape[2] % 2 != 1:
            raise ConfigurationError(f"kernel size must be odd, got {w.shape[2]}")
        if b.ndim != 1 or b.shape[0] != w.shape[0]:
            raise ConfigurationError(
                f"bias length {b.shape} does not match out_channels {w.shape[0]}"
            )
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise ConfigurationError("conv parameters contain non-finite values")
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "bias", _readonly(b))

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]


def conv2d(input: Tensor, params: ConvParams) -> Tensor:
    """Stride-1 "same" convolution with zero padding.

    output[o, y, x] = bias[o] + sum_{i, dy, dx} w[o, i, dy, dx] *
                      padded_input[i, y + dy, x + dx]
    """
    if input.channels != params.in_channels:
        raise ConfigurationError(
            f"input has {input.channels} channels, conv expects {params.in_channels}"
        )
    k = params.kernel_size
    pad = (k - 1) // 2
    x = input.data.astype(np.float64)
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    # (in, H, W, k, k) strided view; einsum without optimize keeps a fixed,
    # single-threaded reduction order, which the masked path relies on.
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    w = params.weights.astype(np.float64)
    out = np.einsum("oiuv,iyxuv->oyx", w, win, optimize=False)
    out += params.bias.astype(np.float64)[:, None, None]
    return Tensor(out.astype(np.float32))


def relu(input: Tensor) -> Tensor:
    """Elementwise max(0, x); -0.0 maps to +0.0."""
    d = input.data
    return Tensor(np.where(d > 0, d, np.float32(0.0)))


def softmax_channels(logits: Tensor) -> Tensor:
    """Per-pixel softmax over the channel axis, max-subtracted for stability."""
    if logits.channels < 2:
        raise ConfigurationError("softmax needs at least 2 channels")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=0, keepdims=True)
    e = np.exp(z)
    return Tensor((e / e.sum(axis=0, keepdims=True)).astype(np.float32))


def argmax_channels(probs: Tensor) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel (class index, value of the largest channel).

    Ties break toward the lowest class index. Returns an int64 (H, W) class
    map and a float32 (H, W) confidence map.
    """
    cls = np.argmax(probs.data, axis=0)
    conf = np.take_along_axis(probs.data, cls[None], axis=0)[0]
    return cls.astype(np.int64), conf
