"""Deterministic fixtures: random nets, palette images, and an oracle model.

The oracle model's exit logits are affine in the pixel color, and the palette
dataset colors every class-k region with an exact primary color, so each
class's per-exit confidence is a closed-form number. Class confidence levels
are deliberately heterogeneous (class 0 easiest, class 3 hardest) so that
calibrated per-class thresholds genuinely spread across [alpha, beta].
"""

from __future__ import annotations

import math

import numpy as np

from .model import ModelConfig, MultiExitNet, build_fixture_model, build_oracle_model
from .rng import splitmix64, uniform_f32
from .tensor import Tensor

DEFAULT_FIXTURE_CONFIG = ModelConfig(
    num_classes=4,
    num_exits=3,
    trunk_width=12,
    blocks_per_stage=2,
    kernel_size=3,
    input_channels=3,
)

# class 0 = background (black), classes 1..3 = pure R, G, B regions
PALETTE = np.array(
    [[0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255]], dtype=np.uint8
)

# desired argmax confidence per (exit, class): deeper exits are more
# confident everywhere, and class difficulty rises with the class index
ORACLE_CONFIDENCE = np.array(
    [
        [0.97, 0.95, 0.80, 0.60],
        [0.99, 0.98, 0.90, 0.75],
        [0.999, 0.995, 0.97, 0.90],
    ]
)


def logit_scale(confidence: float, num_classes: int) -> float:
    """Scale s such that softmax(s * e_k) has max probability `confidence`."""
    return math.log((num_classes - 1) * confidence / (1.0 - confidence))


def oracle_exit_affines(
    confidence: np.ndarray, num_classes: int = 4
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Affine (weight, bias) per exit mapping palette colors to scaled one-hots.

    Color of class 0 is black, so the bias carries class 0's logits; column j
    of the weight carries class j+1's logits relative to that bias.
    """
    affines = []
    for row in confidence:
        bias = logit_scale(float(row[0]), num_classes) * np.eye(num_classes)[0]
        weight = np.zeros((num_classes, 3))
        for j in range(1, min(num_classes, 4)):
            target = logit_scale(float(row[j]), num_classes) * np.eye(num_classes)[j]
            weight[:, j - 1] = target - bias
        affines.append((weight, bias))
    return affines


def default_oracle_model() -> MultiExitNet:
    return build_oracle_model(4, oracle_exit_affines(ORACLE_CONFIDENCE, 4))


def oracle_confidence_at(exit_index: int, class_index: int) -> float:
    """The designed argmax confidence of class k pixels at a given exit (1-based)."""
    return float(ORACLE_CONFIDENCE[exit_index - 1, class_index])


def fixture_images(
    seed: int, count: int, channels: int = 3, height: int = 32, width: int = 32
) -> list[Tensor]:
    """Uniform-random float images in [0, 1], bitwise deterministic per seed."""
    flat = uniform_f32(seed, count * channels * height * width, 0.0, 1.0)
    stack = flat.reshape(count, channels, height, width)
    return [Tensor(stack[i]) for i in range(count)]


def oracle_dataset(
    seed: int, count: int = 16, height: int = 32, width: int = 32
) -> tuple[np.ndarray, np.ndarray]:
    """Palette-colored rectangles over background, labels exact.

    Returns uint8 images (n, 3, H, W) and labels (n, H, W). Every pixel's
    color is exactly its class's palette entry, so oracle-model confidences
    match ORACLE_CONFIDENCE exactly.
    """
    # generous integer budget per image: rect count + 5 ints per rect
    stream = iter(int(z) for z in splitmix64(seed, count * (1 + 5 * 6)))
    images = np.zeros((count, 3, height, width), dtype=np.uint8)
    labels = np.zeros((count, height, width), dtype=np.uint8)
    for i in range(count):
        lab = labels[i]
        n_rects = 2 + next(stream) % 3
        for _ in range(n_rects):
            cls = 1 + next(stream) % 3
            y0 = next(stream) % (height - 4)
            x0 = next(stream) % (width - 4)
            rh = 4 + next(stream) % (height // 2)
            rw = 4 + next(stream) % (width // 2)
            lab[y0 : min(y0 + rh, height), x0 : min(x0 + rw, width)] = cls
        images[i] = PALETTE[lab].transpose(2, 0, 1)
    return images, labels


def fixture_model(seed: int = 0, config: ModelConfig = DEFAULT_FIXTURE_CONFIG) -> MultiExitNet:
    return build_fixture_model(seed, config)
