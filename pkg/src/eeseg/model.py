"""Multi-exit segmentation network: dense and confidence-adaptive forward passes.

The network is a single-resolution trunk of conv+relu blocks with a 1x1
prediction head after each stage. The dense pass runs everything; the
adaptive pass runs stage 1 and exit 1 fully dense (masking only starts after
the first exit), then freezes pixels the policy marks as confidently
predicted, carrying their last computed features through all later layers.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataFormatError
from .masking import FlopsLedger, PixelMask, PredictionCanvas, cost_per_position, masked_conv2d
from .policy import ExitPolicy, finalize_remaining, update_mask
from .rng import uniform_f32
from .tensor import ConvParams, Tensor, conv2d, relu, softmax_channels

_MAGIC = b"EENW"
_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; trunk width is constant across stages."""

    num_classes: int
    num_exits: int
    trunk_width: int
    blocks_per_stage: int
    kernel_size: int
    input_channels: int = 3

    def __post_init__(self) -> None:
        if self.num_exits < 2:
            raise ConfigurationError("need at least 2 exits")
        if self.num_classes < 2:
            raise ConfigurationError("need at least 2 classes")
        if self.kernel_size < 1 or self.kernel_size % 2 != 1:
            raise ConfigurationError("kernel size must be odd and positive")
        if self.trunk_width < 1 or self.blocks_per_stage < 1 or self.input_channels < 1:
            raise ConfigurationError("widths and block counts must be positive")

    def to_json(self) -> str:
        return json.dumps(
            {
                "num_classes": self.num_classes,
                "num_exits": self.num_exits,
                "trunk_width": self.trunk_width,
                "blocks_per_stage": self.blocks_per_stage,
                "kernel_size": self.kernel_size,
                "input_channels": self.input_channels,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            doc = json.loads(text)
            return cls(
                num_classes=int(doc["num_classes"]),
                num_exits=int(doc["num_exits"]),
                trunk_width=int(doc["trunk_width"]),
                blocks_per_stage=int(doc["blocks_per_stage"]),
                kernel_size=int(doc["kernel_size"]),
                input_channels=int(doc["input_channels"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"bad model config blob: {e}") from e


@dataclass(frozen=True)
class MultiExitNet:
    """N stages of conv+relu blocks, each followed by a 1x1 exit head."""

    config: ModelConfig
    stages: tuple[tuple[ConvParams, ...], ...]
    exit_heads: tuple[ConvParams, ...]

    def __post_init__(self) -> None:
        cfg = self.config
        if len(self.stages) != cfg.num_exits or len(self.exit_heads) != cfg.num_exits:
            raise ConfigurationError("stage/head count must equal num_exits")
        for s, stage in enumerate(self.stages):
            if len(stage) != cfg.blocks_per_stage:
                raise ConfigurationError(f"stage {s + 1} has {len(stage)} blocks")
            for b, p in enumerate(stage):
                expect_in = cfg.input_channels if (s == 0 and b == 0) else cfg.trunk_width
                if p.in_channels != expect_in or p.out_channels != cfg.trunk_width:
                    raise ConfigurationError(
                        f"stage{s + 1}.block{b + 1} is {p.in_channels}->{p.out_channels}, "
                        f"expected {expect_in}->{cfg.trunk_width}"
                    )
                if p.kernel_size != cfg.kernel_size:
                    raise ConfigurationError(
                        f"stage{s + 1}.block{b + 1} kernel {p.kernel_size} != {cfg.kernel_size}"
                    )
        for n, p in enumerate(self.exit_heads):
            if p.kernel_size != 1 or p.in_channels != cfg.trunk_width or p.out_channels != cfg.num_classes:
                raise ConfigurationError(
                    f"exit{n + 1} head must be 1x1 {cfg.trunk_width}->{cfg.num_classes}"
                )


@dataclass(frozen=True)
class AdaptiveResult:
    """Everything one adaptive pass produces.

    per_exit_masks[n] is the mask in force after exit n+1's update; active
    sets are nested. The canvas is complete: the last exit finalizes every
    remaining pixel.
    """

    per_exit_probs: tuple[Tensor, ...]
    per_exit_masks: tuple[PixelMask, ...]
    canvas: PredictionCanvas
    ledger: FlopsLedger


def _check_image(net: MultiExitNet, image: Tensor) -> None:
    if image.channels != net.config.input_channels:
        raise ConfigurationError(
            f"image has {image.channels} channels, model expects {net.config.input_channels}"
        )


def forward_dense_logits(net: MultiExitNet, image: Tensor) -> list[Tensor]:
    """Unmasked pass; returns each exit head's pre-softmax output."""
    _check_image(net, image)
    logits: list[Tensor] = []
    x = image
    for stage, head in zip(net.stages, net.exit_heads):
        for params in stage:
            x = relu(conv2d(x, params))
        logits.append(conv2d(x, head))
    return logits


def forward_dense(net: MultiExitNet, image: Tensor) -> list[Tensor]:
    """Unmasked pass; returns per-exit probability tensors (K, H, W)."""
    return [softmax_channels(l) for l in forward_dense_logits(net, image)]


def carry_for_stage(previous_output: Tensor) -> Tensor:
    """Carry tensor for the next masked convolution.

    Frozen positions keep the features they had when they froze: each
    block's carry is simply its predecessor's output (the previous stage's
    final output for the first block of a stage). Constant trunk width makes
    the shapes line up.
    """
    return previous_output


def forward_adaptive(
    net: MultiExitNet,
    image: Tensor,
    policy: ExitPolicy,
    zero_fill_frozen: bool = False,
) -> AdaptiveResult:
    """Confidence-adaptive pass.

    Stage 1 and exit 1 are computed fully dense; each earlier-than-last exit
    then applies the policy to shrink the active set, and later stages run
    masked convolutions against the shrunken mask. The last exit finalizes
    all remaining pixels unconditionally. The ledger gets one entry per
    convolution and one cumulative boundary per exit.

    `zero_fill_frozen` is an experiment flag: frozen positions read as zeros
    instead of their carried features. Default off; the carried-feature
    semantics is the shipped behavior.
    """
    _check_image(net, image)
    h, w = image.height, image.width
    n_exits = net.config.num_exits
    k_classes = net.config.num_classes
    mask = PixelMask.full(h, w)
    canvas = PredictionCanvas.empty(h, w)
    ledger = FlopsLedger()
    per_exit_probs: list[Tensor] = []
    per_exit_masks: list[PixelMask] = []
    positions = h * w
    stage_id = 0
    x = image
    prev_logits: Tensor | None = None
    for n in range(1, n_exits + 1):
        first_exit = n == 1
        for params in net.stages[n - 1]:
            if first_exit:
                out = conv2d(x, params)
                flops = positions * cost_per_position(params)
            else:
                carry = (
                    Tensor(np.zeros((params.out_channels, h, w), dtype=np.float32))
                    if zero_fill_frozen
                    else carry_for_stage(x)
                )
                out, flops = masked_conv2d(x, params, mask, carry)
            x = relu(out)
            ledger.record(stage_id, flops)
            stage_id += 1
        head = net.exit_heads[n - 1]
        if first_exit:
            logits = conv2d(x, head)
            flops = positions * cost_per_position(head)
        else:
            head_carry = (
                Tensor(np.zeros((k_classes, h, w), dtype=np.float32))
                if zero_fill_frozen
                else prev_logits
            )
            logits, flops = masked_conv2d(x, head, mask, head_carry)
        ledger.record(stage_id, flops)
        stage_id += 1
        ledger.mark_exit(n)
        prev_logits = logits
        probs = softmax_channels(logits)
        per_exit_probs.append(probs)
        if n < n_exits:
            mask, canvas = update_mask(mask, probs, policy, canvas, n)
        else:
            mask, canvas = finalize_remaining(mask, probs, canvas, n)
        per_exit_masks.append(mask)
    return AdaptiveResult(tuple(per_exit_probs), tuple(per_exit_masks), canvas, ledger)


def dense_flops_total(config: ModelConfig, height: int, width: int) -> int:
    """Closed-form FLOPs of one fully dense pass through all exits."""
    positions = height * width
    total = 0
    cin = config.input_channels
    for _s in range(config.num_exits):
        for _b in range(config.blocks_per_stage):
            total += positions * (2 * config.kernel_size**2 * cin + 1) * config.trunk_width
            cin = config.trunk_width
        total += positions * (2 * config.trunk_width + 1) * config.num_classes
    return total


# --- EENW weight format ----------------------------------------------------
#
# Little-endian: magic "EENW" | version u32 | config length u32 + UTF-8 JSON |
# tensor count u32 | per tensor: name length u16, name bytes, ndim u8,
# dims u32 * ndim, payload f32 * prod(dims). Tensors are named
# stage{s}.block{b}.weight|bias and exit{n}.weight|bias with 1-based indices.


def _tensor_records(net: MultiExitNet) -> list[tuple[str, np.ndarray]]:
    records: list[tuple[str, np.ndarray]] = []
    for s, stage in enumerate(net.stages, start=1):
        for b, p in enumerate(stage, start=1):
            records.append((f"stage{s}.block{b}.weight", p.weights))
            records.append((f"stage{s}.block{b}.bias", p.bias))
    for n, p in enumerate(net.exit_heads, start=1):
        records.append((f"exit{n}.weight", p.weights))
        records.append((f"exit{n}.bias", p.bias))
    return records


def save_weights(net: MultiExitNet) -> bytes:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    blob = net.config.to_json().encode("utf-8")
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    records = _tensor_records(net)
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def _read_exact(buf: io.BytesIO, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise DataFormatError(f"truncated weight file while reading {what}")
    return data


def load_weights(data: bytes) -> MultiExitNet:
    buf = io.BytesIO(data)
    if _read_exact(buf, 4, "magic") != _MAGIC:
        raise DataFormatError("bad magic; not an EENW weight file")
    (version,) = struct.unpack("<I", _read_exact(buf, 4, "version"))
    if version != _VERSION:
        raise DataFormatError(f"unknown EENW version {version}")
    (blob_len,) = struct.unpack("<I", _read_exact(buf, 4, "config length"))
    config = ModelConfig.from_json(_read_exact(buf, blob_len, "config blob").decode("utf-8"))
    (count,) = struct.unpack("<I", _read_exact(buf, 4, "tensor count"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(buf, 2, "tensor name length"))
        name = _read_exact(buf, name_len, "tensor name").decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(buf, 1, f"{name} ndim"))
        dims = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim, f"{name} dims"))
        n_vals = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = _read_exact(buf, 4 * n_vals, f"{name} payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if buf.read(1):
        raise DataFormatError("trailing bytes after last tensor")

    def take(name: str, shape: tuple[int, ...]) -> np.ndarray:
        if name not in tensors:
            raise DataFormatError(f"missing tensor {name}")
        arr = tensors.pop(name)
        if arr.shape != shape:
            raise DataFormatError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        if not np.isfinite(arr).all():
            raise DataFormatError(f"tensor {name} contains non-finite values")
        return arr

    k = config.kernel_size
    c = config.trunk_width
    stages = []
    for s in range(1, config.num_exits + 1):
        blocks = []
        for b in range(1, config.blocks_per_stage + 1):
            cin = config.input_channels if (s == 1 and b == 1) else c
            blocks.append(
                ConvParams(
                    take(f"stage{s}.block{b}.weight", (c, cin, k, k)),
                    take(f"stage{s}.block{b}.bias", (c,)),
                )
            )
        stages.append(tuple(blocks))
    heads = tuple(
        ConvParams(
            take(f"exit{n}.weight", (config.num_classes, c, 1, 1)),
            take(f"exit{n}.bias", (config.num_classes,)),
        )
        for n in range(1, config.num_exits + 1)
    )
    if tensors:
        raise DataFormatError(f"unexpected tensors in file: {sorted(tensors)}")
    return MultiExitNet(config, tuple(stages), heads)


# --- Deterministic builders -------------------------------------------------


def build_fixture_model(seed: int, config: ModelConfig) -> MultiExitNet:
    """Pseudorandom net with weights uniform in [-0.1, 0.1] from splitmix64.

    The stream is consumed in serialization order, so the same seed yields a
    bitwise-identical net on any platform.
    """
    shapes: list[tuple[int, ...]] = []
    k, c = config.kernel_size, config.trunk_width
    for s in range(config.num_exits):
        for b in range(config.blocks_per_stage):
            cin = config.input_channels if (s == 0 and b == 0) else c
            shapes.append((c, cin, k, k))
            shapes.append((c,))
    for _ in range(config.num_exits):
        shapes.append((config.num_classes, c, 1, 1))
        shapes.append((config.num_classes,))
    total = sum(int(np.prod(sh)) for sh in shapes)
    flat = uniform_f32(seed, total, -0.1, 0.1)
    arrays: list[np.ndarray] = []
    off = 0
    for sh in shapes:
        n = int(np.prod(sh))
        arrays.append(flat[off : off + n].reshape(sh))
        off += n
    n_blocks = config.num_exits * config.blocks_per_stage
    stages = tuple(
        tuple(
            ConvParams(arrays[2 * (s * config.blocks_per_stage + b)],
                       arrays[2 * (s * config.blocks_per_stage + b) + 1])
            for b in range(config.blocks_per_stage)
        )
        for s in range(config.num_exits)
    )
    heads = tuple(
        ConvParams(arrays[2 * n_blocks + 2 * n], arrays[2 * n_blocks + 2 * n + 1])
        for n in range(config.num_exits)
    )
    return MultiExitNet(config, stages, heads)


def build_oracle_model(
    num_classes: int,
    exit_affines: list[tuple[np.ndarray, np.ndarray]],
    input_channels: int = 3,
) -> MultiExitNet:
    """Model whose exit logits are a per-pixel affine map of the input colors.

    The trunk is a chain of identity 1x1 convolutions (inputs must be
    nonnegative so relu is a no-op); exit n's head applies weight (K, C_in)
    and bias (K,) from exit_affines[n]. Per-pixel confidences are therefore
    closed-form functions of the image, which makes masking behavior exactly
    predictable in tests.
    """
    n_exits = len(exit_affines)
    config = ModelConfig(
        num_classes=num_classes,
        num_exits=n_exits,
        trunk_width=input_channels,
        blocks_per_stage=1,
        kernel_size=1,
        input_channels=input_channels,
    )
    eye = np.eye(input_channels, dtype=np.float32).reshape(
        input_channels, input_channels, 1, 1
    )
    zero = np.zeros(input_channels, dtype=np.float32)
    stages = tuple((ConvParams(eye, zero),) for _ in range(n_exits))
    heads = []
    for w, b in exit_affines:
        w = np.asarray(w, dtype=np.float32)
        b = np.asarray(b, dtype=np.float32)
        if w.shape != (num_classes, input_channels) or b.shape != (num_classes,):
            raise ConfigurationError(
                f"exit affine must be ({num_classes}, {input_channels}) + ({num_classes},)"
            )
        heads.append(ConvParams(w.reshape(num_classes, input_channels, 1, 1), b))
    return MultiExitNet(config, stages, tuple(heads))
