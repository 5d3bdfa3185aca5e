"""Early-exit semantic segmentation runtime.

Calibrates per-class confidence thresholds from training-set statistics and
runs confidence-adaptive masked inference: pixels predicted confidently at
an early exit are frozen, later layers skip them, and an exact FLOPs ledger
prices the saved computation. A uniform-threshold baseline and a dense
(never-exit) mode share the same execution path for like-for-like
comparisons.
"""

from .calibration import (
    ClassConfidenceMatrix,
    ClassMeanTable,
    ThresholdVector,
    accumulate_class_means,
    average_over_layers,
    confidence_gaps,
    load_thresholds,
    save_thresholds,
    scale_thresholds,
)
from .errors import (
    ConfigurationError,
    DataFormatError,
    EesegError,
    UndefinedMetricError,
    UsageError,
)
from .masking import (
    FlopsLedger,
    PixelMask,
    PredictionCanvas,
    cost_per_position,
    masked_conv2d,
)
from .metrics import (
    ConfusionMatrix,
    EvalReport,
    accumulate_confusion,
    anytime_prediction,
    build_report,
    format_comparison_table,
    miou,
)
from .model import (
    AdaptiveResult,
    ModelConfig,
    MultiExitNet,
    build_fixture_model,
    build_oracle_model,
    carry_for_stage,
    dense_flops_total,
    forward_adaptive,
    forward_dense,
    forward_dense_logits,
    load_weights,
    save_weights,
)
from .policy import (
    DensePolicy,
    ExitPolicy,
    PerClassPolicy,
    UniformPolicy,
    equivalent_uniform,
    should_finalize,
    update_mask,
)
from .tensor import ConvParams, Tensor, argmax_channels, conv2d, relu, softmax_channels

__version__ = "0.1.0"

__all__ = [
    "AdaptiveResult",
    "ClassConfidenceMatrix",
    "ClassMeanTable",
    "ConfigurationError",
    "ConfusionMatrix",
    "ConvParams",
    "DataFormatError",
    "DensePolicy",
    "EesegError",
    "EvalReport",
    "ExitPolicy",
    "FlopsLedger",
    "ModelConfig",
    "MultiExitNet",
    "PerClassPolicy",
    "PixelMask",
    "PredictionCanvas",
    "Tensor",
    "ThresholdVector",
    "UndefinedMetricError",
    "UniformPolicy",
    "UsageError",
    "accumulate_class_means",
    "accumulate_confusion",
    "anytime_prediction",
    "argmax_channels",
    "average_over_layers",
    "build_fixture_model",
    "build_oracle_model",
    "build_report",
    "carry_for_stage",
    "confidence_gaps",
    "conv2d",
    "cost_per_position",
    "dense_flops_total",
    "equivalent_uniform",
    "format_comparison_table",
    "forward_adaptive",
    "forward_dense",
    "forward_dense_logits",
    "load_thresholds",
    "load_weights",
    "masked_conv2d",
    "miou",
    "relu",
    "save_thresholds",
    "save_weights",
    "scale_thresholds",
    "should_finalize",
    "softmax_channels",
    "update_mask",
]
