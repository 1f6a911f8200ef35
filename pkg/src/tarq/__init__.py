"""Tail-aware reconstruction quantization for dense weight matrices."""

from .errors import (
    BadSpec,
    BitsUnsupported,
    DimMismatch,
    EmptyBatch,
    EmptyReport,
    EmptyUtterance,
    FormatError,
    InsufficientCorpus,
    LengthMismatch,
    ShapeChainMismatch,
    SingularMetric,
    TarqError,
)
from .gptq import SweepConfig, gptq_sweep, sweep_loss_report
from .lattice import QuantConfig, QuantizedTensor, dequantize, pack4, quantize_rtn, unpack4
from .linalg import cholesky_of_inverse, damped_inverse, weighted_inner, weighted_loss
from .pipeline import ablation_variant, compute_direction, fit_alpha, sequential_sweep, tarq_layer
from .spqr import GateConfig, gate_weights, select_outliers, spqr_tarq_layer
from .stats import (
    GroupedMoments,
    RarebalMetric,
    TaggedActivations,
    accumulate_moments,
    group_losses,
    mixture_decompose,
    rare_mass_share,
    rarebal_metric,
)

__version__ = "0.1.0"
