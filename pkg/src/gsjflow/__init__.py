"""Accelerated inversion of transformer autoregressive coupling flows.

The exact inverse of a causal coupling block is serial in the sequence
position; this package inverts it instead as a fixed-point problem, in
parallel sweeps, with a module-segmented Gauss-Seidel-Jacobi hybrid for
the blocks that iterate slowly. Per-block diagnostics (an initial-guess
metric and a convergence ranking metric) decide the iteration plan.
"""

from .analysis import (
    ErrorPropagation,
    RecursionReport,
    convergence_distance_trace,
    error_propagation_matrix,
    exact_fixed_point,
    nilpotency_check,
    residual_field,
    update_map,
    verify_error_recursion,
)
from .errors import (
    CausalityViolationError,
    DimensionMismatchError,
    GSJFlowError,
    ModelFormatError,
    ModelVersionError,
    NumericalOverflowError,
    StrategyFormatError,
)
from .estimator import BlockFlowTransformer, GSJacobiSampler
from .flow import (
    AttentionLayer,
    FlowBlock,
    FlowModel,
    ModelConfig,
    flip_seq,
    forward_block,
    forward_model,
    gen_synthetic_model,
    inverse_block_serial,
    inverse_model_serial,
    scale_shift,
)
from .metrics import (
    BlockMetrics,
    CrmComponents,
    MetricReport,
    StackSelection,
    compute_crm,
    compute_igm,
    compute_igm_info,
    metric_pass,
    select_stack,
    synthetic_data_batch,
)
from .model_io import MODEL_FORMAT, load_model, save_model
from .samplers import (
    ConvergenceTrace,
    InitMode,
    Segmentation,
    TraceRecord,
    gs_jacobi_sample,
    jacobi_sample,
    sample_model,
    serial_su_evals,
)
from .strategy import Strategy, format_strategy, parse_strategy
from .tensor_ops import (
    batch_mean,
    frobenius_norm,
    matrix_norm,
    one_norm,
    patchify,
    spectral_norm,
    spectral_norm_info,
    unpatchify,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
