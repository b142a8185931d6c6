"""Congestion-game analysis of Mixture-of-Experts token routing.

The package models per-layer MoE routing as an entropy-regularized
congestion game on the expert simplex: it solves single-type and
multi-type equilibria, fits the effective congestion coefficient from
routing traces, decomposes it into explicit (auxiliary-loss) and implicit
parts, computes scope diagnostics, and classifies the surge /
stabilization / relaxation phases of training-checkpoint series.
"""

from .core import (
    GameParams,
    LoadDistribution,
    QualityVector,
    entropy_normalized,
    l1_distance,
    quality_spread,
    softmax,
)
from .diagnostics import (
    CheckpointRecord,
    Phase,
    PhaseReport,
    SpreadEstimate,
    classify_phases,
    contraction_rate,
    contraction_rate_effective,
    continuation_spread,
    gamma_critical,
    myopic_gap_bound,
    topk_error_bound,
)
from .equilibrium import (
    EquilibriumResult,
    MultiTypeEquilibriumResult,
    MultiTypeSpec,
    best_response,
    multitype_potential,
    potential,
    solve_multitype,
    solve_single,
    topk_fixed_point,
)
from .errors import (
    BadMagicError,
    DegenerateQualityError,
    FieldConsistencyError,
    InvalidInputError,
    NonConvergedError,
    PipelineFailedError,
    TraceFormatError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .evaluate import (
    BaselineKind,
    BootstrapCI,
    EvalConfig,
    EvalReport,
    SeriesConfig,
    SeriesResult,
    analyze_series,
    bootstrap_ci,
    cluster_tokens,
    evaluate_trace,
    fit_temperature,
    heldout_l1,
    predict,
)
from .identify import (
    BoundaryFlag,
    FitResult,
    RecoveryReport,
    decompose,
    fit_gamma,
    residual,
    synthetic_recovery,
)
from .traces import (
    ManifestEntry,
    RoutingTrace,
    SplitSpec,
    estimate_quality,
    observed_load,
    read_manifest,
    read_trace,
    split_three_way,
    write_manifest,
    write_trace,
)

__version__ = "0.1.0"
