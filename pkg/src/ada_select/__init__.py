"""Density-aware active domain adaptation selection on synthetic pools.

The package simulates an active-labeling loop under domain shift: regions
of a target pool are ranked by how much more typical they are of the
target domain than of the labeled source domain (per-class Gaussian
mixture log-density ratios), labeling budgets are balanced across classes
by estimated class-conditional divergence, and a decaying schedule hands
the budget over from density-driven to uncertainty-driven selection as
rounds progress.
"""

from .density import (
    LOG_FLOOR,
    DensityEstimators,
    GmmModel,
    build_estimators,
    choose_component_count,
    fit_gmm,
    log_density,
    log_density_batch,
    sample_gmm,
)
from .errors import InternalError, InvalidInput, NotEstimable
from .harness import (
    ComparisonResult,
    ExperimentConfig,
    RoundMetrics,
    Strategy,
    run_comparison,
    run_experiment,
    selection_histogram,
    sign_test_p,
)
from .model import (
    Classifier,
    EvalReport,
    TrainSpec,
    evaluate,
    extract_feature,
    finetune,
    init_classifier,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    warmup,
)
from .pool import (
    Domain,
    DomainPool,
    LabelState,
    Region,
    Sample,
    acquire_labels,
    aggregate_region,
    build_regions,
    load_pool_csv,
    refresh_aggregates,
    save_pool_csv,
)
from .schedule import (
    BudgetPlan,
    ScheduleParams,
    SchedulePolicy,
    density_fraction,
    split_budget,
)
from .selection import (
    ClassKl,
    ScoredRegion,
    class_budgets,
    confidence_score,
    entropy_score,
    estimate_class_kl,
    margin_score,
    score_regions,
    select_density,
    select_uncertainty,
    verify_kl_decomposition,
)
from .simulate import MixtureComponent, ShiftSpec, custom_shift_spec, generate, oracle_label, shift_bench_v1

__version__ = "1.0.0"

__all__ = [
    "LOG_FLOOR",
    "BudgetPlan",
    "Classifier",
    "ClassKl",
    "ComparisonResult",
    "DensityEstimators",
    "Domain",
    "DomainPool",
    "EvalReport",
    "ExperimentConfig",
    "GmmModel",
    "InternalError",
    "InvalidInput",
    "LabelState",
    "MixtureComponent",
    "NotEstimable",
    "Region",
    "RoundMetrics",
    "Sample",
    "ScheduleParams",
    "SchedulePolicy",
    "ScoredRegion",
    "ShiftSpec",
    "Strategy",
    "TrainSpec",
    "acquire_labels",
    "aggregate_region",
    "build_estimators",
    "build_regions",
    "choose_component_count",
    "class_budgets",
    "confidence_score",
    "custom_shift_spec",
    "density_fraction",
    "entropy_score",
    "estimate_class_kl",
    "evaluate",
    "extract_feature",
    "finetune",
    "fit_gmm",
    "generate",
    "init_classifier",
    "load_checkpoint",
    "load_pool_csv",
    "log_density",
    "log_density_batch",
    "margin_score",
    "oracle_label",
    "predict_proba",
    "refresh_aggregates",
    "run_comparison",
    "run_experiment",
    "sample_gmm",
    "save_checkpoint",
    "save_pool_csv",
    "score_regions",
    "select_density",
    "select_uncertainty",
    "selection_histogram",
    "shift_bench_v1",
    "sign_test_p",
    "split_budget",
    "verify_kl_decomposition",
    "warmup",
]
