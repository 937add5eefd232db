"""Cost-aware feature transfer between data domains.

The package moves labelled source-domain samples toward a target domain in a
shared low-dimensional space, steering each move with a misclassification
cost matrix, then trains a kernel classifier on the pooled result.
"""

from .classify import (
    KernelParams,
    KernelSvmClassifier,
    MulticlassModel,
    grid_search,
    group_folds,
    kkt_violations,
    load_model,
    predict_many,
    save_model,
    train_binary,
    train_multiclass,
)
from .config import PipelineConfig, load_config, parse_config
from .dataset import (
    DEFAULT_CLASS_NAMES,
    AffineShift,
    FeatureSet,
    SplitPlan,
    SynthConfig,
    concat_feature_sets,
    generate_synthetic,
    load_features,
    load_split,
    save_features,
    save_split,
    split_group_aware,
)
from .errors import (
    ArtifactError,
    ConfigError,
    ConvergenceError,
    CostShiftError,
    DataFormatError,
    DegenerateInputError,
    EigenSolverError,
    GridSearchError,
)
from .evaluation import (
    EvalReport,
    ProtocolResult,
    RunEntry,
    builtin_cost_matrices,
    collapse_to_core,
    evaluate,
    evaluate_predictions,
    load_report,
    resolve_transfer_bias,
    run_protocol,
    run_protocol_multitask,
    run_seeds,
    save_report,
)
from .gmm import ClassGmmBank, fit_class_gmms, fisher_displacement, load_bank, save_bank
from .reduction import (
    Projection,
    SharedSubspace,
    fit_projection,
    fit_projection_multi,
    load_projection,
    project,
    save_projection,
)
from .transfer import (
    CostBiasedTransfer,
    CostMatrix,
    SimplexSettings,
    TransferConfig,
    TransferResult,
    load_cost_matrix,
    responsibilities,
    save_cost_matrix,
    transfer_all,
    transfer_feature,
    transfer_with_banks,
    weighted_responsibilities,
)

__version__ = "0.1.0"

__all__ = [
    "AffineShift",
    "ArtifactError",
    "ClassGmmBank",
    "ConfigError",
    "ConvergenceError",
    "CostBiasedTransfer",
    "CostMatrix",
    "CostShiftError",
    "DataFormatError",
    "DEFAULT_CLASS_NAMES",
    "DegenerateInputError",
    "EigenSolverError",
    "EvalReport",
    "FeatureSet",
    "GridSearchError",
    "KernelParams",
    "KernelSvmClassifier",
    "MulticlassModel",
    "PipelineConfig",
    "Projection",
    "ProtocolResult",
    "RunEntry",
    "SharedSubspace",
    "SimplexSettings",
    "SplitPlan",
    "SynthConfig",
    "TransferConfig",
    "TransferResult",
    "builtin_cost_matrices",
    "collapse_to_core",
    "concat_feature_sets",
    "evaluate",
    "evaluate_predictions",
    "fisher_displacement",
    "fit_class_gmms",
    "fit_projection",
    "fit_projection_multi",
    "generate_synthetic",
    "grid_search",
    "group_folds",
    "kkt_violations",
    "load_bank",
    "load_config",
    "load_cost_matrix",
    "load_features",
    "load_model",
    "load_projection",
    "load_report",
    "load_split",
    "parse_config",
    "predict_many",
    "project",
    "resolve_transfer_bias",
    "responsibilities",
    "run_protocol",
    "run_protocol_multitask",
    "run_seeds",
    "save_bank",
    "save_cost_matrix",
    "save_features",
    "save_model",
    "save_projection",
    "save_report",
    "save_split",
    "split_group_aware",
    "train_binary",
    "train_multiclass",
    "transfer_all",
    "transfer_feature",
    "transfer_with_banks",
    "weighted_responsibilities",
]
