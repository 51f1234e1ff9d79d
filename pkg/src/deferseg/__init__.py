"""deferseg: uncertainty-aware deferral for dense binary prediction.

Aggregate a stack of stochastic predictions into a mean map plus a per-pixel
uncertainty map, decide which pixels to accept and which to defer to a human,
calibrate the probabilities, and measure what the deferral bought.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .aggregate import confidence_map, mc_aggregate, tta_aggregate
from .calibration import (
    ReliabilityTable,
    TemperatureModel,
    apply_temperature,
    ece,
    fit_temperature,
)
from .deferral import (
    CRITERIA,
    POLICIES,
    DeferralModel,
    apply_model,
    confidence_aware_score,
    defer_adaptive,
    defer_confidence_aware,
    defer_global,
    deferral_f1,
    fit_threshold,
)
from .errors import (
    DefersegError,
    DegenerateTestError,
    InfeasibleFitError,
    InputError,
    InvariantError,
    UndefinedMetricError,
)
from .fileio import (
    read_array_file,
    read_json,
    write_array_file,
    write_decision_pgm,
    write_json,
)
from .maps import (
    DecisionMap,
    GroundTruthMask,
    LogitMap,
    PredictionStack,
    ProbMap,
    UncertaintyMap,
)
from .metrics import (
    RiskCoverageCurve,
    aucc_from_points,
    bootstrap_ci,
    dice,
    err,
    iou,
    operating_points,
    paired_ttest,
    risk_coverage_curve,
    roc_auc,
    unc_auroc,
)
from .numerics import binary_entropy, percentile
from .report import EvaluationResult, evaluate
from .synth import SynthSpec, generate
from .transforms import TRANSFORM_IDS, apply_transform, invert_transform

__all__ = [
    "__version__",
    "BACKEND",
    "mc_aggregate",
    "tta_aggregate",
    "confidence_map",
    "TemperatureModel",
    "ReliabilityTable",
    "fit_temperature",
    "apply_temperature",
    "ece",
    "POLICIES",
    "CRITERIA",
    "DeferralModel",
    "defer_global",
    "defer_adaptive",
    "defer_confidence_aware",
    "confidence_aware_score",
    "apply_model",
    "deferral_f1",
    "fit_threshold",
    "DefersegError",
    "InputError",
    "InvariantError",
    "UndefinedMetricError",
    "DegenerateTestError",
    "InfeasibleFitError",
    "read_array_file",
    "write_array_file",
    "write_decision_pgm",
    "read_json",
    "write_json",
    "ProbMap",
    "PredictionStack",
    "GroundTruthMask",
    "UncertaintyMap",
    "DecisionMap",
    "LogitMap",
    "RiskCoverageCurve",
    "dice",
    "iou",
    "roc_auc",
    "unc_auroc",
    "err",
    "risk_coverage_curve",
    "aucc_from_points",
    "operating_points",
    "paired_ttest",
    "bootstrap_ci",
    "binary_entropy",
    "percentile",
    "EvaluationResult",
    "evaluate",
    "SynthSpec",
    "generate",
    "TRANSFORM_IDS",
    "apply_transform",
    "invert_transform",
]
