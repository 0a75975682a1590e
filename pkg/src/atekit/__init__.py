"""Treatment-effect estimation under unconfoundedness, with supplementary diagnostics."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    ATE,
    ATT,
    METHODS,
    OVERLAP,
    AteError,
    Dataset,
    Estimand,
    EstimationError,
    NuisanceEstimates,
    PointEstimate,
    RunConfig,
    ValidationError,
)
from .dataio import generate_synthetic, load_csv, named_dgp, rhc_prepare  # noqa: E402
from .diagnostics import (  # noqa: E402
    bias_function_summary,
    bootstrap_se,
    build_report,
    covariate_split_sensitivity,
    half_sample_bias,
)
from .estimators import estimate, trimmed_estimate  # noqa: E402

__all__ = [
    "ATE", "ATT", "METHODS", "OVERLAP", "AteError", "Dataset", "Estimand",
    "EstimationError", "NuisanceEstimates", "PointEstimate", "RunConfig",
    "ValidationError", "bias_function_summary", "bootstrap_se", "build_report",
    "covariate_split_sensitivity", "estimate", "generate_synthetic",
    "half_sample_bias", "load_csv", "named_dgp", "rhc_prepare", "trimmed_estimate",
]
