"""Double additive location-scale models for censored continuous responses.

The package estimates additive covariate effects on the conditional mean
and standard deviation of a right- or interval-censored response, with a
moment-constrained nonparametric error density and automatic selection
of all smoothing parameters.
"""

from .density import (
    BinGrid,
    ErrorDensity,
    bin_residuals,
    fit_error_density,
    hazard_basis,
    select_tau,
)
from .errors import (
    ConvergenceError,
    DalsmError,
    InvalidConfigurationError,
    NumericalFailureError,
    OutOfSupportError,
    UnidentifiableModelError,
)
from .fitter import (
    FitResult,
    ModelSpec,
    PreparedData,
    effective_dof,
    fit,
    pointwise_bands,
    prepare_data,
)
from .likelihood import (
    CensoredObservation,
    NormalError,
    ObservationSet,
    loglik,
    weights,
)
from .simulate import (
    MetricsTable,
    SimulationScenario,
    generate,
    model_spec,
    run_replicate,
    run_study,
    score,
)
from .splines import KnotGrid, SplineBasis, build_basis, build_penalty, eval_basis

__version__ = "0.1.0"

__all__ = [
    "BinGrid",
    "CensoredObservation",
    "ConvergenceError",
    "DalsmError",
    "ErrorDensity",
    "FitResult",
    "InvalidConfigurationError",
    "KnotGrid",
    "MetricsTable",
    "ModelSpec",
    "NormalError",
    "NumericalFailureError",
    "ObservationSet",
    "OutOfSupportError",
    "PreparedData",
    "SimulationScenario",
    "SplineBasis",
    "UnidentifiableModelError",
    "bin_residuals",
    "build_basis",
    "build_penalty",
    "effective_dof",
    "eval_basis",
    "fit",
    "fit_error_density",
    "generate",
    "hazard_basis",
    "loglik",
    "model_spec",
    "pointwise_bands",
    "prepare_data",
    "run_replicate",
    "run_study",
    "score",
    "select_tau",
    "weights",
]
