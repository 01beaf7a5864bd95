"""funcreg: functional regression toolkit for longitudinal trajectories.

Models irregularly observed curves as functional data: FPCA with
missing observations, penalized function-on-scalar and
function-on-function regression, a two-step FPCA+regression baseline,
bootstrap joint inference with CMA bands, and a Monte Carlo benchmark
harness.
"""

from .basis import (
    BasisSystem,
    PenaltyMatrix,
    difference_penalty,
    evaluate_basis,
    tensor_basis,
    trapezoid_weights,
)
from .data_io import (
    FunctionalSample,
    PreprocessConfig,
    PreprocessReport,
    attach_covariates,
    load_covariates,
    preprocess,
)
from .errors import (
    DegenerateBandError,
    DomainError,
    InferenceError,
    InputError,
    NumericalError,
)
from .fofr import FofrFit, FofrSpec, evaluate_surface, fit_fofr, functional_covariate_columns
from .fosr import (
    FosrFit,
    FosrReport,
    FosrSpec,
    assemble_long_design,
    fit_fosr,
    fit_report,
    predict_coefficient,
)
from .fpca import FpcaConfig, FpcaResult, default_grid, fit_fpca, impute_curves
from .inference import (
    BootstrapBand,
    BootstrapResult,
    bootstrap_fofr,
    bootstrap_fosr,
    bootstrap_twostep,
    cma_band,
    contrast_band,
    stratified_resample,
)
from .sim import SimTruth, default_truth, generate_dataset, ise, run_benchmark
from .twostep import (
    TwoStepFit,
    fit_twostep,
    holm_adjust,
    induce_functional_coefficients,
    regress_scores,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSystem",
    "PenaltyMatrix",
    "difference_penalty",
    "evaluate_basis",
    "tensor_basis",
    "trapezoid_weights",
    "FunctionalSample",
    "PreprocessConfig",
    "PreprocessReport",
    "attach_covariates",
    "load_covariates",
    "preprocess",
    "DegenerateBandError",
    "DomainError",
    "InferenceError",
    "InputError",
    "NumericalError",
    "FofrFit",
    "FofrSpec",
    "evaluate_surface",
    "fit_fofr",
    "functional_covariate_columns",
    "FosrFit",
    "FosrReport",
    "FosrSpec",
    "assemble_long_design",
    "fit_fosr",
    "fit_report",
    "predict_coefficient",
    "FpcaConfig",
    "FpcaResult",
    "default_grid",
    "fit_fpca",
    "impute_curves",
    "BootstrapBand",
    "BootstrapResult",
    "bootstrap_fofr",
    "bootstrap_fosr",
    "bootstrap_twostep",
    "cma_band",
    "contrast_band",
    "stratified_resample",
    "SimTruth",
    "default_truth",
    "generate_dataset",
    "ise",
    "run_benchmark",
    "TwoStepFit",
    "fit_twostep",
    "holm_adjust",
    "induce_functional_coefficients",
    "regress_scores",
]
