"""Function-on-scalar regression with penalized splines.

The response curves enter in long format (one row per observed
subject-week). Time-varying coefficients, including the intercept, are
spline-expanded and penalized per term; subject-level functional random
effects are expanded in FPCA eigenfunctions with plug-in ridge weights;
smoothing parameters are selected by GCV (or optionally a REML profile)
over a log-spaced grid.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from .basis import BasisSystem, difference_penalty, evaluate_basis
from .data_io import FunctionalSample
from .errors import InputError
from .fpca import FpcaResult, grid_indices
from .plsq import MixedDesign, PenaltyComponent, select_lambdas, solve_plsq

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA_GRID = np.logspace(-6, 8, 50)
DEFAULT_MIN_OBS = 4

INTERCEPT = "intercept"


@dataclass
class FosrSpec:
    """Model specification: which covariates vary over time, which do not."""

    varying_covariates: list[str]
    invariant_covariates: list[str]
    basis: BasisSystem
    num_random_components: int = 2
    lambda_grid: np.ndarray = field(default_factory=lambda: DEFAULT_LAMBDA_GRID.copy())
    min_obs: int = DEFAULT_MIN_OBS
    criterion: str = "gcv"

    def __post_init__(self):
        overlap = set(self.varying_covariates) & set(self.invariant_covariates)
        if overlap:
            raise InputError(f"covariates cannot be both varying and invariant: {overlap}")
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)
        if self.lambda_grid.size == 0:
            raise InputError("lambda_grid must be non-empty")

    @property
    def varying_terms(self) -> list[str]:
        return [INTERCEPT] + list(self.varying_covariates)


@dataclass
class DesignBundle:
    """Assembled long-format design plus bookkeeping for reports."""

    design: MixedDesign
    spec: FosrSpec
    term_slices: dict[str, slice]
    scalar_slices: dict[str, int]
    samples: list[FunctionalSample]
    excluded_subjects: list[str]
    fpca: FpcaResult


@dataclass
class FosrFit:
    """Fitted FoSR model."""

    functional_coefficients: np.ndarray  # (L, Q+1); column 0 is the intercept
    varying_names: list[str]
    scalar_table: pd.DataFrame  # term, estimate, se, p_value (working model)
    lambdas: dict[str, float]
    lambda_boundary: dict[str, str | None]
    random_effect_variances: np.ndarray
    residual_variance: float
    effective_df: dict[str, float]
    subject_effects: np.ndarray  # (n, K)
    basis: BasisSystem
    spec: FosrSpec
    subject_ids: list[str]
    excluded_subjects: list[str]
    bundle: DesignBundle = field(repr=False)

    def to_json(self) -> str:
        return json.dumps(
            {
                "varying_names": self.varying_names,
                "functional_coefficients": self.functional_coefficients.tolist(),
                "scalar_coefficients": {
                    r["term"]: {"estimate": r["estimate"], "se": r["se"], "p_value": r["p_value"]}
                    for r in self.scalar_table.to_dict("records")
                },
                "lambdas": self.lambdas,
                "lambda_boundary": self.lambda_boundary,
                "random_effect_variances": self.random_effect_variances.tolist(),
                "residual_variance": self.residual_variance,
                "effective_df": self.effective_df,
                "excluded_subjects": self.excluded_subjects,
                "basis": self.basis.to_json_dict(),
            },
            sort_keys=True,
            indent=2,
        )

    def coefficient_frame(self, grid: np.ndarray) -> pd.DataFrame:
        """Long CSV-ready table (covariate, t, estimate) on a grid."""
        rows = []
        for name in self.varying_names:
            est = predict_coefficient(self, name, grid)
            rows.append(pd.DataFrame({"covariate": name, "t": grid, "estimate": est}))
        return pd.concat(rows, ignore_index=True)


def _covariate_value(sample: FunctionalSample, name: str) -> float:
    try:
        return float(sample.covariates[name])
    except KeyError:
        raise InputError(
            f"subject {sample.subject_id!r} is missing covariate {name!r}"
        ) from None


def assemble_long_design(
    samples: list[FunctionalSample], spec: FosrSpec, fpca: FpcaResult
) -> DesignBundle:
    """Build the long-format design: O(np) rows, per-subject blocks.

    Subjects with fewer than ``spec.min_obs`` observations are excluded
    (logged and recorded); remaining rows get spline-expanded varying
    blocks, invariant covariate columns, and subject-indexed
    eigenfunction columns for the random effects.
    """
    K = spec.num_random_components
    if K > fpca.num_components:
        raise InputError(
            f"num_random_components={K} exceeds available eigenfunctions "
            f"({fpca.num_components})"
        )
    kept, excluded = [], []
    for s in samples:
        if s.n_obs < spec.min_obs:
            excluded.append(s.subject_id)
        else:
            kept.append(s)
    if excluded:
        logger.warning(
            "excluded %d subject(s) with fewer than %d observations: %s",
            len(excluded), spec.min_obs, excluded[:10],
        )
    if not kept:
        raise InputError("no subjects left after min_obs filtering")

    L = spec.basis.num_basis
    Q = len(spec.varying_covariates)
    p_fixed = L * (Q + 1) + len(spec.invariant_covariates)
    term_slices = {
        name: slice(m * L, (m + 1) * L) for m, name in enumerate(spec.varying_terms)
    }
    scalar_slices = {
        name: L * (Q + 1) + j for j, name in enumerate(spec.invariant_covariates)
    }

    all_times = np.concatenate([s.times for s in kept])
    B_all = evaluate_basis(spec.basis, all_times)
    if K:
        idx_all = grid_indices(all_times, fpca.grid)
    offsets = np.cumsum([0] + [s.n_obs for s in kept])

    F_blocks, y_blocks, Z_blocks = [], [], []
    for i, s in enumerate(kept):
        B = B_all[offsets[i]:offsets[i + 1]]
        Fi = np.zeros((s.n_obs, p_fixed))
        Fi[:, term_slices[INTERCEPT]] = B
        for name in spec.varying_covariates:
            Fi[:, term_slices[name]] = B * _covariate_value(s, name)
        for name in spec.invariant_covariates:
            Fi[:, scalar_slices[name]] = _covariate_value(s, name)
        F_blocks.append(Fi)
        y_blocks.append(s.values)
        if K:
            idx = idx_all[offsets[i]:offsets[i + 1]]
            Z_blocks.append(fpca.eigenfunctions[idx, :K])

    DtD = difference_penalty(L, spec.basis.penalty_order).gram()
    penalties = [
        PenaltyComponent(name=name, start=sl.start, stop=sl.stop, matrix=DtD)
        for name, sl in term_slices.items()
    ]
    if K:
        lam_k = np.maximum(fpca.eigenvalues[:K], 1e-12)
        sigma2 = max(fpca.noise_variance, 1e-12)
        ridge = sigma2 / lam_k
        design = MixedDesign(
            F_blocks, y_blocks, Z_blocks, ridge, penalties,
            subject_ids=[s.subject_id for s in kept],
        )
    else:
        design = MixedDesign(
            F_blocks, y_blocks, None, np.zeros(0), penalties,
            subject_ids=[s.subject_id for s in kept],
        )
    return DesignBundle(
        design=design,
        spec=spec,
        term_slices=term_slices,
        scalar_slices=scalar_slices,
        samples=kept,
        excluded_subjects=excluded,
        fpca=fpca,
    )


def fit_fosr(
    samples: list[FunctionalSample], spec: FosrSpec, fpca: FpcaResult
) -> FosrFit:
    """Assemble, select smoothing parameters, and solve."""
    bundle = assemble_long_design(samples, spec, fpca)
    lambdas, flags, sol = select_lambdas(
        bundle.design, spec.lambda_grid, criterion=spec.criterion
    )
    return _fit_from_solution(bundle, lambdas, flags, sol)


def _fit_from_solution(bundle: DesignBundle, lambdas, flags, sol) -> FosrFit:
    spec = bundle.spec
    L = spec.basis.num_basis
    names = spec.varying_terms
    coef = np.column_stack([sol.beta[bundle.term_slices[n]] for n in names])

    rows = []
    for name, col in bundle.scalar_slices.items():
        est = float(sol.beta[col])
        se = float(np.sqrt(max(sol.cov_fixed[col, col], 0.0)))
        p = 2.0 * float(norm.sf(abs(est) / se)) if se > 0 else np.nan
        rows.append({"term": name, "estimate": est, "se": se, "p_value": p})
    scalar_table = pd.DataFrame(rows, columns=["term", "estimate", "se", "p_value"])

    lam_map = {name: float(lam) for name, lam in zip(names, lambdas)}
    flag_map = {name: flag for name, flag in zip(names, flags)}
    edf = {n: sol.edf(bundle.term_slices[n].start, bundle.term_slices[n].stop) for n in names}

    K = spec.num_random_components
    rev = bundle.fpca.eigenvalues[:K].copy() if K else np.zeros(0)
    return FosrFit(
        functional_coefficients=coef,
        varying_names=names,
        scalar_table=scalar_table,
        lambdas=lam_map,
        lambda_boundary=flag_map,
        random_effect_variances=rev,
        residual_variance=sol.sigma2,
        effective_df=edf,
        subject_effects=sol.zeta,
        basis=spec.basis,
        spec=spec,
        subject_ids=list(bundle.design.subject_ids),
        excluded_subjects=bundle.excluded_subjects,
        bundle=bundle,
    )


def fit_fosr_fixed_lambda(
    samples: list[FunctionalSample],
    spec: FosrSpec,
    fpca: FpcaResult,
    lam: float,
) -> FosrFit:
    """Fit with the same lambda pinned on every functional term."""
    bundle = assemble_long_design(samples, spec, fpca)
    lambdas = np.full(len(bundle.design.penalties), float(lam))
    sol = solve_plsq(bundle.design, lambdas)
    return _fit_from_solution(bundle, lambdas, [None] * lambdas.size, sol)


def predict_coefficient(fit: FosrFit, covariate: str, grid) -> np.ndarray:
    """Evaluate a fitted time-varying coefficient on a grid."""
    if covariate not in fit.varying_names:
        raise KeyError(
            f"unknown varying coefficient {covariate!r}; have {fit.varying_names}"
        )
    col = fit.varying_names.index(covariate)
    B = evaluate_basis(fit.basis, np.asarray(grid, dtype=float))
    return B @ fit.functional_coefficients[:, col]


@dataclass
class FosrReport:
    """Diagnostics: effective df, residuals by subject, random-effect value."""

    effective_df: dict[str, float]
    lambdas: dict[str, float]
    lambda_boundary: dict[str, str | None]
    criterion: str
    residual_mean_by_subject: pd.DataFrame  # subject_id, with_z, without_z
    sd_with_z: float
    sd_without_z: float
    excluded_subjects: list[str]

    @property
    def shrink_ratio(self) -> float:
        if self.sd_without_z == 0:
            return np.nan
        return self.sd_with_z / self.sd_without_z

    def to_json(self) -> str:
        return json.dumps(
            {
                "effective_df": self.effective_df,
                "lambdas": self.lambdas,
                "lambda_boundary": self.lambda_boundary,
                "criterion": self.criterion,
                "sd_residual_mean_with_z": self.sd_with_z,
                "sd_residual_mean_without_z": self.sd_without_z,
                "excluded_subjects": self.excluded_subjects,
            },
            sort_keys=True,
            indent=2,
        )


def fit_report(fit: FosrFit) -> FosrReport:
    """Residual diagnostics, comparing fits with and without random effects.

    The no-random-effect comparison reuses the selected lambdas so the
    contrast isolates the subject-level term.
    """
    bundle = fit.bundle
    sol = solve_plsq(bundle.design, [fit.lambdas[n] for n in fit.varying_names])
    means_with = np.array([float(np.mean(r)) for r in sol.residual_blocks()])

    spec = bundle.spec
    if spec.num_random_components:
        design_no_z = MixedDesign(
            bundle.design.F_blocks,
            bundle.design.y_blocks,
            None,
            np.zeros(0),
            bundle.design.penalties,
            subject_ids=list(bundle.design.subject_ids),
        )
    else:
        design_no_z = bundle.design
    sol_no_z = solve_plsq(design_no_z, [fit.lambdas[n] for n in fit.varying_names])
    means_without = np.array([float(np.mean(r)) for r in sol_no_z.residual_blocks()])

    table = pd.DataFrame(
        {
            "subject_id": bundle.design.subject_ids,
            "with_z": means_with,
            "without_z": means_without,
        }
    )
    return FosrReport(
        effective_df=fit.effective_df,
        lambdas=fit.lambdas,
        lambda_boundary=fit.lambda_boundary,
        criterion=spec.criterion,
        residual_mean_by_subject=table,
        sd_with_z=float(np.std(means_with, ddof=1)),
        sd_without_z=float(np.std(means_without, ddof=1)),
        excluded_subjects=fit.excluded_subjects,
    )
