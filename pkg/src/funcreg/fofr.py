"""Function-on-function regression with per-arm coefficient surfaces.

Follow-up curves are regressed on intervention-period curves through
bivariate tensor-product spline surfaces, one per study arm, plus a
smooth intercept, optional time-varying scalar effects over the
follow-up domain, time-invariant scalar effects, and subject-level
random effects expanded in follow-up eigenfunctions. The functional
predictor must be imputed to a complete grid first (see
``fpca.impute_curves``); its integral enters by trapezoidal quadrature.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from .basis import BasisSystem, difference_penalty, evaluate_basis, trapezoid_weights
from .data_io import FunctionalSample
from .errors import InputError
from .fosr import DEFAULT_LAMBDA_GRID, DEFAULT_MIN_OBS
from .fpca import FpcaResult, grid_indices
from .plsq import MixedDesign, PenaltyComponent, select_lambdas, solve_plsq

logger = logging.getLogger(__name__)

INTERCEPT = "intercept"


@dataclass
class FofrSpec:
    """Specification of the cross-period regression."""

    arms: list[str]
    t_grid: np.ndarray  # grid of the (imputed) functional predictor
    basis_t: BasisSystem  # marginal basis over the predictor domain (K1)
    basis_u: BasisSystem  # marginal basis over the response domain (K2)
    basis_response: BasisSystem  # basis for intercept and varying scalar effects
    varying_covariates: list[str] = field(default_factory=list)
    invariant_covariates: list[str] = field(default_factory=list)
    num_random_components: int = 2
    lambda_grid: np.ndarray = field(default_factory=lambda: DEFAULT_LAMBDA_GRID.copy())
    min_obs: int = DEFAULT_MIN_OBS
    criterion: str = "gcv"

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)
        if not self.arms:
            raise InputError("spec.arms must list at least one arm")
        overlap = set(self.varying_covariates) & set(self.invariant_covariates)
        if overlap:
            raise InputError(f"covariates cannot be both varying and invariant: {overlap}")


def functional_covariate_columns(
    W_imputed: np.ndarray,
    t_grid: np.ndarray,
    basis_t: BasisSystem,
    basis_u: BasisSystem,
    u: float,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Tensor design columns of the functional predictor at response time u.

    Column (k1, k2) for subject i is
    ``[sum_j w_j W_i(t_j) B_{k1}(t_j)] * B_{k2}(u)`` with row-major
    (k1, k2) flattening; callers multiply by arm indicators to form the
    per-arm blocks.
    """
    W = np.asarray(W_imputed, dtype=float)
    if np.isnan(W).any():
        raise InputError("W_imputed contains missing entries; run impute_curves first")
    t_grid = np.asarray(t_grid, dtype=float)
    if W.shape[1] != t_grid.size:
        raise InputError("W_imputed columns must match t_grid")
    w = trapezoid_weights(t_grid) if weights is None else np.asarray(weights, dtype=float)
    B_t = evaluate_basis(basis_t, t_grid)
    integrals = (W * w[None, :]) @ B_t  # (n, K1)
    row_u = evaluate_basis(basis_u, [u])[0]  # (K2,)
    return (integrals[:, :, None] * row_u[None, None, :]).reshape(W.shape[0], -1)


@dataclass
class FofrFit:
    """Fitted cross-period model."""

    surfaces: dict[str, np.ndarray]  # arm -> (K1, K2) tensor coefficients
    intercept_coefficients: np.ndarray
    varying_coefficients: dict[str, np.ndarray]
    scalar_table: pd.DataFrame
    lambdas: dict[str, float]
    lambda_boundary: dict[str, str | None]
    effective_df: dict[str, float]
    residual_variance: float
    subject_effect_variances: np.ndarray
    subject_effects: np.ndarray
    quadrature: dict
    spec: FofrSpec
    subject_ids: list[str]
    excluded_subjects: list[str]

    def to_json(self) -> str:
        return json.dumps(
            {
                "surfaces": {a: s.tolist() for a, s in self.surfaces.items()},
                "intercept_coefficients": self.intercept_coefficients.tolist(),
                "varying_coefficients": {
                    k: v.tolist() for k, v in self.varying_coefficients.items()
                },
                "scalar_coefficients": {
                    r["term"]: {"estimate": r["estimate"], "se": r["se"], "p_value": r["p_value"]}
                    for r in self.scalar_table.to_dict("records")
                },
                "lambdas": self.lambdas,
                "lambda_boundary": self.lambda_boundary,
                "effective_df": self.effective_df,
                "residual_variance": self.residual_variance,
                "quadrature": {
                    "rule": self.quadrature["rule"],
                    "weights": list(self.quadrature["weights"]),
                },
            },
            sort_keys=True,
            indent=2,
        )


def _surface_block_names(spec: FofrSpec) -> list[str]:
    return [f"surface_{arm}" for arm in spec.arms]


def _layout(spec: FofrSpec) -> tuple[dict[str, slice], dict[str, int], int]:
    Lr = spec.basis_response.num_basis
    K1K2 = spec.basis_t.num_basis * spec.basis_u.num_basis
    slices: dict[str, slice] = {INTERCEPT: slice(0, Lr)}
    pos = Lr
    for name in spec.varying_covariates:
        slices[name] = slice(pos, pos + Lr)
        pos += Lr
    for arm in spec.arms:
        slices[f"surface_{arm}"] = slice(pos, pos + K1K2)
        pos += K1K2
    scalars = {}
    for name in spec.invariant_covariates:
        scalars[name] = pos
        pos += 1
    return slices, scalars, pos


def fit_fofr(
    samples_follow_up: list[FunctionalSample],
    W_imputed: np.ndarray,
    spec: FofrSpec,
    fpca_follow_up: FpcaResult,
) -> FofrFit:
    """Penalized fit of the cross-period model.

    ``W_imputed`` must be row-aligned with ``samples_follow_up`` and
    complete on ``spec.t_grid``. Each surface carries separable row and
    column difference penalties with independent lambdas.
    """
    W = np.asarray(W_imputed, dtype=float)
    if W.shape[0] != len(samples_follow_up):
        raise InputError("W_imputed rows must align with samples_follow_up")
    if np.isnan(W).any():
        raise InputError("W_imputed contains missing entries; run impute_curves first")
    K = spec.num_random_components
    if K > fpca_follow_up.num_components:
        raise InputError(
            f"num_random_components={K} exceeds available eigenfunctions "
            f"({fpca_follow_up.num_components})"
        )

    kept_idx, excluded = [], []
    for i, s in enumerate(samples_follow_up):
        if s.n_obs < spec.min_obs:
            excluded.append(s.subject_id)
        else:
            kept_idx.append(i)
    if excluded:
        logger.warning(
            "excluded %d subject(s) below min_obs=%d: %s",
            len(excluded), spec.min_obs, excluded[:10],
        )
    if not kept_idx:
        raise InputError("no subjects left after min_obs filtering")
    kept = [samples_follow_up[i] for i in kept_idx]
    W = W[kept_idx]

    arm_set = set(spec.arms)
    for s in kept:
        if s.arm not in arm_set:
            raise InputError(f"subject {s.subject_id!r} has arm {s.arm!r} not in spec.arms")

    slices, scalars, p_fixed = _layout(spec)
    weights = trapezoid_weights(spec.t_grid)
    B_t = evaluate_basis(spec.basis_t, spec.t_grid)
    integrals = (W * weights[None, :]) @ B_t  # (n, K1)
    K2 = spec.basis_u.num_basis

    F_blocks, y_blocks, Z_blocks = [], [], []
    for row, s in enumerate(kept):
        B_resp = evaluate_basis(spec.basis_response, s.times)
        B_u = evaluate_basis(spec.basis_u, s.times)
        Fi = np.zeros((s.n_obs, p_fixed))
        Fi[:, slices[INTERCEPT]] = B_resp
        for name in spec.varying_covariates:
            val = s.covariates.get(name)
            if val is None:
                raise InputError(f"subject {s.subject_id!r} missing covariate {name!r}")
            Fi[:, slices[name]] = B_resp * float(val)
        tensor = (integrals[row][:, None, None] * B_u.T[None, :, :]).reshape(-1, s.n_obs).T
        Fi[:, slices[f"surface_{s.arm}"]] = tensor
        for name, col in scalars.items():
            val = s.covariates.get(name)
            if val is None:
                raise InputError(f"subject {s.subject_id!r} missing covariate {name!r}")
            Fi[:, col] = float(val)
        F_blocks.append(Fi)
        y_blocks.append(s.values)
        if K:
            idx = grid_indices(s.times, fpca_follow_up.grid)
            Z_blocks.append(fpca_follow_up.eigenfunctions[idx, :K])

    Dr = difference_penalty(
        spec.basis_response.num_basis, spec.basis_response.penalty_order
    ).gram()
    Dt = difference_penalty(spec.basis_t.num_basis, spec.basis_t.penalty_order).gram()
    Du = difference_penalty(spec.basis_u.num_basis, spec.basis_u.penalty_order).gram()
    I1 = np.eye(spec.basis_t.num_basis)
    I2 = np.eye(K2)

    penalties = [PenaltyComponent(INTERCEPT, slices[INTERCEPT].start,
                                  slices[INTERCEPT].stop, Dr)]
    for name in spec.varying_covariates:
        penalties.append(PenaltyComponent(name, slices[name].start, slices[name].stop, Dr))
    for arm in spec.arms:
        sl = slices[f"surface_{arm}"]
        penalties.append(PenaltyComponent(f"surface_{arm}:t", sl.start, sl.stop,
                                          np.kron(Dt, I2)))
        penalties.append(PenaltyComponent(f"surface_{arm}:u", sl.start, sl.stop,
                                          np.kron(I1, Du)))

    if K:
        lam_k = np.maximum(fpca_follow_up.eigenvalues[:K], 1e-12)
        ridge = max(fpca_follow_up.noise_variance, 1e-12) / lam_k
        design = MixedDesign(F_blocks, y_blocks, Z_blocks, ridge, penalties,
                             subject_ids=[s.subject_id for s in kept])
    else:
        design = MixedDesign(F_blocks, y_blocks, None, np.zeros(0), penalties,
                             subject_ids=[s.subject_id for s in kept])

    lambdas, flags, sol = select_lambdas(design, spec.lambda_grid, criterion=spec.criterion)

    surfaces = {
        arm: sol.beta[slices[f"surface_{arm}"]].reshape(
            spec.basis_t.num_basis, K2
        )
        for arm in spec.arms
    }
    rows = []
    for name, col in scalars.items():
        est = float(sol.beta[col])
        se = float(np.sqrt(max(sol.cov_fixed[col, col], 0.0)))
        p = 2.0 * float(norm.sf(abs(est) / se)) if se > 0 else np.nan
        rows.append({"term": name, "estimate": est, "se": se, "p_value": p})

    lam_map = {comp.name: float(lam) for comp, lam in zip(penalties, lambdas)}
    flag_map = {comp.name: flag for comp, flag in zip(penalties, flags)}
    term_names = [INTERCEPT] + list(spec.varying_covariates) + _surface_block_names(spec)
    edf = {n: sol.edf(slices[n].start, slices[n].stop) for n in term_names}

    return FofrFit(
        surfaces=surfaces,
        intercept_coefficients=sol.beta[slices[INTERCEPT]],
        varying_coefficients={
            name: sol.beta[slices[name]] for name in spec.varying_covariates
        },
        scalar_table=pd.DataFrame(rows, columns=["term", "estimate", "se", "p_value"]),
        lambdas=lam_map,
        lambda_boundary=flag_map,
        effective_df=edf,
        residual_variance=sol.sigma2,
        subject_effect_variances=(
            fpca_follow_up.eigenvalues[:K].copy() if K else np.zeros(0)
        ),
        subject_effects=sol.zeta,
        quadrature={"rule": "trapezoid", "weights": weights},
        spec=spec,
        subject_ids=[s.subject_id for s in kept],
        excluded_subjects=excluded,
    )


def evaluate_surface(fit: FofrFit, group: str, t, u) -> np.ndarray:
    """Evaluate an arm's coefficient surface on the product grid t x u."""
    if group not in fit.surfaces:
        raise KeyError(f"unknown arm {group!r}; have {sorted(fit.surfaces)}")
    B_t = evaluate_basis(fit.spec.basis_t, np.atleast_1d(np.asarray(t, dtype=float)))
    B_u = evaluate_basis(fit.spec.basis_u, np.atleast_1d(np.asarray(u, dtype=float)))
    return B_t @ fit.surfaces[group] @ B_u.T


def surface_cross_section(fit: FofrFit, group: str, u: float, t_grid) -> np.ndarray:
    """Surface values along t at a fixed follow-up time u."""
    return evaluate_surface(fit, group, t_grid, [u])[:, 0]
