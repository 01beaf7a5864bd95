"""FPCA + per-score regression baseline.

Each FPCA score is regressed on the covariates by ordinary least
squares; Holm-adjusted p-values control the family-wise error rate
within each score regression. Substituting the fitted score model back
into the Karhunen-Loève expansion induces functional coefficients that
live, by construction, in the span of the retained eigenfunctions --
the structural limitation this baseline exists to exhibit. Score
estimation error is deliberately not propagated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import t as student_t

from .data_io import FunctionalSample
from .errors import InputError
from .fpca import FpcaResult, grid_indices

INTERCEPT = "intercept"


def holm_adjust(p) -> np.ndarray:
    """Holm step-down adjusted p-values, clipped at 1.

    Stable under permutation: ties sort by original index.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise InputError("p must be a 1D vector")
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise InputError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for rank, j in enumerate(order):
        running = max(running, (m - rank) * p[j])
        adjusted[j] = min(running, 1.0)
    return adjusted


def design_from_samples(
    samples: list[FunctionalSample], covariate_names: list[str] | None = None
) -> tuple[np.ndarray, list[str]]:
    """Covariate matrix row-aligned with samples; names resolved from the first."""
    if covariate_names is None:
        covariate_names = sorted(samples[0].covariates)
    X = np.empty((len(samples), len(covariate_names)))
    for i, s in enumerate(samples):
        for j, name in enumerate(covariate_names):
            if name not in s.covariates:
                raise InputError(f"subject {s.subject_id!r} lacks covariate {name!r}")
            X[i, j] = s.covariates[name]
    return X, list(covariate_names)


def _collinear_columns(X: np.ndarray, names: list[str]) -> list[str]:
    from scipy.linalg import qr

    _, R, piv = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps
    flagged = piv[np.flatnonzero(diag < tol)]
    flagged = np.concatenate([flagged, piv[len(diag):]]) if len(diag) < len(piv) else flagged
    return [names[j] for j in sorted(flagged)]


def regress_scores(
    fpca: FpcaResult, covariates: np.ndarray, names: list[str] | None = None
) -> list[pd.DataFrame]:
    """Independent OLS of each score on the covariates (with intercept).

    Returns one table per eigenfunction with columns term, estimate,
    se, p_value, p_adjusted. The intercept is excluded from the Holm
    family.
    """
    X = np.asarray(covariates, dtype=float)
    if X.ndim != 2 or X.shape[0] != fpca.scores.shape[0]:
        raise InputError("covariates must be (n_subjects, M) aligned with fpca scores")
    n, M = X.shape
    names = names or [f"x{j + 1}" for j in range(M)]
    if len(names) != M:
        raise InputError("names must match covariate columns")
    if n <= M + 1:
        raise InputError(f"need n > M + 1 (n={n}, M={M})")

    Xd = np.column_stack([np.ones(n), X])
    rank = np.linalg.matrix_rank(Xd)
    if rank < M + 1:
        bad = _collinear_columns(Xd, [INTERCEPT] + names)
        raise InputError(f"covariate matrix is rank deficient; collinear columns: {bad}")

    XtX_inv = np.linalg.inv(Xd.T @ Xd)
    dof = n - (M + 1)
    tables = []
    for k in range(fpca.num_components):
        y = fpca.scores[:, k]
        gamma = XtX_inv @ (Xd.T @ y)
        resid = y - Xd @ gamma
        sigma2 = float(resid @ resid) / dof
        se = np.sqrt(np.maximum(sigma2 * np.diag(XtX_inv), 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            tstat = np.where(se > 0, gamma / se, np.inf * np.sign(gamma))
        pvals = 2.0 * student_t.sf(np.abs(tstat), dof)
        adj = np.full(M + 1, np.nan)
        adj[1:] = holm_adjust(pvals[1:])
        tables.append(
            pd.DataFrame(
                {
                    "eigenfunction": k + 1,
                    "term": [INTERCEPT] + names,
                    "estimate": gamma,
                    "se": se,
                    "p_value": pvals,
                    "p_adjusted": adj,
                }
            )
        )
    return tables


@dataclass
class TwoStepFit:
    """Induced functional coefficients from the score regressions."""

    score_regressions: list[pd.DataFrame]
    grid: np.ndarray
    induced_intercept: np.ndarray
    induced_coefficients: dict[str, np.ndarray]
    num_components: int

    def tables_frame(self) -> pd.DataFrame:
        """Concatenated regression tables matching the documented CSV layout."""
        return pd.concat(self.score_regressions, ignore_index=True)[
            ["eigenfunction", "term", "estimate", "se", "p_value", "p_adjusted"]
        ]


def induce_functional_coefficients(
    tables: list[pd.DataFrame], fpca: FpcaResult, grid: np.ndarray
) -> TwoStepFit:
    """Map score-regression coefficients to functional coefficients.

    gamma_m(t) = sum_k gamma_km phi_k(t); the induced intercept adds the
    FPCA mean. Exact linear reconstruction; grid points must lie on the
    FPCA grid.
    """
    K = len(tables)
    if K != fpca.num_components:
        raise InputError(
            f"tables cover {K} components but fpca has {fpca.num_components}"
        )
    grid = np.asarray(grid, dtype=float)
    try:
        idx = grid_indices(grid, fpca.grid)
    except InputError as exc:
        raise InputError(f"requested grid not covered by the FPCA grid: {exc}") from exc
    phi = fpca.eigenfunctions[idx]
    mu = fpca.mean[idx]

    terms = [t for t in tables[0]["term"] if t != INTERCEPT]
    gamma0 = np.array(
        [float(tab.loc[tab["term"] == INTERCEPT, "estimate"].iloc[0]) for tab in tables]
    )
    induced_intercept = mu + phi @ gamma0
    induced = {}
    for name in terms:
        g = np.array(
            [float(tab.loc[tab["term"] == name, "estimate"].iloc[0]) for tab in tables]
        )
        induced[name] = phi @ g
    return TwoStepFit(
        score_regressions=tables,
        grid=grid,
        induced_intercept=induced_intercept,
        induced_coefficients=induced,
        num_components=K,
    )


def fit_twostep(
    samples: list[FunctionalSample],
    fpca: FpcaResult,
    covariate_names: list[str] | None = None,
    grid: np.ndarray | None = None,
) -> TwoStepFit:
    """Convenience wrapper: score regressions + induced coefficients."""
    X, names = design_from_samples(samples, covariate_names)
    tables = regress_scores(fpca, X, names)
    grid = fpca.grid if grid is None else grid
    return induce_functional_coefficients(tables, fpca, grid)
