"""Functional principal components for irregular, partially missing curves.

Pipeline: pointwise mean smoothed by a univariate P-spline, pairwise
complete covariance with a bivariate P-spline smooth of the
off-diagonal (the diagonal is left out so measurement noise separates
from the smooth covariance), PSD projection by eigenvalue truncation,
and BLUP score prediction from each subject's observed points.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .basis import BasisSystem, difference_penalty, evaluate_basis, trapezoid_weights
from .data_io import FunctionalSample
from .errors import InputError, NumericalError

_DEGENERATE_VAR = 1e-12


@dataclass
class FpcaConfig:
    """Smoothing knobs for the mean and covariance estimates."""

    mean_num_basis: int = 15
    cov_num_basis: int = 10
    degree: int = 3
    penalty_order: int = 2
    lambda_grid: np.ndarray = field(
        default_factory=lambda: np.logspace(-8, 8, 17)
    )

    def __post_init__(self):
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)
        if self.lambda_grid.size == 0:
            raise InputError("lambda_grid must be non-empty")


@dataclass
class FpcaResult:
    """Karhunen-Loève decomposition estimated on a fixed grid."""

    grid: np.ndarray
    mean: np.ndarray
    eigenfunctions: np.ndarray  # (|grid|, K), quadrature-orthonormal columns
    eigenvalues: np.ndarray  # non-increasing, length K
    scores: np.ndarray  # (n, K)
    noise_variance: float
    pve: np.ndarray  # cumulative proportion of variance, full ladder
    subject_ids: list[str]

    @property
    def num_components(self) -> int:
        return int(self.eigenvalues.size)

    def to_json(self) -> str:
        return json.dumps(
            {
                "grid": self.grid.tolist(),
                "mean": self.mean.tolist(),
                "eigenfunctions": self.eigenfunctions.tolist(),
                "eigenvalues": self.eigenvalues.tolist(),
                "pve": self.pve.tolist(),
                "noise_variance": self.noise_variance,
            },
            sort_keys=True,
            indent=2,
        )

    def scores_frame(self) -> pd.DataFrame:
        cols = {f"score_{k + 1}": self.scores[:, k] for k in range(self.num_components)}
        return pd.DataFrame({"subject_id": self.subject_ids, **cols})


def default_grid(samples: list[FunctionalSample]) -> np.ndarray:
    """Union of observed times, snapped to integer weeks when data is weekly."""
    times = np.concatenate([s.times for s in samples])
    rounded = np.round(times)
    if np.allclose(times, rounded, atol=1e-9):
        return np.unique(rounded)
    return np.unique(np.round(times, 9))


def grid_indices(times: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Map observation times to nearest grid indices (within half a spacing)."""
    grid = np.asarray(grid, dtype=float)
    tol = 0.5 * np.min(np.diff(grid)) if grid.size > 1 else 0.5
    idx = np.clip(np.searchsorted(grid, times), 1, grid.size - 1)
    idx = np.where(np.abs(grid[idx - 1] - times) <= np.abs(grid[idx] - times), idx - 1, idx)
    off = np.abs(grid[idx] - times)
    if np.any(off > tol + 1e-9):
        bad = times[np.argmax(off)]
        raise InputError(f"observation time {bad} does not match any grid point")
    return idx


def _data_matrix(samples, grid):
    """(n, |grid|) matrix with NaN at unobserved grid points."""
    Y = np.full((len(samples), grid.size), np.nan)
    for i, s in enumerate(samples):
        if s.n_obs == 0:
            raise InputError(f"subject {s.subject_id} has no observations")
        Y[i, grid_indices(s.times, grid)] = s.values
    return Y


def _gcv_ridge_path(X, y, P, lambda_grid, weights=None):
    """Coefficients minimizing GCV over penalized LS with one lambda.

    One eigendecomposition of the whitened penalty gives the whole
    lambda path at O(n p) per grid value.
    """
    n, p = X.shape
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        Xw = X * sw[:, None]
        yw = y * sw
    else:
        Xw, yw = X, y
    A = Xw.T @ Xw + 1e-10 * np.eye(p)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("smoother design is rank deficient") from exc
    Linv = np.linalg.inv(L)
    M = Linv @ P @ Linv.T
    d, V = np.linalg.eigh((M + M.T) / 2.0)
    d = np.clip(d, 0.0, None)
    U = Linv.T @ V
    c0 = U.T @ (Xw.T @ yw)
    F = Xw @ U
    best = None
    for lam in lambda_grid:
        shrink = 1.0 / (1.0 + lam * d)
        resid = yw - F @ (c0 * shrink)
        rss = float(resid @ resid)
        edf = float(shrink.sum())
        denom = max(n - edf, 1e-8)
        gcv = n * rss / denom**2
        if best is None or gcv < best[0]:
            best = (gcv, U @ (c0 * shrink))
    return best[1]


def _psline_smooth_1d(grid, y, weights, config: FpcaConfig) -> np.ndarray:
    """GCV-selected P-spline smooth of (grid, y) with observation weights."""
    nb = min(config.mean_num_basis, max(grid.size, 4))
    basis = BasisSystem(grid[0], grid[-1], nb, config.degree,
                        min(config.penalty_order, nb - 1))
    B = evaluate_basis(basis, grid)
    S = difference_penalty(nb, basis.penalty_order).gram()
    coef = _gcv_ridge_path(B, y, S, config.lambda_grid, weights=weights)
    return B @ coef


def _smooth_covariance(grid, C_raw, counts, config: FpcaConfig) -> np.ndarray:
    """Tensor P-spline smooth of the off-diagonal covariance entries."""
    G = grid.size
    nb = min(config.cov_num_basis, G)
    basis = BasisSystem(grid[0], grid[-1], nb, config.degree,
                        min(config.penalty_order, nb - 1))
    B = evaluate_basis(basis, grid)
    S = difference_penalty(nb, basis.penalty_order).gram()
    I = np.eye(nb)
    P = np.kron(S, I) + np.kron(I, S)

    rows, cols = np.where((counts >= 2) & ~np.eye(G, dtype=bool))
    if rows.size < nb * nb:
        rows, cols = np.where((counts >= 1) & ~np.eye(G, dtype=bool))
    if rows.size == 0:
        raise InputError("no off-diagonal covariance pairs observed")
    X = _row_kron(B[rows], B[cols])
    y = C_raw[rows, cols]
    theta = _gcv_ridge_path(X, y, P, config.lambda_grid)
    C = B @ theta.reshape(nb, nb) @ B.T
    return (C + C.T) / 2.0


def _row_kron(A, B):
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


def _fix_signs(phi: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Flip eigenfunction signs so each integrates >= 0 (midpoint tiebreak)."""
    phi = phi.copy()
    mid = phi.shape[0] // 2
    for k in range(phi.shape[1]):
        integral = float(weights @ phi[:, k])
        if abs(integral) > 1e-10:
            sign = np.sign(integral)
        else:
            mid_val = phi[mid, k]
            sign = np.sign(mid_val) if abs(mid_val) > 1e-10 else 1.0
        phi[:, k] *= sign
    return phi


def fit_fpca(
    samples: list[FunctionalSample],
    grid: np.ndarray | None = None,
    pve_threshold: float = 0.95,
    config: FpcaConfig | None = None,
) -> FpcaResult:
    """Estimate mean, eigenfunctions, eigenvalues, noise variance, scores.

    The number of components K is the smallest k whose cumulative PVE
    reaches ``pve_threshold``. Scores are conditional expectations under
    the Gaussian working model given each subject's observed points.
    """
    if len(samples) < 2:
        raise InputError("fit_fpca needs at least 2 subjects")
    if not 0 < pve_threshold <= 1:
        raise InputError("pve_threshold must be in (0, 1]")
    config = config or FpcaConfig()
    grid = default_grid(samples) if grid is None else np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise InputError("grid must be a 1D array with >= 2 points")

    Y = _data_matrix(samples, grid)
    obs = ~np.isnan(Y)
    counts_t = obs.sum(axis=0)
    if np.any(counts_t == 0):
        raise InputError("every grid point needs at least one observation across subjects")

    raw_mean = np.nansum(Y, axis=0) / counts_t
    mean = _psline_smooth_1d(grid, raw_mean, counts_t / counts_t.max(), config)

    R = np.where(obs, Y - mean[None, :], 0.0)
    pair_counts = obs.T.astype(float) @ obs.astype(float)
    cross = R.T @ R
    with np.errstate(invalid="ignore", divide="ignore"):
        C_raw = cross / np.maximum(pair_counts - 1.0, 1.0)
    C_raw[pair_counts < 2] = 0.0

    weights = trapezoid_weights(grid)
    total_raw_var = float(np.nanmean([np.nanvar(Y[:, j], ddof=0) for j in range(grid.size)]))

    if total_raw_var < _DEGENERATE_VAR:
        # All curves essentially identical: no directions of variation.
        span = grid[-1] - grid[0]
        phi = np.full((grid.size, 1), 1.0 / np.sqrt(span))
        return FpcaResult(
            grid=grid,
            mean=mean,
            eigenfunctions=phi,
            eigenvalues=np.zeros(1),
            scores=np.zeros((len(samples), 1)),
            noise_variance=0.0,
            pve=np.ones(1),
            subject_ids=[s.subject_id for s in samples],
        )

    C_smooth = _smooth_covariance(grid, C_raw, pair_counts, config)

    raw_diag = np.diag(C_raw).copy()
    diag_ok = np.diag(pair_counts) >= 2
    noise_variance = float(
        max(np.mean(raw_diag[diag_ok] - np.diag(C_smooth)[diag_ok]), 0.0)
    )

    sw = np.sqrt(weights)
    M = sw[:, None] * C_smooth * sw[None, :]
    evals, evecs = np.linalg.eigh((M + M.T) / 2.0)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    if evals[0] <= 0:
        raise NumericalError("smoothed covariance has no positive eigenvalues")

    total = float(evals.sum())
    pve = np.cumsum(evals) / total
    K = int(np.searchsorted(pve, pve_threshold - 1e-15) + 1)
    K = min(K, int(np.sum(evals > 0)))
    K = max(K, 1)

    phi = evecs[:, :K] / sw[:, None]
    phi = _fix_signs(phi, weights)
    lam = evals[:K]

    # PSD sanity: reconstruction from clipped spectrum must be PSD.
    recon_min = float(evals.min())
    if recon_min < -1e-10 * max(evals[0], 1.0):
        raise NumericalError(f"covariance projection left eigenvalue {recon_min}")

    scores = _blup_scores(samples, grid, mean, phi, lam, noise_variance)

    return FpcaResult(
        grid=grid,
        mean=mean,
        eigenfunctions=phi,
        eigenvalues=lam,
        scores=scores,
        noise_variance=noise_variance,
        pve=pve,
        subject_ids=[s.subject_id for s in samples],
    )


def _blup_scores(samples, grid, mean, phi, lam, noise_variance) -> np.ndarray:
    """Conditional-expectation scores, ridge-stabilized when noise is ~0."""
    K = phi.shape[1]
    jitter = max(noise_variance, 1e-10 * max(float(lam[0]), 1.0), 1e-12)
    Lam = np.diag(lam)
    scores = np.zeros((len(samples), K))
    for i, s in enumerate(samples):
        idx = grid_indices(s.times, grid)
        Phi_i = phi[idx]
        resid = s.values - mean[idx]
        Sigma = Phi_i @ Lam @ Phi_i.T + jitter * np.eye(idx.size)
        scores[i] = Lam @ Phi_i.T @ np.linalg.solve(Sigma, resid)
    return scores


def impute_curves(
    fit: FpcaResult, samples: list[FunctionalSample], grid: np.ndarray
) -> np.ndarray:
    """Fill unobserved grid points with the FPCA reconstruction.

    Observed entries pass through unchanged; missing entries become
    ``mean + scores @ eigenfunctions`` at those points.
    """
    grid = np.asarray(grid, dtype=float)
    fit_idx = grid_indices(grid, fit.grid)
    known = {sid: i for i, sid in enumerate(fit.subject_ids)}
    out = np.empty((len(samples), grid.size))
    for r, s in enumerate(samples):
        if s.subject_id not in known:
            raise InputError(f"subject {s.subject_id!r} was not part of the FPCA fit")
        i = known[s.subject_id]
        recon = fit.mean[fit_idx] + fit.eigenfunctions[fit_idx] @ fit.scores[i]
        row = recon.copy()
        obs_idx = grid_indices(s.times, grid)
        row[obs_idx] = s.values
        out[r] = row
    return out
