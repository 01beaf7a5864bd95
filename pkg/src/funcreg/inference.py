"""Nonparametric bootstrap for functional coefficients.

Each replicate redraws subjects with replacement (plain, or the
cohort/stratified scheme), re-runs FPCA so the random-effect basis
uncertainty propagates, refits the model, and records coefficient
curves on a fixed grid. Bands come from the bootstrap of the max
absolute standardized deviation: correlation-and-multiplicity adjusted
(CMA) joint intervals, pointwise p-values (smallest level at which the
CMA band excludes zero at that point), and a global p-value equal to
their minimum.

Degenerate grid points (bootstrap SE below 1e-12 of the band scale) are
excluded from the max statistic; their pointwise p is 1 when the
estimate is 0 there and the 1/B floor otherwise, and their band width
is floored at the degeneracy threshold instead of collapsing to zero.
"""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import norm

from .data_io import FunctionalSample
from .errors import DegenerateBandError, InferenceError, InputError
from .fofr import FofrSpec, evaluate_surface, fit_fofr
from .fosr import FosrSpec, fit_fosr, predict_coefficient
from .fpca import FpcaConfig, default_grid, fit_fpca, impute_curves
from .twostep import fit_twostep

logger = logging.getLogger(__name__)

DEGENERATE_REL_TOL = 1e-12
_BOOT_DOMAIN = 0xB007
MAX_ATTEMPTS_PER_REPLICATE = 20


@dataclass
class BootstrapBand:
    """Joint and pointwise bootstrap inference for one functional term."""

    term: str
    grid: np.ndarray  # (G,) for curves, (G, 2) for surfaces
    estimate: np.ndarray
    replicate_curves: np.ndarray = field(repr=False)  # (B, G)
    se: np.ndarray
    wald_lo: np.ndarray
    wald_hi: np.ndarray
    cma_quantile: float
    cma_lo: np.ndarray
    cma_hi: np.ndarray
    pointwise_p: np.ndarray
    global_p: float
    B: int
    alpha: float
    degenerate: np.ndarray  # bool mask of points excluded from the max

    def frame(self) -> pd.DataFrame:
        """CSV-ready table; surfaces get both t and u columns."""
        cols: dict = {"term": self.term}
        if self.grid.ndim == 2:
            cols["t"] = self.grid[:, 0]
            cols["u"] = self.grid[:, 1]
        else:
            cols["t"] = self.grid
        cols.update(
            estimate=self.estimate,
            se=self.se,
            wald_lo=self.wald_lo,
            wald_hi=self.wald_hi,
            cma_lo=self.cma_lo,
            cma_hi=self.cma_hi,
            pointwise_p=self.pointwise_p,
        )
        df = pd.DataFrame(cols)
        df["significant"] = (df["cma_lo"] > 0) | (df["cma_hi"] < 0)
        return df


def _quantile_inverse(d_sorted: np.ndarray, r: float) -> float:
    """sup{p : Q(p) < r} for the type-7 empirical quantile function Q."""
    B = d_sorted.size
    if B == 1:
        return 1.0 if r > d_sorted[0] else 0.0
    probs = np.arange(B) / (B - 1)
    j = int(np.searchsorted(d_sorted, r, side="left"))
    if j == 0:
        return 0.0
    if j == B:
        return 1.0
    lo, hi = d_sorted[j - 1], d_sorted[j]
    return float(probs[j - 1] + (r - lo) / (hi - lo) * (probs[j] - probs[j - 1]))


def cma_band(
    replicate_curves: np.ndarray,
    estimate: np.ndarray,
    alpha: float = 0.05,
    term: str = "",
    grid: np.ndarray | None = None,
    on_degenerate: str = "error",
) -> BootstrapBand:
    """CMA joint band from bootstrap replicate curves.

    d_b = max_t |curve_b(t) - mean_b(t)| / SE(t) over non-degenerate
    points; the band is estimate +/- q_{1-alpha} * SE with the type-7
    empirical quantile q.
    """
    curves = np.asarray(replicate_curves, dtype=float)
    if curves.ndim != 2:
        raise InputError("replicate_curves must be a (B, G) matrix")
    estimate = np.asarray(estimate, dtype=float)
    if estimate.shape != (curves.shape[1],):
        raise InputError("estimate length must match replicate curve grid")
    if not 0 < alpha < 1:
        raise InputError("alpha must be in (0, 1)")
    B, G = curves.shape
    grid = np.arange(G, dtype=float) if grid is None else np.asarray(grid, dtype=float)

    se = curves.std(axis=0, ddof=1)
    center = curves.mean(axis=0)
    scale = max(float(np.max(np.abs(estimate))), float(np.max(se)))
    threshold = DEGENERATE_REL_TOL * scale
    degenerate = se <= threshold
    p_floor = 1.0 / B

    if degenerate.all():
        if on_degenerate == "error":
            raise DegenerateBandError(
                "bootstrap SE is zero at every grid point; pass "
                "on_degenerate='policy' to apply the degenerate-SE policy"
            )
        pointwise = np.where(estimate == 0.0, 1.0, p_floor)
        zeros = np.zeros(G)
        return BootstrapBand(
            term=term, grid=grid, estimate=estimate, replicate_curves=curves,
            se=zeros, wald_lo=estimate.copy(), wald_hi=estimate.copy(),
            cma_quantile=0.0, cma_lo=estimate.copy(), cma_hi=estimate.copy(),
            pointwise_p=pointwise, global_p=float(pointwise.min()),
            B=B, alpha=alpha, degenerate=degenerate,
        )

    ok = ~degenerate
    dev = np.abs(curves[:, ok] - center[ok]) / se[ok][None, :]
    d = dev.max(axis=1)
    d_sorted = np.sort(d)
    q = float(np.quantile(d, 1.0 - alpha))  # type-7 linear interpolation

    width_se = np.where(degenerate, np.maximum(se, threshold), se)
    cma_lo = estimate - q * width_se
    cma_hi = estimate + q * width_se

    z = norm.ppf(1.0 - alpha / 2.0)
    wald_lo = estimate - z * se
    wald_hi = estimate + z * se

    pointwise = np.empty(G)
    for g in range(G):
        if degenerate[g]:
            pointwise[g] = 1.0 if estimate[g] == 0.0 else p_floor
        else:
            r = abs(estimate[g]) / se[g]
            pointwise[g] = max(1.0 - _quantile_inverse(d_sorted, r), p_floor)
    global_p = float(pointwise.min())

    return BootstrapBand(
        term=term, grid=grid, estimate=estimate, replicate_curves=curves,
        se=se, wald_lo=wald_lo, wald_hi=wald_hi,
        cma_quantile=q, cma_lo=cma_lo, cma_hi=cma_hi,
        pointwise_p=pointwise, global_p=global_p,
        B=B, alpha=alpha, degenerate=degenerate,
    )


def contrast_band(
    replicate_curves_m1: np.ndarray,
    replicate_curves_m2: np.ndarray,
    estimates: tuple[np.ndarray, np.ndarray],
    alpha: float = 0.05,
    term: str = "contrast",
    grid: np.ndarray | None = None,
) -> BootstrapBand:
    """CMA band for the difference of two coefficients.

    Replicate b of both terms must come from the same resampled dataset.
    """
    c1 = np.asarray(replicate_curves_m1, dtype=float)
    c2 = np.asarray(replicate_curves_m2, dtype=float)
    if c1.shape != c2.shape:
        raise InputError(
            f"replicate shapes differ: {c1.shape} vs {c2.shape}; "
            "contrasts need aligned replicates"
        )
    e1, e2 = (np.asarray(e, dtype=float) for e in estimates)
    return cma_band(
        c1 - c2, e1 - e2, alpha=alpha, term=term, grid=grid, on_degenerate="policy"
    )


# ---------------------------------------------------------------------------
# Resampling schemes


def _plain_indices(n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, n, size=n)


def stratified_resample_indices(
    samples: list[FunctionalSample], rng: np.random.Generator, group_size: int = 3
) -> np.ndarray:
    """Cohort/stratified resampling (indices into ``samples``).

    Arms whose subjects all carry cohort labels are resampled whole
    cohorts at a time; other arms draw one subject then fill the group
    with draws from the same baseline stratum and arm, until the arm
    reaches its original count. Output arm counts match input exactly.
    """
    arms: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        arms.setdefault(s.arm, []).append(i)
    out: list[int] = []
    for arm in sorted(arms):
        idx = arms[arm]
        target = len(idx)
        has_cohort = [samples[i].cohort is not None for i in idx]
        if all(has_cohort):
            cohorts: dict[str, list[int]] = {}
            for i in idx:
                cohorts.setdefault(samples[i].cohort, []).append(i)
            labels = sorted(cohorts)
            chosen: list[int] = []
            while len(chosen) < target:
                lab = labels[rng.integers(0, len(labels))]
                members = cohorts[lab]
                room = target - len(chosen)
                if len(members) <= room:
                    chosen.extend(members)
                else:
                    pick = rng.choice(len(members), size=room, replace=False)
                    chosen.extend(members[j] for j in sorted(pick))
            out.extend(chosen)
        elif any(has_cohort):
            missing = [samples[i].subject_id for i, h in zip(idx, has_cohort) if not h]
            raise InputError(
                f"arm {arm!r} mixes labelled and unlabelled cohorts; missing: {missing[:5]}"
            )
        else:
            strata: dict[str, list[int]] = {}
            for i in idx:
                if not samples[i].stratum:
                    raise InputError(
                        f"subject {samples[i].subject_id!r} in arm {arm!r} lacks a stratum label"
                    )
                strata.setdefault(samples[i].stratum, []).append(i)
            chosen = []
            while len(chosen) < target:
                lead = idx[rng.integers(0, len(idx))]
                chosen.append(lead)
                pool = strata[samples[lead].stratum]
                n_follow = min(group_size - 1, target - len(chosen))
                for _ in range(n_follow):
                    chosen.append(pool[rng.integers(0, len(pool))])
            out.extend(chosen[:target])
    return np.asarray(out, dtype=int)


def stratified_resample(
    samples: list[FunctionalSample], rng: np.random.Generator, group_size: int = 3
) -> list[FunctionalSample]:
    """Resampled subject list under the cohort/stratified scheme."""
    return [samples[i] for i in stratified_resample_indices(samples, rng, group_size)]


def _resample(samples, rng, resampling, group_size):
    n = len(samples)
    if resampling == "plain":
        idx = _plain_indices(n, rng)
    elif resampling == "stratified":
        idx = stratified_resample_indices(samples, rng, group_size)
    else:
        raise InputError("resampling must be 'plain' or 'stratified'")
    return idx


def _relabel(samples: list[FunctionalSample], idx: np.ndarray) -> list[FunctionalSample]:
    """Materialize a resample with unique subject ids (duplicates split)."""
    return [
        dataclasses.replace(samples[i], subject_id=f"{samples[i].subject_id}~{j}")
        for j, i in enumerate(idx)
    ]


def _replicate_rng(seed: int, b: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_BOOT_DOMAIN, b, attempt))
    )


# ---------------------------------------------------------------------------
# Bootstrap drivers


@dataclass
class BootstrapResult:
    """Bands per functional term plus bootstrap scalar inference."""

    bands: dict[str, BootstrapBand]
    scalar_table: pd.DataFrame
    B: int
    seed: int
    alpha: float
    resampling: str
    n_failed: int

    def bands_frame(self) -> pd.DataFrame:
        return pd.concat([b.frame() for b in self.bands.values()], ignore_index=True)

    def summary(self) -> dict:
        return {
            "B": self.B,
            "seed": self.seed,
            "alpha": self.alpha,
            "resampling": self.resampling,
            "n_failed_replicates": self.n_failed,
            "degenerate_se_policy": (
                f"points with SE <= {DEGENERATE_REL_TOL} * scale excluded from the "
                "max statistic; pointwise p = 1 when the estimate is 0 there, else 1/B"
            ),
            "terms": {
                name: {"global_p": band.global_p, "cma_quantile": band.cma_quantile}
                for name, band in self.bands.items()
            },
        }

    def contrast(self, term1: str, term2: str, alpha: float | None = None) -> BootstrapBand:
        b1, b2 = self.bands[term1], self.bands[term2]
        return contrast_band(
            b1.replicate_curves, b2.replicate_curves,
            (b1.estimate, b2.estimate),
            alpha=alpha if alpha is not None else self.alpha,
            term=f"{term1}-{term2}", grid=b1.grid,
        )


def _bootstrap_loop(pipeline, full_input, draw, B, seed, alpha, threads):
    """Replicate loop: deterministic per-replicate streams, exact B.

    ``draw(rng)`` materializes one resampled dataset; failed refits are
    redrawn with a fresh stream keyed by (seed, replicate, attempt), so
    results do not depend on the thread schedule.
    """
    if B < 2:
        raise InputError("B must be at least 2")
    estimate_curves, estimate_scalars, grid = pipeline(full_input)
    terms = list(estimate_curves)
    rep_curves = {t: np.empty((B, np.asarray(estimate_curves[t]).size)) for t in terms}
    scalar_names = list(estimate_scalars)
    rep_scalars = np.empty((B, len(scalar_names)))
    failures = np.zeros(B, dtype=int)

    def one(b: int):
        for attempt in range(MAX_ATTEMPTS_PER_REPLICATE):
            rng = _replicate_rng(seed, b, attempt)
            try:
                curves, scalars, _ = pipeline(draw(rng))
            except Exception as exc:  # refit failures are redrawn
                failures[b] += 1
                logger.debug("replicate %d attempt %d failed: %s", b, attempt, exc)
                continue
            for t in terms:
                rep_curves[t][b] = curves[t]
            rep_scalars[b] = [scalars[s] for s in scalar_names]
            return
        raise InferenceError(
            f"replicate {b} failed {MAX_ATTEMPTS_PER_REPLICATE} times in a row"
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, range(B)))
    else:
        for b in range(B):
            one(b)

    n_failed = int(failures.sum())
    if n_failed > 0.1 * B:
        raise InferenceError(
            f"{n_failed} failed replicates exceeds 10% of B={B}; "
            "check the model specification"
        )
    if n_failed:
        logger.warning("%d replicate draw(s) failed and were redrawn", n_failed)

    bands = {
        t: cma_band(
            rep_curves[t], np.asarray(estimate_curves[t], dtype=float).ravel(),
            alpha=alpha, term=t, grid=grid[t], on_degenerate="policy",
        )
        for t in terms
    }
    rows = []
    for j, name in enumerate(scalar_names):
        draws = rep_scalars[:, j]
        n_lo = int(np.sum(draws <= 0.0))
        n_hi = int(np.sum(draws >= 0.0))
        p = min(1.0, max(2.0 * min(n_lo, n_hi) / B, 1.0 / B))
        rows.append(
            {
                "term": name,
                "estimate": estimate_scalars[name],
                "se": float(draws.std(ddof=1)),
                "p_value": p,
            }
        )
    scalar_table = pd.DataFrame(rows, columns=["term", "estimate", "se", "p_value"])
    return bands, scalar_table, n_failed


def _run_bootstrap(samples, pipeline, B, seed, alpha, resampling, group_size, threads):
    def draw(rng):
        return _relabel(samples, _resample(samples, rng, resampling, group_size))

    return _bootstrap_loop(pipeline, samples, draw, B, seed, alpha, threads)


def bootstrap_fosr(
    samples: list[FunctionalSample],
    spec: FosrSpec,
    B: int = 300,
    seed: int = 0,
    *,
    alpha: float = 0.05,
    resampling: str = "plain",
    grid: np.ndarray | None = None,
    pve_threshold: float = 0.95,
    fpca_config: FpcaConfig | None = None,
    fpca_grid: np.ndarray | None = None,
    threads: int = 1,
    group_size: int = 3,
) -> BootstrapResult:
    """Bootstrap bands for every FoSR varying coefficient.

    Each replicate resamples subjects, re-runs FPCA (so eigenfunction
    uncertainty propagates into the random-effect basis), and refits.
    """
    eval_grid = np.asarray(
        default_grid(samples) if grid is None else grid, dtype=float
    )
    if fpca_grid is None:
        fpca_grid = default_grid(samples)  # pinned across replicates

    def pipeline(data):
        kept = [s for s in data if s.n_obs >= spec.min_obs]
        if len(kept) < 2:
            raise InputError("fewer than 2 subjects after min_obs filtering")
        fp = fit_fpca(kept, grid=fpca_grid, pve_threshold=pve_threshold, config=fpca_config)
        eff_spec = spec
        if spec.num_random_components > fp.num_components:
            eff_spec = dataclasses.replace(
                spec, num_random_components=fp.num_components
            )
        fit = fit_fosr(kept, eff_spec, fp)
        curves = {t: predict_coefficient(fit, t, eval_grid) for t in fit.varying_names}
        scalars = {
            r["term"]: float(r["estimate"]) for r in fit.scalar_table.to_dict("records")
        }
        grids = {t: eval_grid for t in curves}
        return curves, scalars, grids

    bands, scalar_table, n_failed = _run_bootstrap(
        samples, pipeline, B, seed, alpha, resampling, group_size, threads
    )
    return BootstrapResult(
        bands=bands, scalar_table=scalar_table, B=B, seed=seed,
        alpha=alpha, resampling=resampling, n_failed=n_failed,
    )


def bootstrap_twostep(
    samples: list[FunctionalSample],
    covariate_names: list[str],
    B: int = 300,
    seed: int = 0,
    *,
    alpha: float = 0.05,
    resampling: str = "plain",
    grid: np.ndarray | None = None,
    min_obs: int = 4,
    pve_threshold: float = 0.95,
    fpca_config: FpcaConfig | None = None,
    fpca_grid: np.ndarray | None = None,
    threads: int = 1,
    group_size: int = 3,
) -> BootstrapResult:
    """Bootstrap bands for the induced two-step coefficients."""
    eval_grid = np.asarray(
        default_grid(samples) if grid is None else grid, dtype=float
    )
    if fpca_grid is None:
        fpca_grid = default_grid(samples)  # pinned across replicates

    def pipeline(data):
        kept = [s for s in data if s.n_obs >= min_obs]
        if len(kept) < 2:
            raise InputError("fewer than 2 subjects after min_obs filtering")
        fp = fit_fpca(kept, grid=fpca_grid, pve_threshold=pve_threshold, config=fpca_config)
        fit = fit_twostep(kept, fp, covariate_names, grid=eval_grid)
        curves = {"intercept": fit.induced_intercept}
        curves.update(fit.induced_coefficients)
        grids = {t: eval_grid for t in curves}
        return curves, {}, grids

    bands, scalar_table, n_failed = _run_bootstrap(
        samples, pipeline, B, seed, alpha, resampling, group_size, threads
    )
    return BootstrapResult(
        bands=bands, scalar_table=scalar_table, B=B, seed=seed,
        alpha=alpha, resampling=resampling, n_failed=n_failed,
    )


def bootstrap_fofr(
    samples_intervention: list[FunctionalSample],
    samples_follow_up: list[FunctionalSample],
    spec: FofrSpec,
    B: int = 300,
    seed: int = 0,
    *,
    alpha: float = 0.05,
    resampling: str = "plain",
    t_eval: np.ndarray | None = None,
    u_eval: np.ndarray | None = None,
    pve_threshold: float = 0.95,
    fpca_config: FpcaConfig | None = None,
    fpca_fu_grid: np.ndarray | None = None,
    threads: int = 1,
    group_size: int = 3,
) -> BootstrapResult:
    """Bootstrap bands for the per-arm coefficient surfaces over (t, u).

    Subjects are resampled as whole cross-period pairs; FPCA imputation
    of the functional predictor is re-run within every replicate.
    """
    if len(samples_intervention) != len(samples_follow_up):
        raise InputError("intervention and follow-up sample lists must align")
    for a, b in zip(samples_intervention, samples_follow_up):
        if a.subject_id != b.subject_id:
            raise InputError(
                f"period samples misaligned: {a.subject_id!r} vs {b.subject_id!r}"
            )
    t_eval = np.asarray(spec.t_grid if t_eval is None else t_eval, dtype=float)
    u_eval = np.asarray(
        default_grid(samples_follow_up) if u_eval is None else u_eval, dtype=float
    )
    if fpca_fu_grid is None:
        fpca_fu_grid = default_grid(samples_follow_up)  # pinned across replicates
    pair_grid = np.array([(t, u) for t in t_eval for u in u_eval])
    pairs = list(zip(samples_intervention, samples_follow_up))

    def pipeline(data):
        ints = [p[0] for p in data]
        fus = [p[1] for p in data]
        keep = [
            i for i in range(len(data))
            if fus[i].n_obs >= spec.min_obs and ints[i].n_obs >= 1
        ]
        if len(keep) < 2:
            raise InputError("fewer than 2 subjects after min_obs filtering")
        ints = [ints[i] for i in keep]
        fus = [fus[i] for i in keep]
        fp_int = fit_fpca(
            ints, grid=spec.t_grid, pve_threshold=pve_threshold, config=fpca_config
        )
        W = impute_curves(fp_int, ints, spec.t_grid)
        fp_fu = fit_fpca(
            fus, grid=fpca_fu_grid, pve_threshold=pve_threshold, config=fpca_config
        )
        eff_spec = spec
        if spec.num_random_components > fp_fu.num_components:
            eff_spec = dataclasses.replace(
                spec, num_random_components=fp_fu.num_components
            )
        fit = fit_fofr(fus, W, eff_spec, fp_fu)
        curves = {
            f"surface_{arm}": evaluate_surface(fit, arm, t_eval, u_eval).ravel()
            for arm in spec.arms
        }
        scalars = {
            r["term"]: float(r["estimate"]) for r in fit.scalar_table.to_dict("records")
        }
        grids = {t: pair_grid for t in curves}
        return curves, scalars, grids

    bands, scalar_table, n_failed = _run_paired_bootstrap(
        pairs, pipeline, B, seed, alpha, resampling, group_size, threads,
        label_source=samples_follow_up,
    )
    return BootstrapResult(
        bands=bands, scalar_table=scalar_table, B=B, seed=seed,
        alpha=alpha, resampling=resampling, n_failed=n_failed,
    )


def _run_paired_bootstrap(
    pairs, pipeline, B, seed, alpha, resampling, group_size, threads, label_source
):
    """Replicate loop over aligned cross-period pairs."""

    def draw(rng):
        idx = _resample(label_source, rng, resampling, group_size)
        out = []
        for j, i in enumerate(idx):
            a, b = pairs[i]
            new_id = f"{a.subject_id}~{j}"
            out.append(
                (
                    dataclasses.replace(a, subject_id=new_id),
                    dataclasses.replace(b, subject_id=new_id),
                )
            )
        return out

    return _bootstrap_loop(pipeline, pairs, draw, B, seed, alpha, threads)
