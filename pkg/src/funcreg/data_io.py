"""Ingestion and preprocessing of daily step trajectories.

Raw input is a table of (subject_id, day_index, steps) plus a covariate
table keyed by subject_id. Preprocessing drops implausibly low daily
counts, aggregates days into subject-relative weeks, applies the
missing-week rule and an optional log transform, and filters to the
requested study period. Output is a list of irregularly observed
:class:`FunctionalSample` objects (missing weeks are simply absent).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from .errors import InputError

# Study periods in subject-relative weeks.
PERIODS = {"intervention": (1, 24), "follow_up": (25, 36)}
MAX_WEEK = 36
DAYS_PER_WEEK = 7


@dataclass
class FunctionalSample:
    """One subject's irregular trajectory plus scalar covariates.

    ``times`` holds the weeks (or days, for the daily sensitivity
    variant) at which a value exists; missing weeks have no entry.
    """

    subject_id: str
    times: np.ndarray
    values: np.ndarray
    covariates: dict[str, float] = field(default_factory=dict)
    arm: str = ""
    stratum: str = ""
    cohort: str | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise InputError(
                f"subject {self.subject_id}: times and values must be aligned 1D arrays"
            )
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise InputError(f"subject {self.subject_id}: times must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise InputError(f"subject {self.subject_id}: values must be finite")

    @property
    def n_obs(self) -> int:
        return int(self.times.size)


@dataclass
class PreprocessConfig:
    """Rules of the preprocessing pipeline and its sensitivity variants."""

    min_valid_steps: float = 1000.0
    min_days_per_week: int = 3
    log_transform: bool = True
    aggregate: str = "weekly"  # "weekly" | "daily"
    impute_before_average: bool = False
    period: str = "intervention"  # "intervention" | "follow_up"

    def __post_init__(self):
        if not 0 <= self.min_days_per_week <= DAYS_PER_WEEK:
            raise InputError("min_days_per_week must be in [0, 7]")
        if self.aggregate not in ("weekly", "daily"):
            raise InputError("aggregate must be 'weekly' or 'daily'")
        if self.period not in PERIODS:
            raise InputError(f"period must be one of {sorted(PERIODS)}")


@dataclass
class PreprocessReport:
    """Counts of records removed by each rule."""

    n_subjects_in: int = 0
    n_subjects_out: int = 0
    invalid_step_days: int = 0
    weeks_below_min_days: int = 0
    records_beyond_max_week: int = 0
    empty_subjects: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def _week_of_day(day_index: int) -> int:
    return (day_index - 1) // DAYS_PER_WEEK + 1


def _check_daily(daily: pd.DataFrame) -> pd.DataFrame:
    required = {"subject_id", "day_index", "steps"}
    missing = required - set(daily.columns)
    if missing:
        raise InputError(f"daily records missing columns: {sorted(missing)}")
    if daily.duplicated(subset=["subject_id", "day_index"]).any():
        dup = daily[daily.duplicated(subset=["subject_id", "day_index"])].iloc[0]
        raise InputError(
            f"duplicate record for subject {dup['subject_id']!r} day {int(dup['day_index'])}"
        )
    if (daily["steps"] < 0).any():
        bad = daily[daily["steps"] < 0].iloc[0]
        raise InputError(
            f"negative steps for subject {bad['subject_id']!r} day {int(bad['day_index'])}"
        )
    return daily


def preprocess(
    daily: pd.DataFrame,
    config: PreprocessConfig | None = None,
) -> tuple[list[FunctionalSample], PreprocessReport]:
    """Apply the full preprocessing pipeline to daily records.

    Days with fewer than ``min_valid_steps`` steps are treated as
    missing; weeks with fewer than ``min_days_per_week`` valid days are
    absent from the output. Values are log-transformed when configured.
    """
    config = config or PreprocessConfig()
    daily = _check_daily(daily.copy())
    report = PreprocessReport(n_subjects_in=daily["subject_id"].nunique())

    beyond = daily["day_index"] > MAX_WEEK * DAYS_PER_WEEK
    report.records_beyond_max_week = int(beyond.sum())
    daily = daily[~beyond]

    invalid = daily["steps"] < config.min_valid_steps
    report.invalid_step_days = int(invalid.sum())
    valid = daily[~invalid].copy()

    if config.impute_before_average:
        valid = _impute_daily(valid, daily["subject_id"].unique())

    lo_week, hi_week = PERIODS[config.period]
    samples: list[FunctionalSample] = []

    if config.aggregate == "daily":
        lo_day = (lo_week - 1) * DAYS_PER_WEEK + 1
        hi_day = hi_week * DAYS_PER_WEEK
        for sid, grp in valid.groupby("subject_id", sort=True):
            grp = grp[(grp["day_index"] >= lo_day) & (grp["day_index"] <= hi_day)]
            grp = grp.sort_values("day_index")
            if grp.empty:
                report.empty_subjects += 1
                continue
            vals = grp["steps"].to_numpy(dtype=float)
            if config.log_transform:
                vals = np.log(vals)
            samples.append(
                FunctionalSample(
                    subject_id=str(sid),
                    times=grp["day_index"].to_numpy(dtype=float),
                    values=vals,
                )
            )
        report.n_subjects_out = len(samples)
        return samples, report

    valid["week"] = ((valid["day_index"] - 1) // DAYS_PER_WEEK + 1).astype(int)
    agg = valid.groupby(["subject_id", "week"], sort=True)["steps"].agg(["mean", "count"])
    min_days = max(config.min_days_per_week, 1)
    below = agg["count"] < min_days
    report.weeks_below_min_days = int(below.sum())
    agg = agg[~below]

    for sid in sorted(valid["subject_id"].unique()):
        if sid in agg.index.get_level_values(0):
            sub = agg.loc[sid]
            weeks = sub.index.to_numpy(dtype=float)
            means = sub["mean"].to_numpy(dtype=float)
        else:
            weeks = np.array([])
            means = np.array([])
        keep = (weeks >= lo_week) & (weeks <= hi_week)
        weeks, means = weeks[keep], means[keep]
        if weeks.size == 0:
            report.empty_subjects += 1
            continue
        if config.log_transform:
            means = np.log(means)
        samples.append(FunctionalSample(subject_id=str(sid), times=weeks, values=means))
    report.n_subjects_out = len(samples)
    return samples, report


def _impute_daily(valid: pd.DataFrame, all_subjects) -> pd.DataFrame:
    """FPCA-impute missing daily values before weekly averaging (S1 variant)."""
    from . import fpca as _fpca  # deferred: data_io <-> fpca cycle

    grid = np.arange(1.0, MAX_WEEK * DAYS_PER_WEEK + 1.0)
    samples = []
    for sid, grp in valid.groupby("subject_id", sort=True):
        grp = grp.sort_values("day_index")
        samples.append(
            FunctionalSample(
                subject_id=str(sid),
                times=grp["day_index"].to_numpy(dtype=float),
                values=grp["steps"].to_numpy(dtype=float),
            )
        )
    fit = _fpca.fit_fpca(samples, grid=grid)
    full = _fpca.impute_curves(fit, samples, grid)
    rows = []
    for i, s in enumerate(samples):
        rows.append(
            pd.DataFrame(
                {
                    "subject_id": s.subject_id,
                    "day_index": grid.astype(int),
                    "steps": full[i],
                }
            )
        )
    return pd.concat(rows, ignore_index=True)


def load_daily(path) -> pd.DataFrame:
    """Read a daily CSV (subject_id, day_index, steps)."""
    df = pd.read_csv(path, dtype={"subject_id": str})
    return _check_daily(df)


def load_covariates(path) -> pd.DataFrame:
    """Read a covariate CSV keyed by subject_id; numeric columns typed float.

    Non-numeric values in an otherwise numeric column raise with the
    offending row number; string columns stay categorical.
    """
    df = pd.read_csv(path, dtype={"subject_id": str})
    if "subject_id" not in df.columns:
        raise InputError("covariate file must contain a subject_id column")
    if df.empty:
        raise InputError(f"covariate file {path} contains no rows")
    if df["subject_id"].duplicated().any():
        dup = df["subject_id"][df["subject_id"].duplicated()].iloc[0]
        raise InputError(f"duplicate subject_id {dup!r} in covariate file")
    for col in df.columns:
        if col == "subject_id":
            continue
        if df[col].dtype == object:
            converted = pd.to_numeric(df[col], errors="coerce")
            n_numeric = converted.notna().sum()
            if 0 < n_numeric < len(df):
                bad_row = int(np.flatnonzero(converted.isna())[0]) + 2  # 1-based + header
                raise InputError(
                    f"non-numeric value in numeric column {col!r} at row {bad_row}"
                )
            if n_numeric == len(df):
                df[col] = converted.astype(float)
        elif pd.api.types.is_numeric_dtype(df[col]):
            df[col] = df[col].astype(float)
    return df.set_index("subject_id")


def expand_categoricals(
    table: pd.DataFrame, reference: dict[str, str] | None = None
) -> pd.DataFrame:
    """Reference-code categorical columns as 0/1 indicators.

    The reference level contributes an all-zero row; for an ``arm``
    column the reference defaults to ``"control"`` when present.
    """
    reference = dict(reference or {})
    out = {}
    for col in table.columns:
        if pd.api.types.is_numeric_dtype(table[col]):
            out[col] = table[col].to_numpy(dtype=float)
            continue
        levels = sorted(table[col].astype(str).unique())
        ref = reference.get(col)
        if ref is None:
            ref = "control" if col == "arm" and "control" in levels else levels[0]
        if ref not in levels:
            raise InputError(f"reference level {ref!r} not found in column {col!r}")
        for lev in levels:
            if lev == ref:
                continue
            out[f"{col}_{lev}"] = (table[col].astype(str) == lev).to_numpy(dtype=float)
    return pd.DataFrame(out, index=table.index)


def attach_covariates(
    samples: list[FunctionalSample], table: pd.DataFrame
) -> list[FunctionalSample]:
    """Join covariates (and arm/stratum/cohort labels) onto samples in place."""
    missing = [s.subject_id for s in samples if s.subject_id not in table.index]
    if missing:
        raise InputError(f"covariate table is missing subjects: {missing[:10]}")
    label_cols = {"arm", "stratum", "cohort"}
    numeric = table[[c for c in table.columns if c not in label_cols]]
    numeric = expand_categoricals(numeric)
    for s in samples:
        row = table.loc[s.subject_id]
        s.covariates = {c: float(numeric.loc[s.subject_id, c]) for c in numeric.columns}
        if "arm" in table.columns:
            s.arm = str(row["arm"])
        if "stratum" in table.columns:
            s.stratum = str(row["stratum"])
        if "cohort" in table.columns and not pd.isna(row["cohort"]) and str(row["cohort"]):
            s.cohort = str(row["cohort"])
    return samples


def samples_to_long(samples: list[FunctionalSample]) -> pd.DataFrame:
    """Canonical long format (subject_id, week, value)."""
    rows = {
        "subject_id": np.concatenate([[s.subject_id] * s.n_obs for s in samples]),
        "week": np.concatenate([s.times for s in samples]),
        "value": np.concatenate([s.values for s in samples]),
    }
    return pd.DataFrame(rows)


def samples_from_long(df: pd.DataFrame) -> list[FunctionalSample]:
    required = {"subject_id", "week", "value"}
    if not required <= set(df.columns):
        raise InputError(f"long table must have columns {sorted(required)}")
    samples = []
    for sid, grp in df.groupby("subject_id", sort=True):
        grp = grp.sort_values("week")
        samples.append(
            FunctionalSample(
                subject_id=str(sid),
                times=grp["week"].to_numpy(dtype=float),
                values=grp["value"].to_numpy(dtype=float),
            )
        )
    return samples
