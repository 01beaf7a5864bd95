"""Command-line orchestration of the full pipeline.

Every subcommand reads a JSON config (flags override file values),
writes its declared CSV/JSON outputs plus resolved_config.json into a
run directory, and finishes with run_log.json. All result files are
byte-identical across re-runs with the same seed and across thread
counts; run_log.json records wall time and is the one file outside that
contract.

Exit codes: 0 success, 2 usage/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .basis import BasisSystem, FOLLOW_UP_NUM_BASIS, INTERVENTION_NUM_BASIS
from .data_io import (
    PERIODS,
    PreprocessConfig,
    attach_covariates,
    load_covariates,
    load_daily,
    preprocess,
    samples_from_long,
    samples_to_long,
)
from .errors import InferenceError, InputError, NumericalError
from .fofr import FofrSpec, fit_fofr, surface_cross_section
from .fosr import FosrSpec, fit_fosr, fit_report
from .fpca import default_grid, fit_fpca, impute_curves
from .inference import bootstrap_fofr, bootstrap_fosr, bootstrap_twostep
from .sim import SimTruth, default_truth, generate_dataset, run_benchmark
from .twostep import fit_twostep

THREADS_ENV = "FUNCREG_THREADS"


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _period_defaults(period: str) -> dict:
    lo, hi = PERIODS[period]
    num_basis = INTERVENTION_NUM_BASIS if period == "intervention" else FOLLOW_UP_NUM_BASIS
    return {"domain": [float(lo), float(hi)], "num_basis": num_basis}


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {path}")
    with open(p) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise InputError("config file must contain a JSON object")
    return cfg


def _resolve(defaults: dict, config_section: dict, cli_values: dict) -> dict:
    """defaults < config file < explicit CLI flags."""
    out = dict(defaults)
    for k, v in (config_section or {}).items():
        if k not in out:
            raise InputError(f"unknown config key {k!r}")
        out[k] = v
    for k, v in cli_values.items():
        if v is not None:
            out[k] = v
    return out


def _make_run_dir(args, params: dict) -> Path:
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
        run_dir = Path(args.out_dir) / f"run_{stamp}_seed{params.get('seed', 0)}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _write_json(path: Path, payload) -> None:
    with open(path, "w") as fh:
        if isinstance(payload, str):
            fh.write(payload)
        else:
            json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _finish(run_dir: Path, command: str, params: dict, started: float, extra=None):
    # Thread count changes wall time only, never results; it is logged,
    # not part of the resolved model configuration.
    config = {k: v for k, v in params.items() if k != "threads"}
    _write_json(run_dir / "resolved_config.json", {"command": command, **config})
    log = {
        "command": command,
        "seed": params.get("seed"),
        "threads": params.get("threads"),
        "funcreg_version": __version__,
        "numpy_version": np.__version__,
        "wall_time_seconds": round(time.time() - started, 3),
    }
    if extra:
        log.update(extra)
    _write_json(run_dir / "run_log.json", log)


def _load_samples(data_path: str, covariates_path: str | None):
    df = pd.read_csv(data_path, dtype={"subject_id": str})
    samples = samples_from_long(df)
    if covariates_path:
        table = load_covariates(covariates_path)
        attach_covariates(samples, table)
    return samples


def _covariate_split(samples, varying_arg, invariant_arg):
    """Default split: arm dummies vary over time, everything else is scalar."""
    names = sorted(samples[0].covariates) if samples else []
    if varying_arg is not None:
        varying = [v for v in varying_arg.split(",") if v]
    else:
        varying = [n for n in names if n.startswith("arm_")]
    if invariant_arg is not None:
        invariant = [v for v in invariant_arg.split(",") if v]
    else:
        invariant = [n for n in names if n not in varying]
    return varying, invariant


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_preprocess(args, cfg):
    params = _resolve(
        {
            "daily": None,
            "min_valid_steps": 1000.0,
            "min_days_per_week": 3,
            "log_transform": True,
            "aggregate": "weekly",
            "impute_before_average": False,
            "period": "intervention",
            "seed": 0,
        },
        cfg.get("preprocess", {}),
        {
            "daily": args.daily,
            "min_valid_steps": args.min_valid_steps,
            "min_days_per_week": args.min_days,
            "log_transform": (False if args.no_log else None),
            "aggregate": args.aggregate,
            "impute_before_average": (True if args.impute_before_average else None),
            "period": args.period,
        },
    )
    if not params["daily"]:
        raise InputError("preprocess requires --daily CSV")
    started = time.time()
    run_dir = _make_run_dir(args, params)
    config = PreprocessConfig(
        min_valid_steps=float(params["min_valid_steps"]),
        min_days_per_week=int(params["min_days_per_week"]),
        log_transform=bool(params["log_transform"]),
        aggregate=params["aggregate"],
        impute_before_average=bool(params["impute_before_average"]),
        period=params["period"],
    )
    daily = load_daily(params["daily"])
    samples, report = preprocess(daily, config)
    samples_to_long(samples).to_csv(run_dir / "weekly.csv", index=False)
    _write_json(run_dir / "preprocess_report.json", json.loads(report.to_json()))
    _finish(run_dir, "preprocess", params, started,
            {"n_subjects": report.n_subjects_out})
    return run_dir


def _cmd_fpca(args, cfg):
    params = _resolve(
        {"data": None, "pve": 0.95, "seed": 0},
        cfg.get("fpca", {}),
        {"data": args.data, "pve": args.pve},
    )
    if not params["data"]:
        raise InputError("fpca requires --data CSV")
    started = time.time()
    run_dir = _make_run_dir(args, params)
    samples = _load_samples(params["data"], None)
    fit = fit_fpca(samples, pve_threshold=float(params["pve"]))
    (run_dir / "fpca.json").write_text(fit.to_json() + "\n")
    fit.scores_frame().to_csv(run_dir / "scores.csv", index=False)
    _finish(run_dir, "fpca", params, started, {"num_components": fit.num_components})
    return run_dir


def _fosr_params(args, cfg):
    return _resolve(
        {
            "data": None,
            "covariates": None,
            "period": "intervention",
            "min_obs": 4,
            "num_basis": None,
            "num_random_components": 2,
            "pve": 0.95,
            "bootstrap": 300,
            "alpha": 0.05,
            "resampling": "plain",
            "criterion": "gcv",
            "seed": 0,
            "threads": None,
            "contrasts": False,
            "varying": None,
            "invariant": None,
        },
        cfg.get("fosr", {}),
        {
            "data": args.data,
            "covariates": args.covariates,
            "period": args.period,
            "min_obs": args.min_obs,
            "num_basis": args.num_basis,
            "num_random_components": args.num_random_components,
            "pve": args.pve,
            "bootstrap": args.bootstrap,
            "alpha": args.alpha,
            "resampling": args.resampling,
            "criterion": args.criterion,
            "seed": args.seed,
            "threads": args.threads,
            "contrasts": (True if getattr(args, "contrasts", False) else None),
            "varying": args.varying,
            "invariant": args.invariant,
        },
    )


def _run_fosr(args, cfg, command="fosr"):
    params = _fosr_params(args, cfg)
    if not params["data"] or not params["covariates"]:
        raise InputError(f"{command} requires --data and --covariates CSVs")
    if params["threads"] is None:
        params["threads"] = _default_threads()
    started = time.time()
    run_dir = _make_run_dir(args, params)
    samples = _load_samples(params["data"], params["covariates"])
    period = _period_defaults(params["period"])
    num_basis = params["num_basis"] or period["num_basis"]
    params["num_basis"] = num_basis
    varying, invariant = _covariate_split(samples, params["varying"], params["invariant"])
    params["varying"], params["invariant"] = ",".join(varying), ",".join(invariant)
    basis = BasisSystem(period["domain"][0], period["domain"][1], int(num_basis))
    spec = FosrSpec(
        varying_covariates=varying,
        invariant_covariates=invariant,
        basis=basis,
        num_random_components=int(params["num_random_components"]),
        min_obs=int(params["min_obs"]),
        criterion=params["criterion"],
    )
    grid = default_grid(samples)

    kept = [s for s in samples if s.n_obs >= spec.min_obs]
    fp = fit_fpca(kept, grid=grid, pve_threshold=float(params["pve"]))
    if spec.num_random_components > fp.num_components:
        spec.num_random_components = fp.num_components
    fit = fit_fosr(kept, spec, fp)
    (run_dir / "fosr_fit.json").write_text(fit.to_json() + "\n")
    fit.coefficient_frame(grid).to_csv(run_dir / "coefficients.csv", index=False)
    report = fit_report(fit)
    _write_json(run_dir / "fit_report.json", json.loads(report.to_json()))

    B = int(params["bootstrap"])
    if B > 0:
        res = bootstrap_fosr(
            samples, spec, B=B, seed=int(params["seed"]),
            alpha=float(params["alpha"]), resampling=params["resampling"],
            grid=grid, pve_threshold=float(params["pve"]),
            fpca_grid=grid, threads=int(params["threads"]),
        )
        res.bands_frame().to_csv(run_dir / "bands.csv", index=False)
        res.scalar_table.to_csv(run_dir / "scalar_table.csv", index=False)
        _write_json(run_dir / "summary.json", res.summary())
        if params["contrasts"]:
            frames = []
            terms = [t for t in res.bands if t != "intercept"]
            for i, t1 in enumerate(terms):
                for t2 in terms[i + 1:]:
                    frames.append(res.contrast(t1, t2).frame())
            if frames:
                pd.concat(frames, ignore_index=True).to_csv(
                    run_dir / "contrasts.csv", index=False
                )
    else:
        fit.scalar_table.to_csv(run_dir / "scalar_table.csv", index=False)
    _finish(run_dir, command, params, started,
            {"n_subjects": len(kept), "num_components": fp.num_components})
    return run_dir


def _cmd_twostep(args, cfg):
    params = _resolve(
        {
            "data": None,
            "covariates": None,
            "pve": 0.95,
            "min_obs": 4,
            "bootstrap": 0,
            "alpha": 0.05,
            "resampling": "plain",
            "seed": 0,
            "threads": None,
        },
        cfg.get("twostep", {}),
        {
            "data": args.data,
            "covariates": args.covariates,
            "pve": args.pve,
            "min_obs": args.min_obs,
            "bootstrap": args.bootstrap,
            "alpha": args.alpha,
            "resampling": args.resampling,
            "seed": args.seed,
            "threads": args.threads,
        },
    )
    if not params["data"] or not params["covariates"]:
        raise InputError("twostep requires --data and --covariates CSVs")
    if params["threads"] is None:
        params["threads"] = _default_threads()
    started = time.time()
    run_dir = _make_run_dir(args, params)
    samples = _load_samples(params["data"], params["covariates"])
    kept = [s for s in samples if s.n_obs >= int(params["min_obs"])]
    grid = default_grid(samples)
    fp = fit_fpca(kept, grid=grid, pve_threshold=float(params["pve"]))
    names = sorted(kept[0].covariates)
    fit = fit_twostep(kept, fp, names, grid=grid)
    fit.tables_frame().to_csv(run_dir / "score_regressions.csv", index=False)
    induced = pd.concat(
        [pd.DataFrame({"covariate": "intercept", "t": grid,
                       "estimate": fit.induced_intercept})]
        + [
            pd.DataFrame({"covariate": name, "t": grid, "estimate": curve})
            for name, curve in sorted(fit.induced_coefficients.items())
        ],
        ignore_index=True,
    )
    induced.to_csv(run_dir / "induced_coefficients.csv", index=False)
    B = int(params["bootstrap"])
    if B > 0:
        res = bootstrap_twostep(
            samples, names, B=B, seed=int(params["seed"]),
            alpha=float(params["alpha"]), resampling=params["resampling"],
            grid=grid, min_obs=int(params["min_obs"]),
            pve_threshold=float(params["pve"]), fpca_grid=grid,
            threads=int(params["threads"]),
        )
        res.bands_frame().to_csv(run_dir / "bands.csv", index=False)
        _write_json(run_dir / "summary.json", res.summary())
    _finish(run_dir, "twostep", params, started,
            {"n_subjects": len(kept), "num_components": fp.num_components})
    return run_dir


def _cmd_fofr(args, cfg):
    params = _resolve(
        {
            "data_intervention": None,
            "data_follow_up": None,
            "covariates": None,
            "min_obs": 4,
            "num_basis_t": 8,
            "num_basis_u": 8,
            "num_random_components": 2,
            "pve": 0.95,
            "bootstrap": 300,
            "alpha": 0.05,
            "resampling": "plain",
            "criterion": "gcv",
            "cross_sections": "26",
            "seed": 0,
            "threads": None,
            "invariant": None,
        },
        cfg.get("fofr", {}),
        {
            "data_intervention": args.data_intervention,
            "data_follow_up": args.data_follow_up,
            "covariates": args.covariates,
            "min_obs": args.min_obs,
            "num_basis_t": args.num_basis_t,
            "num_basis_u": args.num_basis_u,
            "num_random_components": args.num_random_components,
            "pve": args.pve,
            "bootstrap": args.bootstrap,
            "alpha": args.alpha,
            "resampling": args.resampling,
            "criterion": args.criterion,
            "cross_sections": args.cross_sections,
            "seed": args.seed,
            "threads": args.threads,
            "invariant": args.invariant,
        },
    )
    for key in ("data_intervention", "data_follow_up", "covariates"):
        if not params[key]:
            raise InputError(f"fofr requires --{key.replace('_', '-')}")
    if params["threads"] is None:
        params["threads"] = _default_threads()
    started = time.time()
    run_dir = _make_run_dir(args, params)

    table = load_covariates(params["covariates"])
    ints = _load_samples(params["data_intervention"], None)
    fus = _load_samples(params["data_follow_up"], None)
    attach_covariates(ints, table)
    attach_covariates(fus, table)
    common = sorted(set(s.subject_id for s in ints) & set(s.subject_id for s in fus))
    int_map = {s.subject_id: s for s in ints}
    fu_map = {s.subject_id: s for s in fus}
    ints = [int_map[i] for i in common]
    fus = [fu_map[i] for i in common]
    if not ints:
        raise InputError("no subjects present in both periods")

    lo_t, hi_t = PERIODS["intervention"]
    lo_u, hi_u = PERIODS["follow_up"]
    t_grid = np.arange(float(lo_t), float(hi_t) + 1.0)
    arms = sorted({s.arm for s in fus})
    if params["invariant"] is not None:
        invariant = [v for v in params["invariant"].split(",") if v]
    else:
        invariant = sorted(fus[0].covariates)
    params["invariant"] = ",".join(invariant)
    spec = FofrSpec(
        arms=arms,
        t_grid=t_grid,
        basis_t=BasisSystem(float(lo_t), float(hi_t), int(params["num_basis_t"])),
        basis_u=BasisSystem(float(lo_u), float(hi_u), int(params["num_basis_u"])),
        basis_response=BasisSystem(float(lo_u), float(hi_u), FOLLOW_UP_NUM_BASIS),
        invariant_covariates=invariant,
        num_random_components=int(params["num_random_components"]),
        min_obs=int(params["min_obs"]),
        criterion=params["criterion"],
    )
    u_grid = default_grid(fus)
    fp_int = fit_fpca(ints, grid=t_grid, pve_threshold=float(params["pve"]))
    W = impute_curves(fp_int, ints, t_grid)
    fp_fu = fit_fpca(fus, grid=u_grid, pve_threshold=float(params["pve"]))
    if spec.num_random_components > fp_fu.num_components:
        spec.num_random_components = fp_fu.num_components
    fit = fit_fofr(fus, W, spec, fp_fu)
    (run_dir / "fofr_fit.json").write_text(fit.to_json() + "\n")

    B = int(params["bootstrap"])
    cross_us = [float(u) for u in str(params["cross_sections"]).split(",") if u]
    if B > 0:
        res = bootstrap_fofr(
            ints, fus, spec, B=B, seed=int(params["seed"]),
            alpha=float(params["alpha"]), resampling=params["resampling"],
            t_eval=t_grid, u_eval=u_grid, pve_threshold=float(params["pve"]),
            fpca_fu_grid=u_grid, threads=int(params["threads"]),
        )
        frame = res.bands_frame()
        frame.insert(0, "arm", frame.pop("term").str.replace("surface_", "", regex=False))
        frame.to_csv(run_dir / "surfaces.csv", index=False)
        res.scalar_table.to_csv(run_dir / "scalar_table.csv", index=False)
        _write_json(run_dir / "summary.json", res.summary())
        cross_rows = []
        for u in cross_us:
            for arm in arms:
                band = res.bands[f"surface_{arm}"]
                mask = np.isclose(band.grid[:, 1], u)
                cross_rows.append(
                    pd.DataFrame(
                        {
                            "arm": arm,
                            "u": u,
                            "t": band.grid[mask, 0],
                            "estimate": band.estimate[mask],
                            "lo": band.cma_lo[mask],
                            "hi": band.cma_hi[mask],
                        }
                    )
                )
        pd.concat(cross_rows, ignore_index=True).to_csv(
            run_dir / "cross_sections.csv", index=False
        )
    else:
        rows = []
        for arm in arms:
            for u in cross_us:
                vals = surface_cross_section(fit, arm, u, t_grid)
                rows.append(pd.DataFrame({"arm": arm, "u": u, "t": t_grid, "estimate": vals}))
        pd.concat(rows, ignore_index=True).to_csv(
            run_dir / "cross_sections.csv", index=False
        )
        fit.scalar_table.to_csv(run_dir / "scalar_table.csv", index=False)
    _finish(run_dir, "fofr", params, started, {"n_subjects": len(fus)})
    return run_dir


def _cmd_bootstrap(args, cfg):
    if args.model == "fosr":
        return _run_fosr(args, cfg, command="bootstrap")
    if args.model == "twostep":
        return _cmd_twostep(args, cfg)
    if args.model == "fofr":
        return _cmd_fofr(args, cfg)
    raise InputError(f"unknown bootstrap model {args.model!r}")


def _cmd_simulate(args, cfg):
    params = _resolve(
        {"truth": "default", "n": 250, "seed": 0},
        cfg.get("simulate", {}),
        {"truth": args.truth, "n": args.n, "seed": args.seed},
    )
    started = time.time()
    run_dir = _make_run_dir(args, params)
    truth = _load_truth(params["truth"])
    samples = generate_dataset(truth, int(params["n"]), seed=int(params["seed"]))
    samples_to_long(samples).to_csv(run_dir / "dataset_long.csv", index=False)
    cov_rows = []
    for s in samples:
        row = {"subject_id": s.subject_id, "arm": s.arm, "stratum": s.stratum,
               "cohort": s.cohort if s.cohort is not None else ""}
        row.update(s.covariates)
        cov_rows.append(row)
    pd.DataFrame(cov_rows).to_csv(run_dir / "dataset_covariates.csv", index=False)
    (run_dir / "truth.json").write_text(truth.to_json() + "\n")
    _finish(run_dir, "simulate", params, started, {"n": int(params["n"])})
    return run_dir


def _load_truth(spec: str) -> SimTruth:
    if spec == "default":
        return default_truth()
    p = Path(spec)
    if not p.exists():
        raise InputError(f"truth file not found: {spec}")
    return SimTruth.from_json(p.read_text())


def _cmd_benchmark(args, cfg):
    params = _resolve(
        {
            "truth": "default",
            "n": "100,250",
            "replicates": 200,
            "seed": 0,
            "threads": None,
            "num_basis": 20,
        },
        cfg.get("benchmark", {}),
        {
            "truth": args.truth,
            "n": args.n,
            "replicates": args.replicates,
            "seed": args.seed,
            "threads": args.threads,
            "num_basis": args.num_basis,
        },
    )
    if params["threads"] is None:
        params["threads"] = _default_threads()
    started = time.time()
    run_dir = _make_run_dir(args, params)
    truth = _load_truth(params["truth"])
    N_list = [int(v) for v in str(params["n"]).split(",") if v]
    res = run_benchmark(
        truth, N_list, int(params["replicates"]), seed=int(params["seed"]),
        num_basis=int(params["num_basis"]), threads=int(params["threads"]),
    )
    res.table.to_csv(run_dir / "benchmark.csv", index=False)
    res.mean_curves.to_csv(run_dir / "mean_curves.csv", index=False)
    (run_dir / "benchmark_summary.json").write_text(res.summary_json() + "\n")
    _finish(run_dir, "benchmark", params, started,
            {"N_list": N_list, "replicates": int(params["replicates"])})
    return run_dir


# ---------------------------------------------------------------------------
# Argument parsing


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out-dir", default=".", help="parent directory for run outputs")
    p.add_argument("--run-dir", help="explicit run directory (skips timestamp naming)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funcreg",
        description="Functional regression toolkit for longitudinal trajectories",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="daily records to weekly functional samples")
    _add_common(p)
    p.add_argument("--daily", help="daily CSV (subject_id, day_index, steps)")
    p.add_argument("--period", choices=sorted(PERIODS))
    p.add_argument("--min-valid-steps", type=float, dest="min_valid_steps")
    p.add_argument("--min-days", type=int)
    p.add_argument("--no-log", action="store_true")
    p.add_argument("--aggregate", choices=["weekly", "daily"])
    p.add_argument("--impute-before-average", action="store_true")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("fpca", help="functional principal components")
    _add_common(p)
    p.add_argument("--data", help="long CSV (subject_id, week, value)")
    p.add_argument("--pve", type=float)
    p.set_defaults(func=_cmd_fpca)

    def add_fosr_flags(p):
        p.add_argument("--data")
        p.add_argument("--covariates")
        p.add_argument("--period", choices=sorted(PERIODS))
        p.add_argument("--min-obs", type=int, dest="min_obs")
        p.add_argument("--num-basis", type=int, dest="num_basis")
        p.add_argument("--num-random-components", type=int, dest="num_random_components")
        p.add_argument("--pve", type=float)
        p.add_argument("--bootstrap", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--resampling", choices=["plain", "stratified"])
        p.add_argument("--criterion", choices=["gcv", "reml"])
        p.add_argument("--varying", help="comma-separated varying covariates")
        p.add_argument("--invariant", help="comma-separated invariant covariates")

    p = sub.add_parser("fosr", help="function-on-scalar regression with bands")
    _add_common(p)
    add_fosr_flags(p)
    p.add_argument("--contrasts", action="store_true",
                   help="also emit pairwise contrasts of varying coefficients")
    p.set_defaults(func=_run_fosr)

    p = sub.add_parser("twostep", help="FPCA + per-score regression baseline")
    _add_common(p)
    p.add_argument("--data")
    p.add_argument("--covariates")
    p.add_argument("--pve", type=float)
    p.add_argument("--min-obs", type=int, dest="min_obs")
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--resampling", choices=["plain", "stratified"])
    p.set_defaults(func=_cmd_twostep)

    p = sub.add_parser("fofr", help="function-on-function regression")
    _add_common(p)
    p.add_argument("--data-intervention", dest="data_intervention")
    p.add_argument("--data-follow-up", dest="data_follow_up")
    p.add_argument("--covariates")
    p.add_argument("--min-obs", type=int, dest="min_obs")
    p.add_argument("--num-basis-t", type=int, dest="num_basis_t")
    p.add_argument("--num-basis-u", type=int, dest="num_basis_u")
    p.add_argument("--num-random-components", type=int, dest="num_random_components")
    p.add_argument("--pve", type=float)
    p.add_argument("--bootstrap", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--resampling", choices=["plain", "stratified"])
    p.add_argument("--criterion", choices=["gcv", "reml"])
    p.add_argument("--cross-sections", dest="cross_sections",
                   help="comma-separated follow-up times for cross-section output")
    p.add_argument("--invariant")
    p.set_defaults(func=_cmd_fofr)

    p = sub.add_parser("bootstrap", help="bootstrap inference for a chosen model")
    _add_common(p)
    p.add_argument("--model", choices=["fosr", "twostep", "fofr"], default="fosr")
    add_fosr_flags(p)
    p.add_argument("--contrasts", action="store_true")
    p.add_argument("--data-intervention", dest="data_intervention")
    p.add_argument("--data-follow-up", dest="data_follow_up")
    p.add_argument("--num-basis-t", type=int, dest="num_basis_t")
    p.add_argument("--num-basis-u", type=int, dest="num_basis_u")
    p.add_argument("--cross-sections", dest="cross_sections")
    p.set_defaults(func=_cmd_bootstrap)

    p = sub.add_parser("simulate", help="generate a synthetic dataset from a truth")
    _add_common(p)
    p.add_argument("--truth", help="'default' or a truth JSON path")
    p.add_argument("--n", type=int)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("benchmark", help="FoSR vs two-step estimator comparison")
    _add_common(p)
    p.add_argument("--truth")
    p.add_argument("--n", help="comma-separated sample sizes")
    p.add_argument("--replicates", type=int)
    p.add_argument("--num-basis", type=int, dest="num_basis")
    p.set_defaults(func=_cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        run_dir = args.func(args, cfg)
        print(f"outputs written to {run_dir}")
        return 0
    except (
        InputError,
        FileNotFoundError,
        KeyError,
        json.JSONDecodeError,
        pd.errors.ParserError,
        pd.errors.EmptyDataError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, InferenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
