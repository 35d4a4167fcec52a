"""Command-line interface: fitting, density estimation and simulation.

Input is CSV with a header row; configuration is JSON.  Every output
file is written to a temporary file first and atomically renamed, so a
crash never leaves a partially written file behind.  Exit codes: 0 on
success, 1 for parse/configuration errors, 2 for unidentifiable models,
3 for non-convergence (partial output is still written with a failure
flag).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from .density import BinGrid, fit_error_density
from .errors import (
    ConvergenceError,
    DalsmError,
    InvalidConfigurationError,
    UnidentifiableModelError,
)
from .fitter import FitResult, ModelSpec, fit, pointwise_bands, prepare_data
from .likelihood import EVENT, INTERVAL, RIGHT, ObservationSet
from .simulate import (
    PARAM_TRUTH,
    SimulationScenario,
    generate,
    run_replicate,
    score,
)

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_UNIDENTIFIABLE = 2
EXIT_NONCONVERGENCE = 3

log = logging.getLogger("dalsm")

_STATUS_CODES = {"event": EVENT, "right": RIGHT, "interval": INTERVAL}
_TERM_GRID = np.linspace(0.0, 1.0, 101)


# ---------------------------------------------------------------------------
# atomic output helpers

def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_write_json(path: Path, payload) -> None:
    # json round-trips Python floats through repr, which is lossless
    _atomic_write_text(path, json.dumps(payload, indent=2, allow_nan=True) + "\n")


def _atomic_write_csv(path: Path, header: list, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# ---------------------------------------------------------------------------
# input parsing

def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InvalidConfigurationError("config must be a JSON object")
    return cfg


_FORMULA_KEYS = {"fixed", "smooth"}


def spec_from_config(cfg: dict) -> ModelSpec:
    """Build a ModelSpec from the JSON configuration, rejecting unknown keys."""
    cfg = dict(cfg)
    kwargs = {}
    for block, prefix in (("location", "location"), ("dispersion", "dispersion")):
        sub = cfg.pop(block, {})
        if not isinstance(sub, dict) or not set(sub) <= _FORMULA_KEYS:
            raise InvalidConfigurationError(
                f"'{block}' must be an object with keys 'fixed' and/or 'smooth'")
        kwargs[f"{prefix}_fixed"] = list(sub.get("fixed", []))
        kwargs[f"{prefix}_smooth"] = list(sub.get("smooth", []))
    allowed = {f.name for f in dataclass_fields(ModelSpec)} - set(kwargs)
    unknown = set(cfg) - allowed
    if unknown:
        raise InvalidConfigurationError(f"unknown config keys: {sorted(unknown)}")
    if "support" in cfg:
        cfg["support"] = tuple(cfg["support"])
    kwargs.update(cfg)
    return ModelSpec(**kwargs)


def _parse_bound(text: str, row_num: int, column: str):
    text = text.strip()
    if text == "" or text.lower() in ("inf", "+inf", "infinity"):
        return np.inf
    try:
        return float(text)
    except ValueError as exc:
        raise InvalidConfigurationError(
            f"row {row_num}: cannot parse {column} value {text!r}") from exc


def read_dataset(path, scale_column: str | None = None):
    """CSV with response_lower/response_upper plus covariate columns.

    Equal bounds mark an event, an empty or infinite upper bound marks
    right censoring, and finite lower < upper marks interval censoring.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise InvalidConfigurationError(f"{path}: empty file")
            header = [c.strip() for c in reader.fieldnames]
            rows = list(reader)
    except OSError as exc:
        raise InvalidConfigurationError(f"cannot read data {path}: {exc}") from exc
    for required in ("response_lower", "response_upper"):
        if required not in header:
            raise InvalidConfigurationError(f"{path}: missing column {required!r}")
    cov_names = [c for c in header
                 if c not in ("response_lower", "response_upper")]
    n = len(rows)
    if n == 0:
        raise InvalidConfigurationError(f"{path}: no data rows")

    kind = np.empty(n, dtype=int)
    lower = np.empty(n)
    upper = np.empty(n)
    covariates = {c: np.empty(n) for c in cov_names}
    for i, row in enumerate(rows):
        row_num = i + 2  # 1-based with header
        lo = _parse_bound(row["response_lower"], row_num, "response_lower")
        hi = _parse_bound(row["response_upper"], row_num, "response_upper")
        if not np.isfinite(lo):
            raise InvalidConfigurationError(
                f"row {row_num}: response_lower must be finite")
        if hi < lo:
            raise InvalidConfigurationError(
                f"row {row_num}: response_lower {lo} exceeds response_upper {hi}")
        for c in cov_names:
            try:
                covariates[c][i] = float(row[c])
            except (TypeError, ValueError) as exc:
                raise InvalidConfigurationError(
                    f"row {row_num}: cannot parse covariate {c!r}") from exc
        if not np.isfinite(hi):
            kind[i], lower[i], upper[i] = RIGHT, lo, np.inf
        elif hi == lo:
            kind[i], lower[i], upper[i] = EVENT, lo, lo
        else:
            kind[i], lower[i], upper[i] = INTERVAL, lo, hi

    if scale_column is not None:
        if scale_column not in covariates:
            raise InvalidConfigurationError(
                f"scale column {scale_column!r} not in data")
        s = covariates[scale_column]
        if np.any(s <= 0):
            raise InvalidConfigurationError(
                f"scale column {scale_column!r} must be positive")
        lower = lower / s
        upper = np.where(np.isfinite(upper), upper / s, np.inf)

    return ObservationSet(kind=kind, lower=lower, upper=upper), covariates


def read_density_dataset(path) -> ObservationSet:
    """3-column CSV: lower, upper, status in {event, right, interval}."""
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise InvalidConfigurationError(f"{path}: empty file")
            rows = list(reader)
    except OSError as exc:
        raise InvalidConfigurationError(f"cannot read data {path}: {exc}") from exc
    for required in ("lower", "upper", "status"):
        if required not in reader.fieldnames:
            raise InvalidConfigurationError(f"{path}: missing column {required!r}")
    n = len(rows)
    if n == 0:
        raise InvalidConfigurationError(f"{path}: no data rows")
    kind = np.empty(n, dtype=int)
    lower = np.empty(n)
    upper = np.empty(n)
    for i, row in enumerate(rows):
        row_num = i + 2
        status = row["status"].strip().lower()
        if status not in _STATUS_CODES:
            raise InvalidConfigurationError(
                f"row {row_num}: unknown status {row['status']!r}")
        kind[i] = _STATUS_CODES[status]
        lower[i] = _parse_bound(row["lower"], row_num, "lower")
        upper[i] = (np.inf if kind[i] == RIGHT
                    else _parse_bound(row["upper"], row_num, "upper"))
        if kind[i] == INTERVAL and not lower[i] < upper[i]:
            raise InvalidConfigurationError(
                f"row {row_num}: interval needs lower < upper")
    return ObservationSet(kind=kind, lower=lower, upper=upper)


# ---------------------------------------------------------------------------
# fit output

def _coefficient_table(result: FitResult, spec: ModelSpec):
    from scipy.stats import norm as _norm

    z = _norm.ppf(0.975)
    table = []

    def block_rows(block, psi, Sigma, fixed_names, smooth_names):
        names = ["intercept"] + list(fixed_names)
        L = result._design_meta[block][1]
        for j, cov in enumerate(smooth_names):
            names += [f"f({cov})[{k}]" for k in range(L)]
        for i, name in enumerate(names):
            se = float(np.sqrt(max(Sigma[i, i], 0.0)))
            est = float(psi[i])
            table.append({"block": block, "name": name, "estimate": est,
                          "se": se, "ci_lower": est - z * se,
                          "ci_upper": est + z * se})

    block_rows("mu", result.psi_mu, result.Sigma_mu,
               spec.location_fixed, spec.location_smooth)
    block_rows("sigma", result.psi_sigma, result.Sigma_sigma,
               spec.dispersion_fixed, spec.dispersion_smooth)
    return table


def _write_term_outputs(result: FitResult, spec: ModelSpec, out_dir: Path,
                        render: bool):
    from . import plots

    written = []
    layout = [("mu", spec.location_smooth), ("sigma", spec.dispersion_smooth)]
    for block, smooth in layout:
        for idx, cov in enumerate(smooth):
            fit_vals, lo_b, hi_b = pointwise_bands(result, block, idx, _TERM_GRID)
            lo, hi = result.transforms[cov]
            x = lo + _TERM_GRID * (hi - lo)
            stem = f"term_{block}_{cov}"
            csv_path = out_dir / f"{stem}.csv"
            _atomic_write_csv(csv_path, ["x", "fit", "lower", "upper"],
                              zip(x.tolist(), fit_vals.tolist(),
                                  lo_b.tolist(), hi_b.tolist()))
            written.append(str(csv_path))
            if render:
                written.append(plots.plot_term(x, fit_vals, lo_b, hi_b, cov,
                                               block, out_dir / f"{stem}.png"))
    return written


def _write_density_outputs(density, out_dir: Path, render: bool,
                           stem: str = "density", reference=None):
    from . import plots

    written = []
    r = density.grid.midpoints
    f, S, h = density.density, density.survival, density.hazard
    csv_path = out_dir / f"{stem}.csv"
    _atomic_write_csv(csv_path, ["r", "f", "S", "h"],
                      zip(r.tolist(), f.tolist(), S.tolist(), h.tolist()))
    written.append(str(csv_path))
    if render:
        written.append(plots.plot_density(r, f, S, h, out_dir / f"{stem}.png",
                                          reference=reference))
    return written


def cmd_fit(args) -> int:
    out_dir = Path(args.out)
    try:
        cfg = _load_config(args.config)
        spec = spec_from_config(cfg)
        obs, covariates = read_dataset(args.data, scale_column=args.scale_column)
        missing = [c for c in (spec.location_fixed + spec.location_smooth
                               + spec.dispersion_fixed + spec.dispersion_smooth)
                   if c not in covariates]
        if missing:
            raise InvalidConfigurationError(f"covariates not in data: {missing}")
        data = prepare_data(spec, obs, covariates)
    except (InvalidConfigurationError, DalsmError, TypeError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE

    try:
        result = fit(spec, data)
    except UnidentifiableModelError as exc:
        log.error("unidentifiable model: %s", exc)
        return EXIT_UNIDENTIFIABLE
    except (ConvergenceError, DalsmError) as exc:
        log.error("fit failed: %s", exc)
        _atomic_write_json(out_dir / "fit.json",
                           {"converged": False, "error": str(exc)})
        return EXIT_NONCONVERGENCE

    payload = {
        "converged": result.converged,
        "n_outer": result.n_outer,
        "elapsed_seconds": result.elapsed_seconds,
        "coefficients": _coefficient_table(result, spec),
        "lambda_mu": _jsonable(result.lambda_mu),
        "lambda_sigma": _jsonable(result.lambda_sigma),
        "tau": result.density.tau if result.density is not None else None,
        "edf_mu": _jsonable(result.edf_mu),
        "edf_sigma": _jsonable(result.edf_sigma),
        "transforms": _jsonable(result.transforms),
        "clamped_residuals": result.clamp_count,
        "trace": _jsonable(result.trace),
    }
    _atomic_write_json(out_dir / "fit.json", payload)
    written = [str(out_dir / "fit.json")]
    written += _write_term_outputs(result, spec, out_dir, render=not args.no_figures)
    if result.density is not None:
        written += _write_density_outputs(result.density, out_dir,
                                          render=not args.no_figures)
    log.info("wrote %s", ", ".join(written))
    if not result.converged:
        log.error("fit did not converge in %d outer iterations", result.n_outer)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


_DENSITY_CONFIG_KEYS = {"n_basis", "support", "n_bins", "prior_b", "tau_init"}


def cmd_density_fit(args) -> int:
    out_dir = Path(args.out)
    try:
        cfg = _load_config(args.config)
        unknown = set(cfg) - _DENSITY_CONFIG_KEYS
        if unknown:
            raise InvalidConfigurationError(f"unknown config keys: {sorted(unknown)}")
        obs = read_density_dataset(args.data)
    except (InvalidConfigurationError, DalsmError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE

    support = tuple(cfg.get("support", (-6.0, 6.0)))
    grid = BinGrid(support[0], support[1], int(cfg.get("n_bins", 300)))
    try:
        density = fit_error_density(obs, grid=grid,
                                    n_basis=int(cfg.get("n_basis", 20)),
                                    prior_b=float(cfg.get("prior_b", 1e-4)),
                                    tau_init=float(cfg.get("tau_init", 1.0)))
    except UnidentifiableModelError as exc:
        log.error("unidentifiable: %s", exc)
        return EXIT_UNIDENTIFIABLE
    except (ConvergenceError, DalsmError) as exc:
        log.error("density fit failed: %s", exc)
        _atomic_write_json(out_dir / "density.json",
                           {"converged": False, "error": str(exc)})
        return EXIT_NONCONVERGENCE

    mean, var = density.moments()
    payload = {
        "phi": _jsonable(density.phi),
        "tau": density.tau,
        "grid": {"r_min": grid.r_min, "r_max": grid.r_max, "n_bins": grid.n_bins},
        "density_table": _jsonable(density.density),
        "moments": {"mean": mean, "variance": var,
                    "mean_residual": mean, "variance_residual": var - 1.0},
    }
    _atomic_write_json(out_dir / "density.json", payload)
    written = [str(out_dir / "density.json")]
    written += _write_density_outputs(density, out_dir, render=not args.no_figures)
    log.info("wrote %s", ", ".join(written))
    return EXIT_OK


_SCENARIO_KEYS = {"n", "rc_rate", "ic_rate", "n_replicates", "seed", "models"}


def _simulate_one(payload):
    scenario, rep, models = payload
    return run_replicate(scenario, rep, models=models)


def _dataset_rows(dataset):
    cov_names = sorted(dataset.covariates)
    header = ["response_lower", "response_upper"] + cov_names
    rows = []
    for i in range(dataset.obs.lower.size):
        lo = dataset.obs.lower[i]
        hi = dataset.obs.upper[i]
        upper = "inf" if not np.isfinite(hi) else repr(float(hi))
        rows.append([repr(float(lo)), upper]
                    + [repr(float(dataset.covariates[c][i])) for c in cov_names])
    return header, rows


def cmd_simulate(args) -> int:
    out_dir = Path(args.out)
    try:
        cfg = _load_config(args.config)
        unknown = set(cfg) - _SCENARIO_KEYS
        if unknown:
            raise InvalidConfigurationError(f"unknown config keys: {sorted(unknown)}")
        models = tuple(cfg.pop("models", ("np", "normal")))
        scenario = SimulationScenario(**cfg)
    except (InvalidConfigurationError, DalsmError, TypeError) as exc:
        log.error("%s", exc)
        return EXIT_PARSE

    jobs = max(int(args.jobs), 1)
    reps = range(scenario.n_replicates)
    try:
        if jobs == 1:
            results = [run_replicate(scenario, rep, models=models) for rep in reps]
        else:
            import multiprocessing as mp

            with mp.Pool(jobs) as pool:
                results = pool.map(_simulate_one,
                                   [(scenario, rep, models) for rep in reps])
    except UnidentifiableModelError as exc:
        log.error("unidentifiable model: %s", exc)
        return EXIT_UNIDENTIFIABLE
    except (ConvergenceError, DalsmError) as exc:
        log.error("simulation failed: %s", exc)
        return EXIT_NONCONVERGENCE

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(_jsonable(r), sort_keys=True) for r in results]
    _atomic_write_text(out_dir / "replicates.jsonl", "\n".join(lines) + "\n")

    metrics = score(results, scenario, models=models)
    frame = metrics.to_frame()
    _atomic_write_csv(out_dir / "metrics.csv", list(frame.columns),
                      frame.itertuples(index=False))
    _atomic_write_json(out_dir / "metrics.json", _jsonable(metrics.rows))

    long_rows = []
    for r in results:
        for model in models:
            for tgt, (est, _se) in r[model]["params"].items():
                long_rows.append([r["replicate"], tgt, model, repr(float(est)),
                                  repr(float(PARAM_TRUTH[tgt]))])
    _atomic_write_csv(out_dir / "params_long.csv",
                      ["replicate", "target", "error_model", "estimate", "truth"],
                      long_rows)

    # first replicate as a ready-to-fit dataset for round-tripping
    dataset = generate(scenario, 0)
    header, rows = _dataset_rows(dataset)
    _atomic_write_csv(out_dir / "dataset_rep0.csv", header, rows)
    _atomic_write_json(out_dir / "fit_config.json", {
        "location": {"fixed": ["z1_mu", "z2_mu"], "smooth": ["x1_mu", "x2_mu"]},
        "dispersion": {"fixed": ["z1_sigma", "z2_sigma"],
                       "smooth": ["x1_sigma", "x2_sigma"]},
    })

    if not args.no_figures:
        import pandas as pd

        from . import plots

        plots.plot_metric_bars(frame, "rmise", out_dir / "metrics_rmise.png")
        long_frame = pd.DataFrame(
            [[int(r[0]), r[1], r[2], float(r[3]), float(r[4])] for r in long_rows],
            columns=["replicate", "target", "error_model", "estimate", "truth"])
        plots.plot_parameter_estimates(long_frame, out_dir / "params_box.png")

    n_failed = sum(1 for r in results
                   for model in models if not r[model]["converged"])
    if n_failed:
        log.error("%d model fits did not converge", n_failed)
        return EXIT_NONCONVERGENCE
    return EXIT_OK


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dalsm",
        description="Double additive location-scale models for censored data")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a model to a CSV dataset")
    p_fit.add_argument("--data", required=True, help="input CSV path")
    p_fit.add_argument("--config", required=True, help="model config JSON path")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--scale-column",
                       help="covariate used as a divisor of both response bounds")
    p_fit.set_defaults(func=cmd_fit)

    p_dens = sub.add_parser("density-fit",
                            help="fit the error density to residual-scale data")
    p_dens.add_argument("--data", required=True, help="input CSV path")
    p_dens.add_argument("--config", help="density config JSON path")
    p_dens.add_argument("--out", required=True, help="output directory")
    p_dens.set_defaults(func=cmd_density_fit)

    p_sim = sub.add_parser("simulate", help="run the simulation study")
    p_sim.add_argument("--config", required=True, help="scenario config JSON path")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--jobs", default=1, help="parallel worker count")
    p_sim.set_defaults(func=cmd_simulate)

    for p in (p_fit, p_dens, p_sim):
        p.add_argument("--verbose", action="store_true", help="debug logging")
        p.add_argument("--no-figures", action="store_true",
                       help="emit delimited data only, skip figure rendering")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    level = os.environ.get("DALSM_LOG", "INFO").upper()
    if args.verbose:
        level = "DEBUG"
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
