"""Train / fit / forecast / evaluate steps over an output directory.

Each step reads the artifacts of the previous ones, writes its own files
under ``<output_dir>/<step>/`` and finishes with a ``manifest.json`` listing
the sha256 of every file it wrote together with the config hash. Paths inside
artifacts are relative, so two runs of the same config produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import SirromError
from .fitting import FitResult, fit, optimize_initial_state
from .forecast import combine, constant_rate_forecast, error_table, propagate
from .models import TimeGrid
from .reduction import ReducedBasis, build_basis
from .scenarios import (ScenarioSet, build_training_set, concatenate, load_default_boxes,
                        sample_parameters, synthetic_observations)
from .timeseries import HealthSeries, apply_adjustment, load_csv, smooth

log = logging.getLogger(__name__)

RATES = ("beta", "gamma")
BASELINE = "baseline"


class MissingArtifactError(SirromError, FileNotFoundError):
    """An earlier pipeline step has not been run for this output directory."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=float) + "\n", encoding="utf-8")


def write_manifest(root: Path, step: str, cfg: PipelineConfig, extra=None) -> dict:
    """Hash every file under ``root/step`` (except the manifest itself)."""
    d = root / step
    files = {}
    for p in sorted(d.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(root).as_posix()] = _sha256(p)
    man = {"step": step, "config_sha256": cfg.digest(), "files": files, **(extra or {})}
    _dump(d / "manifest.json", man)
    return man


def _require(path: Path, step: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; run `sirrom {step}` with this config first")
    return path


def basis_name(method: str, rate: str, n: int) -> str:
    return f"{method}_{rate}_n{n}"


def label(method: str, n: int) -> str:
    return f"{method}_n{n}"


# ---------------------------------------------------------------- data

def training_grid(cfg: PipelineConfig) -> TimeGrid:
    return TimeGrid.daily(cfg.grid_days)


def load_observations(cfg: PipelineConfig) -> HealthSeries:
    """Raw data file scaled by the adjustment factor (no smoothing)."""
    if cfg.data is None:
        raise ValueError("no data file configured (set `data` or pass --data)")
    if cfg.population is None:
        raise ValueError("population is required with a data file (set `population` or --population)")
    raw = load_csv(_require(Path(cfg.data), "synthesize"), cfg.population)
    return apply_adjustment(raw, cfg.adjustment_factor)


def fit_series(series: HealthSeries, cfg: PipelineConfig) -> HealthSeries:
    """The fit window of ``series`` re-based to day 0 and smoothed.

    Only days inside the window enter the moving average, so nothing after
    ``T`` leaks into the fit.
    """
    stop = cfg.fit_start + cfg.fit_days
    if len(series) < stop:
        raise ValueError(f"data has {len(series)} days; the fit window needs {stop}")
    part = HealthSeries(series.dates[cfg.fit_start:stop], series.infected[cfg.fit_start:stop],
                        series.removed[cfg.fit_start:stop], series.population)
    return smooth(part, cfg.smooth_window)


def load_truth(cfg: PipelineConfig) -> HealthSeries:
    """Held-out truth (``truth`` file if given, else the data file), adjusted."""
    if cfg.truth is None:
        return load_observations(cfg)
    raw = load_csv(_require(Path(cfg.truth), "synthesize"), cfg.population)
    return apply_adjustment(raw, cfg.adjustment_factor)


# ---------------------------------------------------------------- train

def training_sets(cfg: PipelineConfig) -> dict:
    """One ScenarioSet per configured detailed model (seeds offset by model index)."""
    boxes = load_default_boxes(cfg.boxes, cfg.population)
    grid = training_grid(cfg)
    out = {}
    for k, model in enumerate(cfg.models):
        if model not in boxes:
            raise ValueError(f"no parameter box for model {model}")
        box = boxes[model]
        params = sample_parameters(box, cfg.K, cfg.seed + k)
        out[model] = build_training_set(params, grid, jobs=cfg.jobs, burn_in=cfg.burn_in,
                                        meta={"model": model, "seed": cfg.seed + k,
                                              "box_sha256": box.digest()})
    return out


def train_bases(data: ScenarioSet, cfg: PipelineConfig) -> dict:
    """``{(method, n): (basis_beta, basis_gamma)}`` for every method and n."""
    out = {}
    for method in cfg.methods:
        for n in cfg.n_values:
            pair = tuple(build_basis(method, mat, n, epsilon=cfg.epsilon, iters=cfg.nmf_iters,
                                     seed=cfg.seed, grid=data.grid)
                         for mat in (data.betas, data.gammas))
            out[method, n] = pair
    return out


def run_train(cfg: PipelineConfig) -> dict:
    root = Path(cfg.output_dir)
    sets = training_sets(cfg)
    for model, s in sets.items():
        s.save(root / "train" / "scenarios" / model)
    data = concatenate(*sets.values()) if len(sets) > 1 else next(iter(sets.values()))
    bases = train_bases(data, cfg)
    bdir = root / "train" / "bases"
    for (method, n), pair in bases.items():
        for rate, b in zip(RATES, pair):
            b.save(bdir, basis_name(method, rate, n))
    extra = {"scenarios": {m: {"count": len(s), "dropped": s.dropped, **dict(s.meta)}
                           for m, s in sets.items()},
             "grid": data.grid.to_dict()}
    return write_manifest(root, "train", cfg, extra)


def load_bases(cfg: PipelineConfig) -> dict:
    bdir = Path(cfg.output_dir) / "train" / "bases"
    _require(Path(cfg.output_dir) / "train" / "manifest.json", "train")
    out = {}
    for method in cfg.methods:
        for n in cfg.n_values:
            pair = []
            for rate in RATES:
                name = basis_name(method, rate, n)
                _require(bdir / f"{name}.json", "train")
                pair.append(ReducedBasis.load(bdir, name))
            if pair[0].grid.count < cfg.fit_days + cfg.horizon:
                raise MissingArtifactError("trained bases are shorter than fit_days + horizon; "
                                           "rerun `sirrom train` with a larger train_horizon")
            out[method, n] = tuple(pair)
    return out


# ---------------------------------------------------------------- fit

def fit_one(bb: ReducedBasis, bg: ReducedBasis, obs: HealthSeries, cfg: PipelineConfig) -> FitResult:
    kwargs = {"starts": cfg.ir_starts, "seed": cfg.seed, "jobs": cfg.jobs} if cfg.routine == "IR" else {}
    res = fit(bb, bg, obs, cfg.routine, (0, cfg.fit_days), **kwargs)
    return optimize_initial_state(res, obs, cfg.lookback, clamp=cfg.clamp)


def fit_all(bases: dict, obs: HealthSeries, cfg: PipelineConfig) -> dict:
    return {label(m, n): fit_one(bb, bg, obs, cfg) for (m, n), (bb, bg) in bases.items()}


def run_fit(cfg: PipelineConfig, obs: HealthSeries | None = None) -> dict:
    root = Path(cfg.output_dir)
    bases = load_bases(cfg)
    if obs is None:
        obs = fit_series(load_observations(cfg), cfg)
    fits = fit_all(bases, obs, cfg)
    out = {"config_sha256": cfg.digest(), "start_date": str(obs.dates[0]),
           "fits": {k: r.to_dict() for k, r in fits.items()}}
    _dump(root / "fit" / "fits.json", out)
    obs.to_csv(root / "fit" / "observed.csv")
    write_manifest(root, "fit", cfg)
    return fits


def load_fits(cfg: PipelineConfig) -> tuple:
    """``(fits, start_date)`` rebuilt from ``fit/fits.json`` and the trained bases."""
    path = _require(Path(cfg.output_dir) / "fit" / "fits.json", "fit")
    raw = json.loads(path.read_text("utf-8"))
    if raw["config_sha256"] != cfg.digest():
        log.warning("fits.json was produced by a different config")
    bases = load_bases(cfg)
    fits = {}
    for (m, n), (bb, bg) in bases.items():
        d = raw["fits"].get(label(m, n))
        if d is None:
            raise MissingArtifactError(f"no fit for {label(m, n)}; run `sirrom fit` first")
        cb, cg = np.array(d["coef_beta"]), np.array(d["coef_gamma"])
        fits[label(m, n)] = FitResult(bb, bg, cb, cg, bb.rate(cb), bg.rate(cg), d["loss"],
                                      d["routine"], tuple(d["window"]), d["initial_time"],
                                      tuple(d["initial_state"]), d["population"],
                                      d["diagnostics"])
    return fits, raw["start_date"]


# ---------------------------------------------------------------- forecast

def forecast_all(fits: dict, cfg: PipelineConfig, horizon: int) -> tuple:
    """Forecasts per fit and the weighted combination over n for each method."""
    single = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for k, r in fits.items():
            single[k] = propagate(r, horizon, clamp=cfg.clamp)
    combined = {}
    for m in cfg.methods:
        keys = [label(m, n) for n in cfg.n_values]
        combined[m] = combine([single[k] for k in keys], cfg.weights, keys)
    return single, combined


def run_forecast(cfg: PipelineConfig, horizon: int | None = None) -> dict:
    horizon = cfg.horizon if horizon is None else horizon
    if horizon > cfg.train_horizon:
        raise ValueError(f"horizon {horizon} exceeds train_horizon {cfg.train_horizon}")
    root = Path(cfg.output_dir)
    fits, start = load_fits(cfg)
    single, combined = forecast_all(fits, cfg, horizon)
    fdir = root / "forecast"
    fdir.mkdir(parents=True, exist_ok=True)
    for k, f in single.items():
        f.to_csv(fdir / f"{k}_tau{horizon}.csv", start)
    for m, c in combined.items():
        c.to_csv(fdir / f"{m}_combined_tau{horizon}.csv", start)
    summary = {"config_sha256": cfg.digest(), "horizon": horizon, "start_date": start,
               "clamp": cfg.clamp,
               "forecasts": {k: {"diverged": f.diverged, "clamped": f.clamped, "notes": list(f.notes)}
                             for k, f in single.items()},
               "combined": {m: {"members": list(c.labels), "weights": c.weights.tolist()}
                            for m, c in combined.items()}}
    _dump(fdir / f"forecast_tau{horizon}.json", summary)
    write_manifest(root, "forecast", cfg)
    return summary


# ---------------------------------------------------------------- evaluate

def read_prediction(path) -> tuple:
    """``(dates, I, R)`` from a ``date,I_pred,R_pred`` CSV."""
    dates, i, r = [], [], []
    with open(_require(Path(path), "forecast"), newline="", encoding="utf-8") as fh:
        rows = csv.DictReader(fh)
        for row in rows:
            dates.append(np.datetime64(row["date"], "D"))
            i.append(float(row["I_pred"]))
            r.append(float(row["R_pred"]))
    return np.array(dates, dtype="datetime64[D]"), np.array(i), np.array(r)


def truth_on(truth: HealthSeries, dates) -> tuple:
    idx = (np.asarray(dates, dtype="datetime64[D]") - truth.dates[0]).astype(int)
    if idx.min() < 0 or idx.max() >= len(truth):
        raise ValueError(f"truth covers {truth.dates[0]}..{truth.dates[-1]}, "
                         f"forecast needs {dates[0]}..{dates[-1]}")
    return truth.infected[idx], truth.removed[idx]


class _Pred:
    def __init__(self, i, r):
        self.i_pred, self.r_pred = i, r


def run_evaluate(cfg: PipelineConfig, horizon: int | None = None, pred=None) -> dict:
    """Error tables of every forecast (or of ``pred`` alone) against the truth."""
    horizon = cfg.horizon if horizon is None else horizon
    root = Path(cfg.output_dir)
    truth = load_truth(cfg)
    rows = {}
    if pred is not None:
        dates, i, r = read_prediction(pred)
        rows["pred"] = error_table(_Pred(i, r), *truth_on(truth, dates))
    else:
        fdir = root / "forecast"
        _require(fdir / f"forecast_tau{horizon}.json", "forecast")
        names = [label(m, n) for m in cfg.methods for n in cfg.n_values]
        names += [f"{m}_combined" for m in cfg.methods]
        for k in names:
            dates, i, r = read_prediction(fdir / f"{k}_tau{horizon}.csv")
            rows[k] = error_table(_Pred(i, r), *truth_on(truth, dates))
        obs = fit_series(load_observations(cfg), cfg)
        base = constant_rate_forecast(obs, cfg.fit_days, horizon, average=1)
        rows[BASELINE] = error_table(base, *truth_on(truth, dates))
    edir = root / "evaluate"
    edir.mkdir(parents=True, exist_ok=True)
    cols = list(next(iter(rows.values())))
    with open(edir / f"errors_tau{horizon}.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["forecast", *cols])
        for k, v in rows.items():
            w.writerow([k, *(repr(v[c]) for c in cols)])
    out = {"config_sha256": cfg.digest(), "horizon": horizon, "errors": rows}
    _dump(edir / f"errors_tau{horizon}.json", out)
    write_manifest(root, "evaluate", cfg)
    return out


# ---------------------------------------------------------------- synthesize

def run_synthesize(cfg: PipelineConfig, directory, *, days: int = 45, noise: float = 0.05,
                   seed: int = 12345, model: str | None = None) -> dict:
    """Held-out synthetic truth and noisy observations as ``date,infected,removed`` CSVs."""
    model = model or cfg.models[0]
    box = load_default_boxes(cfg.boxes, cfg.population)[model]
    params = sample_parameters(box, 1, seed)[0]
    truth, observed = synthetic_observations(params, days, noise=noise, seed=seed,
                                             burn_in=cfg.burn_in)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    truth.to_csv(d / "truth.csv")
    observed.to_csv(d / "observed.csv")
    info = {"model": model, "seed": seed, "noise": noise, "days": days, "burn_in": cfg.burn_in,
            "population": params.population, "params": params.to_dict()}
    _dump(d / "scenario.json", info)
    return info


# ---------------------------------------------------------------- plot data

def run_plot_data(cfg: PipelineConfig, horizon: int | None = None) -> list:
    """CSV + PNG bundles for bases, fitted rates and forecasts that exist on disk."""
    from . import plotting
    from .timeseries import observed_rates

    horizon = cfg.horizon if horizon is None else horizon
    root = Path(cfg.output_dir)
    pdir = root / "plots"
    written = []
    bases = load_bases(cfg)
    n = cfg.n_max
    for m in cfg.methods:
        for rate, b in zip(RATES, bases[m, n]):
            series = {f"mode{j + 1}": b.modes[j] for j in range(b.n)}
            written += plotting.bundle(pdir, f"basis_{m}_{rate}_n{n}", b.grid.times, series,
                                       title=f"{m} {rate} modes (n={n})")
        if m == "SVD" and bases[m, n][0].eigenvalues is not None:
            for rate, b in zip(RATES, bases[m, n]):
                lam = np.asarray(b.eigenvalues)
                written += plotting.bundle(pdir, f"svd_eigenvalues_{rate}", np.arange(1, lam.size + 1),
                                           {"eigenvalue": lam}, xname="index", logy=True,
                                           xlabel="index", title=f"SVD eigenvalues ({rate})")
    if (root / "fit" / "fits.json").exists():
        fits, _ = load_fits(cfg)
        obs = fit_series(load_observations(cfg), cfg)
        rates = observed_rates(obs)
        t = obs.grid.times
        for rate, star in zip(RATES, (rates.beta_star, rates.gamma_star)):
            series = {"observed": star.values}
            for m in cfg.methods:
                r = fits[label(m, n)]
                fitted = (r.beta_fit if rate == "beta" else r.gamma_fit).values
                series[m] = fitted[: t.size]
            written += plotting.bundle(pdir, f"fitted_{rate}_n{n}", t, series, markers=("observed",),
                                       title=f"fitted {rate} (n={n})")
    fpath = root / "forecast" / f"forecast_tau{horizon}.json"
    if fpath.exists():
        truth = None
        try:
            truth = load_truth(cfg)
        except (SirromError, ValueError, OSError):
            pass
        series, x = {}, None
        for m in cfg.methods:
            dates, i, _ = read_prediction(root / "forecast" / f"{m}_combined_tau{horizon}.csv")
            series[f"{m} combined"] = i
            x = (dates - dates[0]).astype(int)
        if truth is not None:
            try:
                series["truth"] = truth_on(truth, dates)[0]
            except ValueError:
                pass
        written += plotting.bundle(pdir, f"forecast_I_tau{horizon}", x, series,
                                   markers=("truth",), xlabel="days after T",
                                   title=f"combined forecasts of I (tau={horizon})")
    write_manifest(root, "plots", cfg)
    return [p.relative_to(root).as_posix() for p in written]
