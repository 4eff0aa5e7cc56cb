"""``sirrom`` command line: train, fit, forecast, evaluate, plot-data, synthesize.

Exit codes: 0 success, 2 invalid input or missing artifacts, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__, pipeline
from .config import ConfigError, PipelineConfig

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

# flag -> config field; None values mean "not given"
_OVERRIDES = {
    "data": "data", "truth": "truth", "population": "population",
    "adjustment_factor": "adjustment_factor", "smooth_window": "smooth_window",
    "jobs": "jobs", "output_dir": "output_dir", "K": "K", "seed": "seed",
    "routine": "routine", "n_min": "n_min", "n_max": "n_max", "methods": "methods",
    "fit_start": "fit_start", "fit_days": "fit_days", "train_horizon": "train_horizon",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", help="JSON config file (defaults are used when omitted)")
    p.add_argument("-o", "--output-dir", dest="output_dir", help="artifact directory (default: out)")
    p.add_argument("--data", help="observed counts CSV with header date,infected,removed")
    p.add_argument("--truth", help="held-out truth CSV in the same format (evaluate)")
    p.add_argument("--population", type=float, help="population N of the observed region")
    p.add_argument("--adjustment-factor", dest="adjustment_factor", type=float,
                   help="multiplier from hospital counts to infections (default 15)")
    p.add_argument("--smooth-window", dest="smooth_window", type=int,
                   help="centered moving-average width in days, odd (default 7)")
    p.add_argument("--jobs", type=int, help="worker processes; 1 gives identical results (default 1)")
    p.add_argument("--K", type=int, help="scenarios per detailed model")
    p.add_argument("--seed", type=int, help="base random seed")
    p.add_argument("--methods", nargs="+", choices=["SVD", "NMF", "ENG"], help="reduction methods")
    p.add_argument("--n-min", dest="n_min", type=int, help="smallest basis size")
    p.add_argument("--n-max", dest="n_max", type=int, help="largest basis size")
    p.add_argument("--routine", choices=["BG", "IR"], help="fitting routine")
    p.add_argument("--fit-start", dest="fit_start", type=int, help="first fitted day (index into data)")
    p.add_argument("--fit-days", dest="fit_days", type=int, help="length of the fit window")
    p.add_argument("--train-horizon", dest="train_horizon", type=int,
                   help="longest horizon the trained bases must cover (default 28)")
    p.add_argument("--emit-plot-data", action="store_true",
                   help="also write CSV+PNG figure bundles under <output-dir>/plots")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sirrom", description=(
        "Forecast epidemics with time-varying SIR rates fitted in reduced bases "
        "learned from detailed-model scenarios."))
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")
    p = sub.add_parser("train", help="sample scenarios and build reduced bases")
    _common(p)
    p = sub.add_parser("fit", help="fit coefficients to the observed window")
    _common(p)
    p = sub.add_parser("forecast", help="propagate fitted rates and combine over n")
    _common(p)
    p.add_argument("--horizon", type=int, nargs="+", help="forecast horizons in days (default: config)")
    p = sub.add_parser("evaluate", help="relative L1/L2/Linf errors against the truth")
    _common(p)
    p.add_argument("--horizon", type=int, help="horizon whose forecasts are scored (default: config)")
    p.add_argument("--pred", help="score this date,I_pred,R_pred CSV instead of the stored forecasts")
    p = sub.add_parser("plot-data", help="write CSV+PNG bundles for bases, fits and forecasts")
    _common(p)
    p.add_argument("--horizon", type=int, help="horizon of the plotted forecasts")
    p = sub.add_parser("synthesize", help="write synthetic truth/observed CSVs from a held-out scenario")
    _common(p)
    p.add_argument("--days", type=int, default=45, help="series length (default 45)")
    p.add_argument("--noise", type=float, default=0.05, help="relative observation noise (default 0.05)")
    p.add_argument("--scenario-seed", type=int, default=12345, help="seed of the held-out draw")
    p.add_argument("--dir", default="synthetic", help="destination directory (default: synthetic)")
    return ap


def load_config(args) -> PipelineConfig:
    base = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    raw = base.to_dict()
    for flag, key in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is not None:
            raw[key] = v
    return PipelineConfig.from_dict(raw)


def _run(args, cfg: PipelineConfig) -> object:
    cmd = args.command
    if cmd == "train":
        if cfg.K < 1:
            raise ConfigError("K must be at least 1")
        out = pipeline.run_train(cfg)
        return {"scenarios": out["scenarios"], "files": len(out["files"])}
    if cmd == "fit":
        fits = pipeline.run_fit(cfg)
        return {k: r.loss for k, r in fits.items()}
    if cmd == "forecast":
        res = {}
        for h in args.horizon or [cfg.horizon]:
            s = pipeline.run_forecast(cfg, h)
            res[h] = sorted(k for k, v in s["forecasts"].items() if v["diverged"])
        return {"diverged": res}
    if cmd == "evaluate":
        out = pipeline.run_evaluate(cfg, args.horizon, args.pred)
        return {k: v["L1_I"] for k, v in out["errors"].items()}
    if cmd == "plot-data":
        return pipeline.run_plot_data(cfg, args.horizon)
    if cmd == "synthesize":
        return pipeline.run_synthesize(cfg, args.dir, days=args.days, noise=args.noise,
                                       seed=args.scenario_seed)
    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        summary = _run(args, cfg)
        if args.emit_plot_data and args.command != "plot-data":
            pipeline.run_plot_data(cfg, getattr(args, "horizon", None)
                                   if isinstance(getattr(args, "horizon", None), int) else None)
    except ArithmeticError as exc:
        print(f"sirrom {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"sirrom {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(json.dumps(summary, indent=1, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
