"""Command line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .. import io
from ..core import EstimationError, TrialPoints, named_basis
from ..estimator import sweep_t
from ..simulate import SimulationError
from ..trialpoints import load_trial_points, save_trial_points
from .config import (
    EXPERIMENTS,
    ConfigError,
    ExperimentConfig,
    apply_config_sections,
    apply_overrides,
    coerce_value,
    preset,
    read_config_file,
)
from .experiments import (
    StageError,
    bias_variance_study,
    relative_error,
    run_experiment,
    select_trial_points,
    simulate_data,
    write_manifest,
    _write_estimates,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma separated list of numbers: {text!r}") from None


def _key_value(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, help="run seed (default 0)")
    g.add_argument("--out-dir", help="output directory (default ./out)")
    g.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    g.add_argument("--config", help="key = value config file with [sections]")
    scale = g.add_mutually_exclusive_group()
    scale.add_argument("--desk-scale", dest="scale", action="store_const", const="desk",
                       help="reduced-cost preset (default)")
    scale.add_argument("--full-scale", dest="scale", action="store_const", const="full",
                       help="full-length preset")
    return p


def _model_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and estimator")
    g.add_argument("--T", type=float, help="trajectory length")
    g.add_argument("--h", type=float, help="step size")
    g.add_argument("--basis", help="named basis: ou, ou-unit, bistable")
    g.add_argument("--m", type=int, help="number of trial points")
    g.add_argument("--nu", type=float, help="trial-point range parameter in (0, 1/2)")
    g.add_argument("--trial-strategy", choices=("gaussian", "quantile"))
    g.add_argument("--bandwidth", help="lscv-per-lag, lscv-cached, lscv-once or fixed:<kappa>")
    g.add_argument("--lscv-form", choices=("corrected", "printed"))
    g.add_argument("--t-grid", type=_float_list, help="comma separated horizons")
    g.add_argument("--set", dest="overrides", type=_key_value, action="append", default=[],
                   metavar="KEY=VALUE", help="override any simulator or config parameter")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="coarsegrain",
                     description="Estimate coarse-grained SDE parameters from multiscale time series.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common], help="simulate a benchmark system to CSV")
    p.add_argument("experiment", choices=EXPERIMENTS[:-1])
    _model_options(p)

    for name, text in (("estimate", "estimate at one horizon"), ("sweep-t", "estimate over a horizon grid")):
        p = sub.add_parser(name, parents=[common], help=f"{text} from a CSV series")
        p.add_argument("--input", required=True, help="CSV with header time,value")
        p.add_argument("--column", help="value column (default: first after time)")
        p.add_argument("--covariate", help="CSV for the coupled term (e.g. the P series)")
        p.add_argument("--covariate-column")
        p.add_argument("--trial-points", help="file with one trial point per line")
        p.add_argument("--theta", type=_float_list, help="reference parameters for relative errors")
        if name == "estimate":
            p.add_argument("--t", type=float, required=True, help="horizon")
        _model_options(p)

    p = sub.add_parser("bias-variance", parents=[common], help="ensemble bias and variance")
    p.add_argument("experiment", choices=EXPERIMENTS[:-1])
    p.add_argument("--members", type=int, default=20)
    p.add_argument("--T-grid", type=_float_list, default=(50.0, 100.0, 200.0))
    p.add_argument("--t-values", type=_float_list, default=(0.05, 0.5))
    _model_options(p)

    p = sub.add_parser("reproduce", parents=[common], help="run a benchmark experiment end to end")
    p.add_argument("experiment", choices=EXPERIMENTS[:-1])
    _model_options(p)
    return parser


def _config(args, experiment: str) -> ExperimentConfig:
    cfg = preset(experiment, args.scale or "desk")
    if args.config:
        cfg = apply_config_sections(cfg, read_config_file(args.config))
    flags = {
        "seed": args.seed, "out_dir": args.out_dir, "threads": args.threads,
        "T": getattr(args, "T", None), "h": getattr(args, "h", None),
        "basis": args.basis, "m": args.m, "nu": args.nu,
        "trial_strategy": args.trial_strategy, "bandwidth": args.bandwidth,
        "lscv_form": args.lscv_form, "t_grid": args.t_grid,
    }
    cfg = apply_overrides(cfg, flags)
    if args.overrides:
        cfg = apply_overrides(cfg, {k: coerce_value(v) for k, v in args.overrides})
    if args.t_grid:
        cfg = apply_overrides(cfg, {"checkpoints": ()})
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _config(args, args.experiment).validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate_data(cfg)
    for name, (header, cols) in data.tables.items():
        io.write_csv(out / f"{name}.csv", header, cols)
    write_manifest(out / "manifest.json", cfg, {"diagnostics": data.diagnostics})
    print(f"wrote {', '.join(sorted(data.tables))} to {out}")
    return 0


def _cmd_estimate(args) -> int:
    cfg = _config(args, "custom")
    if args.command == "estimate":
        cfg = apply_overrides(cfg, {"t_grid": (args.t,), "checkpoints": ()})
    series = io.read_series(args.input, args.column)
    covariate = io.read_series(args.covariate, args.covariate_column) if args.covariate else None
    if covariate is not None and len(covariate) != len(series):
        # a reconstructed series may be one sample shorter than its covariate
        n = min(len(series), len(covariate))
        series = type(series)(series.values[:n], series.h, series.t0)
        covariate = type(covariate)(covariate.values[:n], covariate.h, covariate.t0)
    cfg = apply_overrides(cfg, {"h": series.h, "T": series.duration})
    cfg.validate()
    tp = load_trial_points(args.trial_points) if args.trial_points else select_trial_points(cfg, series)
    param = named_basis(cfg.basis)
    results = sweep_t(series, param, tp, cfg.estimator_config(), cfg.t_values(),
                      covariate=covariate, workers=cfg.threads)
    rows = []
    for t, res in results:
        if isinstance(res, Exception):
            print(f"t={t:g}: failed: {res}", file=sys.stderr)
            rows.append(dict(t=t, theta=[np.nan] * param.n, rel_error=np.nan, rank=-1,
                             residual=np.nan, fallback=-1, error=str(res)))
            continue
        err = relative_error(res.theta, args.theta) if args.theta else np.nan
        rows.append(dict(t=t, theta=list(res.theta), rel_error=err, rank=res.rank,
                         residual=res.residual_norm, fallback=res.fallback_count, error=""))
        theta = " ".join(f"{lab}={v:.6g}" for lab, v in zip(param.labels, res.theta))
        print(f"t={t:g} {theta} rank={res.rank}" + (f" rel_error={err:.4f}" if args.theta else ""))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_estimates(out / "estimates.csv", param, rows)
    save_trial_points(out / "trial_points.txt", TrialPoints(tp.xi))
    write_manifest(out / "manifest.json", cfg, {"input": str(args.input), "covariate": args.covariate})
    if all(r["error"] for r in rows):
        return 2
    return 0


def _cmd_bias_variance(args) -> int:
    cfg = _config(args, args.experiment)
    report = bias_variance_study(cfg, args.members, args.T_grid, args.t_values, workers=cfg.threads)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "bias_variance.csv")
    write_manifest(out / "manifest.json", cfg, {
        "members_requested": args.members, "members_used": report.members,
        "failures": report.failures, "T_grid": list(args.T_grid), "t_values": list(args.t_values),
    })
    for T, t, b, v in report.rows():
        print(f"T={T:g} t={t:g} bias={b:.5f} variance={v:.5f}")
    return 0


def _cmd_reproduce(args) -> int:
    cfg = _config(args, args.experiment)
    outcome = run_experiment(cfg)
    print(outcome.summary)
    return 0


COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "sweep-t": _cmd_estimate,
    "bias-variance": _cmd_bias_variance,
    "reproduce": _cmd_reproduce,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip() + "\ncoarsegrain: error: a command is required")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"coarsegrain: configuration error: {exc}", file=sys.stderr)
        return 1
    except (StageError, EstimationError, SimulationError, OSError, ValueError) as exc:
        print(f"coarsegrain: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
