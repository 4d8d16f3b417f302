"""End-to-end experiment runs: simulate, pick trial points, sweep horizons, report."""

from __future__ import annotations

import datetime
import json
import math
import os
import platform
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__, io, simulate
from .._accel import backend_name
from ..core import EstimationError, TimeSeries, TrialPoints, named_basis
from ..estimator import sweep_t
from ..trialpoints import empirical_quantile, gaussian_mapped, map_normal_draws, save_trial_points
from .config import ExperimentConfig, manifest_params

# independent random streams derived from the run seed
STREAM_SIMULATION = 0
STREAM_TRIAL_POINTS = 1
STREAM_ENSEMBLE = 2


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


def stream(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(key))


def relative_error(theta_hat, theta) -> float:
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    return float(np.linalg.norm(theta_hat - theta) / np.linalg.norm(theta))


def truth(cfg: ExperimentConfig):
    """Reference parameter vector and how it was obtained."""
    p = cfg.params
    if cfg.experiment == "langevin":
        A, Sigma = simulate.langevin_true_params(p["alpha"], p["sigma"])
        return np.array([-A, Sigma]), "homogenised (Bessel I0)"
    if cfg.experiment == "fastchaos":
        return np.array([p["alpha"], p["sigma_ref"]]), "literature reference for sigma"
    if cfg.experiment == "kaczwanzig":
        return np.array([-p["alpha"], p["alpha"] / p["beta"]]), "limit model"
    if cfg.experiment == "detbm":
        return np.array([-p["gamma"], 0.5]), "limit model"
    if "theta" in p:
        return np.asarray(p["theta"], dtype=np.float64), "user supplied"
    return None, "none"


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


@dataclass
class ExperimentData:
    series: TimeSeries
    covariate: TimeSeries | None = None
    # name -> (header, columns) written next to the estimates
    tables: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def simulate_data(cfg: ExperimentConfig, seed=None) -> ExperimentData:
    p = cfg.params
    seed = stream(cfg.seed, STREAM_SIMULATION) if seed is None else seed
    spec = simulate.SimulationSpec(cfg.T, cfg.h, seed)
    if cfg.experiment == "langevin":
        x = simulate.two_scale_langevin(p["alpha"], p["sigma"], p["epsilon"], spec, p.get("x0", 0.0))
        return ExperimentData(x, tables={"trajectory": (["time", "value"], [x.times, x.values])})
    if cfg.experiment == "fastchaos":
        x = simulate.lorenz_fast_slow(p["alpha"], p["lam"], p["epsilon"], spec,
                                      p.get("x0", 1.0), tuple(p.get("y0", (1.0, 1.0, 1.0))),
                                      substeps=int(p.get("substeps", 1)))
        return ExperimentData(x, tables={"trajectory": (["time", "value"], [x.times, x.values])})
    if cfg.experiment == "kaczwanzig":
        Q, P = simulate.kac_zwanzig(int(p["M"]), p["alpha"], p["beta"], spec,
                                    p.get("Q0", 1.0), p.get("P0", 0.0))
        S = simulate.reconstruct_memory(Q, P)
        P_cut = TimeSeries(P.values[:-1], P.h, P.t0)
        return ExperimentData(
            S, covariate=P_cut,
            tables={
                "trajectory": (["time", "Q", "P"], [Q.times, Q.values, P.values]),
                "memory": (["time", "value"], [S.times, S.values]),
            },
        )
    if cfg.experiment == "detbm":
        run = simulate.deterministic_bm(p["gamma"], p["epsilon"], spec, p.get("x0", -0.15),
                                        p.get("v0", -0.53), p.get("zeta0"), full_output=True)
        delta = float(p.get("delta", p["epsilon"]))
        v = simulate.reconstruct_velocity(run.X, delta)
        return ExperimentData(
            v,
            tables={
                "trajectory": (["time", "value"], [run.X.times, run.X.values]),
                "velocity": (["time", "value"], [v.times, v.values]),
            },
            diagnostics={"zeta0": run.zeta0, "chebyshev_clamps": run.clamps, "delta": delta},
        )
    if cfg.experiment == "custom":
        path = p.get("input")
        if not path:
            raise StageError("simulate: custom experiments need an 'input' CSV")
        x = io.read_series(path, p.get("column"))
        return ExperimentData(x)
    raise StageError(f"simulate: unknown experiment {cfg.experiment!r}")


def select_trial_points(cfg: ExperimentConfig, series: TimeSeries, seed=None) -> TrialPoints:
    seed = stream(cfg.seed, STREAM_TRIAL_POINTS) if seed is None else seed
    if cfg.trial_strategy == "quantile":
        return empirical_quantile(series, cfg.m, seed)
    return gaussian_mapped(series, cfg.m, cfg.nu, seed)


# ---------------------------------------------------------------------------
# single run
# ---------------------------------------------------------------------------


def estimate_rows(cfg: ExperimentConfig, data: ExperimentData, tp: TrialPoints, theta_true,
                  workers: int = 1):
    """Sweep all horizons; one dict per horizon."""
    param = named_basis(cfg.basis)
    results = sweep_t(data.series, param, tp, cfg.estimator_config(), cfg.t_values(),
                      covariate=data.covariate, workers=workers)
    rows = []
    for t, res in results:
        if isinstance(res, Exception):
            rows.append(dict(t=t, theta=[math.nan] * param.n, rel_error=math.nan, rank=-1,
                             residual=math.nan, fallback=-1, error=str(res)))
            continue
        err = relative_error(res.theta, theta_true) if theta_true is not None else math.nan
        rows.append(dict(t=t, theta=list(res.theta), rel_error=err, rank=res.rank,
                         residual=res.residual_norm, fallback=res.fallback_count, error=""))
    return param, rows


def _write_estimates(path, param, rows):
    header = ["t", *param.labels, "rel_error", "rank", "residual_norm", "fallback_count"]
    cols = [
        [r["t"] for r in rows],
        *[[r["theta"][j] for r in rows] for j in range(param.n)],
        [r["rel_error"] for r in rows],
        [r["rank"] for r in rows],
        [r["residual"] for r in rows],
        [r["fallback"] for r in rows],
    ]
    io.write_csv(path, header, cols)


def library_versions() -> dict:
    import numba
    import scipy

    return {
        "coarsegrain": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "python": platform.python_version(),
        "backend": backend_name(),
    }


def write_manifest(path, cfg: ExperimentConfig, extra: dict) -> None:
    """JSON manifest; the timestamp sits alone on the first line after ``{``."""
    body = {
        "config": manifest_params(cfg),
        "seeds": {
            "run_seed": cfg.seed,
            "simulation_stream": [cfg.seed, STREAM_SIMULATION],
            "trial_point_stream": [cfg.seed, STREAM_TRIAL_POINTS],
        },
        "versions": library_versions(),
        **extra,
    }
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    text = json.dumps(body, indent=2, sort_keys=True, default=_json_default)
    Path(path).write_text('{\n  "created": "' + stamp + '",\n' + text[2:] + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


@dataclass
class ExperimentOutcome:
    cfg: ExperimentConfig
    rows: list
    theta_true: np.ndarray | None
    out_dir: Path
    files: list
    summary: str


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name attached
        raise StageError(f"{name}: {exc}") from exc


def summarize(cfg: ExperimentConfig, rows) -> str:
    parts = [f"experiment={cfg.experiment}", f"scale={cfg.scale}", f"seed={cfg.seed}"]
    picks = [r for r in rows if r["t"] in set(cfg.checkpoints)] or rows[-1:]
    for r in picks:
        parts.append(f"rel_error(t={r['t']:g})={r['rel_error']:.4f}")
    return " ".join(parts)


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int | None = None) -> ExperimentOutcome:
    """Simulate, estimate over the horizon grid and write CSVs plus a manifest.

    Files are written to a staging directory first and moved into place only
    when every stage succeeded, so a failed run leaves nothing behind.
    """
    cfg.validate()
    workers = cfg.threads if workers is None else workers
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        data = _stage("simulate", simulate_data, cfg)
        tp = _stage("trialpoints", select_trial_points, cfg, data.series)
        theta_true, truth_kind = truth(cfg)
        param, rows = _stage("estimate", estimate_rows, cfg, data, tp, theta_true, workers)
        files = []
        for name, (header, cols) in data.tables.items():
            _stage("write", io.write_csv, staging / f"{name}.csv", header, cols)
            files.append(f"{name}.csv")
        save_trial_points(staging / "trial_points.txt", tp)
        _write_estimates(staging / "estimates.csv", param, rows)
        files += ["trial_points.txt", "estimates.csv"]

        extra_rows = None
        if cfg.experiment == "detbm":
            # the velocity can also be differenced on the sample grid itself
            alt = replace(cfg, params={**cfg.params, "delta": cfg.h}, t_grid=(), checkpoints=())
            alt_data = _stage("simulate", simulate_data, alt)
            alt_tp = TrialPoints(map_normal_draws(
                np.random.default_rng(stream(cfg.seed, STREAM_TRIAL_POINTS)).standard_normal(cfg.m),
                float(alt_data.series.values.min()), float(alt_data.series.values.max()), cfg.nu))
            alt = replace(alt, t_grid=tuple(cfg.t_values()))
            _, extra_rows = _stage("estimate", estimate_rows, alt, alt_data, alt_tp, theta_true, workers)
            _write_estimates(staging / "estimates_delta_h.csv", param, extra_rows)
            files.append("estimates_delta_h.csv")

        summary = summarize(cfg, rows)
        failed = [{"t": r["t"], "error": r["error"]} for r in rows if r["error"]]
        write_manifest(staging / "manifest.json", cfg, {
            "truth": {"theta": theta_true, "kind": truth_kind},
            "diagnostics": data.diagnostics,
            "failed_horizons": failed,
            "threads": workers,
            "summary": summary,
        })
        files.append("manifest.json")
        for name in files:
            os.replace(staging / name, out / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return ExperimentOutcome(cfg, rows, theta_true, out, files, summary)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass
class EnsembleReport:
    T_values: list
    t_values: list
    bias: np.ndarray        # (len T, len t)
    variance: np.ndarray    # (len T, len t)
    mean: np.ndarray        # (len T, len t, n)
    members: int
    failures: list

    def rows(self):
        for a, T in enumerate(self.T_values):
            for b, t in enumerate(self.t_values):
                yield T, t, self.bias[a, b], self.variance[a, b]

    def write_csv(self, path) -> None:
        rows = list(self.rows())
        io.write_csv(path, ["T", "t", "bias", "variance", "members"],
                     [[r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows],
                      [r[3] for r in rows], [self.members] * len(rows)])


def bias_and_variance(estimates: np.ndarray, theta) -> tuple[float, float]:
    """``|| mean - theta ||`` and the trace of the sample covariance (1/(M-1))."""
    estimates = np.asarray(estimates, dtype=np.float64)
    mean = estimates.mean(axis=0)
    centred = estimates - mean
    var = float(np.sum(centred * centred) / (estimates.shape[0] - 1))
    return float(np.linalg.norm(mean - np.asarray(theta))), var


def bias_variance_study(cfg: ExperimentConfig, M_ens: int, T_grid, t_values,
                        workers: int = 1, member_seeds=None) -> EnsembleReport:
    """Bias and variance of the estimator over an ensemble of independent runs.

    Each member simulates one trajectory of length ``max(T_grid)``; shorter
    horizons ``T`` use its leading segment.  Members draw their noise from
    independent streams; the trial-point draws are shared and mapped onto each
    member's data range.  ``member_seeds`` overrides the per-member seeds.
    """
    if M_ens < 2:
        raise EstimationError("an ensemble needs at least two members")
    T_grid = sorted(float(T) for T in T_grid)
    t_values = [float(t) for t in t_values]
    big = replace(cfg, T=T_grid[-1], t_grid=tuple(t_values), checkpoints=())
    big.validate()
    theta_true, _ = truth(cfg)
    if theta_true is None:
        raise EstimationError("bias needs a reference parameter vector")
    eta = np.random.default_rng(stream(cfg.seed, STREAM_TRIAL_POINTS)).standard_normal(cfg.m)
    if member_seeds is None:
        member_seeds = [stream(cfg.seed, STREAM_ENSEMBLE, i) for i in range(M_ens)]
    param = named_basis(cfg.basis)

    def member(i):
        data = simulate_data(big, seed=member_seeds[i])
        out = np.full((len(T_grid), len(t_values), param.n), np.nan)
        h = data.series.h
        for a, T in enumerate(T_grid):
            n = int(round(T / h)) + 1
            n = min(n, len(data.series))
            seg = TimeSeries(data.series.values[:n], h, data.series.t0)
            cov = None
            if data.covariate is not None:
                cov = TimeSeries(data.covariate.values[:n], h, data.covariate.t0)
            tp = TrialPoints(map_normal_draws(eta, float(seg.values.min()), float(seg.values.max()), cfg.nu))
            results = sweep_t(seg, param, tp, big.estimator_config(), t_values, covariate=cov)
            for b, (_, res) in enumerate(results):
                if not isinstance(res, Exception):
                    out[a, b] = res.theta
        return out

    failures = []
    outputs = []
    indices = range(M_ens)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            futures = [pool.submit(member, i) for i in indices]
            raw = [(i, f.exception() or f.result()) for i, f in zip(indices, futures)]
    else:
        raw = []
        for i in indices:
            try:
                raw.append((i, member(i)))
            except Exception as exc:  # noqa: BLE001 - member failures are recorded
                raw.append((i, exc))
    for i, res in raw:
        if isinstance(res, Exception):
            failures.append({"member": i, "error": str(res)})
        else:
            outputs.append(res)
    stacked = np.array(outputs)
    bias = np.full((len(T_grid), len(t_values)), np.nan)
    var = np.full_like(bias, np.nan)
    mean = np.full((len(T_grid), len(t_values), param.n), np.nan)
    counts = np.zeros_like(bias, dtype=int)
    for a in range(len(T_grid)):
        for b in range(len(t_values)):
            est = stacked[:, a, b] if stacked.size else np.zeros((0, param.n))
            est = est[np.all(np.isfinite(est), axis=1)]
            counts[a, b] = est.shape[0]
            if est.shape[0] >= 2:
                bias[a, b], var[a, b] = bias_and_variance(est, theta_true)
                mean[a, b] = est.mean(axis=0)
    effective = int(counts.min()) if counts.size else 0
    if effective < 2:
        raise StageError(f"bias-variance: only {effective} member(s) succeeded")
    return EnsembleReport(T_grid, t_values, bias, var, mean, effective, failures)
