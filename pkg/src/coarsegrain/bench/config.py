"""Experiment configuration: presets, config-file parsing and validation."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ..core import BASES, EstimationError, EstimatorConfig

EXPERIMENTS = ("langevin", "fastchaos", "kaczwanzig", "detbm", "custom")


class ConfigError(ValueError):
    """Bad configuration value or file (a usage error at the CLI)."""


@dataclass
class ExperimentConfig:
    experiment: str = "langevin"
    scale: str = "desk"
    seed: int = 0
    T: float = 200.0
    h: float = 1e-3
    params: dict = field(default_factory=dict)
    basis: str = "ou"
    m: int = 54
    nu: float = 0.2
    trial_strategy: str = "gaussian"
    bandwidth: str = "lscv-per-lag"
    lscv_form: str = "corrected"
    solver_rank_tol: float = 1e-10
    t_grid: tuple = ()
    checkpoints: tuple = ()
    out_dir: str = "out"
    threads: int = 1

    def estimator_config(self, t: float = 1.0) -> EstimatorConfig:
        return EstimatorConfig(
            t=t, bandwidth=self.bandwidth, nu=self.nu,
            solver_rank_tol=self.solver_rank_tol, lscv_form=self.lscv_form,
        )

    @property
    def series_h(self) -> float:
        """Sampling interval of the series that is actually regressed."""
        if self.experiment == "detbm":
            return float(self.params.get("delta", self.params["epsilon"]))
        return self.h

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not (self.T > 0 and self.h > 0):
            raise ConfigError("T and h must be positive")
        ratio = self.T / self.h
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise ConfigError("T/h must be an integer")
        if self.basis not in BASES:
            raise ConfigError(f"unknown basis {self.basis!r}")
        if self.m < 2:
            raise ConfigError("m must be at least 2")
        if self.trial_strategy not in ("gaussian", "quantile"):
            raise ConfigError("trial_strategy must be 'gaussian' or 'quantile'")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        p = self.params
        if self.experiment in ("langevin", "fastchaos", "detbm") and not p.get("epsilon", 1) > 0:
            raise ConfigError("epsilon must be positive")
        if self.experiment == "kaczwanzig":
            if not 0 < p["alpha"] < 1:
                raise ConfigError("alpha must lie in (0, 1) for kaczwanzig")
            if not p["beta"] > 0 or int(p["M"]) < 0:
                raise ConfigError("beta must be positive and M non-negative")
        if self.experiment == "langevin" and not p["sigma"] > 0:
            raise ConfigError("sigma must be positive")
        try:
            self.estimator_config()
        except EstimationError as exc:
            raise ConfigError(str(exc)) from None
        h = self.series_h
        for t in self.t_values():
            r = t / h
            if abs(r - round(r)) > 1e-9 * max(r, 1.0) or round(r) < 1:
                raise ConfigError(f"t={t} is not a multiple of the series spacing {h}")
        return self

    def t_values(self) -> list:
        """Horizons to evaluate: the user grid (or the default one) plus the checkpoints.

        Only the generated default grid is snapped to the sample spacing; user
        horizons must already be multiples of it, which :meth:`validate` checks.
        """
        grid = [float(f"{t:.12g}") for t in self.t_grid] if self.t_grid else default_t_grid(self.series_h)
        return sorted(set(grid) | {float(f"{t:.12g}") for t in self.checkpoints})


def round_to_grid(t: float, h: float) -> float:
    k = max(1, int(round(t / h)))
    return float(f"{k * h:.12g}")


def default_t_grid(h: float, t_max: float = 3.0, count: int = 40) -> list:
    """40 log-spaced horizons on ``[10 h, t_max]`` snapped to multiples of ``h``."""
    lo = 10 * h
    if lo >= t_max:
        return [round_to_grid(t_max, h)]
    return sorted({round_to_grid(t, h) for t in np.geomspace(lo, t_max, count)})


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

_PRESETS = {
    "langevin": dict(
        desk=dict(T=200.0), full=dict(T=1000.0),
        common=dict(h=1e-3, basis="ou", params=dict(alpha=2.0, sigma=1.0, epsilon=0.1, x0=0.0),
                    checkpoints=(0.05, 0.5, 1.0, 2.0)),
    ),
    "fastchaos": dict(
        desk=dict(T=1000.0), full=dict(T=5000.0),
        common=dict(h=1e-3, basis="bistable",
                    params=dict(alpha=1.0 / 3.0, lam=2.0 / 45.0, epsilon=0.1, x0=1.0,
                                y0=(1.0, 1.0, 1.0), sigma_ref=0.113, substeps=10),
                    checkpoints=(0.5, 1.0, 2.0)),
    ),
    "kaczwanzig": dict(
        desk=dict(T=200.0, params=dict(M=500)), full=dict(T=1000.0, params=dict(M=5000)),
        common=dict(h=1e-3, basis="ou",
                    params=dict(alpha=0.5, beta=1.0, Q0=1.0, P0=0.0),
                    checkpoints=(0.2, 0.5, 1.0)),
    ),
    "detbm": dict(
        desk=dict(T=500.0), full=dict(T=1000.0),
        common=dict(h=0.01, basis="ou-unit",
                    params=dict(gamma=1.0, epsilon=0.1, x0=-0.15, v0=-0.53),
                    t_grid=tuple(round(0.1 * k, 12) for k in range(1, 31)),
                    checkpoints=(0.5, 1.0)),
    ),
    "custom": dict(desk={}, full={}, common=dict(params={})),
}


def preset(experiment: str, scale: str = "desk", seed: int = 0) -> ExperimentConfig:
    if experiment not in _PRESETS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {list(_PRESETS)}")
    if scale not in ("desk", "full"):
        raise ConfigError("scale must be 'desk' or 'full'")
    spec = _PRESETS[experiment]
    kwargs = {k: v for k, v in spec["common"].items() if k != "params"}
    params = dict(spec["common"].get("params", {}))
    for k, v in spec[scale].items():
        if k == "params":
            params.update(v)
        else:
            kwargs[k] = v
    return ExperimentConfig(experiment=experiment, scale=scale, seed=seed, params=params, **kwargs)


# ---------------------------------------------------------------------------
# config file
# ---------------------------------------------------------------------------

_TOP_LEVEL = {f.name for f in fields(ExperimentConfig)} - {"params"}


def coerce_value(text: str):
    text = text.strip()
    if "," in text:
        return tuple(coerce_value(part) for part in text.split(",") if part.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    return text


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines grouped in ``[section]`` blocks.

    Keys before any section header land in ``[bench]``.  ``#`` starts a comment.
    Returns ``{section: {key: value}}`` with numbers and comma lists converted.
    """
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",),
        default_section="__defaults__", interpolation=None,
    )
    parser.optionxform = str
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        parser.read_string("[bench]\n" + text if not text.lstrip().startswith("[") else text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {s: {k: coerce_value(v) for k, v in parser[s].items()} for s in parser.sections()}


def apply_overrides(cfg: ExperimentConfig, values: dict) -> ExperimentConfig:
    """Layer ``{key: value}`` onto ``cfg``; unknown keys go to the simulator params."""
    updates, params = {}, dict(cfg.params)
    for key, value in values.items():
        if value is None:
            continue
        key = key.replace("-", "_")
        if key in _TOP_LEVEL:
            current = getattr(cfg, key)
            if isinstance(current, tuple) and not isinstance(value, tuple):
                value = (value,)
            elif isinstance(current, float) and isinstance(value, int):
                value = float(value)
            elif isinstance(current, str):
                value = str(value)
            updates[key] = value
        else:
            params[key] = value
    return replace(cfg, params=params, **updates)


def apply_config_sections(cfg: ExperimentConfig, sections: dict) -> ExperimentConfig:
    """Apply a parsed config file.  Section names are just namespaces; the
    ``[simulate]`` section feeds simulator parameters, all others top-level keys."""
    merged = {}
    for name in ("bench", "trialpoints", "regression", "estimator", "simulate"):
        merged.update(sections.get(name, {}))
    unknown = set(sections) - {"bench", "trialpoints", "regression", "estimator", "simulate", "core"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    return apply_overrides(cfg, merged)


def manifest_params(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    out["params"] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.params.items()}
    out["t_values"] = cfg.t_values()
    if any(isinstance(v, float) and not math.isfinite(v) for v in out["params"].values()):
        out["params"] = {k: str(v) for k, v in out["params"].items()}
    return out
