"""Domain types and the linear drift/diffusion parametrization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

BasisFn = Callable[[np.ndarray], np.ndarray]

BANDWIDTH_STRATEGIES = ("lscv-per-lag", "lscv-cached", "lscv-once")
LSCV_FORMS = ("corrected", "printed")


class EstimationError(ValueError):
    """Raised when inputs violate the preconditions of an estimation step."""


# ---------------------------------------------------------------------------
# observable
# ---------------------------------------------------------------------------
# The estimating equation uses one fixed observable.  Everything downstream
# (generator action, right-hand side, coupled term) goes through these two
# functions, so swapping the observable is a change in this block only.


def phi(x):
    """Observable ``x + x**2`` applied elementwise."""
    return x + x * x


def phi_prime(x):
    return 1.0 + 2.0 * x


def phi_second(x):
    return 2.0 + 0.0 * x


# ---------------------------------------------------------------------------
# time series
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeSeries:
    """Uniformly sampled scalar trajectory.

    Sample ``k`` (zero based) sits at time ``t0 + k * h``.
    """

    values: np.ndarray
    h: float
    t0: float = 0.0

    def __post_init__(self):
        values = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if values.ndim != 1:
            raise EstimationError("time series values must be one dimensional")
        if values.shape[0] < 2:
            raise EstimationError("time series needs at least two samples")
        if not (math.isfinite(self.h) and self.h > 0):
            raise EstimationError(f"sampling interval must be positive, got {self.h!r}")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise EstimationError(f"non-finite sample at index {bad[0]}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "t0", float(self.t0))

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(len(self))

    @property
    def duration(self) -> float:
        return self.h * (len(self) - 1)

    def lag_for(self, t: float) -> int:
        """Number of samples spanning ``t``; raises unless ``t / h`` is a positive integer."""
        ratio = t / self.h
        lag = int(round(ratio))
        if not (t > 0) or lag < 1 or abs(ratio - lag) > 1e-9 * max(1.0, ratio):
            raise EstimationError(f"t={t!r} is not a positive integer multiple of h={self.h!r}")
        if lag > len(self) - 1:
            raise EstimationError(f"lag exceeds series length (lag={lag}, N={len(self)})")
        return lag


# ---------------------------------------------------------------------------
# parametrization
# ---------------------------------------------------------------------------


def _zero(x):
    return np.zeros_like(np.asarray(x, dtype=np.float64))


def _evaluate(fn: BasisFn, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.broadcast_to(np.asarray(fn(x), dtype=np.float64), x.shape)


@dataclass(frozen=True)
class Parametrization:
    """Drift ``sum_j theta_j f_j`` and diffusion ``sum_j theta_j g_j``.

    Basis callables must accept numpy arrays; constant functions may return a
    scalar, it is broadcast.
    """

    drift: tuple
    diffusion: tuple
    labels: tuple = ()

    def __post_init__(self):
        drift, diffusion = tuple(self.drift), tuple(self.diffusion)
        if len(drift) != len(diffusion):
            raise EstimationError("drift and diffusion bases must have equal length")
        if not drift:
            raise EstimationError("parametrization needs at least one basis pair")
        labels = tuple(self.labels) or tuple(f"theta_{j + 1}" for j in range(len(drift)))
        if len(labels) != len(drift):
            raise EstimationError("one label per basis pair required")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "diffusion", diffusion)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple], labels: Sequence[str] = ()):
        drift = tuple(f if f is not None else _zero for f, _ in pairs)
        diffusion = tuple(g if g is not None else _zero for _, g in pairs)
        return cls(drift, diffusion, tuple(labels))

    @property
    def n(self) -> int:
        return len(self.drift)

    def f(self, j: int, x) -> np.ndarray:
        return _evaluate(self.drift[j], x)

    def g(self, j: int, x) -> np.ndarray:
        return _evaluate(self.diffusion[j], x)

    def generator_responses(self, x: np.ndarray) -> np.ndarray:
        """Rows ``j`` hold ``(L_j phi)(x)`` for every sample of ``x``; shape ``(n, len(x))``."""
        x = np.asarray(x, dtype=np.float64)
        out = np.empty((self.n, x.shape[0]))
        for j in range(self.n):
            out[j] = self.f(j, x) * phi_prime(x) + 0.5 * self.g(j, x) * phi_second(x)
            bad = np.flatnonzero(~np.isfinite(out[j]))
            if bad.size:
                raise EstimationError(
                    f"basis {j + 1} ({self.labels[j]}) is not finite at x={float(x[bad[0]])!r}"
                )
        return out


def generator_action(param: Parametrization, j: int, x: float) -> float:
    """``(L_j phi)(x) = f_j(x) phi'(x) + g_j(x) phi''(x) / 2`` for basis ``j`` (1-based)."""
    if not 1 <= j <= param.n:
        raise EstimationError(f"basis index {j} outside 1..{param.n}")
    return float(param.generator_responses(np.array([float(x)]))[j - 1, 0])


def _x(x):
    return x


def _one(x):
    return 1.0


def _two(x):
    return 2.0


def _bistable(x):
    return x - x**3


# Named bases used by the experiments and the CLI.
BASES = {
    # dX = theta_1 X dt + sqrt(2 theta_2) dW
    "ou": (((_x, None), (None, _two)), ("drift", "diffusion")),
    # dX = theta_1 X dt + sqrt(theta_2) dW
    "ou-unit": (((_x, None), (None, _one)), ("drift", "diffusion")),
    # dX = theta_1 (X - X^3) dt + sqrt(theta_2) dW
    "bistable": (((_bistable, None), (None, _one)), ("drift", "diffusion")),
}


def named_basis(name: str) -> Parametrization:
    try:
        pairs, labels = BASES[name]
    except KeyError:
        raise EstimationError(f"unknown basis {name!r}; choose from {sorted(BASES)}") from None
    return Parametrization.from_pairs(pairs, labels)


# ---------------------------------------------------------------------------
# trial points, configuration, results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialPoints:
    xi: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=np.float64).reshape(-1).copy()
        if xi.shape[0] < 1:
            raise EstimationError("at least one trial point required")
        if not np.all(np.isfinite(xi)):
            raise EstimationError("trial points must be finite")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)

    def __len__(self) -> int:
        return self.xi.shape[0]

    def outside(self, series: TimeSeries) -> np.ndarray:
        lo, hi = series.values.min(), series.values.max()
        return (self.xi < lo) | (self.xi > hi)

    def check_support(self, series: TimeSeries) -> np.ndarray:
        mask = self.outside(series)
        if mask.any():
            warnings.warn(
                f"{int(mask.sum())} trial point(s) lie outside the observed range "
                f"[{series.values.min():.6g}, {series.values.max():.6g}]",
                stacklevel=3,
            )
        return mask


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of the estimator.

    ``bandwidth`` is one of ``"lscv-per-lag"``, ``"lscv-cached"``,
    ``"lscv-once"`` or a positive float for a fixed bandwidth.
    """

    t: float = 1.0
    bandwidth: object = "lscv-per-lag"
    kernel: str = "gaussian"
    nu: float = 0.2
    solver_rank_tol: float = 1e-10
    lscv_form: str = "corrected"
    lscv_rtol: float = 1e-3
    expansion_tol: float = 1e-12

    def __post_init__(self):
        if not (self.t > 0):
            raise EstimationError("t must be positive")
        bw = self.bandwidth
        if isinstance(bw, str):
            if bw.startswith("fixed:"):
                bw = float(bw.split(":", 1)[1])
            elif bw not in BANDWIDTH_STRATEGIES:
                raise EstimationError(f"unknown bandwidth strategy {bw!r}")
        if not isinstance(bw, str):
            bw = float(bw)
            if not (math.isfinite(bw) and bw > 0):
                raise EstimationError("fixed bandwidth must be positive and finite")
        object.__setattr__(self, "bandwidth", bw)
        if self.kernel != "gaussian":
            raise EstimationError(f"unsupported kernel {self.kernel!r}")
        if not 0 < self.nu < 0.5:
            raise EstimationError("nu must lie in (0, 1/2)")
        if self.lscv_form not in LSCV_FORMS:
            raise EstimationError(f"lscv_form must be one of {LSCV_FORMS}")

    @property
    def fixed_bandwidth(self) -> float | None:
        return None if isinstance(self.bandwidth, str) else float(self.bandwidth)

    def describe_bandwidth(self) -> str:
        bw = self.fixed_bandwidth
        return self.bandwidth if bw is None else f"fixed:{bw:.17g}"


@dataclass
class EstimationResult:
    theta: np.ndarray
    rank: int
    residual_norm: float
    effective_counts: np.ndarray
    t_used: float
    m_used: int
    n_used: int
    labels: tuple = ()
    fallback_count: int = 0
    outside_support: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    system: object = None
