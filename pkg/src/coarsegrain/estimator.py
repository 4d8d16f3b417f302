"""Assembly of the estimating equations and the minimum-norm solve."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .core import (
    EstimationError,
    EstimationResult,
    EstimatorConfig,
    Parametrization,
    TimeSeries,
    TrialPoints,
    phi,
    phi_prime,
)
from .regression import LaggedRegression, lag_bandwidths


def trapezoid(u, h: float) -> float:
    """Composite trapezoidal rule on nodes spaced ``h`` apart."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 1 or u.shape[0] < 2:
        raise EstimationError("at least two nodes required")
    if not h > 0:
        raise EstimationError("step must be positive")
    return 0.5 * h * (u[0] + u[-1] + 2.0 * u[1:-1].sum())


@dataclass
class LinearSystem:
    A: np.ndarray
    b: np.ndarray
    row_meta: np.ndarray
    effective_counts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fallback_count: int = 0

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.A.shape[0] != self.b.shape[0]:
            raise EstimationError("A and b disagree in the number of rows")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise EstimationError("linear system has non-finite entries")


def min_norm_least_squares(A, b=None, rank_tol: float = 1e-10, return_rank: bool = False):
    """Minimum-norm minimiser of ``||A theta - b||``.

    Uses QR with column pivoting; the numerical rank counts diagonal entries of
    ``R`` above ``rank_tol * |R[0, 0]|``.  When that rank is short of full, the
    leading rows of ``R`` are factored once more (a complete orthogonal
    decomposition) so the minimum-norm solution comes out exactly.
    ``A`` may also be a :class:`LinearSystem`, in which case ``b`` is omitted.
    """
    if isinstance(A, LinearSystem):
        A, b = A.A, A.b
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    m, n = A.shape
    theta = np.zeros(n)
    rank = 0
    if m and np.any(A):
        Q, R, piv = sla.qr(A, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.count_nonzero(diag > rank_tol * diag[0]))
        c = Q[:, :rank].T @ b
        R1 = R[:rank, :]
        if rank == n:
            y = sla.solve_triangular(R1, c)
        else:
            Z, T = sla.qr(R1.T, mode="economic")
            y = Z @ sla.solve_triangular(T.T, c, lower=True)
        theta[piv] = y
    return (theta, rank) if return_rank else theta


# ---------------------------------------------------------------------------
# lag tables shared across horizons
# ---------------------------------------------------------------------------


class LagTables:
    """Conditional expectations for every trial point and every lag ``0..max_lag``.

    Rows of each table: ``0`` is ``phi``, ``1..n`` the generator responses and,
    for the coupled equation, ``n + 1`` the covariate term ``p * phi'(s)``.
    Built once per sweep; any horizon up to ``max_lag * h`` reads from it.
    """

    def __init__(self, series: TimeSeries, param: Parametrization, trial_points: TrialPoints,
                 cfg: EstimatorConfig, max_lag: int, covariate: TimeSeries | None = None,
                 workers: int = 1):
        n = len(series)
        if not 1 <= max_lag <= n - 1:
            raise EstimationError(f"lag exceeds series length (lag={max_lag}, N={n})")
        x = series.values
        rows = [phi(x)]
        rows.extend(param.generator_responses(x))
        if covariate is not None:
            if len(covariate) != n:
                raise EstimationError("predictor and covariate series differ in length")
            if not math.isclose(covariate.h, series.h, rel_tol=1e-12):
                raise EstimationError("predictor and covariate series differ in sampling interval")
            rows.append(covariate.values * phi_prime(x))
        self.series, self.param, self.trial_points = series, param, trial_points
        self.coupled = covariate is not None
        self.max_lag = max_lag
        kappas = lag_bandwidths(x, max_lag, cfg, workers)
        self.kappas = kappas
        engine = LaggedRegression(x, np.vstack(rows), max_lag, cfg, bandwidths=kappas)
        self.estimates = engine.evaluate(trial_points.xi, workers)
        self.outside = trial_points.outside(series)

    def system(self, lag: int) -> LinearSystem:
        if not 1 <= lag <= self.max_lag:
            raise EstimationError(f"lag {lag} outside the tabulated range 1..{self.max_lag}")
        h = self.series.h
        n = self.param.n
        m = len(self.trial_points)
        A = np.empty((m, n))
        b = np.empty(m)
        counts = np.empty(m)
        fallback = 0
        for i, est in enumerate(self.estimates):
            xi = est.xi
            exact = self.param.generator_responses(np.array([xi]))[:, 0]
            for j in range(n):
                u = est.values[1 + j, : lag + 1].copy()
                u[0] = exact[j]
                A[i, j] = trapezoid(u, h)
            b[i] = est.values[0, lag] - float(phi(xi))
            if self.coupled:
                b[i] += trapezoid(est.values[n + 1, : lag + 1], h)
            counts[i] = est.denominators[lag]
            fallback += int(est.fallback[1 : lag + 1].sum())
        return LinearSystem(A, b, self.trial_points.xi.copy(), counts, fallback)


def _solve(tables: LagTables, lag: int, cfg: EstimatorConfig) -> EstimationResult:
    system = tables.system(lag)
    theta, rank = min_norm_least_squares(system.A, system.b, cfg.solver_rank_tol, return_rank=True)
    return EstimationResult(
        theta=theta,
        rank=rank,
        residual_norm=float(np.linalg.norm(system.A @ theta - system.b)),
        effective_counts=system.effective_counts,
        t_used=lag * tables.series.h,
        m_used=system.A.shape[0],
        n_used=system.A.shape[1],
        labels=tables.param.labels,
        fallback_count=system.fallback_count,
        outside_support=tables.outside.copy(),
        system=system,
    )


def _warn_support(trial_points: TrialPoints, series: TimeSeries):
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        trial_points.check_support(series)


# ---------------------------------------------------------------------------
# public entry points
# ---------------------------------------------------------------------------


def assemble_system(series: TimeSeries, param: Parametrization, trial_points: TrialPoints,
                    cfg: EstimatorConfig, covariate: TimeSeries | None = None,
                    workers: int = 1) -> LinearSystem:
    lag = series.lag_for(cfg.t)
    return LagTables(series, param, trial_points, cfg, lag, covariate, workers).system(lag)


def assemble_row(series: TimeSeries, param: Parametrization, xi: float, t: float,
                 cfg: EstimatorConfig):
    """One estimating equation at trial point ``xi``: returns ``(row, rhs)``."""
    lag = series.lag_for(t)
    try:
        sys_ = LagTables(series, param, TrialPoints([xi]), cfg, lag).system(lag)
    except EstimationError as exc:
        raise EstimationError(f"trial point xi={xi!r}: {exc}") from exc
    return sys_.A[0].copy(), float(sys_.b[0])


def estimate(series: TimeSeries, param: Parametrization, trial_points: TrialPoints,
             cfg: EstimatorConfig, workers: int = 1) -> EstimationResult:
    """Estimate ``theta`` at horizon ``cfg.t``."""
    lag = series.lag_for(cfg.t)
    _warn_support(trial_points, series)
    tables = LagTables(series, param, trial_points, cfg, lag, workers=workers)
    return _solve(tables, lag, cfg)


def estimate_coupled(s_series: TimeSeries, p_series: TimeSeries, param: Parametrization,
                     trial_points: TrialPoints, cfg: EstimatorConfig,
                     workers: int = 1) -> EstimationResult:
    """Estimate with the extra covariate term ``int_0^t E[P phi'(S)]`` on the left-hand side.

    The equation reads ``E[phi(S_t)] - phi(xi) + int E[P phi'(S)] = a . theta``,
    so the integral is added to ``b``.
    """
    lag = s_series.lag_for(cfg.t)
    _warn_support(trial_points, s_series)
    tables = LagTables(s_series, param, trial_points, cfg, lag, covariate=p_series, workers=workers)
    return _solve(tables, lag, cfg)


def sweep_t(series: TimeSeries, param: Parametrization, trial_points: TrialPoints,
            cfg: EstimatorConfig, t_grid, covariate: TimeSeries | None = None,
            workers: int = 1) -> list:
    """Estimates for every horizon in ``t_grid``.

    All horizons read from one set of lag tables built up to the largest lag.
    A horizon that fails yields ``(t, exception)`` instead of aborting the sweep.
    """
    t_grid = [float(t) for t in t_grid]
    lags = {}
    for t in t_grid:
        try:
            lags[t] = series.lag_for(t)
        except EstimationError as exc:
            lags[t] = exc
    valid = [v for v in lags.values() if isinstance(v, int)]
    out = []
    if not valid:
        return [(t, lags[t]) for t in t_grid]
    _warn_support(trial_points, series)
    tables = LagTables(series, param, trial_points, cfg, max(valid), covariate, workers)
    for t in t_grid:
        lag = lags[t]
        if isinstance(lag, Exception):
            out.append((t, lag))
            continue
        try:
            out.append((t, _solve(tables, lag, cfg)))
        except (EstimationError, np.linalg.LinAlgError) as exc:
            out.append((t, exc))
    return out


__all__ = [
    "LagTables",
    "LinearSystem",
    "assemble_row",
    "assemble_system",
    "estimate",
    "estimate_coupled",
    "lag_bandwidths",
    "min_norm_least_squares",
    "sweep_t",
    "trapezoid",
]
