"""Nadaraya-Watson estimation of conditional expectations from one time series.

Two layers live here:

* scalar building blocks (:func:`gaussian_kernel`, :func:`lscv_bandwidth`,
  :func:`nwe`, :func:`conditional_expectation`) that follow the textbook
  definitions one call at a time, and
* :class:`LaggedRegression`, which produces the same estimates for every lag
  ``0..L`` of one trial point in a single pass.  With a lag-independent
  bandwidth the lagged kernel sums are cross-correlations and come out of one
  FFT per response.  When the bandwidth changes from lag to lag, the kernel
  weights are expanded around a reference bandwidth and each term of the
  expansion is again a cross-correlation; the expansion order per lag is
  chosen from an explicit error bound, and lags where the bound fails are
  summed directly.
"""

from __future__ import annotations

import hashlib
import math
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from . import kernels
from .core import EstimationError, EstimatorConfig, TimeSeries

SQRT_2PI = kernels.SQRT_2PI
K0 = 1.0 / SQRT_2PI

GRID_SIZE = 50
GRID_SPAN = (0.05, 5.0)
DIRECT_LSCV_MAX = 2000
MIN_BINS = 4096
MAX_BINS = 1 << 20
# binned pair sums are off by at most about BIN_ERR_COEF * (dx / delta)**2
BIN_ERR_COEF = 0.5
# exp(709) is the largest finite double; keep shifted weights well inside range
MAX_SHIFT = 700.0


def gaussian_kernel(x):
    """Standard normal density ``exp(-x**2 / 2) / sqrt(2 pi)``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.exp(-0.5 * x * x) / SQRT_2PI
    return float(out) if out.ndim == 0 else out


def silverman_bandwidth(X) -> float:
    X = np.asarray(X, dtype=np.float64)
    return 1.06 * float(np.std(X, ddof=1)) * X.shape[0] ** (-0.2)


# ---------------------------------------------------------------------------
# least squares cross validation
# ---------------------------------------------------------------------------


def _autocorrelation(counts: np.ndarray) -> np.ndarray:
    g = counts.shape[0]
    nfft = sfft.next_fast_len(2 * g, real=True)
    spec = sfft.rfft(counts, nfft)
    return sfft.irfft(spec * np.conj(spec), nfft)[:g]


def bins_for_tolerance(span: float, delta_min: float, rtol: float) -> int:
    """Bin count that keeps the binned pair sums within ``rtol`` down to ``delta_min``."""
    dx = delta_min * math.sqrt(rtol / BIN_ERR_COEF)
    if span <= 0:
        return MIN_BINS
    return int(min(MAX_BINS, max(MIN_BINS, math.ceil(span / dx) + 1)))


class _BinnedSample:
    """Linear binning of a sample plus the autocorrelation of its bin counts.

    :meth:`pair_sum` returns the off-diagonal double sum: the self-pairs of
    the binned sample are known exactly from the binning weights and are
    removed, so the diagonal does not contaminate small off-diagonal sums.
    """

    def __init__(self, X: np.ndarray, n_bins: int):
        lo, hi = float(X.min()), float(X.max())
        self.n_bins = n_bins
        self.dx = (hi - lo) / (n_bins - 1) if hi > lo else 1.0
        counts = kernels.linear_binning(X, lo, self.dx, n_bins)
        self.autocorr = _autocorrelation(counts)
        pos = (X - lo) / self.dx
        frac = pos - np.clip(np.floor(pos), 0, n_bins - 2)
        self._self_same = float(np.sum((1.0 - frac) ** 2 + frac**2))
        self._self_next = float(np.sum(2.0 * frac * (1.0 - frac)))

    def pair_sum(self, s: float) -> float:
        total = kernels.binned_pair_sum(self.autocorr, self.dx, s)
        z = self.dx / s
        return total - (self._self_same + self._self_next * math.exp(-0.5 * z * z)) / SQRT_2PI


def lscv_pair_sums(X, delta: float, method: str = "direct", n_bins: int | None = None,
                   rtol: float = 1e-6):
    """The two kernel double sums of the LSCV criterion.

    Returns ``(S1, S2)`` with ``S1 = sum_{i,j} K((X_i - X_j) / (delta sqrt 2))``
    (diagonal included) and ``S2 = sum_{i != j} K((X_i - X_j) / delta)``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    M = X.shape[0]
    if method == "direct":
        s1 = kernels.direct_pair_sum(X, delta * math.sqrt(2.0))
        s2 = kernels.direct_pair_sum(X, delta)
    elif method == "binned":
        if n_bins is None:
            n_bins = bins_for_tolerance(float(np.ptp(X)), delta, rtol)
        binned = _BinnedSample(X, n_bins)
        return binned.pair_sum(delta * math.sqrt(2.0)) + M * K0, binned.pair_sum(delta)
    else:
        raise ValueError(f"unknown method {method!r}")
    return s1, s2 - M * K0


def _objective_from_sums(s1, s2_off, M, delta, form):
    first = s1 / (delta * M * M * math.sqrt(2.0))
    second = 2.0 * s2_off / (M * (M - 1))
    if form == "corrected":
        second /= delta
    return first - second


def lscv_objective(X, delta: float, form: str = "corrected", method: str = "direct",
                   n_bins: int | None = None, rtol: float = 1e-6) -> float:
    """Least squares cross validation score of bandwidth ``delta``.

    ``form="printed"`` drops the ``1/delta`` factor on the leave-one-out term;
    ``form="corrected"`` keeps it (the usual LSCV criterion).
    """
    X = np.asarray(X, dtype=np.float64)
    M = X.shape[0]
    s1, s2 = lscv_pair_sums(X, delta, method=method, n_bins=n_bins, rtol=rtol)
    value = _objective_from_sums(s1, s2, M, delta, form)
    if method == "binned" and n_bins is None:
        # the two terms nearly cancel; rerun on a grid fine enough for the difference
        scale = _objective_from_sums(s1, -s2, M, delta, form) / max(abs(value), 1e-300)
        if scale > 1.0:
            s1, s2 = lscv_pair_sums(X, delta, method=method, rtol=rtol / scale)
            value = _objective_from_sums(s1, s2, M, delta, form)
    return value


def _golden_section(f, lo, hi, xtol):
    """Minimise ``f`` on ``[lo, hi]`` (log scale) by golden-section search."""
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(lo), math.log(hi)
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(math.exp(c)), f(math.exp(d))
    while b - a > xtol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(math.exp(d))
    return (math.exp(c), fc) if fc <= fd else (math.exp(d), fd)


def lscv_bandwidth(X, form: str = "corrected", method: str = "auto",
                   rtol: float = 1e-6, grid_size: int = GRID_SIZE) -> float:
    """Bandwidth minimising the LSCV criterion.

    The criterion is scanned on ``grid_size`` log-spaced values spanning
    ``[0.05 s, 5 s]`` (``s`` the Silverman bandwidth); the best grid value and
    its two neighbours bracket a golden-section refinement.  Ties on the grid
    go to the smallest bandwidth.  ``method="auto"`` sums directly for up to
    2000 points and bins beyond that.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    M = X.shape[0]
    if M < 2:
        raise EstimationError("bandwidth selection needs at least two points")
    if not np.all(np.isfinite(X)):
        raise EstimationError("bandwidth selection needs finite data")
    if X.max() == X.min():
        raise EstimationError("degenerate predictor sample")
    s = silverman_bandwidth(X)
    grid = s * np.geomspace(GRID_SPAN[0], GRID_SPAN[1], grid_size)
    if method == "auto":
        method = "direct" if M <= DIRECT_LSCV_MAX else "binned"

    if method == "binned":
        binned = _BinnedSample(X, bins_for_tolerance(float(np.ptp(X)), grid[0], rtol))

        def score(delta):
            s1 = binned.pair_sum(delta * math.sqrt(2.0)) + M * K0
            s2 = binned.pair_sum(delta)
            return _objective_from_sums(s1, s2, M, delta, form)
    elif method == "direct":
        def score(delta):
            return lscv_objective(X, delta, form=form, method="direct")
    else:
        raise ValueError(f"unknown method {method!r}")

    values = np.array([score(d) for d in grid])
    finite = np.isfinite(values)
    if not finite.any():
        raise EstimationError(
            f"LSCV criterion not finite anywhere on [{grid[0]:.6g}, {grid[-1]:.6g}]"
        )
    values[~finite] = np.inf
    i = int(np.argmin(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]
    best, fbest = _golden_section(score, lo, hi, xtol=1e-7)
    if values[i] <= fbest:
        return float(grid[i])
    return float(best)


# ---------------------------------------------------------------------------
# Nadaraya-Watson
# ---------------------------------------------------------------------------


def _weight_shift(z2_min: float) -> float:
    """Exponent offset that lifts the largest kernel weight to ``O(1)``."""
    return min(0.5 * z2_min, MAX_SHIFT)


def _all_weights_vanish(z2_min: float) -> bool:
    return math.exp(-0.5 * z2_min) / SQRT_2PI == 0.0


def nwe_weights(X, xi: float, kappa: float):
    """Normalised kernel weights at ``xi`` and whether the uniform fallback kicked in."""
    X = np.atleast_1d(np.asarray(X, dtype=np.float64))
    z2 = ((X - xi) / kappa) ** 2
    z2_min = float(z2.min())
    if _all_weights_vanish(z2_min):
        return np.full(X.shape[0], 1.0 / X.shape[0]), True
    w = np.exp(_weight_shift(z2_min) - 0.5 * z2)
    return w / w.sum(), False


def nwe(X, Y, xi: float, kappa: float, full_output: bool = False):
    """Kernel-weighted average of ``Y`` at predictor value ``xi``.

    Falls back to the plain mean of ``Y`` when every kernel weight is exactly
    zero.  The result is clipped to ``[min Y, max Y]`` to absorb rounding.
    With ``full_output`` returns ``(value, fallback, denominator)``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 1:
        raise EstimationError("predictor and response must be 1-d arrays of equal length")
    if not (kappa > 0 and math.isfinite(kappa)):
        raise EstimationError(f"bandwidth must be positive, got {kappa!r}")
    z2_min = float(np.min(((X - xi) / kappa) ** 2))
    if _all_weights_vanish(z2_min):
        value, fallback, den = float(np.mean(Y)), True, 0.0
    else:
        shift = _weight_shift(z2_min)
        den, num = kernels.kernel_sums(X, Y, float(xi), float(kappa), shift)
        value, fallback = num / den, False
        den *= math.exp(-shift)
    value = float(min(max(value, Y.min()), Y.max()))
    if full_output:
        return value, fallback, den
    return value


# ---------------------------------------------------------------------------
# bandwidth per lag
# ---------------------------------------------------------------------------

_CACHE_LOCK = threading.Lock()
_BANDWIDTH_CACHE: OrderedDict = OrderedDict()
_CACHE_SIZE = 8192


def _digest(values: np.ndarray) -> str:
    return hashlib.blake2b(values.tobytes(), digest_size=16).hexdigest()


def _lscv_for(values: np.ndarray, cfg: EstimatorConfig) -> float:
    return lscv_bandwidth(values, form=cfg.lscv_form, rtol=cfg.lscv_rtol)


def lag_bandwidth(values: np.ndarray, lag: int, cfg: EstimatorConfig, digest: str | None = None) -> float:
    """Bandwidth used to regress on ``values[:N - lag]`` under ``cfg``'s strategy."""
    fixed = cfg.fixed_bandwidth
    if fixed is not None:
        return fixed
    n = values.shape[0]
    if cfg.bandwidth == "lscv-once":
        lag = 0
    if cfg.bandwidth == "lscv-per-lag":
        return _lscv_for(values[: n - lag], cfg)
    key = (digest or _digest(values), n, lag, cfg.lscv_form, cfg.lscv_rtol)
    with _CACHE_LOCK:
        if key in _BANDWIDTH_CACHE:
            _BANDWIDTH_CACHE.move_to_end(key)
            return _BANDWIDTH_CACHE[key]
    kappa = _lscv_for(values[: n - lag], cfg)
    with _CACHE_LOCK:
        _BANDWIDTH_CACHE[key] = kappa
        while len(_BANDWIDTH_CACHE) > _CACHE_SIZE:
            _BANDWIDTH_CACHE.popitem(last=False)
    return kappa


def lag_bandwidths(values: np.ndarray, max_lag: int, cfg: EstimatorConfig, workers: int = 1) -> np.ndarray:
    """Bandwidths for lags ``0..max_lag``."""
    fixed = cfg.fixed_bandwidth
    if fixed is not None:
        return np.full(max_lag + 1, fixed)
    if cfg.bandwidth == "lscv-once":
        return np.full(max_lag + 1, lag_bandwidth(values, 0, cfg))
    digest = _digest(values)
    # lscv-per-lag and lscv-cached give the same numbers; within one pass
    # each lag is selected exactly once either way
    cached = EstimatorConfig(
        t=cfg.t, bandwidth="lscv-cached", nu=cfg.nu, solver_rank_tol=cfg.solver_rank_tol,
        lscv_form=cfg.lscv_form, lscv_rtol=cfg.lscv_rtol, expansion_tol=cfg.expansion_tol,
    )

    def one(lag):
        return lag_bandwidth(values, lag, cached, digest)

    lags = range(max_lag + 1)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return np.array(list(pool.map(one, lags)))
    return np.array([one(lag) for lag in lags])


# ---------------------------------------------------------------------------
# single-lag conditional expectations
# ---------------------------------------------------------------------------


def conditional_expectation(series: TimeSeries, lag: int, response, xi: float,
                            cfg: EstimatorConfig) -> float:
    """Estimate ``E[response(X(t + lag h)) | X(t) = xi]`` from one trajectory."""
    n = len(series)
    if lag >= n:
        raise EstimationError(f"lag exceeds series length (lag={lag}, N={n})")
    if lag < 1:
        raise EstimationError("lag must be at least 1")
    values = series.values
    X = values[: n - lag]
    Y = np.broadcast_to(np.asarray(response(values[lag:]), dtype=np.float64), X.shape)
    kappa = lag_bandwidth(values, lag, cfg)
    return nwe(X, Y, xi, kappa)


def conditional_expectation_coupled(predictor: TimeSeries, covariate: TimeSeries, lag: int,
                                    response2, xi: float, cfg: EstimatorConfig) -> float:
    """Like :func:`conditional_expectation`, with a response built from two series.

    The response at each sample is ``response2(covariate, predictor)`` taken
    ``lag`` steps after the conditioning sample.  ``lag = 0`` is allowed and
    regresses same-time pairs.
    """
    n = len(predictor)
    if len(covariate) != n:
        raise EstimationError("predictor and covariate series differ in length")
    if not math.isclose(predictor.h, covariate.h, rel_tol=1e-12):
        raise EstimationError("predictor and covariate series differ in sampling interval")
    if lag >= n:
        raise EstimationError(f"lag exceeds series length (lag={lag}, N={n})")
    if lag < 0:
        raise EstimationError("lag must be non-negative")
    s, p = predictor.values, covariate.values
    X = s[: n - lag]
    Y = np.broadcast_to(np.asarray(response2(p[lag:], s[lag:]), dtype=np.float64), X.shape)
    kappa = lag_bandwidth(s, lag, cfg)
    return nwe(X, Y, xi, kappa)


# ---------------------------------------------------------------------------
# all lags at once
# ---------------------------------------------------------------------------


@dataclass
class LagEstimates:
    """Estimates for one trial point: ``values[r, l]`` for response ``r`` at lag ``l``."""

    xi: float
    values: np.ndarray
    denominators: np.ndarray
    fallback: np.ndarray
    direct_lags: int


MAX_ORDER = 24
MAX_ABS_RHO = 0.5
NEG_RHO_CAP = 0.1


class LaggedRegression:
    """Nadaraya-Watson estimates for all lags ``0..max_lag`` of a set of responses.

    ``predictor`` is the conditioning series; ``responses`` has one row per
    response series (same length).  Lag ``l`` pairs ``predictor[k]`` with
    ``responses[:, k + l]`` for ``k < N - l``, with the bandwidth selected on
    ``predictor[:N - l]``.
    """

    def __init__(self, predictor, responses, max_lag: int, cfg: EstimatorConfig,
                 workers: int = 1, bandwidths=None):
        x = np.ascontiguousarray(predictor, dtype=np.float64)
        resp = np.ascontiguousarray(np.atleast_2d(responses), dtype=np.float64)
        n = x.shape[0]
        if resp.shape[1] != n:
            raise EstimationError("responses must have the predictor's length")
        if not 0 <= max_lag <= n - 1:
            raise EstimationError(f"lag exceeds series length (lag={max_lag}, N={n})")
        self.x, self.resp, self.n, self.max_lag, self.cfg = x, resp, n, max_lag, cfg
        if bandwidths is None:
            bandwidths = lag_bandwidths(x, max_lag, cfg, workers)
        self.kappas = np.asarray(bandwidths, dtype=np.float64)
        if self.kappas.shape != (max_lag + 1,):
            raise EstimationError("need one bandwidth per lag 0..max_lag")
        self.kref = float(self.kappas[0])
        self.rho = (self.kref / self.kappas) ** 2 - 1.0
        self.lags = np.arange(max_lag + 1)

        self._const = [r[0] if np.all(r == r[0]) else None for r in resp]
        self._active = [i for i, c in enumerate(self._const) if c is None]
        self._nfft = sfft.next_fast_len(2 * n, real=True)
        self._resp_fft = [sfft.rfft(resp[i], self._nfft) for i in self._active]
        # sum of responses over k >= l, for the uniform-weight fallback
        tail = np.cumsum(resp[:, ::-1], axis=1)[:, ::-1]
        self._tail_mean = tail[:, : max_lag + 1] / (n - self.lags)

    # -- helpers -----------------------------------------------------------

    def _expansion_orders(self, w, z2, prefix_end, shift):
        """Per-lag number of expansion terms, or 0 where direct summation is needed."""
        lags, rho, tol = self.lags, self.rho, self.cfg.expansion_tol
        orders = np.zeros(lags.shape[0], dtype=np.int64)
        exact = rho == 0.0
        orders[exact] = 1
        usable = (~exact) & (np.abs(rho) <= MAX_ABS_RHO) & (rho >= -NEG_RHO_CAP)
        if not usable.any():
            return orders
        # bound on the truncated tail of exp(-rho z^2 / 2) summed against w
        term = w.copy()
        neg_moment = np.exp(shift - 0.5 * (1.0 - NEG_RHO_CAP) * z2) / SQRT_2PI
        den_est = np.zeros(lags.shape[0])
        coef = np.ones(lags.shape[0])
        pending = usable.copy()
        for p in range(MAX_ORDER):
            den_est += coef * prefix_end(term)
            coef = coef * (-0.5 * rho) / (p + 1)
            term = term * z2
            neg_moment = neg_moment * z2
            moment = np.where(rho >= 0, term.sum(), neg_moment.sum())
            bound = np.abs(coef) * moment
            ok = pending & (bound <= 0.5 * tol * np.abs(den_est))
            orders[ok] = p + 1
            pending &= ~ok
            if not pending.any():
                break
        return orders

    # -- main entry ----------------------------------------------------------

    def at(self, xi: float) -> LagEstimates:
        x, n, L = self.x, self.n, self.max_lag
        lags, kappas = self.lags, self.kappas
        xi = float(xi)
        z = (x - xi) / self.kref
        z2 = z * z
        # all sums below carry the factor exp(shift); it cancels in every ratio
        shift = _weight_shift(float(z2.min()))
        w = np.exp(shift - 0.5 * z2) / SQRT_2PI
        idx_end = n - lags  # lag l sums over k < N - l

        def prefix_end(a):
            # sum of a[:N-l] for every lag, summed identically whatever L is
            total = a.sum()
            tail = np.cumsum(a[n - 1 : n - L - 1 if n - L - 1 >= 0 else None : -1])
            out = np.empty(L + 1)
            out[0] = total
            out[1:] = total - tail[:L]
            return out

        # a lag has an exactly-zero denominator iff its nearest sample's weight underflows
        dmin = np.minimum.accumulate(np.abs(x - xi))[idx_end - 1]
        zero = (np.exp(-0.5 * (dmin / kappas) ** 2) / SQRT_2PI) == 0.0
        shifts = np.full(L + 1, shift)

        orders = self._expansion_orders(w, z2, prefix_end, shift)
        direct = (orders == 0) & ~zero
        n_terms = int(orders.max()) if orders.size else 0

        n_resp = self.resp.shape[0]
        num = np.zeros((len(self._active), L + 1))
        den = np.zeros(L + 1)
        if n_terms:
            coefs = np.zeros((n_terms, L + 1))
            c = np.ones(L + 1)
            for p in range(n_terms):
                coefs[p] = np.where(p < orders, c, 0.0)
                c = c * (-0.5 * self.rho) / (p + 1)
            a = w.copy()
            for p in range(n_terms):
                if p:
                    a = a * z2
                den += coefs[p] * prefix_end(a)
                if self._active:
                    a_fft = np.conj(sfft.rfft(a, self._nfft))
                    for r, r_fft in enumerate(self._resp_fft):
                        corr = sfft.irfft(a_fft * r_fft, self._nfft)[: L + 1]
                        num[r] += coefs[p] * corr
        if direct.any():
            sel = lags[direct]
            shifts[direct] = np.minimum(0.5 * (dmin[direct] / kappas[direct]) ** 2, MAX_SHIFT)
            d_den, d_num = kernels.lag_sums_direct(
                x, self.resp[self._active] if self._active else np.zeros((0, n)),
                xi, kappas[direct], sel, shifts[direct],
            )
            den[direct] = d_den
            if self._active:
                num[:, direct] = d_num
            zero |= direct & (den == 0.0)

        values = np.empty((n_resp, L + 1))
        safe_den = np.where(zero, 1.0, den)
        for r in range(n_resp):
            const = self._const[r]
            if const is not None:
                values[r] = const
            else:
                values[r] = num[self._active.index(r)] / safe_den
            values[r, zero] = self._tail_mean[r, zero]
        den = np.where(zero, 0.0, den * np.exp(-shifts))
        return LagEstimates(xi, values, den, zero, int(direct.sum()))

    def evaluate(self, xis, workers: int = 1) -> list[LagEstimates]:
        xis = [float(v) for v in np.atleast_1d(xis)]
        if workers > 1 and len(xis) > 1:
            with ThreadPoolExecutor(workers) as pool:
                return list(pool.map(self.at, xis))
        return [self.at(v) for v in xis]
