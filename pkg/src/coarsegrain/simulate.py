"""Seeded simulators for the benchmark multiscale systems."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import EstimationError, TimeSeries

BLOWUP = 1e8


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimulationSpec:
    T: float
    h: float
    seed: int | None = 0

    def __post_init__(self):
        if not (self.T > 0 and self.h > 0):
            raise EstimationError("T and h must be positive")
        self.n_steps  # validates T / h

    @property
    def n_steps(self) -> int:
        ratio = self.T / self.h
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9 * ratio:
            raise EstimationError(f"T/h must be a positive integer (T={self.T}, h={self.h})")
        return n

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def _check_blowup(values: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(values) | (np.abs(values) > BLOWUP)
    if bad.any():
        k = int(np.flatnonzero(bad.reshape(values.shape[0], -1).any(axis=1))[0])
        raise SimulationError(f"{what}: blow-up at step {k}; reduce h")


# ---------------------------------------------------------------------------
# generic SDE
# ---------------------------------------------------------------------------


def euler_maruyama(drift, diffusion_sqrt, spec: SimulationSpec, x0: float = 0.0,
                   noise=None) -> TimeSeries:
    """``X_{k+1} = X_k + drift(X_k) h + diffusion_sqrt(X_k) sqrt(h) Z_k``.

    ``drift`` and ``diffusion_sqrt`` are scalar callables.  ``noise`` replaces
    the seeded normal draws when given.
    """
    n, h = spec.n_steps, spec.h
    z = spec.rng().standard_normal(n) if noise is None else np.asarray(noise, dtype=np.float64)
    if z.shape != (n,):
        raise EstimationError(f"noise must have {n} entries")
    sqrt_h = math.sqrt(h)
    out = np.empty(n + 1)
    x = float(x0)
    out[0] = x
    for k in range(n):
        x = x + drift(x) * h + diffusion_sqrt(x) * sqrt_h * z[k]
        if not abs(x) <= BLOWUP:
            raise SimulationError(f"blow-up at step {k + 1}; reduce h")
        out[k + 1] = x
    return TimeSeries(out, h)


def ornstein_uhlenbeck(rate: float, diffusion: float, spec: SimulationSpec, x0: float = 0.0,
                       noise=None) -> TimeSeries:
    """Euler-Maruyama for ``dX = -rate X dt + sqrt(2 diffusion) dW`` (compiled loop)."""
    n = spec.n_steps
    z = spec.rng().standard_normal(n) if noise is None else np.asarray(noise, dtype=np.float64)
    # the two-scale kernel with a vanishing fast term is exactly this recursion
    out = kernels.langevin(float(x0), spec.h, rate, diffusion, math.inf, z)
    _check_blowup(out, "ornstein_uhlenbeck")
    return TimeSeries(out, spec.h)


# ---------------------------------------------------------------------------
# two-scale Langevin
# ---------------------------------------------------------------------------


def two_scale_langevin(alpha: float, sigma: float, epsilon: float, spec: SimulationSpec,
                       x0: float = 0.0, noise=None) -> TimeSeries:
    """Euler-Maruyama for ``dX = (-alpha X + sin(X / eps) / eps) dt + sqrt(2 sigma) dW``."""
    if not epsilon > 0:
        raise EstimationError("epsilon must be positive")
    if not sigma > 0:
        raise EstimationError("sigma must be positive")
    n = spec.n_steps
    z = spec.rng().standard_normal(n) if noise is None else np.asarray(noise, dtype=np.float64)
    if z.shape != (n,):
        raise EstimationError(f"noise must have {n} entries")
    out = kernels.langevin(float(x0), spec.h, alpha, sigma, epsilon, z)
    _check_blowup(out, "two_scale_langevin")
    return TimeSeries(out, spec.h)


def bessel_i0(x: float) -> float:
    """Modified Bessel function ``I_0`` by its power series."""
    x = float(x)
    term = 1.0
    total = 1.0
    q = 0.25 * x * x
    k = 0
    while term > 1e-16 * total:
        k += 1
        term *= q / (k * k)
        total += term
    return total


def partition_functions(sigma: float, p=np.cos, period: float = 2.0 * math.pi, nodes: int = 2048):
    """``Z_pm = int_0^L exp(+-p(y) / sigma) dy`` for a ``period``-periodic ``p``.

    The periodic trapezoid rule converges geometrically for smooth periodic
    integrands, so a few thousand nodes reach machine precision.
    """
    y = np.arange(nodes) * (period / nodes)
    py = np.asarray(p(y), dtype=np.float64)
    zp = float(np.exp(py / sigma).sum() * period / nodes)
    zm = float(np.exp(-py / sigma).sum() * period / nodes)
    return zp, zm


def langevin_true_params(alpha: float, sigma: float, method: str = "bessel", p=None,
                         period: float = 2.0 * math.pi):
    """Homogenised ``(A, Sigma)`` of the two-scale Langevin model.

    ``method="bessel"`` uses ``I_0(1/sigma)`` and is only valid for
    ``p = cos``; ``method="quadrature"`` integrates ``exp(+-p / sigma)`` over
    one period for any periodic ``p``.
    """
    if not sigma > 0:
        raise EstimationError("sigma must be positive")
    if method == "bessel":
        if p is not None:
            raise EstimationError("the Bessel route only covers p = cos")
        i0 = bessel_i0(1.0 / sigma)
        return alpha / i0**2, sigma / i0**2
    if method == "quadrature":
        zp, zm = partition_functions(sigma, np.cos if p is None else p, period)
        factor = period**2 / (zp * zm)
        return alpha * factor, sigma * factor
    raise EstimationError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Lorenz-driven fast chaos
# ---------------------------------------------------------------------------


def lorenz_fast_slow(alpha: float, lam: float, epsilon: float, spec: SimulationSpec,
                     x0: float = 1.0, y0=(1.0, 1.0, 1.0), return_fast: bool = False,
                     substeps: int = 1):
    """RK4 for the slow variable driven by the time-rescaled Lorenz system.

    Each output sample is reached with ``substeps`` RK4 steps of size
    ``h / substeps``.  The fast variables see an effective step
    ``h / (substeps * epsilon**2)`` in Lorenz time; near 0.1 RK4 no longer
    tracks the Lorenz statistics, so small ``epsilon`` needs substeps.

    Returns the slow ``X`` series, plus the ``(N, 3)`` fast trajectory when
    ``return_fast`` is set.  Deterministic: ``spec.seed`` is unused.
    """
    if not epsilon > 0:
        raise EstimationError("epsilon must be positive")
    substeps = int(substeps)
    if substeps < 1:
        raise EstimationError("substeps must be a positive integer")
    state = np.array([x0, *y0], dtype=np.float64)
    if state.shape != (4,):
        raise EstimationError("y0 must have three components")
    out = kernels.lorenz_rk4(state, spec.h, spec.n_steps, alpha, lam, epsilon, substeps)
    _check_blowup(out, "lorenz_fast_slow")
    series = TimeSeries(out[:, 0].copy(), spec.h)
    return (series, out[:, 1:].copy()) if return_fast else series


# ---------------------------------------------------------------------------
# Kac-Zwanzig heat bath
# ---------------------------------------------------------------------------

DOUBLE_WELL_VPRIME = (0.0, -1.0, 0.0, 1.0)


def double_well_vprime(x):
    """``V'(x)`` for ``V(x) = -x**2 / 2 + x**4 / 4``."""
    return -x + x**3


@dataclass(frozen=True)
class HeatBath:
    k: np.ndarray
    m: np.ndarray
    q0: np.ndarray
    p0: np.ndarray


def heat_bath(M: int, alpha: float, beta: float, Q0: float, rng: np.random.Generator) -> HeatBath:
    """Spring constants, masses and Gibbs-distributed initial data of the bath."""
    if M < 0:
        raise EstimationError("bath size must be non-negative")
    if not 0 < alpha < 1:
        raise EstimationError("alpha must lie in (0, 1)")
    if not beta > 0:
        raise EstimationError("beta must be positive")
    eta = 1.0 - rng.random(M)  # uniform on (0, 1]
    omega = M**alpha * eta
    k = 2.0 * alpha * M**alpha / (math.pi * (alpha**2 + omega**2) * M) if M else np.zeros(0)
    m = k / omega**2
    q0 = Q0 + rng.standard_normal(M) / np.sqrt(beta * k)
    p0 = rng.standard_normal(M) * np.sqrt(m / beta)
    return HeatBath(np.asarray(k, float), np.asarray(m, float), q0, p0)


def kac_zwanzig(M: int, alpha: float, beta: float, spec: SimulationSpec, Q0: float = 1.0,
                P0: float = 0.0, vprime_coeffs=DOUBLE_WELL_VPRIME):
    """Distinguished particle coupled to ``M`` harmonic oscillators.

    Symplectic Euler: bath momenta and ``P`` are updated from the current
    positions, then all positions from the new momenta.  ``vprime_coeffs`` are
    the coefficients of ``V'`` in increasing degree.  Returns ``(Q, P)``.
    """
    bath = heat_bath(M, alpha, beta, Q0, spec.rng())
    coeffs = np.asarray(vprime_coeffs, dtype=np.float64)
    Qs, Ps = kernels.kac_zwanzig(float(Q0), float(P0), bath.q0, bath.p0, bath.k, bath.m,
                                 spec.h, spec.n_steps, coeffs)
    _check_blowup(Qs, "kac_zwanzig")
    _check_blowup(Ps, "kac_zwanzig")
    return TimeSeries(Qs, spec.h), TimeSeries(Ps, spec.h)


def reconstruct_memory(Q: TimeSeries, P: TimeSeries, V_prime=double_well_vprime) -> TimeSeries:
    """``S_k = (P_{k+1} - P_k) / h + V'(Q_k)`` for ``k = 0..N-2``."""
    if len(Q) != len(P):
        raise EstimationError("Q and P series differ in length")
    if not math.isclose(Q.h, P.h, rel_tol=1e-12):
        raise EstimationError("Q and P series differ in sampling interval")
    q, p = Q.values, P.values
    s = np.diff(p) / P.h + np.asarray(V_prime(q[:-1]), dtype=np.float64)
    return TimeSeries(s, P.h, P.t0)


# ---------------------------------------------------------------------------
# deterministic Brownian motion
# ---------------------------------------------------------------------------


def chebyshev_map(y):
    return np.cos(3.0 * np.arccos(y))


@dataclass
class KickedRun:
    X: TimeSeries
    V: TimeSeries
    zeta0: float
    clamps: int


def deterministic_bm(gamma: float, epsilon: float, spec: SimulationSpec, x0: float = -0.15,
                     v0: float = -0.53, zeta0: float | None = None,
                     kick_amplitude: float | None = None, full_output: bool = False):
    """Damped particle kicked every ``epsilon`` by a Chebyshev-map sequence.

    Between kicks the linear flow ``dX = V dt, dV = -gamma V dt`` is integrated
    exactly.  Kicks happen at ``t = 0, eps, 2 eps, ...`` and add
    ``kick_amplitude * zeta`` to ``V`` (default amplitude ``sqrt(eps)``).
    ``zeta0`` defaults to a uniform draw on ``(-1, 1)`` from ``spec.seed``.
    """
    if not gamma > 0:
        raise EstimationError("gamma must be positive")
    ratio = epsilon / spec.h
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 * ratio:
        raise EstimationError("epsilon must be a positive integer multiple of h")
    if zeta0 is None:
        zeta0 = float(spec.rng().uniform(-1.0, 1.0))
    if not -1.0 <= zeta0 <= 1.0:
        raise EstimationError("zeta0 must lie in [-1, 1]")
    amp = math.sqrt(epsilon) if kick_amplitude is None else float(kick_amplitude)
    X, V, clamps = kernels.kicked(float(x0), float(v0), float(zeta0), float(gamma), amp,
                                  stride, spec.h, spec.n_steps)
    _check_blowup(X, "deterministic_bm")
    xs = TimeSeries(X, spec.h)
    if full_output:
        return KickedRun(xs, TimeSeries(V, spec.h), zeta0, int(clamps))
    return xs


def reconstruct_velocity(X: TimeSeries, delta: float) -> TimeSeries:
    """Forward differences of ``X`` over a spacing ``delta`` (a multiple of ``h``)."""
    ratio = delta / X.h
    stride = int(round(ratio))
    if stride < 1 or abs(ratio - stride) > 1e-9 * ratio:
        raise EstimationError("delta must be a positive integer multiple of h")
    if stride >= len(X):
        raise EstimationError("stride exceeds series length")
    coarse = X.values[::stride]
    return TimeSeries(np.diff(coarse) / (stride * X.h), stride * X.h, X.t0)
