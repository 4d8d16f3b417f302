"""Hot numeric loops, each in a numba-compiled and a pure-numpy flavour.

The public names (``linear_binning``, ``lag_sums_direct``, ...) point at the
numba flavour unless the backend switch in :mod:`coarsegrain._accel` says
otherwise. Both flavours stay importable under ``*_numba`` / ``*_numpy`` so
they can be cross-checked and benchmarked against each other.

Time-stepping recursions cannot be vectorised over time, so their numpy
flavour is the same loop run by the interpreter (with numpy used across the
heat bath where there is a vector to work on).
"""

import math

import numpy as np

from ._accel import USE_NUMBA, jit

SQRT_2PI = math.sqrt(2.0 * math.pi)
# exp(-z**2 / 2) underflows to exactly 0.0 in float64 beyond |z| ~ 38.6
Z_CUT = 40.0
# pair sums only need relative accuracy; past |z| = 12 every term is below
# 1e-31 of the lag-zero term, far under any tolerance used here
PAIR_Z_CUT = 12.0


# ---------------------------------------------------------------------------
# kernel sums
#
# Weights are exp(shift - z^2 / 2): callers pass shift = min z^2 / 2 so the
# largest weight is O(1) and ratios survive far from the data, where the
# unshifted weights would be subnormal.
# ---------------------------------------------------------------------------


def _kernel_sums_loop(x, y, xi, kappa, shift):
    den = 0.0
    num = 0.0
    for k in range(x.shape[0]):
        z = (x[k] - xi) / kappa
        w = math.exp(shift - 0.5 * z * z) / SQRT_2PI
        den += w
        num += w * y[k]
    return den, num


def kernel_sums_numpy(x, y, xi, kappa, shift):
    z = (x - xi) / kappa
    w = np.exp(shift - 0.5 * z * z) / SQRT_2PI
    return float(w.sum()), float(np.dot(w, y))


def _lag_sums_loop(x, resp, xi, kappas, lags, shifts):
    n_x = x.shape[0]
    n_resp = resp.shape[0]
    n_lags = lags.shape[0]
    den = np.zeros(n_lags)
    num = np.zeros((n_resp, n_lags))
    for a in range(n_lags):
        lag = lags[a]
        kappa = kappas[a]
        shift = shifts[a]
        d = 0.0
        for k in range(n_x - lag):
            z = (x[k] - xi) / kappa
            w = math.exp(shift - 0.5 * z * z) / SQRT_2PI
            d += w
            for r in range(n_resp):
                num[r, a] += w * resp[r, k + lag]
        den[a] = d
    return den, num


def lag_sums_direct_numpy(x, resp, xi, kappas, lags, shifts):
    n_x = x.shape[0]
    den = np.zeros(lags.shape[0])
    num = np.zeros((resp.shape[0], lags.shape[0]))
    for a, lag in enumerate(lags):
        z = (x[: n_x - lag] - xi) / kappas[a]
        w = np.exp(shifts[a] - 0.5 * z * z) / SQRT_2PI
        den[a] = w.sum()
        num[:, a] = resp[:, lag:] @ w
    return den, num


# ---------------------------------------------------------------------------
# bandwidth selection: pair sums over all (i, j)
# ---------------------------------------------------------------------------


def _direct_pair_sum_loop(x, s):
    m = x.shape[0]
    acc = 0.0
    for i in range(m):
        xi = x[i]
        for j in range(i + 1, m):
            z = (xi - x[j]) / s
            acc += math.exp(-0.5 * z * z)
    return (m + 2.0 * acc) / SQRT_2PI


def direct_pair_sum_numpy(x, s, block=512):
    m = x.shape[0]
    acc = 0.0
    for start in range(0, m, block):
        z = (x[start : start + block, None] - x[None, :]) / s
        acc += np.exp(-0.5 * z * z).sum()
    return float(acc) / SQRT_2PI


def _linear_binning_loop(x, lo, dx, n_bins):
    counts = np.zeros(n_bins)
    for k in range(x.shape[0]):
        pos = (x[k] - lo) / dx
        i = int(math.floor(pos))
        if i < 0:
            i = 0
        elif i > n_bins - 2:
            i = n_bins - 2
        frac = pos - i
        counts[i] += 1.0 - frac
        counts[i + 1] += frac
    return counts


def linear_binning_numpy(x, lo, dx, n_bins):
    pos = (x - lo) / dx
    idx = np.clip(np.floor(pos).astype(np.int64), 0, n_bins - 2)
    frac = pos - idx
    return np.bincount(idx, 1.0 - frac, n_bins) + np.bincount(idx + 1, frac, n_bins)


def _binned_pair_sum_loop(autocorr, dx, s):
    d_max = min(autocorr.shape[0] - 1, int(PAIR_Z_CUT * s / dx) + 1)
    a = 0.5 * (dx / s) ** 2
    step = math.exp(-2.0 * a)
    acc = 0.0
    w = 1.0
    ratio = 1.0
    for d in range(1, d_max + 1):
        # exp(-a d^2) = exp(-a (d-1)^2) * exp(-a (2d - 1)); reseed now and then
        if (d & 511) == 1:
            w = math.exp(-a * d * d)
            ratio = math.exp(-a * (2 * d + 1))
        else:
            w *= ratio
            ratio *= step
        acc += autocorr[d] * w
    return (autocorr[0] + 2.0 * acc) / SQRT_2PI


def binned_pair_sum_numpy(autocorr, dx, s):
    d_max = min(autocorr.shape[0] - 1, int(PAIR_Z_CUT * s / dx) + 1)
    z = np.arange(1, d_max + 1) * dx / s
    acc = np.dot(autocorr[1 : d_max + 1], np.exp(-0.5 * z * z))
    return float(autocorr[0] + 2.0 * acc) / SQRT_2PI


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------


def _langevin_loop(x0, h, alpha, sigma, eps, z):
    n = z.shape[0]
    out = np.empty(n + 1)
    amp = math.sqrt(2.0 * sigma * h)
    x = x0
    out[0] = x
    for k in range(n):
        x = x + (-alpha * x + math.sin(x / eps) / eps) * h + amp * z[k]
        out[k + 1] = x
    return out


def _lorenz_rk4_loop(state0, h, n, alpha, lam, eps, substeps):
    out = np.empty((n + 1, 4))
    ie = 1.0 / eps
    ie2 = ie * ie
    dt = h / substeps
    s = state0.copy()
    out[0] = s
    stage = np.empty((4, 4))
    tmp = np.empty(4)
    for step in range(n):
        for _ in range(substeps):
            for st in range(4):
                if st == 0:
                    for c in range(4):
                        tmp[c] = s[c]
                else:
                    frac = 1.0 if st == 3 else 0.5
                    for c in range(4):
                        tmp[c] = s[c] + frac * dt * stage[st - 1, c]
                x, y1, y2, y3 = tmp[0], tmp[1], tmp[2], tmp[3]
                stage[st, 0] = alpha * (x - x * x * x) + lam * ie * y2
                stage[st, 1] = 10.0 * ie2 * (y2 - y1)
                stage[st, 2] = ie2 * (28.0 * y1 - y2 - y1 * y3)
                stage[st, 3] = ie2 * (y1 * y2 - (8.0 / 3.0) * y3)
            for c in range(4):
                s[c] += (dt / 6.0) * (
                    stage[0, c] + 2.0 * stage[1, c] + 2.0 * stage[2, c] + stage[3, c]
                )
        out[step + 1] = s
    return out


def _kac_zwanzig_loop(Q0, P0, q0, p0, k, m, h, n, vprime_coeffs):
    Qs = np.empty(n + 1)
    Ps = np.empty(n + 1)
    q = q0.copy()
    p = p0.copy()
    n_bath = q.shape[0]
    Q = Q0
    P = P0
    Qs[0] = Q
    Ps[0] = P
    for step in range(n):
        force = 0.0
        for j in range(n_bath):
            stretch = q[j] - Q
            force += k[j] * stretch
            p[j] -= h * k[j] * stretch
        vp = 0.0
        for i in range(vprime_coeffs.shape[0] - 1, -1, -1):
            vp = vp * Q + vprime_coeffs[i]
        P = P + h * (force - vp)
        Q = Q + h * P
        for j in range(n_bath):
            q[j] += h * p[j] / m[j]
        Qs[step + 1] = Q
        Ps[step + 1] = P
    return Qs, Ps


def kac_zwanzig_numpy(Q0, P0, q0, p0, k, m, h, n, vprime_coeffs):
    Qs = np.empty(n + 1)
    Ps = np.empty(n + 1)
    q = q0.copy()
    p = p0.copy()
    Q, P = float(Q0), float(P0)
    Qs[0], Ps[0] = Q, P
    coeffs = [float(c) for c in vprime_coeffs]
    for step in range(n):
        stretch = q - Q
        force = float(np.dot(k, stretch))
        p -= h * k * stretch
        vp = 0.0
        for c in reversed(coeffs):
            vp = vp * Q + c
        P = P + h * (force - vp)
        Q = Q + h * P
        q += h * p / m
        Qs[step + 1] = Q
        Ps[step + 1] = P
    return Qs, Ps


def _kicked_loop(x0, v0, zeta0, gamma, kick, stride, h, n):
    X = np.empty(n + 1)
    V = np.empty(n + 1)
    decay = math.exp(-gamma * h)
    gain = (1.0 - decay) / gamma if gamma > 0.0 else h
    x = x0
    v = v0
    zeta = zeta0
    clamps = 0
    X[0] = x
    V[0] = v
    for k in range(n):
        if k % stride == 0:
            v += kick * zeta
            zeta = math.cos(3.0 * math.acos(zeta))
            if zeta > 1.0:
                zeta = 1.0
                clamps += 1
            elif zeta < -1.0:
                zeta = -1.0
                clamps += 1
        x += v * gain
        v *= decay
        X[k + 1] = x
        V[k + 1] = v
    return X, V, clamps


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

kernel_sums_numba = jit(_kernel_sums_loop)
lag_sums_direct_numba = jit(_lag_sums_loop)
direct_pair_sum_numba = jit(_direct_pair_sum_loop)
linear_binning_numba = jit(_linear_binning_loop)
binned_pair_sum_numba = jit(_binned_pair_sum_loop)
langevin_numba = jit(_langevin_loop)
lorenz_rk4_numba = jit(_lorenz_rk4_loop)
kac_zwanzig_numba = jit(_kac_zwanzig_loop)
kicked_numba = jit(_kicked_loop)

langevin_numpy = _langevin_loop
lorenz_rk4_numpy = _lorenz_rk4_loop
kicked_numpy = _kicked_loop

if USE_NUMBA:
    kernel_sums = kernel_sums_numba
    lag_sums_direct = lag_sums_direct_numba
    direct_pair_sum = direct_pair_sum_numba
    linear_binning = linear_binning_numba
    binned_pair_sum = binned_pair_sum_numba
    langevin = langevin_numba
    lorenz_rk4 = lorenz_rk4_numba
    kac_zwanzig = kac_zwanzig_numba
    kicked = kicked_numba
else:
    kernel_sums = kernel_sums_numpy
    lag_sums_direct = lag_sums_direct_numpy
    direct_pair_sum = direct_pair_sum_numpy
    linear_binning = linear_binning_numpy
    binned_pair_sum = binned_pair_sum_numpy
    langevin = langevin_numpy
    lorenz_rk4 = lorenz_rk4_numpy
    kac_zwanzig = kac_zwanzig_numpy
    kicked = kicked_numpy
