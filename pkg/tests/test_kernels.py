"""The compiled and interpreted flavours of every hot loop must agree."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest

from coarsegrain import kernels as K


@pytest.fixture
def rng():
    return np.random.default_rng(123)


def test_kernel_sums(rng):
    x, y = rng.standard_normal(500), rng.standard_normal(500)
    a = K.kernel_sums_numba(x, y, 0.3, 0.2, 0.0)
    b = K.kernel_sums_numpy(x, y, 0.3, 0.2, 0.0)
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_lag_sums(rng):
    x = rng.standard_normal(400)
    resp = rng.standard_normal((3, 400))
    lags = np.array([0, 1, 5, 50], dtype=np.int64)
    kappas = np.array([0.1, 0.2, 0.3, 0.4])
    shifts = np.array([0.0, 0.5, 1.0, 3.0])
    for a, b in zip(K.lag_sums_direct_numba(x, resp, -0.2, kappas, lags, shifts),
                    K.lag_sums_direct_numpy(x, resp, -0.2, kappas, lags, shifts)):
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_pair_sums(rng):
    x = rng.standard_normal(300)
    ref = np.exp(-0.5 * ((x[:, None] - x[None, :]) / 0.25) ** 2).sum() / math.sqrt(2 * math.pi)
    assert K.direct_pair_sum_numba(x, 0.25) == pytest.approx(ref, rel=1e-12)
    assert K.direct_pair_sum_numpy(x, 0.25) == pytest.approx(ref, rel=1e-12)


def test_binning_and_binned_sum(rng):
    x = rng.standard_normal(1000)
    lo, dx, n = x.min(), (x.max() - x.min()) / 255, 256
    a = K.linear_binning_numba(x, lo, dx, n)
    b = K.linear_binning_numpy(x, lo, dx, n)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert a.sum() == pytest.approx(1000.0)
    ac = np.correlate(a, a, "full")[n - 1:]
    assert K.binned_pair_sum_numba(ac, dx, 0.3) == pytest.approx(K.binned_pair_sum_numpy(ac, dx, 0.3), rel=1e-12)


def test_simulators(rng):
    z = rng.standard_normal(2000)
    np.testing.assert_array_equal(K.langevin_numba(0.1, 1e-3, 2.0, 1.0, 0.1, z),
                                  K.langevin_numpy(0.1, 1e-3, 2.0, 1.0, 0.1, z))
    s0 = np.array([1.0, 1.0, 1.0, 1.0])
    np.testing.assert_allclose(K.lorenz_rk4_numba(s0, 1e-3, 500, 1 / 3, 2 / 45, 0.1, 3),
                               K.lorenz_rk4_numpy(s0, 1e-3, 500, 1 / 3, 2 / 45, 0.1, 3), rtol=1e-12)
    a = K.kicked_numba(0.0, 0.1, 0.3, 1.0, 0.3, 10, 0.01, 500)
    b = K.kicked_numpy(0.0, 0.1, 0.3, 1.0, 0.3, 10, 0.01, 500)
    np.testing.assert_array_equal(a[0], b[0])
    assert a[2] == b[2]


def test_heat_bath_loop(rng):
    M = 40
    k, m = rng.uniform(0.1, 1, M), rng.uniform(0.1, 1, M)
    q0, p0 = rng.standard_normal(M), rng.standard_normal(M)
    coeffs = np.array([0.0, -1.0, 0.0, 1.0])
    a = K.kac_zwanzig_numba(1.0, 0.0, q0, p0, k, m, 1e-3, 300, coeffs)
    b = K.kac_zwanzig_numpy(1.0, 0.0, q0, p0, k, m, 1e-3, 300, coeffs)
    np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)


def test_environment_flag_selects_numpy():
    env = dict(os.environ, COARSEGRAIN_DISABLE_NUMBA="1")
    code = "from coarsegrain import _accel, kernels; print(_accel.backend_name(), kernels.langevin is kernels.langevin_numpy)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
