import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coarsegrain import regression as R
from coarsegrain.core import EstimationError, EstimatorConfig, TimeSeries

K = R.gaussian_kernel
values = st.floats(-100, 100, allow_nan=False)
samples = arrays(np.float64, st.integers(2, 40), elements=values)


def test_kernel_values():
    assert K(0.0) == pytest.approx(0.3989422804, abs=1e-10)
    assert K(1.0) == pytest.approx(0.2419707245, abs=1e-10)
    assert K(2.7) == K(-2.7)


# -- nwe --------------------------------------------------------------------


def test_nwe_examples():
    assert R.nwe([0.0, 1.0], [0.0, 1.0], 0.5, 0.3) == pytest.approx(0.5)
    expected = (1 * K(0) + 2 * K(1) + 4 * K(2)) / (K(0) + K(1) + K(2))
    assert R.nwe([0.0, 1.0, 2.0], [1.0, 2.0, 4.0], 0.0, 1.0) == pytest.approx(expected, rel=1e-14)


@given(samples, values, st.floats(0.01, 10), values)
def test_nwe_constant_response(X, xi, kappa, c):
    assert R.nwe(X, np.full_like(X, c), xi, kappa) == pytest.approx(c, rel=1e-12, abs=1e-12)


@given(samples, st.data(), values, st.floats(1e-3, 100))
def test_nwe_range_bound(X, data, xi, kappa):
    Y = data.draw(arrays(np.float64, X.shape, elements=values))
    v = R.nwe(X, Y, xi, kappa)
    assert Y.min() <= v <= Y.max()


@given(samples, st.data(), st.floats(-5, 5), st.floats(0.05, 10), st.floats(-50, 50))
def test_nwe_shift_equivariance(X, data, xi, kappa, c):
    Y = data.draw(arrays(np.float64, X.shape, elements=values))
    a, fa, _ = R.nwe(X, Y, xi, kappa, full_output=True)
    assume(not fa)
    b = R.nwe(X + c, Y, xi + c, kappa)
    assert b == pytest.approx(a, rel=1e-8, abs=1e-8 * max(1.0, np.abs(Y).max()))


@given(samples, values, st.floats(0.01, 100))
def test_weight_normalisation(X, xi, kappa):
    w, fallback = R.nwe_weights(X, xi, kappa)
    if not fallback:
        assert abs(w.sum() - 1.0) <= 1e-12


def test_nwe_fallback_returns_mean():
    X = np.array([0.0, 1.0, 2.0])
    Y = np.array([3.0, 5.0, 10.0])
    v, fallback, den = R.nwe(X, Y, 1e6, 1e-3, full_output=True)
    assert fallback and den == 0.0 and v == pytest.approx(6.0)
    w, fb = R.nwe_weights(X, 1e6, 1e-3)
    assert fb and np.allclose(w, 1 / 3)


# -- LSCV -------------------------------------------------------------------


def _two_point_objective(delta, form):
    first = (2 * K(0) + 2 * K(1 / (delta * math.sqrt(2)))) / (delta * 4 * math.sqrt(2))
    second = 2 * K(1 / delta)
    return first - (second / delta if form == "corrected" else second)


@pytest.mark.parametrize("form", ["printed", "corrected"])
def test_lscv_two_point_closed_form(form):
    X = np.array([0.0, 1.0])
    for delta in (0.1, 0.7, 1.0, 3.0):
        assert R.lscv_objective(X, delta, form=form) == pytest.approx(
            _two_point_objective(delta, form), rel=1e-13)
    kappa = R.lscv_bandwidth(X, form=form)
    s = R.silverman_bandwidth(X)
    grid = s * np.geomspace(0.05, 5.0, 50)
    brute = np.array([_two_point_objective(d, form) for d in grid])
    i = int(np.argmin(brute))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, 49)]
    assert lo <= kappa <= hi
    assert _two_point_objective(kappa, form) <= brute[i] + 1e-15
    fine = np.geomspace(lo, hi, 4001)
    assert _two_point_objective(kappa, form) <= min(_two_point_objective(d, form) for d in fine) + 1e-10


def test_lscv_close_to_silverman_on_normal_sample():
    X = np.random.default_rng(3).standard_normal(1000)
    s = R.silverman_bandwidth(X)
    kappa = R.lscv_bandwidth(X)
    assert s / 3 <= kappa <= 3 * s


def test_printed_form_runs_to_the_grid_edge():
    # without the 1/delta factor the criterion decreases monotonically in delta
    X = np.random.default_rng(3).standard_normal(500)
    s = R.silverman_bandwidth(X)
    assert R.lscv_bandwidth(X, form="printed") == pytest.approx(5 * s, rel=1e-6)


@given(st.floats(0.01, 100))
def test_lscv_scale_covariance(c):
    X = np.random.default_rng(11).standard_normal(300)
    assert R.lscv_bandwidth(c * X) == pytest.approx(c * R.lscv_bandwidth(X), rel=1e-6)


def test_lscv_degenerate_inputs():
    with pytest.raises(EstimationError, match="degenerate"):
        R.lscv_bandwidth(np.ones(10))
    with pytest.raises(EstimationError):
        R.lscv_bandwidth(np.array([1.0]))


@pytest.mark.parametrize("M", [50, 700, 2000])
@pytest.mark.parametrize("dist", ["normal", "bimodal"])
def test_binned_pair_sums_match_direct(M, dist):
    rng = np.random.default_rng(M)
    X = rng.standard_normal(M)
    if dist == "bimodal":
        X = np.where(rng.random(M) < 0.5, X * 0.3 - 2, X * 0.5 + 1.5)
    s = R.silverman_bandwidth(X)
    for delta in s * np.geomspace(0.05, 5.0, 9):
        d1, d2 = R.lscv_pair_sums(X, delta, method="direct")
        b1, b2 = R.lscv_pair_sums(X, delta, method="binned", rtol=1e-6)
        assert abs(b1 - d1) <= 1e-6 * d1
        assert abs(b2 - d2) <= 1e-6 * d2
        od = R.lscv_objective(X, delta, method="direct")
        ob = R.lscv_objective(X, delta, method="binned", rtol=1e-6)
        assert abs(ob - od) <= 1e-6 * abs(od)


def test_binned_and_direct_bandwidths_agree():
    X = np.random.default_rng(5).standard_normal(1500)
    a = R.lscv_bandwidth(X, method="direct")
    b = R.lscv_bandwidth(X, method="binned")
    assert b == pytest.approx(a, rel=1e-3)


# -- conditional expectations ----------------------------------------------


def test_conditional_expectation_examples():
    cfg = EstimatorConfig(bandwidth=0.05)
    const = TimeSeries(np.full(20, 1.5), 0.1)
    assert R.conditional_expectation(const, 3, lambda y: y**2, 1.5, cfg) == pytest.approx(2.25)
    alt = TimeSeries(np.tile([0.0, 1.0], 50), 0.1)
    assert R.conditional_expectation(alt, 1, lambda y: y, 0.0, cfg) == pytest.approx(1.0, abs=1e-12)
    noisy = TimeSeries(np.random.default_rng(0).standard_normal(50), 0.1)
    zero = R.conditional_expectation(noisy, 2, lambda y: 0 * y, 0.3, EstimatorConfig())
    assert zero == 0.0
    with pytest.raises(EstimationError, match="lag exceeds"):
        R.conditional_expectation(noisy, 50, lambda y: y, 0.0, cfg)


def test_conditional_expectation_coupled_examples():
    cfg = EstimatorConfig(bandwidth=0.3)
    s = TimeSeries(np.random.default_rng(1).standard_normal(200), 0.01)
    zero = R.conditional_expectation_coupled(s, s, 4, lambda p, x: 0 * p, 0.1, cfg)
    assert zero == 0.0
    ones = TimeSeries(np.ones(200), 0.01)
    coupled = R.conditional_expectation_coupled(s, ones, 4, lambda p, x: p * (1 + 2 * x), 0.1, cfg)
    plain = R.conditional_expectation(s, 4, lambda x: 1 + 2 * x, 0.1, cfg)
    assert coupled == pytest.approx(plain, rel=1e-14)
    S0, P0 = TimeSeries(np.full(30, 0.7), 0.1), TimeSeries(np.full(30, -2.0), 0.1)
    v = R.conditional_expectation_coupled(S0, P0, 2, lambda p, x: p * (1 + 2 * x), 0.7, cfg)
    assert v == pytest.approx(-2.0 * 2.4)
    with pytest.raises(EstimationError, match="length"):
        R.conditional_expectation_coupled(s, TimeSeries(np.ones(10), 0.01), 1, lambda p, x: p, 0.0, cfg)
    with pytest.raises(EstimationError, match="interval"):
        R.conditional_expectation_coupled(s, TimeSeries(np.ones(200), 0.02), 1, lambda p, x: p, 0.0, cfg)


def test_bandwidth_strategies():
    x = np.random.default_rng(2).standard_normal(3000)
    per_lag = R.lag_bandwidth(x, 7, EstimatorConfig(bandwidth="lscv-per-lag"))
    cached = R.lag_bandwidth(x, 7, EstimatorConfig(bandwidth="lscv-cached"))
    assert per_lag == cached == R.lscv_bandwidth(x[:-7], rtol=EstimatorConfig().lscv_rtol)
    once = R.lag_bandwidth(x, 7, EstimatorConfig(bandwidth="lscv-once"))
    assert once == R.lscv_bandwidth(x, rtol=EstimatorConfig().lscv_rtol)
    assert R.lag_bandwidth(x, 7, EstimatorConfig(bandwidth=0.3)) == 0.3
    np.testing.assert_array_equal(
        R.lag_bandwidths(x, 5, EstimatorConfig()),
        [R.lscv_bandwidth(x[: 3000 - l], rtol=EstimatorConfig().lscv_rtol) for l in range(6)],
    )


# -- all-lags engine ----------------------------------------------------------


def _ou_like(n, seed):
    rng = np.random.default_rng(seed)
    x = np.empty(n)
    x[0] = 0.0
    z = rng.standard_normal(n - 1)
    for k in range(n - 1):
        x[k + 1] = 0.98 * x[k] + 0.2 * z[k]
    return x


@pytest.mark.parametrize("bandwidth", ["lscv-per-lag", "lscv-once", 0.2])
def test_lagged_engine_matches_per_lag_nwe(bandwidth):
    x = _ou_like(4000, 1)
    cfg = EstimatorConfig(bandwidth=bandwidth)
    resp = np.vstack([x + x * x, np.cos(x), np.full_like(x, 2.0)])
    eng = R.LaggedRegression(x, resp, 60, cfg)
    for xi in (-0.5, 0.1, 0.9):
        est = eng.at(xi)
        for lag in (0, 1, 17, 60):
            kappa = eng.kappas[lag]
            X = x[: 4000 - lag]
            for r in range(3):
                expect = R.nwe(X, resp[r, lag:], xi, kappa)
                assert est.values[r, lag] == pytest.approx(expect, rel=1e-10, abs=1e-12)


def test_lagged_engine_forced_direct_path_agrees():
    x = _ou_like(3000, 2)
    cfg = EstimatorConfig()
    resp = np.vstack([x * x])
    eng = R.LaggedRegression(x, resp, 30, cfg)
    kappas = eng.kappas.copy()
    kappas[5] *= 2.0  # rho = -0.75 forces direct summation at lag 5
    eng2 = R.LaggedRegression(x, resp, 30, cfg, bandwidths=kappas)
    est = eng2.at(0.2)
    assert est.direct_lags >= 1
    assert est.values[0, 5] == pytest.approx(R.nwe(x[:-5], resp[0, 5:], 0.2, kappas[5]), rel=1e-12)


def test_lagged_engine_fallback_far_outside():
    x = _ou_like(500, 3)
    eng = R.LaggedRegression(x, np.vstack([x]), 10, EstimatorConfig(bandwidth=0.01))
    est = eng.at(1e4)
    assert est.fallback.all()
    for lag in (1, 10):
        assert est.values[0, lag] == pytest.approx(x[lag:].mean())


def test_lagged_engine_values_do_not_depend_on_max_lag():
    x = _ou_like(3000, 4)
    resp = np.vstack([x + x * x])
    cfg = EstimatorConfig()
    short = R.LaggedRegression(x, resp, 40, cfg).at(0.3)
    long = R.LaggedRegression(x, resp, 200, cfg).at(0.3)
    np.testing.assert_array_equal(short.values, long.values[:, :41])


def test_far_trial_point_keeps_full_precision():
    # nearest sample sits 38 bandwidths away: unshifted weights would be subnormal
    X = np.array([0.0, 0.05, 0.1, 0.4])
    Y = np.array([1.0, -2.0, 4.0, 0.5])
    xi, kappa = 0.4 + 38.2 * 0.025, 0.025
    v, fallback, den = R.nwe(X, Y, xi, kappa, full_output=True)
    z = (X - xi) / kappa
    logw = -0.5 * z * z
    w = np.exp(logw - logw.max())
    assert not fallback and 0.0 < den < 1e-300
    assert v == pytest.approx(np.dot(w, Y) / w.sum(), rel=1e-13)
    assert R.nwe(X, Y + 7.0, xi, kappa) == pytest.approx(v + 7.0, rel=1e-13)
    eng = R.LaggedRegression(np.tile(X, 50), np.vstack([np.tile(Y, 50)]), 0, EstimatorConfig(bandwidth=kappa))
    assert eng.at(xi).values[0, 0] == pytest.approx(v, rel=1e-12)
