import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coarsegrain.core import (
    EstimationError,
    EstimatorConfig,
    Parametrization,
    TimeSeries,
    TrialPoints,
    generator_action,
    named_basis,
)
from coarsegrain.estimator import (
    LinearSystem,
    assemble_row,
    assemble_system,
    estimate,
    estimate_coupled,
    min_norm_least_squares,
    sweep_t,
    trapezoid,
)
from coarsegrain.simulate import SimulationSpec, ornstein_uhlenbeck

# -- trapezoid ----------------------------------------------------------------


def test_trapezoid_constant():
    assert trapezoid(np.full(8, 2.5), 0.1) == pytest.approx(2.5 * 7 * 0.1, rel=1e-14)


def test_trapezoid_linear_is_exact():
    h = 0.1
    assert trapezoid(np.arange(11) * h, h) == pytest.approx(0.5, abs=1e-15)


def test_trapezoid_quadratic_example():
    u = (np.arange(3) * 0.5) ** 2
    assert trapezoid(u, 0.5) == pytest.approx(0.375, abs=1e-15)


def test_trapezoid_needs_two_nodes():
    with pytest.raises(EstimationError, match="at least two nodes required"):
        trapezoid([1.0], 0.1)


# -- minimum-norm least squares ----------------------------------------------


def pinv_oracle(A, b, rcond=1e-10):
    """Independent reference: SVD pseudoinverse written out by hand."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    keep = s > rcond * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    return Vt[keep].T @ ((U[:, keep].T @ b) / s[keep])


def test_min_norm_identity():
    np.testing.assert_allclose(min_norm_least_squares(np.eye(2), [3.0, -1.0]), [3.0, -1.0])


def test_min_norm_rank_one():
    theta, rank = min_norm_least_squares([[1.0, 0.0], [1.0, 0.0]], [2.0, 2.0], return_rank=True)
    np.testing.assert_allclose(theta, [2.0, 0.0], atol=1e-14)
    assert rank == 1


def test_min_norm_zero_matrix():
    theta, rank = min_norm_least_squares(np.zeros((4, 3)), np.ones(4), return_rank=True)
    assert rank == 0 and not theta.any()


def test_min_norm_accepts_linear_system():
    system = LinearSystem(np.eye(2), np.array([1.0, 2.0]), np.zeros(2))
    np.testing.assert_allclose(min_norm_least_squares(system), [1.0, 2.0])


def random_system(rng, i):
    m = int(rng.integers(2, 60))
    n = int(rng.integers(1, 8))
    if i % 3 == 0:
        # rank deficient: product of thin factors plus duplicated columns
        r = int(rng.integers(1, max(2, min(m, n))))
        A = rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
    elif i % 3 == 1:
        A = rng.standard_normal((m, n)) * 10.0 ** rng.uniform(-3, 3, n)
    else:
        A = rng.standard_normal((m, n))
        A[:, -1] = A[:, 0]
    return A, rng.standard_normal(m)


def test_min_norm_matches_pinv_oracle_on_random_systems():
    rng = np.random.default_rng(20240601)
    worst = 0.0
    for i in range(100):
        A, b = random_system(rng, i)
        theta = min_norm_least_squares(A, b)
        ref = pinv_oracle(A, b)
        worst = max(worst, np.max(np.abs(theta - ref)) / max(1.0, np.max(np.abs(ref))))
    assert worst <= 1e-10


def test_min_norm_six_by_three():
    rng = np.random.default_rng(6)
    A, b = rng.standard_normal((6, 3)), rng.standard_normal(6)
    np.testing.assert_allclose(min_norm_least_squares(A, b), np.linalg.lstsq(A, b, rcond=None)[0],
                               atol=1e-10)


matrices = st.integers(0, 2**32 - 1).map(lambda s: random_system(np.random.default_rng(s), s))


@given(matrices, st.floats(0.01, 100))
def test_min_norm_scales_with_b(system, c):
    A, b = system
    np.testing.assert_allclose(min_norm_least_squares(A, c * b), c * min_norm_least_squares(A, b),
                               rtol=1e-8, atol=1e-8 * c)


@given(matrices)
def test_min_norm_residual_is_optimal(system):
    A, b = system
    theta = min_norm_least_squares(A, b)
    # normal equations hold at a least-squares minimiser
    scale = np.linalg.norm(A) * np.linalg.norm(b) + 1e-300
    assert np.linalg.norm(A.T @ (A @ theta - b)) <= 1e-8 * scale


def test_min_norm_smallest_among_minimisers():
    A = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]])
    b = np.array([2.0, 1.0, 3.0])
    theta = min_norm_least_squares(A, b)
    null = np.array([1.0, -1.0, 0.0]) / np.sqrt(2)
    base = np.linalg.norm(A @ theta - b)
    for s in np.linspace(-2, 2, 41):
        other = theta + s * null
        assert np.linalg.norm(A @ other - b) == pytest.approx(base, abs=1e-12)
        assert np.linalg.norm(other) >= np.linalg.norm(theta) - 1e-12


# -- assembly -----------------------------------------------------------------

FIXED = EstimatorConfig(t=0.05, bandwidth=0.2)


@pytest.fixture(scope="module")
def ou_short():
    return ornstein_uhlenbeck(1.0, 1.0, SimulationSpec(T=40.0, h=1e-2, seed=3))


def test_zero_basis_gives_zero_row(ou_short):
    param = Parametrization.from_pairs([(None, None)])
    row, _ = assemble_row(ou_short, param, 0.3, 0.5, FIXED)
    assert not row.any()


def test_constant_series_row():
    c, t = 0.4, 0.3
    series = TimeSeries(np.full(200, c), 0.01)
    param = named_basis("ou")
    row, rhs = assemble_row(series, param, c, t, FIXED)
    expected = [t * generator_action(param, j, c) for j in (1, 2)]
    np.testing.assert_allclose(row, expected, rtol=1e-12)
    assert rhs == pytest.approx(0.0, abs=1e-14)


def test_single_point_system_matches_row(ou_short):
    param = named_basis("ou")
    row, rhs = assemble_row(ou_short, param, 0.1, 0.5, FIXED)
    system = assemble_system(ou_short, param, TrialPoints([0.1]), EstimatorConfig(t=0.5, bandwidth=0.2))
    np.testing.assert_array_equal(system.A[0], row)
    assert system.b[0] == rhs


def test_duplicate_trial_points_give_identical_rows(ou_short):
    system = assemble_system(ou_short, named_basis("ou"), TrialPoints([0.2, -0.5, 0.2]),
                             EstimatorConfig(t=0.3))
    np.testing.assert_array_equal(system.A[0], system.A[2])
    assert system.b[0] == system.b[2]


def test_fifty_four_trial_points_give_54_rows(ou_short):
    xi = np.linspace(-1, 1, 54)
    system = assemble_system(ou_short, named_basis("ou"), TrialPoints(xi), EstimatorConfig(t=0.2, bandwidth=0.3))
    assert system.A.shape == (54, 2)


def test_lag_beyond_series_is_rejected():
    series = TimeSeries(np.arange(10.0), 0.1)
    with pytest.raises(EstimationError, match="lag exceeds series length"):
        assemble_row(series, named_basis("ou"), 0.0, 5.0, FIXED)


def test_nested_grids_agree(ou_short):
    param, tp = named_basis("ou"), TrialPoints(np.linspace(-0.8, 0.8, 7))
    cfg = EstimatorConfig(bandwidth="lscv-cached")
    (t1, small), = sweep_t(ou_short, param, tp, cfg, [0.2])
    big = dict(sweep_t(ou_short, param, tp, cfg, [0.2, 0.9]))
    np.testing.assert_array_equal(small.theta, big[0.2].theta)


def test_sweep_reports_bad_horizon_without_aborting(ou_short):
    out = sweep_t(ou_short, named_basis("ou"), TrialPoints([0.0, 0.5]), FIXED, [0.1, 1e6])
    assert isinstance(out[1][1], EstimationError)
    assert out[0][1].theta.shape == (2,)


def test_residual_shrinks_with_more_data():
    """Rows built from OU data nearly satisfy row . theta = rhs for the true theta."""
    param = named_basis("ou")
    tp = TrialPoints(np.linspace(-1, 1, 9))
    cfg = EstimatorConfig(t=0.5, bandwidth=0.15)
    res = []
    for T in (20.0, 500.0):
        series = ornstein_uhlenbeck(1.0, 1.0, SimulationSpec(T=T, h=1e-2, seed=11))
        s = assemble_system(series, param, tp, cfg)
        res.append(np.linalg.norm(s.A @ np.array([-1.0, 1.0]) - s.b) / np.sqrt(len(tp)))
    assert res[1] < res[0]


def test_noiseless_exponential_decay():
    h = 1e-3
    t = np.arange(20001) * h
    series = TimeSeries(np.exp(-t), h)
    param = Parametrization.from_pairs([(lambda x: x, None)])
    tp = TrialPoints(np.linspace(0.2, 0.8, 6))
    result = estimate(series, param, tp, EstimatorConfig(t=0.1, bandwidth=1e-4))
    assert result.theta[0] == pytest.approx(-1.0, rel=2e-3)


def test_coupled_with_zero_covariate_matches_plain(ou_short):
    param, tp = named_basis("ou"), TrialPoints(np.linspace(-0.7, 0.7, 5))
    cfg = EstimatorConfig(t=0.3)
    zero = TimeSeries(np.zeros(len(ou_short)), ou_short.h)
    a = estimate(ou_short, param, tp, cfg)
    b = estimate_coupled(ou_short, zero, param, tp, cfg)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_coupled_length_mismatch(ou_short):
    short = TimeSeries(np.zeros(len(ou_short) - 1), ou_short.h)
    with pytest.raises(EstimationError, match="differ in length"):
        estimate_coupled(ou_short, short, named_basis("ou"), TrialPoints([0.0, 0.1]), EstimatorConfig(t=0.2))


def test_coupled_recovers_synthetic_memory_model():
    """Direct simulation of dQ = P, dP = -V'(Q) + S, dS = (mu S - P) dt + sqrt(2 sig) dW."""
    mu, sig, h, T = -0.5, 0.5, 1e-3, 500.0
    n = int(round(T / h))
    rng = np.random.default_rng(5)
    z = rng.standard_normal(n) * np.sqrt(2 * sig * h)
    q, p, s = 1.0, 0.0, 0.0
    S = np.empty(n + 1)
    P = np.empty(n + 1)
    S[0], P[0] = s, p
    for k in range(n):
        q, p, s = q + p * h, p + (q - q**3 + s) * h, s + (mu * s - p) * h + z[k]
        S[k + 1], P[k + 1] = s, p
    s_series, p_series = TimeSeries(S, h), TimeSeries(P, h)
    tp = TrialPoints(np.quantile(S, np.linspace(0.1, 0.9, 20)))
    res = estimate_coupled(s_series, p_series, named_basis("ou"), tp,
                           EstimatorConfig(t=0.5, bandwidth="lscv-once"))
    err = np.linalg.norm(res.theta - [mu, sig]) / np.linalg.norm([mu, sig])
    assert err <= 0.10


def test_ou_without_misspecification():
    series = ornstein_uhlenbeck(1.0, 1.0, SimulationSpec(T=500.0, h=1e-2, seed=1))
    tp = TrialPoints(np.quantile(series.values, np.linspace(0.05, 0.95, 30)))
    res = estimate(series, named_basis("ou"), tp, EstimatorConfig(t=1.0, bandwidth="lscv-once"))
    err = np.linalg.norm(res.theta - [-1.0, 1.0]) / np.sqrt(2)
    assert err <= 0.10
    assert res.rank == 2 and res.m_used == 30


@pytest.mark.parametrize("order", list(itertools.permutations(range(3))))
def test_trial_point_order_does_not_matter(ou_short, order):
    xi = np.array([-0.5, 0.0, 0.6])
    cfg = EstimatorConfig(t=0.2, bandwidth=0.25)
    ref = estimate(ou_short, named_basis("ou"), TrialPoints(xi), cfg).theta
    got = estimate(ou_short, named_basis("ou"), TrialPoints(xi[list(order)]), cfg).theta
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-14)
