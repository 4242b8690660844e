import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import brentq
from scipy.stats import norm

from conftest import hc0_covariance, normal_equations, regression_instance
from mestim.equations import (add_intercept, ee_linear_regression,
                              ee_logistic_regression, ee_mean, stack)
from mestim.errors import (DimensionMismatch, NoConvergence, SingularBread)
from mestim.estimator import (EstimatingFunction, MEstimationResult,
                              compute_bread, compute_filling, estimate,
                              sandwich, wald_ci)
from mestim.rootfind import SolveReport, SolverConfig


def test_mean_of_three():
    res = estimate(ee_mean([2, 4, 6]), init=[0.0])
    assert_allclose(res.theta_hat, [4.0], atol=1e-12)


def test_mean_closed_form():
    res = estimate(ee_mean([1, 2, 3, 4, 5]))
    assert_allclose(res.theta_hat, [3.0], atol=1e-12)
    assert_allclose(res.bread, [[1.0]], atol=1e-12)
    assert_allclose(res.filling, [[2.0]], atol=1e-12)
    assert_allclose(res.asymptotic_variance, [[2.0]], atol=1e-12)
    assert_allclose(res.covariance, [[0.4]], atol=1e-12)


def test_bread_mean_is_one():
    ef = ee_mean(np.random.default_rng(1).normal(size=17))
    assert_allclose(compute_bread(ef, [0.3]), [[1.0]], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_bread_linear_regression(seed):
    X, y = regression_instance(seed)
    ef = ee_linear_regression(X, y)
    theta = np.random.default_rng(seed).normal(size=X.shape[1])
    assert_allclose(compute_bread(ef, theta), X.T @ X / len(y), atol=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_bread_logistic_at_zero(seed):
    rng = np.random.default_rng(seed)
    X = add_intercept(rng.normal(size=(80, 2)))
    s = rng.integers(0, 2, 80)
    ef = ee_logistic_regression(X, s)
    expected = X.T @ np.diag(np.full(80, 0.25)) @ X / 80
    assert_allclose(compute_bread(ef, np.zeros(3)), expected, atol=1e-8)


def test_filling_examples():
    ef = ee_mean([1, 2, 3, 4, 5])
    assert_allclose(compute_filling(ef, [3.0]), [[2.0]], atol=1e-12)
    assert np.array_equal(compute_filling(ee_mean([7, 7, 7]), [7.0]),
                          np.zeros((1, 1)))
    twice = stack([ee_mean([1, 2, 4]), ee_mean([1, 2, 4])])
    f = compute_filling(twice, [1.0, 1.0])
    assert np.all(f == f[0, 0])


def test_filling_is_symmetric_psd():
    X, y = regression_instance(3)
    ef = ee_linear_regression(X, y)
    f = compute_filling(ef, np.zeros(X.shape[1]))
    assert_allclose(f, f.T, atol=0)
    assert np.min(np.linalg.eigvalsh(f)) >= -1e-12 * np.max(np.abs(f))


def test_sandwich_identity():
    v, cov = sandwich(np.eye(3), np.eye(3), 4)
    assert_allclose(v, np.eye(3))
    assert_allclose(cov, np.eye(3) / 4)


def test_sandwich_scalar_mean():
    _, cov = sandwich([[1.0]], [[2.0]], 5)
    assert_allclose(cov, [[0.4]], atol=1e-15)


def test_sandwich_singular():
    with pytest.raises(SingularBread):
        sandwich(np.array([[1.0, 2.0], [2.0, 4.0]]), np.eye(2), 10)


@pytest.mark.parametrize("seed", range(10))
def test_ols_matches_hc0(seed):
    X, y = regression_instance(seed)
    res = estimate(ee_linear_regression(X, y))
    assert_allclose(res.theta_hat, normal_equations(X, y), rtol=0, atol=1e-8)
    hc0 = hc0_covariance(X, y)
    assert_allclose(res.covariance, hc0, rtol=1e-8, atol=1e-8 * np.max(np.abs(hc0)))
    assert_allclose(res.covariance, res.covariance.T, atol=1e-12)
    assert_allclose(res.covariance, res.asymptotic_variance / res.n_obs, rtol=1e-15)
    assert np.all(np.diag(res.covariance) >= 0)


def _result(theta, cov):
    theta = np.atleast_1d(np.asarray(theta, float))
    cov = np.atleast_2d(np.asarray(cov, float))
    return MEstimationResult(theta, np.eye(len(theta)), cov, cov, cov,
                             SolveReport(theta, 0, 0.0, True), 1)


def test_wald_interval_rounding():
    ci = wald_ci(_result([1.86], [[0.142857 ** 2]]), 0.95)
    assert np.round(ci, 2).tolist() == [[1.58, 2.14]]


def test_wald_degenerate_and_standard():
    assert_allclose(wald_ci(_result([2.5], [[0.0]])), [[2.5, 2.5]])
    ci = wald_ci(_result([0.0], [[1.0]]), 0.95)
    z = brentq(lambda q: norm.cdf(q) - 0.975, 0, 5, xtol=1e-14)
    assert_allclose(ci, [[-z, z]], atol=1e-6)
    assert_allclose(ci, [[-1.959964, 1.959964]], atol=1e-6)
    with pytest.raises(ValueError):
        wald_ci(_result([0.0], [[1.0]]), 1.0)


def test_scale_equivariance():
    X, y = regression_instance(11)
    base = ee_linear_regression(X, y)
    scaled = EstimatingFunction(lambda t: -3.5 * base(t), base.arity, base.n_obs)
    a, b = estimate(base), estimate(scaled)
    tol = SolverConfig().tol
    assert_allclose(a.theta_hat, b.theta_hat, atol=10 * tol)
    assert_allclose(a.covariance, b.covariance, atol=10 * tol)


def test_dimension_checks():
    ef = ee_mean([1.0, 2.0])
    with pytest.raises(DimensionMismatch):
        estimate(ef, init=[0.0, 1.0])
    with pytest.raises(DimensionMismatch):
        estimate(ee_mean([1.0]))
    bad = EstimatingFunction(lambda t: np.zeros((2, 3)), 1, 3)
    with pytest.raises(DimensionMismatch):
        bad([0.0])


def test_custom_estimating_function_and_user_solver():
    # variance as a second parameter: psi = (y - mu, (y - mu)^2 - s2)
    y = np.array([1.0, 2.0, 3.0, 4.0, 10.0])
    ef = EstimatingFunction(
        lambda t: np.vstack([y - t[0], (y - t[0]) ** 2 - t[1]]), 2, y.size,
        names=["mu", "sigma2"])
    seen = {}

    def solver(f, x0):
        seen["called"] = True
        from scipy.optimize import fsolve
        return fsolve(f, x0, xtol=1e-14)

    res = estimate(ef, init=[0.0, 1.0], solver=solver)
    assert seen["called"]
    assert res.report.method == "user"
    assert_allclose(res.theta_hat, [y.mean(), y.var()], atol=1e-9)

    with pytest.raises(NoConvergence):
        estimate(ef, init=[0.0, 1.0], solver=lambda f, x0: np.asarray(x0))


def test_result_is_deterministic():
    X, y = regression_instance(5)
    a = estimate(ee_linear_regression(X, y))
    b = estimate(ee_linear_regression(X, y))
    assert np.array_equal(a.covariance, b.covariance)
    assert np.array_equal(a.theta_hat, b.theta_hat)


def test_polish_makes_integer_mean_exact():
    res = estimate(ee_mean([1, 2, 3, 4, 5]))
    assert res.theta_hat[0] == 3.0
    assert res.report.converged and res.report.residual_norm == 0.0
    assert res.report.iterations == 1


def test_polish_never_increases_residual():
    from mestim.estimator import polish
    from mestim.rootfind import solve
    rng = np.random.default_rng(3)
    X = add_intercept(rng.normal(size=40))
    s = (rng.uniform(size=40) < 0.4).astype(float)
    ef = ee_logistic_regression(X, s)
    rep = solve(ef.summed, np.zeros(2), SolverConfig())
    out = polish(ef, rep)
    assert out.residual_norm <= rep.residual_norm
    assert out.iterations == rep.iterations
