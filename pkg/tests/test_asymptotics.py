import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from causalqmle import (
    ContractViolation, InnovationSpec, SimConfig, VarViolation, confidence_intervals, covariance, estimate_F,
    estimate_G, fit, inv_sqrt, sandwich, simulate_path, standardize, zoo,
)
from causalqmle.asymptotics import compare_G, estimate_m4

from helpers import ConstantVariance, zoo_cases


def gaussian_sample(n, s2=1.5, seed=0):
    return np.random.default_rng(seed).normal(scale=np.sqrt(s2), size=n)


# ---- constant-variance closed forms -------------------------------------------------------


def test_constant_variance_F_closed_form():
    # d^2 q_t = 2 x^2 / s^3 - 1 / s^2, so formula_F0 is exactly 1/s^2 and the average tends to it
    n = 10**5
    x = gaussian_sample(n)
    s = np.mean(x**2)
    assert_allclose(estimate_F(ConstantVariance(), [s], x, "formula_F0"), [[1 / s**2]], rtol=1e-12)
    F = estimate_F(ConstantVariance(), [s], x, "hessian_avg")
    # at the sample second moment the average is exactly 2 s / s^3 - 1 / s^2 = 1 / s^2
    assert_allclose(F, [[1 / s**2]], rtol=1e-10)
    F_true = estimate_F(ConstantVariance(), [1.5], x, "hessian_avg")[0, 0]
    se = np.sqrt(np.var(2 * x**2 / 1.5**3) / n)
    assert abs(F_true - 1 / 1.5**2) < 5 * se


def test_constant_variance_G_closed_form():
    # E (dq_t)^2 = Var(x^2) / s^4 = 2 / s^2 for Gaussian data
    n = 10**5
    x = gaussian_sample(n, seed=1)
    s = np.mean(x**2)
    G = estimate_G(ConstantVariance(), [s], x, "score_outer")[0, 0]
    assert abs(G - 2 / s**2) < 0.15 * (2 / s**2)
    G0 = estimate_G(ConstantVariance(), [s], x, "formula_G0", innov=InnovationSpec())[0, 0]
    assert_allclose(G0, 2 / s**2, rtol=1e-12)


def test_m4_estimate_gaussian():
    x = gaussian_sample(10**5, seed=2)
    m4 = estimate_m4(ConstantVariance(), [1.5], x)
    assert abs(m4 - 3) < 5 * np.sqrt(96 / x.size)


# ---- sandwich algebra ---------------------------------------------------------------


def test_sandwich_reduces_to_inverse_when_G_equals_F():
    A = np.random.default_rng(3).normal(size=(4, 4))
    F = A @ A.T + 4 * np.eye(4)
    assert_allclose(sandwich(F, F).sigma_hat, np.linalg.inv(F), rtol=1e-10, atol=1e-13)


def test_sandwich_scalar():
    assert_allclose(sandwich([[2.0]], [[3.0]]).sigma_hat, [[3.0 / 4.0]], rtol=1e-14)


def test_sandwich_matches_explicit_inverse():
    gen = np.random.default_rng(4)
    A, B = gen.normal(size=(5, 5)), gen.normal(size=(5, 5))
    F, G = A @ A.T + np.eye(5), B @ B.T
    Fi = np.linalg.inv(F)
    want = Fi @ G @ Fi
    assert np.max(np.abs(sandwich(F, G).sigma_hat - want)) < 1e-10 * max(1.0, np.max(np.abs(want)))


def test_sandwich_rejects_bad_inputs():
    with pytest.raises(VarViolation):
        sandwich([[1.0, 0.0], [0.0, -1.0]], np.eye(2))
    with pytest.raises(VarViolation):
        sandwich([[1.0, 0.0], [0.0, 1e-14]], np.eye(2))
    with pytest.raises(ContractViolation):
        sandwich(np.eye(2), [[1.0, 0.0], [0.0, -1.0]])


def test_confidence_interval_formula():
    cov = sandwich([[1.0]], [[4.0]], n=100)
    ci = confidence_intervals([0.5], cov, level=0.95)
    half = stats.norm.ppf(0.975) * np.sqrt(4.0 / 100)
    assert_allclose(ci, [[0.5 - half, 0.5 + half]], rtol=1e-14)
    with pytest.raises(ContractViolation):
        confidence_intervals([0.5], cov, level=1.0)


def test_inv_sqrt_and_standardize():
    A = np.random.default_rng(5).normal(size=(3, 3))
    S = A @ A.T + np.eye(3)
    R = inv_sqrt(S)
    assert_allclose(R @ S @ R, np.eye(3), atol=1e-12)
    cov = sandwich(np.eye(3), S, n=400)
    z = standardize(np.ones(3) * 0.1, np.zeros(3), cov)
    assert_allclose(z, 20 * R @ (np.ones(3) * 0.1), rtol=1e-12)


# ---- zoo ---------------------------------------------------------------------------------


@pytest.mark.parametrize("name", list(zoo_cases()))
def test_formula_F_positive_definite_across_zoo(name):
    m, innov = zoo_cases()[name]
    X = simulate_path(m, m.theta0, innov, SimConfig(2000, seed=6)).data
    F = estimate_F(m, m.theta0, X, "formula_F0")
    assert np.linalg.eigvalsh(F)[0] > 0


def test_garch_estimators_agree():
    m = zoo.make_garch(zoo.GarchCoeffs(0.1, [0.2], [0.5]))
    X = simulate_path(m, m.theta0, InnovationSpec(), SimConfig(10**4, seed=7)).data
    th = fit(m, X).theta_hat
    Fh = estimate_F(m, th, X, "hessian_avg")
    F0 = estimate_F(m, th, X, "formula_F0")
    assert np.linalg.norm(Fh - F0) / np.linalg.norm(F0) < 0.2
    Go = estimate_G(m, th, X, "score_outer")
    G0 = estimate_G(m, th, X, "formula_G0", innov=InnovationSpec())
    assert not compare_G(G0, Go)["flagged"]
    cov = covariance(m, th, X, G_method="formula_G0", innov=InnovationSpec())
    assert cov.n == X.shape[0] and "G_check" in cov.diagnostics
    assert np.all(np.linalg.eigvalsh(cov.sigma_hat) > 0)


def test_singular_F_is_var_violation():
    # a parameter that does not enter the model: F has a zero row
    from causalqmle import FunctionalModel

    m = FunctionalModel(1, 2, ("s2", "unused"), [1e-3, -1], [100, 1], lambda th, w: [0.0],
                        lambda th, w: [[th[0]]], theta0=[1.0, 0.0])
    x = gaussian_sample(500, seed=8)
    with pytest.raises(VarViolation):
        estimate_F(m, [np.mean(x**2), 0.0], x)
