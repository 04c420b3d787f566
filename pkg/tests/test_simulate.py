import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from causalqmle import (
    ContractViolation, DivergenceError, FunctionalModel, InnovationSpec, RegionError, SeriesMatrix, SimConfig,
    draw_innovations, simulate_path, zoo,
)

from helpers import zoo_cases


def garch():
    return zoo.make_garch(zoo.GarchCoeffs(0.1, [0.2], [0.5]))


# ---- innovations -------------------------------------------------------------


def test_innovations_reproducible():
    spec = InnovationSpec(p=2)
    assert_array_equal(draw_innovations(spec, 100, 5), draw_innovations(spec, 100, 5))
    assert not np.array_equal(draw_innovations(spec, 100, 5), draw_innovations(spec, 100, 6))
    assert not np.array_equal(draw_innovations(spec, 100, 5, (1,)), draw_innovations(spec, 100, 5, (2,)))


def test_rademacher_values():
    xi = draw_innovations(InnovationSpec("rademacher_product", p=3), 1000, 1)
    assert set(np.unique(xi)) == {-1.0, 1.0}


@pytest.mark.parametrize("spec", [InnovationSpec(p=2), InnovationSpec("standardized_student_t", p=2, df=10.0),
                                  InnovationSpec("rademacher_product", p=2)])
def test_innovation_mean_and_variance(spec):
    n = 10**5
    xi = draw_innovations(spec, n, 3)
    se_mean = 1 / np.sqrt(n)
    assert np.all(np.abs(xi.mean(0)) < 5 * se_mean)
    m4 = np.mean(xi**4, axis=0)
    se_var = np.sqrt((m4 - 1) / n)  # zero for Rademacher, where xi^2 = 1 exactly
    assert np.all(np.abs(np.mean(xi**2, axis=0) - 1) <= 5 * se_var + 1e-12)


def test_gaussian_fourth_moment_large_sample():
    n = 10**6
    x = draw_innovations(InnovationSpec(), n, 4)[:, 0]
    se = np.sqrt((105 - 9) / n)  # Var(x^4) = E x^8 - (E x^4)^2
    assert abs(np.mean(x**4) - 3) < 5 * se


def test_student_t_variance_large_sample():
    n = 10**6
    x = draw_innovations(InnovationSpec("standardized_student_t", df=10.0), n, 5)[:, 0]
    m4 = InnovationSpec("standardized_student_t", df=10.0).m4
    assert abs(np.var(x) - 1) < 5 * np.sqrt((m4 - 1) / n)


# ---- configuration and containers --------------------------------------------------


def test_sim_config_defaults():
    n, burn, L = SimConfig(100).resolve(garch(), garch().theta0)
    assert n == 100 and burn == 2 * L and L >= 1


def test_sim_config_burn_in_must_cover_truncation():
    with pytest.raises(ContractViolation):
        SimConfig(100, burn_in=5, lag_truncation=10)


def test_series_matrix_is_finite_and_read_only():
    with pytest.raises(ContractViolation):
        SeriesMatrix(np.array([[1.0], [np.nan]]))
    s = SeriesMatrix(np.ones((3, 1)))
    with pytest.raises(ValueError):
        s.data[0, 0] = 2.0


# ---- paths -----------------------------------------------------------------


def test_simulation_bit_reproducible():
    for name, (m, innov) in zoo_cases().items():
        a = simulate_path(m, m.theta0, innov, SimConfig(200, seed=9))
        b = simulate_path(m, m.theta0, innov, SimConfig(200, seed=9))
        assert_array_equal(a.data, b.data, err_msg=name)
        assert a.data.shape == (200, m.m)


def test_constant_model_is_iid_with_mean():
    mu = 0.7
    m = FunctionalModel(1, 1, ("mu",), [-5], [5], lambda th, w: [th[0]], lambda th, w: [[4.0]], theta0=[mu])
    X = simulate_path(m, [mu], InnovationSpec(), SimConfig(20000, burn_in=1, lag_truncation=1, seed=1)).data[:, 0]
    assert abs(X.mean() - mu) < 5 * 2 / np.sqrt(X.size)
    assert abs(np.corrcoef(X[1:], X[:-1])[0, 1]) < 5 / np.sqrt(X.size)


def test_garch_unconditional_variance():
    # E X^2 = c0 / (1 - c1 - d1) = 1/3; standard error from the path's own batch means
    X = simulate_path(garch(), garch().theta0, InnovationSpec(), SimConfig(10**5, seed=2)).data[:, 0]
    x2 = X**2
    batches = x2.reshape(100, -1).mean(1)
    se = batches.std(ddof=1) / np.sqrt(batches.size)
    assert abs(x2.mean() - 1 / 3) < 5 * se


def test_burn_in_insensitivity():
    m = garch()
    innov = InnovationSpec()
    n, burn, L = SimConfig(500).resolve(m, m.theta0)
    xi = draw_innovations(innov, burn + n, 13)
    zero_start = m.simulate(m.theta0, xi, L)
    # a random non-zero past: run the model on 200 unrelated innovations first
    pre = draw_innovations(innov, 200, 14)
    random_start = m.simulate(m.theta0, np.vstack([pre, xi]), L)[200:]
    a, b = zero_start[burn:], random_start[burn:]
    assert np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-3)) < 1e-6


def test_causality():
    for name in ("garch11", "bekk", "arma_garch", "tarch", "nlar"):
        m, innov = zoo_cases()[name]
        xi = draw_innovations(innov, 300, 21)
        X = m.simulate(m.theta0, xi, 300)
        xi2 = xi.copy()
        xi2[150:] += 1.0
        Y = m.simulate(m.theta0, xi2, 300)
        assert_array_equal(X[:150], Y[:150], err_msg=name)
        assert not np.array_equal(X[150], Y[150])


def test_stationarity_halves():
    for name in ("garch11", "nlarch", "arma_garch"):
        m, innov = zoo_cases()[name]
        X = simulate_path(m, m.theta0, innov, SimConfig(40000, seed=31)).data
        a, b = X[:20000] ** 2, X[20000:] ** 2
        se = np.sqrt(a.reshape(100, -1, m.m).mean(1).var(0, ddof=1) / 100 +
                     b.reshape(100, -1, m.m).mean(1).var(0, ddof=1) / 100)
        assert np.all(np.abs(a.mean(0) - b.mean(0)) < 5 * se), name


def test_region_gate():
    m = zoo.make_garch(zoo.GarchCoeffs(0.1, [0.2], [0.5]))
    outside = [0.1, 0.6, 0.5]
    with pytest.raises(RegionError):
        simulate_path(m, outside, InnovationSpec(), SimConfig(100))
    X = simulate_path(m, outside, InnovationSpec(), SimConfig(100, seed=1), allow_outside_region=True)
    assert X.n == 100


def test_explosive_path_is_reported():
    m = zoo.make_arch_inf(zoo.ArchInfCoeffs(0.1, [50.0]))
    with pytest.raises(DivergenceError, match="step"):
        simulate_path(m, m.theta0, InnovationSpec(), SimConfig(5000, burn_in=2000, lag_truncation=1, seed=1),
                      allow_outside_region=True)


def test_innovation_dimension_must_match():
    m, _ = zoo_cases()["bekk"]
    with pytest.raises(ContractViolation):
        simulate_path(m, m.theta0, InnovationSpec(p=1), SimConfig(10))
