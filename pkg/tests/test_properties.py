"""Property-based checks over randomly generated coefficients and data."""
import math

import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from causalqmle import InnovationSpec, contraction_value, in_theta_region, sandwich, zoo
from causalqmle.io import read_binary, read_csv, write_binary, write_csv

coef = st.floats(0.01, 0.9)


@settings(max_examples=60, deadline=None)
@given(c1=coef, d1=st.floats(0.0, 0.9))
def test_garch_contraction_is_persistence_ratio(c1, d1):
    m = zoo.make_garch(zoo.GarchCoeffs(0.1, [c1], [d1]))
    ratio = c1 / (1 - d1)
    assert_allclose(contraction_value(m, m.theta0, InnovationSpec(), 2), ratio, rtol=1e-9)
    assert_allclose(contraction_value(m, m.theta0, InnovationSpec(), 4), 3 * ratio**2, rtol=1e-9)
    if abs(ratio - 1) > 1e-9:
        assert in_theta_region(m, m.theta0, InnovationSpec(), 2) == (ratio < 1)


@settings(max_examples=40, deadline=None)
@given(c=st.lists(coef, min_size=1, max_size=3), d=st.lists(st.floats(0.0, 0.3), min_size=1, max_size=2))
def test_garch_expansion_satisfies_its_recursion(c, d):
    g = zoo.GarchCoeffs(0.1, c, d)
    b = zoo.garch_to_arch_coeffs(g, J=60).b
    for i in range(1, 61):
        want = (c[i - 1] if i <= len(c) else 0.0) + sum(d[k - 1] * b[i - k - 1] for k in range(1, min(i - 1, len(d)) + 1))
        assert math.isclose(b[i - 1], want, rel_tol=1e-12, abs_tol=1e-300)
    assert np.all(b >= 0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 4)),
              elements=st.floats(-1e12, 1e12, allow_nan=False, allow_infinity=False)))
def test_path_files_round_trip(tmp_path_factory, X):
    d = tmp_path_factory.mktemp("paths")
    write_csv(d / "p.csv", X)
    write_binary(d / "p.cqts", X)
    assert np.array_equal(read_csv(d / "p.csv").data, X)
    assert np.array_equal(read_binary(d / "p.cqts").data, X)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 5))
def test_sandwich_is_symmetric_positive_semidefinite(seed, d):
    gen = np.random.default_rng(seed)
    A, B = gen.normal(size=(d, d)), gen.normal(size=(d, d))
    cov = sandwich(A @ A.T + np.eye(d), B @ B.T)
    assert np.array_equal(cov.sigma_hat, cov.sigma_hat.T)
    assert np.linalg.eigvalsh(cov.sigma_hat)[0] >= -1e-12 * max(1.0, np.abs(cov.sigma_hat).max())
