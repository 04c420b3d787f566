"""Acceptance criteria 1-9; each test records one PASS/FAIL line (shown in the pytest summary)."""
import cmath
import math
import os

import numpy as np
import pytest
from scipy import linalg

from causalqmle import InnovationSpec, SimConfig, estimate_F, fit, hessian, quasi_loglik, score, simulate_path, zoo
from causalqmle.harness import ExperimentPlan, run_consistency, run_normality, run_region_sweep, run_score_check
from causalqmle.qmle import likelihood_state

from helpers import BEKK_COEFFS, fd_gradient, random_in_region, rel_err, zoo_cases

GARCH_THETA0 = (0.1, 0.2, 0.5)
GARCH_DOC = {"family": "garch", "params": {"c0": 0.1, "c": [0.2], "d": [0.5]},
             "innovation": {"kind": "standard_gaussian"}}


@pytest.fixture
def workers(monkeypatch):
    """Use every core for the Monte Carlo criteria unless the caller chose a worker count."""
    if "CAUSALQMLE_WORKERS" not in os.environ:
        monkeypatch.setenv("CAUSALQMLE_WORKERS", str(os.cpu_count() or 1))


# ---- 1: analytic derivatives vs finite differences ------------------------------------------


def test_criterion_1_derivatives_match_finite_differences(acceptance):
    gen = np.random.default_rng(2024)
    worst_g, worst_h = (0.0, ""), (0.0, "")
    for name, (m, innov) in zoo_cases().items():
        X = simulate_path(m, m.theta0, innov, SimConfig(250, seed=11)).data
        for th in random_in_region(m, innov, gen, 20):
            eg = rel_err(score(m, th, X), fd_gradient(lambda t: quasi_loglik(m, t, X), th))
            eh = rel_err(hessian(m, th, X), fd_gradient(lambda t: score(m, t, X), th))
            worst_g, worst_h = max(worst_g, (eg, name)), max(worst_h, (eh, name))
    ok = worst_g[0] < 1e-5 and worst_h[0] < 1e-4
    acceptance(1, "score/Hessian vs central differences, 11 families x 20 points", ok,
               f"worst score {worst_g[0]:.1e} ({worst_g[1]}), worst Hessian {worst_h[0]:.1e} ({worst_h[1]})")
    assert ok


# ---- 2: expansion oracles -----------------------------------------------------------------


def _toeplitz_division(c, d, J):
    """Coefficients of sum c_i z^i / (1 - sum d_k z^k) by a lower-triangular Toeplitz solve."""
    col = np.zeros(J)
    col[0] = 1.0
    col[1:1 + len(d)] = -np.asarray(d)[:J - 1]
    rhs = np.zeros(J)
    rhs[:len(c)] = c
    return linalg.solve_triangular(linalg.toeplitz(col), rhs, lower=True)


def _poly(mats, z, lead=None):
    out = np.zeros_like(mats[0], dtype=complex) if lead is None else lead.astype(complex)
    for i, A in enumerate(mats, start=1):
        out = out + A * z**i
    return out


def _unit_disc(gen, k):
    return [math.sqrt(gen.uniform(0, 0.99)) * cmath.exp(2j * math.pi * gen.uniform()) for _ in range(k)]


def test_criterion_2_expansion_oracles(acceptance):
    gen = np.random.default_rng(5)
    J = 200
    worst_g = 0.0
    for g in (zoo.GarchCoeffs(0.1, [0.2], [0.5]), zoo.GarchCoeffs(0.1, [0.1, 0.1], [0.4]),
              zoo.GarchCoeffs(0.2, [0.05, 0.1, 0.05], [0.3, 0.5]), zoo.GarchCoeffs(0.1, [0.02], [0.97])):
        got = zoo.garch_to_arch_coeffs(g, J=J).b
        want = _toeplitz_division(g.c, g.d, J)
        worst_g = max(worst_g, float(np.max(np.abs(got - want))))
    zs = _unit_disc(gen, 50)
    J = 3000
    # BEKK: (I - sum D_j* z^j) B(z) = sum C_i* z^i with A* = A (x) A, and the intercept identity
    b = BEKK_COEFFS
    B0, Bs = zoo.bekk_to_mvarch_coeffs(b, J=J)
    Cs, Ds = [np.kron(x, x) for x in b.C], [np.kron(x, x) for x in b.D]
    I4 = np.eye(4)
    worst_b = float(np.max(np.abs((I4 - sum(Ds)) @ B0 - (b.C0 @ b.C0.T).reshape(4))))
    for z in zs:
        lhs = (I4 - _poly(Ds, z, np.zeros((4, 4)))) @ _poly(Bs, z, np.zeros((4, 4)))
        worst_b = max(worst_b, float(np.max(np.abs(lhs - _poly(Cs, z, np.zeros((4, 4)))))))
    # ARMA: Psi(z) (I + sum Gamma_i z^i) = Phi(z), and the diagonal variance quotient
    a = zoo.ArmaGarchCoeffs([np.array([[0.4, 0.1], [0.0, 0.3]]), np.array([[0.1, 0.0], [0.05, 0.1]])],
                            [np.array([[0.5, 0.1], [0.0, 0.4]]), np.array([[-0.2, 0.0], [0.1, 0.1]])], [0.2, 0.3],
                            [np.array([[0.05, 0.0], [0.0, 0.04]])], [np.array([[0.6, 0.0], [0.0, 0.7]])])
    G = zoo.arma_to_ar_coeffs(a, J=J)
    V = zoo.arma_garch_variance_coeffs(a, J=J)
    I2 = np.eye(2)
    worst_a = 0.0
    for z in zs:
        Psi = I2 - _poly(list(a.Psi), z, np.zeros((2, 2)))
        Phi = I2 - _poly(list(a.Phi), z, np.zeros((2, 2)))
        worst_a = max(worst_a, float(np.max(np.abs(Psi @ _poly(G, z, I2) - Phi))))
        Dz = I2 - _poly(list(a.D), z, np.zeros((2, 2)))
        worst_a = max(worst_a, float(np.max(np.abs(Dz @ _poly(V, z, np.zeros((2, 2))) - _poly(list(a.C), z,
                                                                                                np.zeros((2, 2)))))))
    ok = worst_g <= 1e-12 and worst_b <= 1e-9 and worst_a <= 1e-9
    acceptance(2, "GARCH/BEKK/ARMA expansions vs power-series division and operator identities", ok,
               f"GARCH {worst_g:.1e}, BEKK {worst_b:.1e}, ARMA {worst_a:.1e}")
    assert ok


# ---- 3: native recursion vs expanded representation ---------------------------------------------


def test_criterion_3_garch_equals_arch_expansion(acceptance):
    g = zoo.GarchCoeffs(*[GARCH_THETA0[0]], [GARCH_THETA0[1]], [GARCH_THETA0[2]])
    direct, expanded = zoo.make_garch(g), zoo.make_arch_inf(g, J=500)
    worst = 0.0
    for seed in range(5):
        X = simulate_path(direct, direct.theta0, InnovationSpec(), SimConfig(1000, seed=seed)).data
        # the same parameter point in both parameterizations, also away from theta0
        for th in (direct.theta0, np.array([0.15, 0.1, 0.7])):
            qa = likelihood_state(direct, th, X).q
            qb = likelihood_state(expanded, th, X).q
            worst = max(worst, float(np.max(np.abs(qa - qb))))
    ok = worst <= 1e-8
    acceptance(3, "GARCH(1,1) per-observation contrast, recursion vs ARCH(inf) J=500", ok, f"max gap {worst:.1e}")
    assert ok


# ---- 4: region boundaries ------------------------------------------------------------------


def test_criterion_4_region_boundaries(acceptance):
    m = zoo.make_garch(zoo.GarchCoeffs(0.1, [0.2], [0.5]))
    want = {2.0: 0.5, 4.0: (1 - 0.5) / math.sqrt(3)}
    rep = run_region_sweep(m, m.theta0, "c1", (0.0, 0.95), InnovationSpec(), [2.0, 4.0], tol=1e-6, expected=want)
    got = {r: rep.boundaries[str(r)]["boundary"] for r in want}
    acceptance(4, "GARCH(1,1) region boundaries by sweep", rep.passed,
               ", ".join(f"r={r:g}: {got[r]:.9f} vs {want[r]:.9f}" for r in want))
    assert rep.passed


# ---- 5 and 6: Monte Carlo consistency and normality --------------------------------------------


@pytest.mark.slow
def test_criterion_5_consistency(acceptance, workers):
    plan = ExperimentPlan.from_dict({"model": GARCH_DOC, "n_grid": [500, 2000, 8000], "R": 100, "base_seed": 1,
                                     "checks": ["consistency"]})
    rep = run_consistency(plan)
    meds = [v["median_error"] for v in rep.aggregates["per_n"].values()]
    acceptance(5, "consistency: median error decreasing, log-log slope in [-0.7, -0.3]", rep.passed,
               f"median errors {[round(x, 4) for x in meds]}, slope {rep.aggregates['slope']:.3f}")
    assert rep.passed, rep.assertions


@pytest.mark.slow
def test_criterion_6_normality_and_coverage(acceptance, workers):
    plan = ExperimentPlan.from_dict({"model": GARCH_DOC, "n_grid": [5000], "R": 500, "base_seed": 2,
                                     "checks": ["normality", "coverage"]})
    rep = run_normality(plan)
    a = rep.assertions
    detail = (f"KS p {[round(p, 3) for p in a['ks']['value']]}, 95% coverage "
              f"{[round(c, 3) for c in a['coverage_95']['value']]}, sigma rel. err "
              f"{a['sigma_vs_empirical']['value']:.3f}, excluded {rep.aggregates['excluded']}")
    acceptance(6, "asymptotic normality, coverage and sandwich accuracy (n=5000, R=500)", rep.passed, detail)
    assert rep.passed, a


# ---- 7: truncation gap decay --------------------------------------------------------------


def test_criterion_7_truncation_gap_decay(acceptance):
    # b_j = beta j^-ell: the zero-past contrast misses sum_{j >= t} b_j X_{t-j}^2, of order t^(1 - ell)
    m = zoo.make_power_law_arch(0.1, 0.5, 3.0)
    decay = m.decay(m.theta0, "H")
    exponent = 1.0 - decay.rate
    past, T, windows = 10_000, 200, 500
    X = simulate_path(m, m.theta0, InnovationSpec(),
                      SimConfig(past + T * windows, burn_in=2 * past, lag_truncation=past, seed=7)).data
    q_long = likelihood_state(m, m.theta0, X).q  # every window below sees at least `past` lags
    gap = np.zeros(T)
    for k in range(windows):
        s = past + k * T
        gap += np.abs(likelihood_state(m, m.theta0, X[s:s + T]).q - q_long[s:s + T])
    gap /= windows
    ts = np.unique(np.round(np.geomspace(10, T, 25)).astype(int))
    slope = float(np.polyfit(np.log(ts), np.log(gap[ts - 1]), 1)[0])
    ok = abs(slope - exponent) <= 0.3
    acceptance(7, "truncation gap of the contrast decays at the declared tail rate", ok,
               f"slope {slope:.3f} vs {exponent:.1f}")
    assert ok


# ---- 8: bivariate BEKK smoke ----------------------------------------------------------------


def test_criterion_8_bekk_recovery(acceptance):
    m = zoo.make_bekk(BEKK_COEFFS)
    X = simulate_path(m, m.theta0, InnovationSpec(p=2), SimConfig(10_000, seed=0)).data
    res = fit(m, X)
    err = float(np.linalg.norm(res.theta_hat.values - m.theta0))
    w = np.linalg.eigvalsh(estimate_F(m, res.theta_hat, X, check=False))
    ok = err < 0.1 and w[0] > 0
    acceptance(8, "bivariate BEKK(1,1) fit at n=10000", ok, f"error {err:.3f}, min eig F {w[0]:.3g}")
    assert ok


# ---- 9: score martingale --------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_9_score_is_centred(acceptance, workers):
    out = run_score_check(GARCH_DOC, n=2000, R=500, base_seed=3)
    acceptance(9, "mean of n^-1/2 score(theta0) within 5 SE of zero (R=500)", out["passed"],
               f"t-statistics {[round(t, 2) for t in out['t']]}")
    assert out["passed"]


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
