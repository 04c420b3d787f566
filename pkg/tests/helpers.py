"""Shared models and numerical oracles for the test suite."""
import numpy as np

from causalqmle import CausalModel, Decay, InnovationSpec, in_theta_region
from causalqmle.core import Filtered
from causalqmle import zoo


class ConstantVariance(CausalModel):
    """``X_t = sqrt(theta) xi_t``: f = 0 and H = theta, with analytic derivatives."""

    family = "constant_variance"

    def __init__(self, lower=1e-3, upper=100.0, theta0=1.0):
        super().__init__(1, 1, ("sigma2",), [lower], [upper], theta0=[theta0])

    def filter(self, theta, X, order=0):
        n = np.asarray(X).shape[0]
        out = Filtered(np.zeros((n, 1)), np.full((n, 1, 1), float(theta[0])))
        if order >= 1:
            out.df = np.zeros((n, 1, 1))
            out.dH = np.ones((n, 1, 1, 1))
        if order >= 2:
            out.d2f = np.zeros((n, 1, 1, 1))
            out.d2H = np.zeros((n, 1, 1, 1, 1))
        return out

    def alpha(self, theta, which, J):
        return np.zeros(J)

    def decay(self, theta, which):
        return Decay.finite(0)


def zoo_cases():
    """One in-region instance of every family: name -> (model, innovation)."""
    g1 = InnovationSpec(p=1)
    g2 = InnovationSpec(p=2)
    cases = {
        "arch_finite": zoo.make_arch_inf(zoo.ArchInfCoeffs(0.2, [0.3, 0.15])),
        "arch_garch_expansion": zoo.make_arch_inf(zoo.GarchCoeffs(0.1, [0.2], [0.5]), J=300),
        "arch_power_law": zoo.make_power_law_arch(0.1, 0.5, 3.0),
        "garch11": zoo.make_garch(zoo.GarchCoeffs(0.1, [0.2], [0.5])),
        "garch21": zoo.make_garch(zoo.GarchCoeffs(0.1, [0.1, 0.1], [0.4])),
        "tarch": zoo.make_tarch(zoo.TarchCoeffs(0.3, [0.2, 0.1], [0.35, 0.05])),
        "mvarch": zoo.make_mvarch(np.array([[0.5, 0.1], [0.1, 0.4]]),
                                  [np.array([[0.3, 0.05], [0.05, 0.25]])]),
        "bekk": zoo.make_bekk(BEKK_COEFFS),
        "nlarch": zoo.make_nlarch(zoo.NlarchCoeffs([0.5, 0.4], [np.array([[0.2, 0.05], [0.05, 0.2]])],
                                                   [np.array([[0.3, 0.0], [0.05, 0.25]])])),
        "nlar": zoo.make_nlar(zoo.NlarCoeffs([0.1, -0.1],
                                             [np.array([[0.3, 0.1], [0.0, 0.2]]), np.array([[0.1, 0.0], [0.0, 0.05]])],
                                             [np.array([[0.2, 0.0], [0.1, 0.3]]), np.array([[0.05, 0.0], [0.0, 0.1]])])),
        "arma_garch": zoo.make_arma_garch(zoo.ArmaGarchCoeffs(
            [np.array([[0.4, 0.1], [0.0, 0.3]])], [np.array([[0.2, 0.0], [0.0, 0.1]])], [0.2, 0.3],
            [np.array([[0.05, 0.01], [0.01, 0.04]])], [np.array([[0.2, 0.0], [0.0, 0.15]])])),
    }
    return {k: (m, g1 if m.m == 1 else g2) for k, m in cases.items()}


# in-region bivariate BEKK(1, 1) with clearly identified C and D
BEKK_COEFFS = zoo.BekkCoeffs(np.array([[0.5, 0.0], [0.1, 0.4]]),
                             [np.array([[0.45, 0.05], [0.0, 0.4]])],
                             [np.array([[0.3, 0.0], [0.05, 0.3]])])


def random_in_region(model, innov, gen, count, spread=0.05, r=2):
    """Points near ``theta0`` inside the box and inside the r-th moment region."""
    lo, hi = np.asarray(model.lower), np.asarray(model.upper)
    width = np.minimum(hi - lo, 1.0)
    out = []
    while len(out) < count:
        th = np.clip(model.theta0 + spread * width * gen.uniform(-1, 1, model.d), lo, hi)
        try:
            ok = in_theta_region(model, th, innov, r)
        except Exception:
            ok = False
        if ok:
            out.append(th)
    return out


def fd_gradient(fun, theta, rel=1e-5):
    """Central finite differences of a scalar or array-valued function."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for k in range(theta.size):
        h = rel * max(1.0, abs(theta[k]))
        e = np.zeros_like(theta)
        e[k] = h
        cols.append((np.asarray(fun(theta + e)) - np.asarray(fun(theta - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(a, b):
    """Norm-relative discrepancy ``||a - b|| / max(||b||, 1e-12)``."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))
