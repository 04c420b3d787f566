"""Sandwich covariance ``F^{-1} G F^{-1}`` of the quasi-likelihood estimator.

Everything is normalized on the per-observation contrast ``q_t``:
``F = E d^2 q_t`` and ``G = E dq_t dq_t'``, so ``sqrt(n)(theta_hat - theta0)``
is asymptotically ``N(0, F^{-1} G F^{-1})``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .core import InnovationSpec, as_theta, symmetrize
from .exceptions import ContractViolation, VarViolation
from .qmle import hessian_terms, likelihood_state, score_terms

F_METHODS = ("hessian_avg", "formula_F0")
G_METHODS = ("score_outer", "formula_G0")
COND_MAX = 1e12
EIG_FLOOR = 1e-12
G0_DISAGREEMENT = 0.25


def _check_F(F):
    F = symmetrize(np.asarray(F, dtype=float))
    w = np.linalg.eigvalsh(F)
    if not np.all(np.isfinite(w)) or w[0] <= 0:
        raise VarViolation(f"estimated F is not positive definite (smallest eigenvalue {w[0]:.3e})")
    if w[-1] / w[0] > COND_MAX:
        raise VarViolation(f"estimated F is singular (condition number {w[-1] / w[0]:.3e} > {COND_MAX:.0e})")
    return F


def estimate_F(model, theta, data, method="hessian_avg", u=None, check=True):
    """``(1/n) sum_t d^2 q_t`` (``hessian_avg``) or its conditional expectation (``formula_F0``).

    ``formula_F0`` is ``(1/n) sum_t [2 df_j' H^{-1} df_i + tr(H^{-1} dH_j H^{-1} dH_i)]``.
    """
    if method not in F_METHODS:
        raise ContractViolation(f"F method must be one of {F_METHODS}")
    theta = as_theta(theta, model.d)
    if method == "hessian_avg":
        st = likelihood_state(model, theta, data, u, order=2)
        F = hessian_terms(st).mean(axis=0)
    else:
        st = likelihood_state(model, theta, data, u, order=1)
        f = st.filt
        P = np.linalg.solve(f.H[:, None], f.dH)
        Hinv_df = np.linalg.solve(f.H[:, None], f.df[..., None])[..., 0]
        F = (2.0 * np.einsum("tki,tli->tkl", f.df, Hinv_df) + np.einsum("tkij,tlji->tkl", P, P)).mean(axis=0)
    F = symmetrize(F)
    return _check_F(F) if check else F


def standardized_residuals(model, theta, data, u=None):
    """``L_t^{-1}(X_t - f_t)`` with ``L_t`` the Cholesky factor of ``H_t``."""
    st = likelihood_state(model, as_theta(theta, model.d), data, u)
    return np.linalg.solve(st.chol, st.resid[..., None])[..., 0]


def estimate_m4(model, theta, data, u=None):
    """Per-component fourth moment of the standardized residuals."""
    xi = standardized_residuals(model, theta, data, u)
    return float(np.mean(xi ** 4))


def estimate_G(model, theta, data, method="score_outer", u=None, innov: InnovationSpec = None, m4=None):
    """``(1/n) sum_t dq_t dq_t'`` (``score_outer``) or the moment formula (``formula_G0``).

    ``formula_G0`` evaluates, per ``t`` and averaged,
    ``4 df_i' H^{-1} df_j - tr(H^{-1} dH_i) tr(H^{-1} dH_j) + p (m4 + p - 1) tr(H^{-2} dH_i dH_j)``
    with ``m4`` the per-component innovation fourth moment taken from ``m4``,
    else ``innov``, else the standardized residuals.
    """
    if method not in G_METHODS:
        raise ContractViolation(f"G method must be one of {G_METHODS}")
    theta = as_theta(theta, model.d)
    st = likelihood_state(model, theta, data, u, order=1)
    if method == "score_outer":
        S = score_terms(st)
        return symmetrize(S.T @ S / S.shape[0])
    if m4 is None:
        m4 = innov.m4 if innov is not None else estimate_m4(model, theta, data, u)
    p = model.p
    f = st.filt
    Hinv = np.linalg.inv(f.H)
    P = np.einsum("tij,tkjl->tkil", Hinv, f.dH)
    Hinv_df = np.einsum("tij,tkj->tki", Hinv, f.df)
    tr = np.einsum("tkii->tk", P)
    Hinv2 = Hinv @ Hinv
    quad =np.einsum("tab,tkbc,tlca->tkl", Hinv2, f.dH, f.dH)
    G = 4.0 * np.einsum("tki,tli->tkl", f.df, Hinv_df) - tr[:, :, None] * tr[:, None, :] + p * (m4 + p - 1) * quad
    return symmetrize(G.mean(axis=0))


def compare_G(G_formula, G_outer, tol=G0_DISAGREEMENT):
    """Relative Frobenius disagreement of the two G estimates and whether it exceeds ``tol``."""
    rel = float(np.linalg.norm(G_formula - G_outer) / max(np.linalg.norm(G_outer), 1e-300))
    return {"relative_difference": rel, "flagged": bool(rel > tol)}


@dataclass
class SandwichCov:
    """Sandwich covariance of ``sqrt(n)(theta_hat - theta0)`` with its ingredients."""

    F_hat: np.ndarray
    G_hat: np.ndarray
    sigma_hat: np.ndarray
    F_method: str = "hessian_avg"
    G_method: str = "score_outer"
    n: int = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "F_hat": self.F_hat.tolist(), "G_hat": self.G_hat.tolist(), "sigma_hat": self.sigma_hat.tolist(),
            "F_method": self.F_method, "G_method": self.G_method, "n": self.n, "diagnostics": self.diagnostics,
        }


def sandwich(F, G, n=None, F_method="hessian_avg", G_method="score_outer"):
    """``sigma = F^{-1} G F^{-1}`` by two linear solves (no explicit inverse)."""
    F = _check_F(F)
    G = symmetrize(np.asarray(G, dtype=float))
    wg = np.linalg.eigvalsh(G)
    if wg[0] < -1e-10 * max(abs(wg[-1]), 1.0):
        raise ContractViolation("G must be positive semidefinite")
    cf = linalg.cho_factor(F)
    left = linalg.cho_solve(cf, G)
    sigma = symmetrize(linalg.cho_solve(cf, left.T).T)
    return SandwichCov(F, G, sigma, F_method, G_method, n)


def confidence_intervals(theta_hat, cov: SandwichCov, level=0.95, n=None):
    """``theta_i +- z_level sqrt(sigma_ii / n)`` as a ``(d, 2)`` array."""
    if not 0 < level < 1:
        raise ContractViolation("level must lie in (0, 1)")
    n = cov.n if n is None else n
    if not n or n < 1:
        raise ContractViolation("interval half-widths need the sample size n")
    theta = np.asarray(getattr(theta_hat, "values", theta_hat), dtype=float)
    z = stats.norm.ppf(0.5 + level / 2)
    half = z * np.sqrt(np.clip(np.diag(cov.sigma_hat), 0, None) / n)
    return np.column_stack([theta - half, theta + half])


def inv_sqrt(S, floor=EIG_FLOOR):
    """Symmetric ``S^{-1/2}`` with eigenvalues floored at ``floor``."""
    w, V = np.linalg.eigh(symmetrize(np.asarray(S, dtype=float)))
    return (V / np.sqrt(np.maximum(w, floor))) @ V.T


def standardize(theta_hat, theta0, cov: SandwichCov, n=None):
    """``sqrt(n) sigma^{-1/2} (theta_hat - theta0)``."""
    n = cov.n if n is None else n
    diff = np.asarray(getattr(theta_hat, "values", theta_hat), float) - np.asarray(theta0, float)
    return np.sqrt(n) * inv_sqrt(cov.sigma_hat) @ diff


def covariance(model, theta, data, F_method="hessian_avg", G_method="score_outer", u=None, innov=None, m4=None):
    """Sandwich covariance at ``theta``; a formula-based G is cross-checked against the score outer product."""
    theta = as_theta(theta, model.d)
    X = getattr(data, "data", data)
    n = np.asarray(X).shape[0]
    F = estimate_F(model, theta, X, F_method, u)
    G = estimate_G(model, theta, X, G_method, u, innov, m4)
    cov = sandwich(F, G, n, F_method, G_method)
    if G_method == "formula_G0":
        cov.diagnostics["G_check"] = compare_G(G, estimate_G(model, theta, X, "score_outer", u))
    return cov
