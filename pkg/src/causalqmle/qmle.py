"""Gaussian quasi-likelihood with truncated-history plug-ins, its derivatives, and the M-estimator.

With residual ``e_t = X_t - f_t`` and ``a_t = H_t^{-1} e_t`` the per-observation
contrast is ``q_t = e_t' a_t + log det H_t`` and ``L_n = -1/2 sum_t q_t``.
All conditional moments are computed from ``X_{t-1}, ..., X_1`` followed by
the initial sequence ``u`` (zero by default).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import _rng
from .core import Filtered, FunctionalModel, ParamVector, as_theta, symmetrize
from .exceptions import A2Violation, ContractViolation, NumericError, UnfittableError

log = logging.getLogger(__name__)

MAX_ITER = 500
STEP_TOL = 1e-8


# --------------------------------------------------------------------------
# Data handling
# --------------------------------------------------------------------------


def as_data(data, m):
    """Coerce a SeriesMatrix / array into a finite ``(n, m)`` float array."""
    X = getattr(data, "data", data)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and m == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] != m:
        raise ContractViolation(f"data must be an (n, {m}) array, got shape {X.shape}")
    if X.shape[0] < 1:
        raise ContractViolation("need at least one observation")
    if not np.all(np.isfinite(X)):
        raise ContractViolation("data contain non-finite values")
    return X


def _initial(u, m):
    if u is None:
        return np.zeros((0, m))
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u.reshape(-1, m)
    if u.shape[1] != m or not np.all(np.isfinite(u)):
        raise ContractViolation("initial sequence must be a finite (k, m) array, most recent first")
    return u


def filtered(model, theta, data, u=None, order=0):
    """Conditional moments for ``t = 1..n`` given the data's own past and then ``u``."""
    X = as_data(data, model.m)
    U = _initial(u, model.m)
    k = U.shape[0]
    series = np.vstack([U[::-1], X]) if k else X
    out = model.filter(as_theta(theta, model.d), series, order=order)
    return out[k:] if k else out, X


# --------------------------------------------------------------------------
# Likelihood state
# --------------------------------------------------------------------------


@dataclass
class LikelihoodState:
    """Per-observation plug-ins at one ``theta``.

    ``chol`` holds the Cholesky factors of ``H_t``, ``resid`` the residuals
    ``X_t - f_t``, ``a`` the solves ``H_t^{-1} resid_t`` and ``q`` the
    per-observation contrasts.
    """

    theta: np.ndarray
    filt: Filtered
    chol: np.ndarray
    resid: np.ndarray
    a: np.ndarray
    q: np.ndarray

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def loglik(self):
        return -0.5 * float(np.sum(self.q))


def _cholesky_checked(H):
    bad = ~np.all(np.isfinite(H.reshape(H.shape[0], -1)), axis=1)
    if np.any(bad):
        t = int(np.flatnonzero(bad)[0]) + 1
        raise A2Violation(f"conditional covariance is not finite at t={t}", t=t)
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        pass
    for t in range(H.shape[0]):
        try:
            np.linalg.cholesky(H[t])
        except np.linalg.LinAlgError:
            raise A2Violation(f"conditional covariance is not positive definite at t={t + 1}", t=t + 1) from None
    raise A2Violation("conditional covariance is not positive definite")


def likelihood_state(model, theta, data, u=None, order=0):
    theta = as_theta(theta, model.d)
    filt, X = filtered(model, theta, data, u, order)
    if not np.all(np.isfinite(filt.f)):
        t = int(np.flatnonzero(~np.all(np.isfinite(filt.f), axis=1))[0]) + 1
        raise NumericError(f"conditional mean is not finite at t={t}")
    resid = X - filt.f
    if model.m == 1:
        h = filt.H[:, 0, 0]
        bad = ~(h > 0)
        if np.any(bad):
            t = int(np.flatnonzero(bad)[0]) + 1
            raise A2Violation(f"conditional variance is not positive at t={t}", t=t)
        a = resid / h[:, None]
        q = resid[:, 0] * a[:, 0] + np.log(h)
        return LikelihoodState(theta, filt, np.sqrt(h).reshape(-1, 1, 1), resid, a, q)
    H = symmetrize(filt.H)
    filt.H = H
    L = _cholesky_checked(H)
    a = np.linalg.solve(H, resid[..., None])[..., 0]
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    q = np.einsum("ti,ti->t", resid, a) + logdet
    return LikelihoodState(theta, filt, L, resid, a, q)


def quasi_loglik(model, theta, data, u=None):
    """``L_n(theta) = -1/2 sum_t [e_t' H_t^{-1} e_t + log det H_t]``."""
    return likelihood_state(model, theta, data, u).loglik


# --------------------------------------------------------------------------
# Derivatives of q_t
# --------------------------------------------------------------------------


def score_terms(state):
    """``dq_t/dtheta`` for every ``t`` as an ``(n, d)`` array.

    ``dq/dtheta_k = -2 df_k' a - a' dH_k a + tr(H^{-1} dH_k)``, which is the
    residual form of the derivative with ``d(H^{-1}) = -H^{-1} dH H^{-1}``.
    """
    f = state.filt
    if f.df is None:
        raise ContractViolation("state was computed without first derivatives")
    a = state.a
    if f.H.shape[-1] == 1:
        h, dH, e = f.H[:, 0, 0], f.dH[:, :, 0, 0], a[:, 0]
        return -2.0 * f.df[:, :, 0] * e[:, None] - dH * (e * e)[:, None] + dH / h[:, None]
    P = np.linalg.solve(state.filt.H[:, None], f.dH)
    mean_term = -2.0 * np.einsum("tki,ti->tk", f.df, a)
    quad_term = -np.einsum("ti,tkij,tj->tk", a, f.dH, a)
    trace_term = np.einsum("tkii->tk", P)
    return mean_term + quad_term + trace_term


def hessian_terms(state):
    """``d^2 q_t / dtheta dtheta'`` for every ``t`` as an ``(n, d, d)`` array (symmetrized).

    With ``a = H^{-1} e``, ``P_k = H^{-1} dH_k``, ``w_k = P_k a`` and ``v_k = dH_k a``
    the second derivative is the sum of seven named terms below.
    """
    f = state.filt
    if f.d2H is None:
        raise ContractViolation("state was computed without second derivatives")
    H, a = f.H, state.a
    P = np.linalg.solve(H[:, None], f.dH)
    Hinv_df = np.linalg.solve(H[:, None], f.df[..., None])[..., 0]
    w = np.einsum("tkij,tj->tki", P, a)
    v = np.einsum("tkij,tj->tki", f.dH, a)
    # mean curvature: -2 (d2f_kl)' H^{-1} e
    mean_curv = -2.0 * np.einsum("tkli,ti->tkl", f.d2f, a)
    # mean-variance cross: 2 (df_k' H^{-1} dH_l H^{-1} e + df_l' H^{-1} dH_k H^{-1} e)
    cross = np.einsum("tki,tli->tkl", f.df, w)
    mean_var = 2.0 * (cross + np.swapaxes(cross, 1, 2))
    # mean information: 2 df_k' H^{-1} df_l
    mean_info = 2.0 * np.einsum("tki,tli->tkl", f.df, Hinv_df)
    # residual quadratic: 2 e' H^{-1} dH_k H^{-1} dH_l H^{-1} e
    resid_quad = 2.0 * np.einsum("tki,tli->tkl", v, w)
    # residual curvature: -e' H^{-1} d2H_kl H^{-1} e
    resid_curv = -np.einsum("ti,tklij,tj->tkl", a, f.d2H, a)
    # log-det second order: -tr(H^{-1} dH_l H^{-1} dH_k) + tr(H^{-1} d2H_kl)
    logdet_cross = -np.einsum("tkij,tlji->tkl", P, P)
    Hinv = np.linalg.inv(H)
    logdet_curv = np.einsum("tij,tklji->tkl", Hinv, f.d2H)
    total = mean_curv + mean_var + mean_info + resid_quad + resid_curv + logdet_cross + logdet_curv
    return 0.5 * (total + np.swapaxes(total, 1, 2))


def score(model, theta, data, u=None):
    """``dL_n/dtheta = -1/2 sum_t dq_t/dtheta``."""
    st = likelihood_state(model, theta, data, u, order=1)
    return -0.5 * score_terms(st).sum(axis=0)


def hessian_qt(model, theta, data, u=None, t=None):
    """``d^2 q_t/dtheta dtheta'`` at observation ``t`` (1-based); all ``t`` if ``t`` is None."""
    st = likelihood_state(model, theta, data, u, order=2)
    Hq = hessian_terms(st)
    if t is None:
        return Hq
    if not 1 <= t <= st.n:
        raise ContractViolation(f"t must lie in 1..{st.n}")
    return Hq[t - 1]


def hessian(model, theta, data, u=None):
    """``d^2 L_n / dtheta dtheta' = -1/2 sum_t d^2 q_t``."""
    return -0.5 * hessian_qt(model, theta, data, u).sum(axis=0)


# --------------------------------------------------------------------------
# Maximization
# --------------------------------------------------------------------------


@dataclass
class FitResult:
    """Outcome of maximizing the quasi-likelihood over the parameter box."""

    theta_hat: ParamVector
    objective: float
    iterations: int
    converged: bool
    grad_norm: float
    n: int
    optimizer: str
    start_index: int
    message: str = ""
    starts: list = field(default_factory=list)
    score_t: Optional[np.ndarray] = None

    def to_dict(self):
        return {
            "theta_hat": self.theta_hat.values.tolist(),
            "names": list(self.theta_hat.names or ()),
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "grad_norm": self.grad_norm,
            "n": self.n,
            "optimizer": self.optimizer,
            "start_index": self.start_index,
            "message": self.message,
            "starts": self.starts,
        }


_FAIL = (A2Violation, NumericError, np.linalg.LinAlgError, FloatingPointError, OverflowError)


class _Objective:
    """``-L_n / n`` and its gradient with caching; invalid points evaluate to +inf."""

    def __init__(self, model, X, u):
        self.model, self.X, self.u = model, X, u
        self.n = X.shape[0]
        self._cache = {}
        self.evals = 0

    def _eval(self, theta, order):
        key = (theta.tobytes(), order)
        if key not in self._cache:
            self.evals += 1
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    st = likelihood_state(self.model, theta, self.X, self.u, order=order)
                    val = -st.loglik / self.n
                    grad = 0.5 * score_terms(st).mean(axis=0) if order >= 1 else None
                if not np.isfinite(val) or (grad is not None and not np.all(np.isfinite(grad))):
                    raise NumericError("non-finite objective")
                self._cache = {key: (val, grad)}
            except _FAIL:
                self._cache = {key: (np.inf, np.zeros(self.model.d) if order >= 1 else None)}
        return self._cache[key]

    def value(self, theta):
        return self._eval(np.asarray(theta, dtype=float), 0)[0]

    def value_and_grad(self, theta):
        return self._eval(np.asarray(theta, dtype=float), 1)

    def newton_pieces(self, theta):
        st = likelihood_state(self.model, theta, self.X, self.u, order=2)
        return -st.loglik / self.n, 0.5 * score_terms(st).mean(axis=0), 0.5 * hessian_terms(st).mean(axis=0)


def projected_gradient(theta, grad, lower, upper, eps=1e-12):
    """Gradient of a minimization objective with components blocked by active bounds zeroed."""
    pg = np.array(grad, dtype=float)
    at_lo = theta <= lower + eps
    at_hi = theta >= upper - eps
    pg[(at_lo & (pg > 0)) | (at_hi & (pg < 0))] = 0.0
    return pg


def _newton_polish(obj, theta, lower, upper, tol, max_steps=20):
    """Projected Newton steps on the free coordinates using the analytic Hessian."""
    steps = 0
    for _ in range(max_steps):
        try:
            val, g, Hs = obj.newton_pieces(theta)
        except _FAIL:
            break
        pg = projected_gradient(theta, g, lower, upper)
        if np.max(np.abs(pg)) < tol:
            break
        free = pg != 0
        idx = np.flatnonzero(free | ((theta > lower) & (theta < upper)))
        Hf = Hs[np.ix_(idx, idx)]
        try:
            np.linalg.cholesky(Hf)
        except np.linalg.LinAlgError:
            break
        step = np.zeros_like(theta)
        step[idx] = -np.linalg.solve(Hf, g[idx])
        lam, improved = 1.0, False
        while lam > 1e-6:
            cand = np.clip(theta + lam * step, lower, upper)
            cv = obj.value(cand)
            if cv <= val:
                theta, improved = cand, True
                break
            lam *= 0.5
        steps += 1
        if not improved or np.max(np.abs(lam * step)) < STEP_TOL:
            break
    return theta, steps


def _starts(model, n_starts, seed, init):
    lo, hi = np.asarray(model.lower), np.asarray(model.upper)
    pts = []
    if init is not None:
        pts.append(np.clip(as_theta(init, model.d), lo, hi))
    pts.append(np.clip(model.start_center(), lo, hi))
    if n_starts > 1:
        gen = _rng.make_generator(seed, 0x7374617274)
        U = _rng.open_uniform(gen, (n_starts - 1, model.d))
        pts.extend(lo + U * (hi - lo))
    return pts


def fit(model, data, optimizer="auto", starts=5, seed=0, tol=None, max_iter=MAX_ITER, u=None, init=None,
        polish=True, options=None):
    """Maximize the quasi-likelihood over the parameter box.

    ``optimizer`` is ``"bfgs_projected"`` (L-BFGS-B with the analytic score),
    ``"nelder_mead"`` (bounded simplex search) or ``"auto"`` (simplex for
    finite-difference models, quasi-Newton otherwise). Starts are the
    model's start centre (the box centre unless the family overrides it) plus
    ``starts - 1`` seeded uniform points (``init`` is prepended when
    given); the best objective wins, ties broken by the lowest start index.
    """
    if options:
        opts = dict(options)
        optimizer = opts.pop("optimizer", optimizer)
        starts = opts.pop("starts", starts)
        seed = opts.pop("seed", seed)
        tol = opts.pop("tol", tol)
        max_iter = opts.pop("max_iter", max_iter)
        u = opts.pop("u", u)
        init = opts.pop("init", init)
        polish = opts.pop("polish", polish)
        if opts:
            raise ContractViolation(f"unknown fit options {sorted(opts)}")
    X = as_data(data, model.m)
    n = X.shape[0]
    if optimizer == "auto":
        optimizer = "nelder_mead" if isinstance(model, FunctionalModel) else "bfgs_projected"
    if optimizer not in ("bfgs_projected", "nelder_mead"):
        raise ContractViolation(f"unknown optimizer {optimizer!r}")
    lo, hi = np.asarray(model.lower, float), np.asarray(model.upper, float)
    obj = _Objective(model, X, u)
    results = []
    for idx, x0 in enumerate(_starts(model, int(starts), seed, init)):
        if not np.isfinite(obj.value(x0)):
            results.append({"start": idx, "status": "invalid_start", "objective": None})
            continue
        rec = _run_start(obj, x0, lo, hi, optimizer, tol, max_iter, polish)
        rec["start"] = idx
        results.append(rec)
    ok = [r for r in results if r.get("theta") is not None and np.isfinite(r["value"])]
    if not ok:
        raise UnfittableError("every start violates A2 (non positive-definite conditional covariance)")
    best_val = min(r["value"] for r in ok)
    best = next(r for r in ok if r["value"] <= best_val + 1e-10)
    theta_hat = np.clip(model.canonical(best["theta"]), lo, hi)
    val, g = obj.value_and_grad(theta_hat)
    pg = projected_gradient(theta_hat, g, lo, hi)
    gnorm = float(np.linalg.norm(pg))
    loglik = -val * n
    tol_eff = _tol(tol, loglik, n)
    converged = bool(best["success"] and gnorm < tol_eff) if optimizer == "bfgs_projected" else bool(best["success"])
    st = likelihood_state(model, theta_hat, X, u, order=1)
    summary = [{k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in r.items()} for r in results]
    return FitResult(
        theta_hat=ParamVector(theta_hat, lo, hi, model.param_names), objective=loglik,
        iterations=int(best["iterations"]), converged=converged, grad_norm=gnorm, n=n, optimizer=optimizer,
        start_index=int(best["start"]), message=str(best["message"]), starts=summary, score_t=score_terms(st),
    )


def _tol(tol, loglik, n):
    return tol if tol is not None else 1e-6 * (1.0 + abs(loglik) / n)


def _run_start(obj, x0, lo, hi, optimizer, tol, max_iter, polish):
    if optimizer == "nelder_mead":
        res = optimize.minimize(obj.value, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                                options={"maxiter": max_iter * len(x0), "xatol": STEP_TOL, "fatol": 1e-12,
                                         "adaptive": len(x0) > 3})
        return {"theta": res.x, "value": float(res.fun), "iterations": int(res.nit), "success": bool(res.success),
                "message": str(res.message)}
    gtol = _tol(tol, -obj.value(x0) * obj.n, obj.n)
    res = optimize.minimize(obj.value_and_grad, x0, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                            options={"maxiter": max_iter, "gtol": gtol * 0.1, "ftol": 1e-15, "maxcor": 20})
    theta, nit, msg = np.clip(res.x, lo, hi), int(res.nit), str(res.message)
    if polish and np.isfinite(obj.value(theta)):
        theta, extra = _newton_polish(obj, theta, lo, hi, gtol * 0.1)
        nit += extra
    val, g = obj.value_and_grad(theta)
    pg = projected_gradient(theta, g, lo, hi)
    success = bool(np.isfinite(val) and np.linalg.norm(pg) < _tol(tol, -val * obj.n, obj.n))
    return {"theta": theta, "value": float(val), "iterations": nit, "success": success, "message": msg}


# --------------------------------------------------------------------------
# scikit-learn style estimator
# --------------------------------------------------------------------------


class QMLE(BaseEstimator):
    """Quasi-maximum-likelihood estimator for a causal model.

    ``fit(X)`` maximizes the quasi-likelihood, ``score(X)`` returns the
    average quasi-log-likelihood per observation at the fitted parameter and
    ``transform(X)`` returns the standardized residuals
    ``M_t^{-1}(X_t - f_t)`` (lower-triangular Cholesky ``M_t``).
    """

    def __init__(self, model=None, optimizer="auto", starts=5, seed=0, tol=None, max_iter=MAX_ITER, u=None,
                 init=None, polish=True):
        self.model = model
        self.optimizer = optimizer
        self.starts = starts
        self.seed = seed
        self.tol = tol
        self.max_iter = max_iter
        self.u = u
        self.init = init
        self.polish = polish

    def _check(self, X):
        if self.model is None:
            raise ContractViolation("QMLE needs a model")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and self.model.m == 1:
            X = X[:, None]
        return check_array(X, ensure_min_samples=1)

    def fit(self, X, y=None):
        X = self._check(X)
        self.fit_result_ = fit(self.model, X, self.optimizer, self.starts, self.seed, self.tol, self.max_iter,
                               self.u, self.init, self.polish)
        self.theta_ = self.fit_result_.theta_hat.values
        self.n_features_in_ = X.shape[1]
        return self

    def score(self, X, y=None):
        check_is_fitted(self, "theta_")
        X = self._check(X)
        return quasi_loglik(self.model, self.theta_, X, self.u) / X.shape[0]

    def transform(self, X):
        check_is_fitted(self, "theta_")
        X = self._check(X)
        st = likelihood_state(self.model, self.theta_, X, self.u)
        return np.linalg.solve(st.chol, st.resid[..., None])[..., 0]

    def covariance(self, X, F_method="hessian_avg", G_method="score_outer", innov=None):
        """Sandwich covariance at the fitted parameter (see :mod:`causalqmle.asymptotics`)."""
        from .asymptotics import estimate_F, estimate_G, sandwich

        check_is_fitted(self, "theta_")
        X = self._check(X)
        F = estimate_F(self.model, self.theta_, X, F_method, u=self.u)
        G = estimate_G(self.model, self.theta_, X, G_method, u=self.u, innov=innov)
        return sandwich(F, G, n=X.shape[0])
