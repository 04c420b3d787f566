"""Univariate conditionally heteroskedastic families: ARCH(infinity), GARCH(q, q'), TARCH."""
from __future__ import annotations

import numpy as np
from numba import njit

from ..core import CausalModel, Decay, Filtered, as_theta
from ..exceptions import ContractViolation, DivergenceError
from . import _recursion as rec
from ._lags import lagged_sum, shifted
from .expansions import ArchInfCoeffs, companion_radius, default_expansion_length


def _h_route_decay_to_m(dec):
    """Decay of ``sqrt(a_j)`` given the decay of ``a_j``."""
    if dec.kind == "geometric":
        return Decay.geometric(np.sqrt(dec.rate))
    if dec.kind == "polynomial":
        return Decay.polynomial(dec.rate / 2, np.sqrt(dec.scale), dec.length, dec.exact)
    return dec


# --------------------------------------------------------------------------
# ARCH(infinity) coefficient maps theta -> (b0, b_1, b_2, ...)
# --------------------------------------------------------------------------


class FiniteArchMap:
    """ARCH(q): ``theta = (b0, b_1, ..., b_q)``."""

    kind = "finite"

    def __init__(self, q):
        self.q = int(q)
        self.param_names = ("b0",) + tuple(f"b{j}" for j in range(1, self.q + 1))
        self.lower = np.r_[1e-4, np.zeros(self.q)]
        self.upper = np.r_[10.0, np.ones(self.q)]
        self.max_lag = self.q

    def coefficients(self, theta, J, order=0):
        d = self.q + 1
        J = min(J, self.q)
        b = theta[1 : J + 1].copy()
        db0 = np.zeros(d)
        db0[0] = 1.0
        db = np.zeros((d, J))
        db[1 : J + 1, :] = np.eye(J) if J else db[1:1]
        return theta[0], b, db0, db, np.zeros((d, d)), np.zeros((d, d, J))

    def decay(self, theta):
        return Decay.finite(self.q)

    def structure(self):
        return {"lags": self.q}


class PowerLawArchMap:
    """``b_j = beta * j**-ell`` with fixed exponent; ``theta = (b0, beta)``."""

    kind = "power_law"

    def __init__(self, ell):
        self.ell = float(ell)
        if self.ell <= 1:
            raise ContractViolation("power-law exponent must exceed 1 for summability")
        self.param_names = ("b0", "beta")
        self.lower = np.array([1e-4, 0.0])
        self.upper = np.array([10.0, 1.0])
        self.max_lag = None

    def coefficients(self, theta, J, order=0):
        j = np.arange(1, J + 1, dtype=float)
        w = j ** -self.ell
        db = np.zeros((2, J))
        db[1] = w
        return theta[0], theta[1] * w, np.array([1.0, 0.0]), db, np.zeros((2, 2)), np.zeros((2, 2, J))

    def decay(self, theta):
        return Decay.polynomial(self.ell, max(theta[1], 0.0), exact=True)

    def structure(self):
        return {"ell": self.ell}


class GarchExpansionMap:
    """ARCH(infinity) expansion of GARCH(q, q') parameterized by ``(c0, c_1..c_q, d_1..d_q')``."""

    kind = "garch_expansion"

    def __init__(self, q, qp, J=500):
        self.q, self.qp, self.J = int(q), int(qp), int(J)
        self.param_names = ("c0",) + tuple(f"c{j}" for j in range(1, self.q + 1)) + tuple(
            f"d{j}" for j in range(1, self.qp + 1))
        self.lower = np.r_[1e-4, np.zeros(self.q), np.zeros(self.qp)]
        self.upper = np.r_[10.0, np.ones(self.q), np.full(self.qp, 0.99 / max(self.qp, 1))]
        self.max_lag = self.J

    def coefficients(self, theta, J, order=0):
        q, qp = self.q, self.qp
        d = 1 + q + qp
        c, dd = theta[1 : 1 + q], theta[1 + q :]
        S = dd.sum()
        if S >= 1:
            raise DivergenceError("sum of d_j >= 1: expansion intercept undefined")
        J = min(J, self.J)
        b = np.zeros(J + 1)
        db = np.zeros((d, J + 1))
        d2b = np.zeros((d, d, J + 1)) if order >= 2 else None
        for i in range(1, J + 1):
            if i <= q:
                b[i] = c[i - 1]
                db[i, i] = 1.0
            for k in range(1, min(i, qp) + 1):
                pk = q + k
                b[i] += dd[k - 1] * b[i - k]
                db[:, i] += dd[k - 1] * db[:, i - k]
                db[pk, i] += b[i - k]
                if order >= 2:
                    d2b[:, :, i] += dd[k - 1] * d2b[:, :, i - k]
                    d2b[pk, :, i] += db[:, i - k]
                    d2b[:, pk, i] += db[:, i - k]
        b0 = theta[0] / (1 - S)
        db0 = np.zeros(d)
        db0[0] = 1 / (1 - S)
        db0[1 + q :] = theta[0] / (1 - S) ** 2
        d2b0 = np.zeros((d, d))
        d2b0[0, 1 + q :] = d2b0[1 + q :, 0] = 1 / (1 - S) ** 2
        d2b0[1 + q :, 1 + q :] = 2 * theta[0] / (1 - S) ** 3
        if d2b is None:
            d2b = np.zeros((d, d, J + 1))
        return b0, b[1:], db0, db[:, 1:], d2b0, d2b[:, :, 1:]

    def decay(self, theta):
        rate = companion_radius([np.array([[x]]) for x in theta[1 + self.q :]])
        return Decay.geometric(rate) if rate > 0 else Decay.finite(self.q)

    def structure(self):
        return {"q": self.q, "qp": self.qp, "J": self.J}


class ArchInfModel(CausalModel):
    """``X_t = sigma_t xi_t``, ``sigma_t^2 = b0(theta) + sum_j b_j(theta) X_{t-j}^2``."""

    family = "arch_inf"
    variance_form = "H"

    def __init__(self, cmap, lower=None, upper=None, theta0=None):
        self.cmap = cmap
        super().__init__(1, 1, cmap.param_names, cmap.lower if lower is None else lower,
                         cmap.upper if upper is None else upper, theta0=theta0)

    def structure(self):
        return {"map": self.cmap.kind, **self.cmap.structure()}

    def _lags_for(self, n):
        J = max(n - 1, 0)
        if self.cmap.max_lag is not None:
            J = min(J, self.cmap.max_lag)
        return J

    def filter(self, theta, X, order=0):
        theta = as_theta(theta, self.d)
        X = np.asarray(X, dtype=float).reshape(-1, 1)
        n, d = X.shape[0], self.d
        J = self._lags_for(n)
        b0, b, db0, db, d2b0, d2b = self.cmap.coefficients(theta, max(J, 1), order)
        x2 = X[:, 0] ** 2
        H = b0 + lagged_sum(x2, b[:J]) if J else np.full(n, b0)
        out = Filtered(np.zeros((n, 1)), H.reshape(n, 1, 1))
        if order >= 1:
            dH = db0[:, None] + (lagged_sum(x2[None, :], db[:, :J]) if J else 0.0)
            out.df = np.zeros((n, d, 1))
            out.dH = np.ascontiguousarray(np.broadcast_to(dH, (d, n)).T).reshape(n, d, 1, 1)
        if order >= 2:
            d2H = d2b0[:, :, None] + (lagged_sum(x2[None, None, :], d2b[:, :, :J]) if J else 0.0)
            out.d2f = np.zeros((n, d, d, 1))
            out.d2H = np.moveaxis(np.broadcast_to(d2H, (d, d, n)), -1, 0).reshape(n, d, d, 1, 1).copy()
        return out

    def predict(self, theta, history):
        theta = as_theta(theta, self.d)
        w = history.window[:, 0] if history.window.size else np.zeros(0)
        J = w.size if self.cmap.max_lag is None else min(w.size, self.cmap.max_lag)
        b0, b, *_ = self.cmap.coefficients(theta, max(J, 1))
        H = b0 + float(np.dot(b[:J], w[:J] ** 2))
        return np.zeros(1), np.array([[H]])

    def eval_M(self, theta, history):
        return np.sqrt(self.predict(as_theta(theta, self.d), history)[1])

    def coefficients(self, theta, J):
        """ARCH(infinity) record at ``theta`` truncated to ``J`` lags."""
        theta = as_theta(theta, self.d)
        b0, b, *_ = self.cmap.coefficients(theta, J)
        return ArchInfCoeffs(b0, b, self.cmap.decay(theta))

    def alpha(self, theta, which, J):
        theta = as_theta(theta, self.d)
        if which == "f":
            return np.zeros(J)
        _, b, *_ = self.cmap.coefficients(theta, J)
        b = np.r_[b, np.zeros(J - b.size)]
        return b if which == "H" else np.sqrt(np.clip(b, 0, None))

    def decay(self, theta, which):
        theta = as_theta(theta, self.d)
        if which == "f":
            return Decay.finite(0)
        dec = self.cmap.decay(theta)
        return dec if which == "H" else _h_route_decay_to_m(dec)

    def simulate(self, theta, xi, lag_truncation):
        theta = as_theta(theta, self.d)
        N = xi.shape[0]
        L = int(lag_truncation)
        if self.cmap.max_lag is not None:
            L = min(L, self.cmap.max_lag)
        b0, b, *_ = self.cmap.coefficients(theta, max(L, 1))
        rev = b[:L][::-1].copy()
        x2 = np.zeros(N + L)
        X = np.zeros((N, 1))
        for t in range(N):
            s2 = b0 + rev @ x2[t : t + L]
            x = np.sqrt(s2) * xi[t, 0]
            if not np.isfinite(x):
                raise DivergenceError(f"simulated path exploded at step {t + 1}")
            X[t, 0] = x
            x2[t + L] = x * x
        return X


# --------------------------------------------------------------------------
# GARCH(q, q')
# --------------------------------------------------------------------------


@njit(cache=True)
def _garch_simulate(c0, c, dcoef, b0, xi):
    n = xi.shape[0]
    q, qp = c.shape[0], dcoef.shape[0]
    x2 = np.zeros(n)
    s2 = np.zeros(n)
    out = np.empty(n)
    for t in range(n):
        v = c0
        for i in range(1, q + 1):
            if t - i >= 0:
                v += c[i - 1] * x2[t - i]
        for j in range(1, qp + 1):
            v += dcoef[j - 1] * (s2[t - j] if t - j >= 0 else b0)
        s2[t] = v
        out[t] = np.sqrt(v) * xi[t]
        x2[t] = out[t] * out[t]
    return out


def _unit(d, k, shape=(1, 1)):
    e = np.zeros((d,) + shape)
    e[(k,) + (0,) * len(shape)] = 1.0
    return e


class GarchModel(CausalModel):
    """``sigma_t^2 = c0 + sum_i c_i X_{t-i}^2 + sum_j d_j sigma_{t-j}^2``.

    The pre-sample variance is ``c0 / (1 - sum d_j)`` with ``X = 0`` before
    the sample, which reproduces the ARCH(infinity) filter with zero past.
    """

    family = "garch"
    variance_form = "H"

    def __init__(self, q, qp, lower=None, upper=None, theta0=None):
        self.q, self.qp = int(q), int(qp)
        if self.q < 1:
            raise ContractViolation("GARCH needs q >= 1")
        names = ("c0",) + tuple(f"c{j}" for j in range(1, self.q + 1)) + tuple(f"d{j}" for j in range(1, self.qp + 1))
        lo = np.r_[1e-4, np.zeros(self.q), np.zeros(self.qp)] if lower is None else lower
        hi = np.r_[10.0, np.ones(self.q), np.full(self.qp, 0.99 / max(self.qp, 1))] if upper is None else upper
        super().__init__(1, 1, names, lo, hi, theta0=theta0)

    def structure(self):
        return {"q": self.q, "qp": self.qp}

    def split(self, theta):
        return theta[0], theta[1 : 1 + self.q], theta[1 + self.q :]

    def filter(self, theta, X, order=0):
        theta = as_theta(theta, self.d)
        X = np.asarray(X, dtype=float).reshape(-1, 1)
        n, d = X.shape[0], self.d
        c0, c, dd = self.split(theta)
        a = rec.Jet.linear([c0], _unit(d, 0, (1,)))
        As = [rec.Jet.linear([[c[i]]], _unit(d, 1 + i)) for i in range(self.q)]
        Bs = [rec.Jet.linear([[dd[j]]], _unit(d, 1 + self.q + j)) for j in range(self.qp)]
        y0 = rec.stationary_level(a, Bs)
        y, dy, d2y = rec.run(a, As, Bs, y0, X ** 2, order=order)
        out = Filtered(np.zeros((n, 1)), y.reshape(n, 1, 1))
        if order >= 1:
            out.df = np.zeros((n, d, 1))
            out.dH = dy.reshape(n, d, 1, 1)
        if order >= 2:
            out.d2f = np.zeros((n, d, d, 1))
            out.d2H = d2y.reshape(n, d, d, 1, 1)
        return out

    def eval_M(self, theta, history):
        return np.sqrt(self.predict(as_theta(theta, self.d), history)[1])

    def _b(self, theta, J):
        _, c, dd = self.split(theta)
        b = np.zeros(J + 1)
        for i in range(1, J + 1):
            acc = c[i - 1] if i <= self.q else 0.0
            for k in range(1, min(i, self.qp) + 1):
                acc += dd[k - 1] * b[i - k]
            b[i] = acc
        return b[1:]

    def alpha(self, theta, which, J):
        theta = as_theta(theta, self.d)
        if which == "f":
            return np.zeros(J)
        b = self._b(theta, J)
        return b if which == "H" else np.sqrt(np.clip(b, 0, None))

    def decay(self, theta, which):
        theta = as_theta(theta, self.d)
        if which == "f":
            return Decay.finite(0)
        rate = companion_radius([np.array([[x]]) for x in self.split(theta)[2]])
        dec = Decay.geometric(rate) if rate > 0 else Decay.finite(self.q)
        return dec if which == "H" else _h_route_decay_to_m(dec)

    def simulate(self, theta, xi, lag_truncation=None):
        theta = as_theta(theta, self.d)
        c0, c, dd = self.split(theta)
        S = dd.sum()
        if S >= 1:
            raise DivergenceError("sum of d_j >= 1")
        out = _garch_simulate(c0, np.ascontiguousarray(c), np.ascontiguousarray(dd), c0 / (1 - S),
                              np.ascontiguousarray(xi[:, 0]))
        bad = np.flatnonzero(~np.isfinite(out))
        if bad.size:
            raise DivergenceError(f"simulated path exploded at step {bad[0] + 1}")
        return out.reshape(-1, 1)

    def default_lag_truncation(self, theta):
        return default_expansion_length(self.decay(theta, "H").rate if self.qp else 0.0)


# --------------------------------------------------------------------------
# TARCH(q)
# --------------------------------------------------------------------------


class TarchModel(CausalModel):
    """``sigma_t = b0 + sum_j b+_j max(X_{t-j}, 0) - b-_j min(X_{t-j}, 0)``, ``X_t = sigma_t xi_t``."""

    family = "tarch"
    variance_form = "M"

    def __init__(self, q, lower=None, upper=None, theta0=None):
        self.q = int(q)
        names = ("b0",) + tuple(f"bplus{j}" for j in range(1, self.q + 1)) + tuple(
            f"bminus{j}" for j in range(1, self.q + 1))
        lo = np.r_[1e-4, np.zeros(2 * self.q)] if lower is None else lower
        hi = np.r_[10.0, np.ones(2 * self.q)] if upper is None else upper
        super().__init__(1, 1, names, lo, hi, theta0=theta0)

    def structure(self):
        return {"q": self.q}

    def _sigma(self, theta, X):
        n = X.shape[0]
        q = self.q
        pos = np.maximum(X[:, 0], 0.0)
        neg = np.maximum(-X[:, 0], 0.0)
        dsig = np.zeros((n, self.d))
        dsig[:, 0] = 1.0
        for j in range(1, q + 1):
            dsig[:, j] = shifted(pos, j)
            dsig[:, q + j] = shifted(neg, j)
        return dsig @ theta, dsig

    def filter(self, theta, X, order=0):
        theta = as_theta(theta, self.d)
        X = np.asarray(X, dtype=float).reshape(-1, 1)
        n, d = X.shape[0], self.d
        sig, dsig = self._sigma(theta, X)
        out = Filtered(np.zeros((n, 1)), (sig ** 2).reshape(n, 1, 1))
        if order >= 1:
            out.df = np.zeros((n, d, 1))
            out.dH = (2 * sig[:, None] * dsig).reshape(n, d, 1, 1)
        if order >= 2:
            out.d2f = np.zeros((n, d, d, 1))
            out.d2H = (2 * dsig[:, :, None] * dsig[:, None, :]).reshape(n, d, d, 1, 1)
        return out

    def predict(self, theta, history):
        theta = as_theta(theta, self.d)
        w = history.window[: self.q, 0] if history.window.size else np.zeros(0)
        L = w.size
        bp, bm = theta[1 : 1 + self.q], theta[1 + self.q :]
        sig = theta[0] + bp[:L] @ np.maximum(w, 0) + bm[:L] @ np.maximum(-w, 0)
        return np.zeros(1), np.array([[sig * sig]])

    def eval_M(self, theta, history):
        theta = as_theta(theta, self.d)
        return np.sqrt(self.predict(theta, history)[1])

    def _M_from(self, theta, history, H):
        return np.sqrt(H)

    def alpha(self, theta, which, J):
        theta = as_theta(theta, self.d)
        if which == "f":
            return np.zeros(J)
        if which == "H":
            raise ContractViolation("TARCH is checked through M; no squared-history coefficients")
        a = np.maximum(theta[1 : 1 + self.q], theta[1 + self.q :])
        return np.r_[a, np.zeros(max(J - self.q, 0))][:J]

    def decay(self, theta, which):
        return Decay.finite(0 if which == "f" else self.q)
