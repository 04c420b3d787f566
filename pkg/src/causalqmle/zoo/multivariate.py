"""Multivariate families: BEKK / multivariate ARCH, NLARCH, threshold AR, ARMA-GARCH."""
from __future__ import annotations

import numpy as np

from ..core import CausalModel, Decay, Filtered, as_theta, symmetrize
from ..exceptions import ContractViolation, DivergenceError
from . import _recursion as rec
from ._lags import shifted
from .expansions import companion_radius, power_series_quotient


class _Layout:
    """Flat parameter layout: named blocks of matrix/vector coefficients."""

    def __init__(self):
        self.names = []
        self.lower = []
        self.upper = []
        self.blocks = {}

    def add(self, key, cells, label, lo, hi):
        """``cells`` is a list of index tuples into the block's array."""
        start = len(self.names)
        for c in cells:
            self.names.append(f"{label}[{','.join(str(i) for i in c)}]" if c else label)
            lo_c = lo(c) if callable(lo) else lo
            hi_c = hi(c) if callable(hi) else hi
            self.lower.append(lo_c)
            self.upper.append(hi_c)
        self.blocks[key] = (start, cells)

    def jet(self, key, shape, theta):
        """Block value with its (constant) derivative tensor; second derivative zero."""
        start, cells = self.blocks[key]
        d = len(self.names)
        v = np.zeros(shape)
        d1 = np.zeros((d,) + shape)
        for k, c in enumerate(cells):
            v[c] = theta[start + k]
            d1[(start + k,) + c] = 1.0
        return rec.Jet.linear(v, d1)

    def value(self, key, shape, theta):
        start, cells = self.blocks[key]
        v = np.zeros(shape)
        for k, c in enumerate(cells):
            v[c] = theta[start + k]
        return v


def _full(m):
    return [(i, j) for i in range(m) for j in range(m)]


def _lower(m):
    return [(i, j) for i in range(m) for j in range(i + 1)]


def _diag_cells(m):
    return [(i,) for i in range(m)]


# --------------------------------------------------------------------------
# BEKK(q, q') and multivariate ARCH(q)
# --------------------------------------------------------------------------


class BekkModel(CausalModel):
    """``H_t = C0 C0' + sum_i C_i X_{t-i} X_{t-i}' C_i' + sum_j D_j H_{t-j} D_j'``.

    ``theta`` = lower triangle of ``C0`` (row-major), then each ``C_i`` and each
    ``D_j`` flattened row-major. The pre-sample ``vec H`` is the stationary
    level ``(I - sum D_j (x) D_j)^{-1} vec(C0 C0')`` with ``X = 0`` before the
    sample, matching the multivariate ARCH(infinity) filter with zero past.
    """

    family = "bekk"
    variance_form = "M"

    def __init__(self, m, q, qp, lower=None, upper=None, theta0=None):
        self.q, self.qp = int(q), int(qp)
        m = int(m)
        lay = _Layout()
        lay.add("C0", _lower(m), "C0", lambda c: 1e-3 if c[0] == c[1] else -10.0, 10.0)
        for i in range(1, self.q + 1):
            lay.add(f"C{i}", _full(m), f"C{i}", -1.0, 1.0)
        for j in range(1, self.qp + 1):
            lay.add(f"D{j}", _full(m), f"D{j}", -1.0, 1.0)
        self.layout = lay
        super().__init__(m, m, lay.names, lay.lower if lower is None else lower,
                         lay.upper if upper is None else upper, theta0=theta0)

    def structure(self):
        return {"q": self.q, "qp": self.qp}

    def _sign_blocks(self):
        return [f"C{i}" for i in range(1, self.q + 1)] + [f"D{j}" for j in range(1, self.qp + 1)]

    def canonical(self, theta):
        """``C_i`` and ``-C_i`` (likewise ``D_j``) give the same ``H``: make each block's first nonzero entry positive."""
        theta = np.array(as_theta(theta, self.d), dtype=float)
        for key in self._sign_blocks():
            start, cells = self.layout.blocks[key]
            block = theta[start:start + len(cells)]
            nz = np.flatnonzero(block)
            if nz.size and block[nz[0]] < 0:
                theta[start:start + len(cells)] = -block
        return theta

    def start_center(self):
        """Box centre with the leading entry of each ``C_i``/``D_j`` moved off the ``C = D = 0`` saddle."""
        theta = 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))
        for key in self._sign_blocks():
            start, _ = self.layout.blocks[key]
            theta[start] = 0.5 * (max(self.lower[start], 0.0) + self.upper[start])
        return theta

    def matrices(self, theta):
        """``(C0, [C_i], [D_j])`` at ``theta``."""
        theta = as_theta(theta, self.d)
        sh = (self.m, self.m)
        lay = self.layout
        return (lay.value("C0", sh, theta), [lay.value(f"C{i}", sh, theta) for i in range(1, self.q + 1)],
                [lay.value(f"D{j}", sh, theta) for j in range(1, self.qp + 1)])

    def filter(self, theta, X, order=0):
        theta = as_theta(theta, self.d)
        X = np.asarray(X, dtype=float).reshape(-1, self.m)
        n, m, d = X.shape[0], self.m, self.d
        sh = (m, m)
        lay = self.layout
        a = rec.outer_square(lay.jet("C0", sh, theta))
        As = [rec.kron_square(lay.jet(f"C{i}", sh, theta)) for i in range(1, self.q + 1)]
        Bs = [rec.kron_square(lay.jet(f"D{j}", sh, theta)) for j in range(1, self.qp + 1)]
        y0 = rec.stationary_level(a, Bs)
        z = np.einsum("ti,tj->tij", X, X).reshape(n, m * m)
        y, dy, d2y = rec.run(a, As, Bs, y0, z, order=order)
        out = Filtered(np.zeros((n, m)), symmetrize(y.reshape(n, m, m)))
        if order >= 1:
            out.df = np.zeros((n, d, m))
            out.dH = symmetrize(dy.reshape(n, d, m, m))
        if order >= 2:
            out.d2f = np.zeros((n, d, d, m))
            out.d2H = symmetrize(d2y.reshape(n, d, d, m, m))
        return out

    def starred(self, theta, J):
        """``B_1*, ..., B_J*`` of the multivariate ARCH(infinity) expansion (no validation)."""
        C0, Cs, Ds = self.matrices(theta)
        k = self.m ** 2
        if not Cs:
            return [np.zeros((k, k)) for _ in range(J)]
        return power_series_quotient([np.kron(c, c) for c in Cs], [np.kron(x, x) for x in Ds], J)

    def alpha(self, theta, which, J):
        if which == "f":
            return np.zeros(J)
        if which == "H":
            raise ContractViolation("BEKK is checked through M")
        return np.array([np.sqrt(np.linalg.norm(B, 2)) for B in self.starred(theta, J)])

    def decay(self, theta, which):
        if which == "f":
            return Decay.finite(0)
        _, _, Ds = self.matrices(theta)
        rate = companion_radius([np.kron(x, x) for x in Ds])
        if Ds and rate > 0:
            return Decay.geometric(np.sqrt(rate))
        return Decay.finite(self.q)

    def simulate(self, theta, xi, lag_truncation=None):
        C0, Cs, Ds = self.matrices(theta)
        m = self.m
        k = m * m
        S = np.eye(k) - sum((np.kron(x, x) for x in Ds), np.zeros((k, k)))
        H0 = np.linalg.solve(S, (C0 @ C0.T).reshape(k)).reshape(m, m)
        N = xi.shape[0]
        X = np.zeros((N, m))
        H = np.empty((N, m, m))
        base = C0 @ C0.T
        for t in range(N):
            h = base.copy()
            for i, C in enumerate(Cs, start=1):
                if t - i >= 0:
                    v = C @ X[t - i]
                    h += np.outer(v, v)
            for j, D in enumerate(Ds, start=1):
                h += D @ (H[t - j] if t - j >= 0 else H0) @ D.T
            h = symmetrize(h)
            H[t] = h
            try:
                L = np.linalg.cholesky(h)
            except np.linalg.LinAlgError:
                raise DivergenceError(f"conditional covariance lost positive definiteness at step {t + 1}")
            X[t] = L @ xi[t]
            if not np.all(np.isfinite(X[t])):
                raise DivergenceError(f"simulated path exploded at step {t + 1}")
        return X


# --------------------------------------------------------------------------
# NLARCH with threshold lags (diagonal M)
# --------------------------------------------------------------------------


class NlarchModel(CausalModel):
    """``M_t = diag(sigma_t)``, ``sigma_t = B0 + sum_j P_j max(X_{t-j}, 0) + N_j max(-X_{t-j}, 0)``.

    ``theta`` = ``B0``, then ``P_1..P_q``, then ``N_1..N_q`` (row-major). With
    ``m = 1`` this is scalar TARCH with ``b+ = P``, ``b- = N``.
    """

    family = "nlarch"
    variance_form = "M"

    def __init__(self, m, q, lower=None, upper=None, theta0=None):
        m, self.q = int(m), int(q)
        lay = _Layout()
        lay.add("B0", _diag_cells(m), "B0", 1e-3, 10.0)
        for j in range(1, self.q + 1):
            lay.add(f"P{j}", _full(m), f"P{j}", 0.0, 1.0)
        for j in range(1, self.q + 1):
            lay.add(f"N{j}", _full(m), f"N{j}", 0.0, 1.0)
        self.layout = lay
        super().__init__(m, m, lay.names, lay.lower if lower is None else lower,
                         lay.upper if upper is None else upper, theta0=theta0)

    def structure(self):
        return {"q": self.q}

    def matrices(self, theta):
        theta = as_theta(theta, self.d)
        lay, sh = self.layout, (self.m, self.m)
        return (lay.value("B0", (self.m,), theta), [lay.value(f"P{j}", sh, theta) for j in range(1, self.q + 1)],
                [lay.value(f"N{j}", sh, theta) for j in range(1, self.q + 1)])

    def _sigma(self, theta, X):
        """``sigma (n, m)`` and its constant theta-gradient ``(n, d, m)``."""
        n, m, d = X.shape[0], self.m, self.d
        B0, Ps, Ns = self.matrices(theta)
        pos, neg = np.maximum(X, 0.0), np.maximum(-X, 0.0)
        sig = np.broadcast_to(B0, (n, m)).copy()
        dsig = np.zeros((n, d, m))
        start = self.layout.blocks["B0"][0]
        for k in range(m):
            dsig[:, start + k, k] = 1.0
        for j in range(1, self.q + 1):
            for key, mat, src in ((f"P{j}", Ps[j - 1], pos), (f"N{j}", Ns[j - 1], neg)):
                lagged = shifted(src, j)
                sig += lagged @ mat.T
                start, cells = self.layout.blocks[key]
                for idx, (a, b) in enumerate(cells):
                    dsig[:, start + idx, a] = lagged[:, b]
        return sig, dsig

    def filter(self, theta, X, order=0):
        theta = as_theta(theta, self.d)
        X = np.asarray(X, dtype=float).reshape(-1, self.m)
        n, m, d = X.shape[0], self.m, self.d
        sig, dsig = self._sigma(theta, X)
        eye = np.eye(m)
        out = Filtered(np.zeros((n, m)), (sig ** 2)[:, :, None] * eye)
        if order >= 1:
            out.df = np.zeros((n, d, m))
            out.dH = (2 * sig[:, None, :] * dsig)[..., None] * eye
        if order >= 2:
            out.d2f = np.zeros((n, d, d, m))
            out.d2H = (2 * dsig[:, :, None, :] * dsig[:, None, :, :])[..., None] * eye
        return out

    def eval_M(self, theta, history):
        return np.sqrt(self.predict(as_theta(theta, self.d), history)[1])

    def _M_from(self, theta, history, H):
        return np.sqrt(H)

    def alpha(self, theta, which, J):
        if which == "f":
            return np.zeros(J)
        if which == "H":
            raise ContractViolation("NLARCH is checked through M")
        _, Ps, Ns = self.matrices(theta)
        a = [np.linalg.norm(np.maximum(P, N), 2) for P, N in zip(Ps, Ns)]
        return np.r_[a, np.zeros(max(J - self.q, 0))][:J]

    def decay(self, theta, which):
        return Decay.finite(0 if which == "f" else self.q)


# --------------------------------------------------------------------------
# Threshold (nonlinear) AR with identity M
# --------------------------------------------------------------------------


class NlarModel(CausalModel):
    """``X_t = xi_t + A0 + sum_j P_j max(X_{t-j}, 0) + N_j min(X_{t-j}, 0)``."""

    family = "nlar"
    variance_form = "M"

    def __init__(self, m, q, lower=None, upper=None, theta0=None):
        m, self.q = int(m), int(q)
        lay = _Layout()
        lay.add("A0", _diag_cells(m), "A0", -10.0, 10.0)
        for j in range(1, self.q + 1):
            lay.add(f"P{j}", _full(m), f"P{j}", -1.0, 1.0)
        for j in range(1, self.q + 1):
            lay.add(f"N{j}", _full(m), f"N{j}", -1.0, 1.0)
        self.layout = lay
        super().__init__(m, m, lay.names, lay.lower if lower is None else lower,
                         lay.upper if upper is None else upper, theta0=theta0)

    def structure(self):
        return {"q": self.q}

    def matrices(self, theta):
        theta = as_theta(theta, self.d)
        lay, sh = self.layout, (self.m, self.m)
        return (lay.value("A0", (self.m,), theta), [lay.value(f"P{j}", sh, theta) for j in range(1, self.q + 1)],
                [lay.value(f"N{j}", sh, theta) for j in range(1, self.q + 1)])

    def filter(self, theta, X, order=0):
        theta = as_theta(theta, self.d)
        X = np.asarray(X, dtype=float).reshape(-1, self.m)
        n, m, d = X.shape[0], self.m, self.d
        A0, Ps, Ns = self.matrices(theta)
        pos, neg = np.maximum(X, 0.0), np.minimum(X, 0.0)
        f = np.broadcast_to(A0, (n, m)).copy()
        df = np.zeros((n, d, m))
        start = self.layout.blocks["A0"][0]
        for k in range(m):
            df[:, start + k, k] = 1.0
        for j in range(1, self.q + 1):
            for key, mat, src in ((f"P{j}", Ps[j - 1], pos), (f"N{j}", Ns[j - 1], neg)):
                lagged = shifted(src, j)
                f += lagged @ mat.T
                start, cells = self.layout.blocks[key]
                for idx, (a, b) in enumerate(cells):
                    df[:, start + idx, a] = lagged[:, b]
        out = Filtered(f, np.broadcast_to(np.eye(m), (n, m, m)).copy())
        if order >= 1:
            out.df = df
            out.dH = np.zeros((n, d, m, m))
        if order >= 2:
            out.d2f = np.zeros((n, d, d, m))
            out.d2H = np.zeros((n, d, d, m, m))
        return out

    def eval_M(self, theta, history):
        return np.eye(self.m)

    def _M_from(self, theta, history, H):
        return np.eye(self.m)

    def alpha(self, theta, which, J):
        if which in ("M", "H"):
            return np.zeros(J)
        _, Ps, Ns = self.matrices(theta)
        a = [np.linalg.norm(np.maximum(np.abs(P), np.abs(N)), 2) for P, N in zip(Ps, Ns)]
        return np.r_[a, np.zeros(max(J - self.q, 0))][:J]

    def decay(self, theta, which):
        return Decay.finite(self.q if which == "f" else 0)


# --------------------------------------------------------------------------
# ARMA mean with diagonal GARCH variance
# --------------------------------------------------------------------------


class ArmaGarchModel(CausalModel):
    """``Phi(L) X_t = Psi(L) eps_t``, ``eps_t = diag(h_t)^{1/2} xi_t``,
    ``h_t = C0 + sum_i C_i eps_{t-i}^2 + sum_j D_j h_{t-j}``.

    The conditional mean is ``f_t = X_t - eps_t = -sum_i Gamma_i X_{t-i}`` with
    ``I + sum Gamma_i z^i = Psi(z)^{-1} Phi(z)``; it is evaluated through the
    equivalent recursion ``f_t = sum_i (Phi_i - Psi_i) X_{t-i} + sum_j Psi_j f_{t-j}``.
    ``theta`` = ``Phi_1..Phi_s``, ``Psi_1..Psi_s'``, ``C0``, ``C_1..C_q``, ``D_1..D_q'``.
    """

    family = "arma_garch"
    variance_form = "M"

    def __init__(self, m, s, sp, q, qp, lower=None, upper=None, theta0=None):
        m = int(m)
        self.s, self.sp, self.q, self.qp = int(s), int(sp), int(q), int(qp)
        lay = _Layout()
        for i in range(1, self.s + 1):
            lay.add(f"Phi{i}", _full(m), f"Phi{i}", -1.0, 1.0)
        for j in range(1, self.sp + 1):
            lay.add(f"Psi{j}", _full(m), f"Psi{j}", -0.95, 0.95)
        lay.add("C0", _diag_cells(m), "C0", 1e-3, 10.0)
        for i in range(1, self.q + 1):
            lay.add(f"C{i}", _full(m), f"C{i}", 0.0, 1.0)
        for j in range(1, self.qp + 1):
            lay.add(f"D{j}", _full(m), f"D{j}", 0.0, 0.99)
        self.layout = lay
        super().__init__(m, m, lay.names, lay.lower if lower is None else lower,
                         lay.upper if upper is None else upper, theta0=theta0)

    def structure(self):
        return {"s": self.s, "sp": self.sp, "q": self.q, "qp": self.qp}

    def matrices(self, theta):
        theta = as_theta(theta, self.d)
        lay, sh = self.layout, (self.m, self.m)
        get = lambda prefix, cnt: [lay.value(f"{prefix}{i}", sh, theta) for i in range(1, cnt + 1)]  # noqa: E731
        return {"Phi": get("Phi", self.s), "Psi": get("Psi", self.sp), "C0": lay.value("C0", (self.m,), theta),
                "C": get("C", self.q), "D": get("D", self.qp)}

    def _mean_jets(self, theta):
        lay, sh, d, m = self.layout, (self.m, self.m), self.d, self.m
        zero = lambda: rec.Jet.linear(np.zeros(sh), np.zeros((d,) + sh))  # noqa: E731
        As = []
        for i in range(1, max(self.s, self.sp) + 1):
            A = zero()
            if i <= self.s:
                j = lay.jet(f"Phi{i}", sh, theta)
                A = rec.Jet(A.v + j.v, A.d1 + j.d1, A.d2)
            if i <= self.sp:
                j = lay.jet(f"Psi{i}", sh, theta)
                A = rec.Jet(A.v - j.v, A.d1 - j.d1, A.d2)
            As.append(A)
        Bs = [lay.jet(f"Psi{j}", sh, theta) for j in range(1, self.sp + 1)]
        a = rec.Jet.linear(np.zeros(m), np.zeros((d, m)))
        return a, As, Bs

    def filter(self, theta, X, order=0):
        theta = as_theta(theta, self.d)
        X = np.asarray(X, dtype=float).reshape(-1, self.m)
        n, m, d = X.shape[0], self.m, self.d
        sh = (m, m)
        lay = self.layout
        a, As, Bs = self._mean_jets(theta)
        f, df, d2f = rec.run(a, As, Bs, a, X, order=order)
        eps = X - f
        dz = d2z = None
        if order >= 1:
            dz = -2 * eps[:, None, :] * df
        if order >= 2:
            d2z = 2 * df[:, :, None, :] * df[:, None, :, :] - 2 * eps[:, None, None, :] * d2f
        va = lay.jet("C0", (m,), theta)
        vAs = [lay.jet(f"C{i}", sh, theta) for i in range(1, self.q + 1)]
        vBs = [lay.jet(f"D{j}", sh, theta) for j in range(1, self.qp + 1)]
        h0 = rec.stationary_level(va, vBs)
        h, dh, d2h = rec.run(va, vAs, vBs, h0, eps ** 2, dz, d2z, order=order)
        eye = np.eye(m)
        out = Filtered(f, h[:, :, None] * eye)
        if order >= 1:
            out.df = df
            out.dH = dh[..., None] * eye
        if order >= 2:
            out.d2f = d2f
            out.d2H = d2h[..., None] * eye
        return out

    def gammas(self, theta, J):
        """AR(infinity) coefficients ``Gamma_1..Gamma_J`` (no validation)."""
        mats = self.matrices(theta)
        m = self.m
        num = [-x for x in mats["Phi"]] or [np.zeros((m, m))]
        return power_series_quotient(num, mats["Psi"], J, unit_lead=True)

    def variance_coeffs(self, theta, J):
        mats = self.matrices(theta)
        if not mats["C"]:
            return [np.zeros((self.m, self.m)) for _ in range(J)]
        return power_series_quotient(mats["C"], mats["D"], J)

    def alpha(self, theta, which, J):
        if which == "f":
            return np.array([np.linalg.norm(G, 2) for G in self.gammas(theta, J)])
        if which == "H":
            raise ContractViolation("ARMA-GARCH is checked through M")
        return np.array([np.sqrt(np.linalg.norm(B, 2)) for B in self.variance_coeffs(theta, J)])

    def decay(self, theta, which):
        mats = self.matrices(theta)
        if which == "f":
            rate = companion_radius(mats["Psi"])
            return Decay.geometric(rate) if mats["Psi"] and rate > 0 else Decay.finite(max(self.s, 1))
        rate = companion_radius(mats["D"])
        return Decay.geometric(np.sqrt(rate)) if mats["D"] and rate > 0 else Decay.finite(self.q)

    def _M_from(self, theta, history, H):
        return np.sqrt(np.clip(H, 0, None))

    def eval_M(self, theta, history):
        return np.sqrt(np.clip(self.predict(as_theta(theta, self.d), history)[1], 0, None))

    def simulate(self, theta, xi, lag_truncation=None):
        mats = self.matrices(theta)
        m = self.m
        Phi, Psi, C0, Cs, Ds = mats["Phi"], mats["Psi"], mats["C0"], mats["C"], mats["D"]
        S = np.eye(m) - sum(Ds, np.zeros((m, m)))
        h0 = np.linalg.solve(S, C0)
        N = xi.shape[0]
        X = np.zeros((N, m))
        f = np.zeros((N, m))
        h = np.zeros((N, m))
        eps = np.zeros((N, m))
        for t in range(N):
            ft = np.zeros(m)
            for i, P in enumerate(Phi, start=1):
                if t - i >= 0:
                    ft += P @ X[t - i]
            for j, Q in enumerate(Psi, start=1):
                if t - j >= 0:
                    ft -= Q @ eps[t - j]
            ht = C0.copy()
            for i, C in enumerate(Cs, start=1):
                if t - i >= 0:
                    ht += C @ eps[t - i] ** 2
            for j, D in enumerate(Ds, start=1):
                ht += D @ (h[t - j] if t - j >= 0 else h0)
            if np.any(ht <= 0):
                raise DivergenceError(f"conditional variance became nonpositive at step {t + 1}")
            f[t], h[t] = ft, ht
            eps[t] = np.sqrt(ht) * xi[t]
            X[t] = ft + eps[t]
            if not np.all(np.isfinite(X[t])):
                raise DivergenceError(f"simulated path exploded at step {t + 1}")
        return X
