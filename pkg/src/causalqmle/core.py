"""Model contract for causal processes ``X_t = M(past) xi_t + f(past)``.

A model object is immutable and stateless: every evaluator takes the
parameter vector explicitly. Histories are stored most-recent-first and are
implicitly padded with zeros beyond their stored length.

The central evaluator is :meth:`CausalModel.filter`, which returns the
conditional mean ``f^t`` and covariance ``H^t`` (and optionally their first
and second parameter derivatives) for ``t = 1..n`` of a sample, each using
only ``X_{t-1}, ..., X_1`` followed by the zero sequence.
"""
from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from . import _rng
from .exceptions import A2Violation, ContractViolation, DivergenceError, NumericError

SERIES_TOL = 1e-10
MAX_SERIES_TERMS = 10**6


# --------------------------------------------------------------------------
# Parameter vectors and histories
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamVector:
    """A point of the compact parameter box ``[lower, upper]``."""

    values: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    names: Optional[tuple] = None

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float)).copy()
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), v.shape).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), v.shape).copy()
        if v.ndim != 1 or v.size < 1:
            raise ContractViolation("parameter vector must be one-dimensional with d >= 1")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractViolation("parameter bounds must be finite")
        if np.any(lo > hi):
            raise ContractViolation("lower bound exceeds upper bound")
        if np.any(v < lo) or np.any(v > hi):
            bad = np.flatnonzero((v < lo) | (v > hi))
            raise ContractViolation(f"parameter coordinates {bad.tolist()} lie outside their bounds")
        for arr in (v, lo, hi):
            arr.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def d(self):
        return self.values.size

    def replace(self, values):
        return ParamVector(values, self.lower, self.upper, self.names)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def as_theta(theta, d=None):
    """Coerce a ParamVector or array-like into a float vector of length ``d``."""
    if isinstance(theta, ParamVector):
        arr = theta.values
    else:
        arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if arr.ndim != 1:
        raise ContractViolation("theta must be a vector")
    if d is not None and arr.size != d:
        raise ContractViolation(f"theta has length {arr.size}, model expects {d}")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation("theta has non-finite entries")
    return arr


@dataclass(frozen=True)
class History:
    """Finite window of past observations, most recent first (row 0 is ``X_{t-1}``)."""

    window: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.window, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.ndim != 2:
            raise ContractViolation("history window must be a (lags, m) array")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "window", w)

    @property
    def effective_length(self):
        return self.window.shape[0]

    @property
    def m(self):
        return self.window.shape[1]

    def lag(self, j):
        """``x_j`` (1-based); zero beyond the stored window."""
        if j < 1:
            raise ContractViolation("lags are 1-based")
        if j > self.effective_length:
            return np.zeros(self.m)
        return self.window[j - 1]

    @classmethod
    def from_series(cls, X, t=None):
        """History preceding time ``t`` (1-based) of a sample ``X``; default is after the last row."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        t = X.shape[0] + 1 if t is None else t
        return cls(X[: t - 1][::-1])


def as_history(h, m):
    if not isinstance(h, History):
        h = History(np.asarray(h, dtype=float).reshape(-1, m) if np.ndim(h) == 1 and m > 1 else h)
    if h.window.size and h.m != m:
        raise ContractViolation(f"history vectors have dimension {h.m}, model expects {m}")
    return h


# --------------------------------------------------------------------------
# Innovations
# --------------------------------------------------------------------------

INNOVATION_KINDS = ("standard_gaussian", "standardized_student_t", "rademacher_product")


@dataclass(frozen=True)
class InnovationSpec:
    """Law of the i.i.d. innovations: ``p`` uncorrelated, unit-variance, symmetric components."""

    kind: str = "standard_gaussian"
    p: int = 1
    df: Optional[float] = None
    seed: int = 20240101
    mc_draws: int = 10**6

    def __post_init__(self):
        if self.kind not in INNOVATION_KINDS:
            raise ContractViolation(f"unknown innovation kind {self.kind!r}")
        if self.p < 1:
            raise ContractViolation("innovation dimension must be >= 1")
        if self.kind == "standardized_student_t":
            if self.df is None:
                raise ContractViolation("standardized_student_t needs df")
            if self.df <= 2:
                raise ContractViolation("standardized Student-t requires df > 2 (finite variance)")

    def component_abs_moment(self, r):
        """``E|xi^(k)|^r`` for a single component."""
        r = float(r)
        if self.kind == "standard_gaussian":
            return 2 ** (r / 2) * math.gamma((r + 1) / 2) / math.sqrt(math.pi)
        if self.kind == "rademacher_product":
            return 1.0
        nu = float(self.df)
        if r >= nu:
            return math.inf
        logm = (r / 2) * math.log(nu - 2) + special.gammaln((r + 1) / 2) + special.gammaln((nu - r) / 2)
        logm -= 0.5 * math.log(math.pi) + special.gammaln(nu / 2)
        return math.exp(logm)

    @property
    def m4(self):
        """Fourth moment of one component."""
        return self.component_abs_moment(4)

    def norm_moment(self, r):
        """``E||xi||^r`` for the Euclidean norm of the p-vector."""
        r = float(r)
        p = self.p
        if self.kind == "standard_gaussian":
            # ||xi|| is chi-distributed with p degrees of freedom
            return math.exp((r / 2) * math.log(2) + special.gammaln((p + r) / 2) - special.gammaln(p / 2))
        if self.kind == "rademacher_product":
            return p ** (r / 2)
        if p == 1:
            return self.component_abs_moment(r)
        if r >= self.df:
            return math.inf
        if r == 2:
            return float(p)
        if r == 4:
            return p * self.m4 + p * (p - 1)
        gen = _rng.make_generator(self.seed, 0x6D6F6D)
        xi = _rng.std_student_t(gen, self.df, (self.mc_draws, p))
        return float(np.mean(np.linalg.norm(xi, axis=1) ** r))

    def moment_root(self, r):
        """``(E||xi||^r)^(1/r)``."""
        return self.norm_moment(r) ** (1.0 / r)


# --------------------------------------------------------------------------
# Lipschitz coefficient sequences
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Decay:
    """Declared tail behaviour of a nonnegative coefficient sequence.

    ``finite``: zero beyond lag ``length``. ``geometric``: ``a_{j+1} <= rate * a_j``
    eventually. ``polynomial``: ``a_j <= scale * j**-rate``; with ``exact`` the
    bound is an equality beyond ``length`` and the tail is summed in closed form.
    """

    kind: str
    rate: float = 0.0
    scale: float = 0.0
    length: int = 0
    exact: bool = False

    def __post_init__(self):
        if self.kind not in ("finite", "geometric", "polynomial"):
            raise ContractViolation(f"unknown decay kind {self.kind!r}")

    @classmethod
    def finite(cls, length):
        return cls("finite", length=int(length))

    @classmethod
    def geometric(cls, rate):
        return cls("geometric", rate=float(rate))

    @classmethod
    def polynomial(cls, ell, scale, length=0, exact=False):
        return cls("polynomial", rate=float(ell), scale=float(scale), length=int(length), exact=exact)


def _check_terms(terms):
    terms = np.asarray(terms, dtype=float)
    if not np.all(np.isfinite(terms)):
        raise NumericError("coefficient sequence has non-finite terms")
    if np.any(terms < -1e-15):
        raise ContractViolation("Lipschitz coefficients must be nonnegative")
    return np.clip(terms, 0.0, None)


def series_sum(terms_fn, decay, tol=SERIES_TOL):
    """Sum ``sum_{j>=1} a_j`` where ``terms_fn(J)`` returns ``a_1..a_J``.

    The truncation lag is chosen from the declared decay so that the neglected
    tail is below ``tol``; geometric and exact power-law tails are added in
    closed form.
    """
    if decay.kind == "finite":
        return float(np.sum(_check_terms(terms_fn(max(decay.length, 0))))) if decay.length > 0 else 0.0
    if decay.kind == "geometric":
        rho = decay.rate
        if not (0.0 <= rho < 1.0):
            raise DivergenceError(f"geometric decay rate {rho} is not < 1; sequence not summable")
        J = 64
        while True:
            terms = _check_terms(terms_fn(J))
            last = terms[-1] if terms.size else 0.0
            tail = last * rho / (1.0 - rho)
            if tail < tol or J >= MAX_SERIES_TERMS:
                if tail >= tol:
                    raise DivergenceError("geometric series did not reach tolerance within the lag cap")
                return float(np.sum(terms) + tail)
            J *= 2
    # polynomial
    ell, C = decay.rate, decay.scale
    if ell <= 1.0:
        raise DivergenceError(f"polynomial decay exponent {ell} <= 1; sequence not summable")
    if decay.exact:
        J = max(decay.length, 1000)
        terms = _check_terms(terms_fn(J))
        return float(np.sum(terms) + C * special.zeta(ell, J + 1))
    # bound-only: truncate where the bound on the tail drops below tol
    J = int(min(MAX_SERIES_TERMS, max(decay.length, math.ceil((C / ((ell - 1) * tol)) ** (1.0 / (ell - 1))) + 1)))
    terms = _check_terms(terms_fn(J))
    tail = C * special.zeta(ell, J + 1)
    if tail >= tol:
        raise DivergenceError("polynomial tail bound exceeds tolerance at the lag cap")
    return float(np.sum(terms))


# --------------------------------------------------------------------------
# Filter output
# --------------------------------------------------------------------------


@dataclass
class Filtered:
    """Conditional moments along a sample plus optional parameter derivatives.

    Shapes: ``f (n, m)``, ``H (n, m, m)``, ``df (n, d, m)``, ``dH (n, d, m, m)``,
    ``d2f (n, d, d, m)``, ``d2H (n, d, d, m, m)``.
    """

    f: np.ndarray
    H: np.ndarray
    df: Optional[np.ndarray] = None
    dH: Optional[np.ndarray] = None
    d2f: Optional[np.ndarray] = None
    d2H: Optional[np.ndarray] = None

    def __getitem__(self, sl):
        take = lambda a: None if a is None else a[sl]  # noqa: E731
        return Filtered(take(self.f), take(self.H), take(self.df), take(self.dH), take(self.d2f), take(self.d2H))


def symmetrize(H):
    return 0.5 * (H + np.swapaxes(H, -1, -2))


# --------------------------------------------------------------------------
# Model base class
# --------------------------------------------------------------------------


class CausalModel(abc.ABC):
    """Abstract causal model.

    Subclasses implement :meth:`filter` and :meth:`alpha`/:meth:`decay`, and
    may override :meth:`predict` and :meth:`simulate` with faster paths.
    ``variance_form`` is ``"M"`` when the model is checked through Lipschitz
    bounds on ``M`` and ``"H"`` for the scalar squared-history route.
    """

    family = "abstract"
    variance_form = "M"

    def __init__(self, m, p, param_names, lower, upper, H_floor=1e-10, theta0=None):
        self.m = int(m)
        self.p = int(p)
        self.param_names = tuple(param_names)
        self.d = len(self.param_names)
        if self.d < 1:
            raise ContractViolation("model needs at least one parameter")
        if self.p < self.m:
            raise ContractViolation("M must have full rank m, which requires p >= m")
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if lo.shape != (self.d,) or hi.shape != (self.d,):
            raise ContractViolation("bounds must match parameter dimension")
        lo.setflags(write=False)
        hi.setflags(write=False)
        self.lower = lo
        self.upper = hi
        self.H_floor = float(H_floor)
        if theta0 is not None:
            theta0 = np.asarray(theta0, dtype=float)
            theta0.setflags(write=False)
        self.theta0 = theta0

    # ---- parameter helpers -------------------------------------------------

    def params(self, values=None):
        """ParamVector on this model's box (``values`` defaults to ``theta0``)."""
        v = self.theta0 if values is None else values
        return ParamVector(as_theta(v, self.d), self.lower, self.upper, self.param_names)

    def unpack(self, theta):
        """Named coefficient arrays for ``theta`` (JSON ``params`` layout)."""
        return {n: float(v) for n, v in zip(self.param_names, as_theta(theta, self.d))}

    def pack(self, params):
        return np.array([float(params[n]) for n in self.param_names])

    def structure(self):
        """Family-specific structural options needed to rebuild the model."""
        return {}

    def canonical(self, theta):
        """Representative of ``theta`` among parameters defining the same model (identity by default)."""
        return as_theta(theta, self.d)

    def start_center(self):
        """First optimizer start; the centre of the parameter box by default."""
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    # ---- evaluation --------------------------------------------------------

    @abc.abstractmethod
    def filter(self, theta, X, order=0):
        """Conditional moments for every row of ``X`` given its zero-padded past."""

    def predict(self, theta, history):
        """``(f, H)`` at one history (most recent first)."""
        w = history.window
        series = np.vstack([w[::-1], np.zeros((1, self.m))]) if w.size else np.zeros((1, self.m))
        out = self.filter(theta, series, order=0)
        return out.f[-1], out.H[-1]

    def eval_M(self, theta, history):
        """Square-root factor of ``H``; lower-triangular Cholesky unless overridden."""
        _, H = self.predict(as_theta(theta, self.d), history)
        return np.linalg.cholesky(symmetrize(H))

    # ---- Lipschitz sequences ----------------------------------------------

    @abc.abstractmethod
    def alpha(self, theta, which, J):
        """First ``J`` Lipschitz coefficients ``alpha_j(which, theta)``, ``which`` in {f, M, H}."""

    @abc.abstractmethod
    def decay(self, theta, which):
        """Declared :class:`Decay` of ``alpha_j(which, theta)``."""

    def alpha_sum(self, theta, which):
        theta = as_theta(theta, self.d)
        return series_sum(lambda J: self.alpha(theta, which, J), self.decay(theta, which))

    # ---- simulation --------------------------------------------------------

    def default_lag_truncation(self, theta):
        """Lag where declared tails fall below 1e-12, capped at 10**4."""
        theta = as_theta(theta, self.d)
        J = 1
        for which in ("f", "M"):
            dec = self.decay(theta, which)
            if dec.kind == "finite":
                J = max(J, dec.length)
            elif dec.kind == "geometric":
                if dec.rate > 0:
                    J = max(J, int(math.ceil(math.log(1e-12) / math.log(dec.rate))) + 1)
            else:
                J = 10**4
        return int(min(max(J, 1), 10**4))

    def simulate(self, theta, xi, lag_truncation):
        """Iterate the model from the zero past over innovations ``xi`` (rows)."""
        theta = as_theta(theta, self.d)
        N = xi.shape[0]
        X = np.zeros((N, self.m))
        L = int(lag_truncation)
        for t in range(N):
            h = History(X[max(0, t - L):t][::-1])
            f, H = self.predict(theta, h)
            M = self._M_from(theta, h, H)
            X[t] = M @ xi[t] + f
            if not np.all(np.isfinite(X[t])):
                raise DivergenceError(f"simulated path exploded at step {t + 1}")
        return X

    def _M_from(self, theta, history, H):
        return np.linalg.cholesky(symmetrize(H))

    def __repr__(self):
        return f"{type(self).__name__}(m={self.m}, p={self.p}, d={self.d})"


# --------------------------------------------------------------------------
# Module-level evaluators
# --------------------------------------------------------------------------


def _theta_in_bounds(model, theta):
    if isinstance(theta, ParamVector):
        return as_theta(theta, model.d)
    theta = as_theta(theta, model.d)
    if np.any(theta < model.lower - 1e-12) or np.any(theta > model.upper + 1e-12):
        raise ContractViolation("theta outside the model's parameter box")
    return theta


def eval_f(model, theta, h):
    """Conditional mean ``f_theta(x_1, x_2, ...)``."""
    theta = _theta_in_bounds(model, theta)
    h = as_history(h, model.m)
    f, _ = model.predict(theta, h)
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise NumericError("f evaluated to non-finite values")
    return f


def eval_H(model, theta, h, floor=None):
    """Conditional covariance ``H_theta = M M'``, symmetrized, with the A2 determinant check."""
    theta = _theta_in_bounds(model, theta)
    h = as_history(h, model.m)
    _, H = model.predict(theta, h)
    H = np.asarray(H, dtype=float).reshape(model.m, model.m)
    if not np.all(np.isfinite(H)):
        raise NumericError("H evaluated to non-finite values")
    H = symmetrize(H)
    floor = model.H_floor if floor is None else floor
    det = np.linalg.det(H)
    if not det >= floor:
        raise A2Violation(f"det H = {det:.3e} below floor {floor:.1e}")
    return H


def eval_M(model, theta, h):
    theta = _theta_in_bounds(model, theta)
    return model.eval_M(theta, as_history(h, model.m))


def check_full_rank(model, theta, n_histories=100, lags=10, seed=0, tol=1e-8):
    """Probabilistic full-rank check of ``M`` on random Gaussian histories."""
    gen = _rng.make_generator(seed, 0x72616E6B)
    theta = as_theta(theta, model.d)
    for _ in range(n_histories):
        h = History(_rng.std_normal(gen, (lags, model.m)))
        sv = np.linalg.svd(model.eval_M(theta, h), compute_uv=False)
        if sv.size < model.m or sv[model.m - 1] <= tol:
            return False
    return True


def contraction_value(model, theta, innov, r):
    """Weighted Lipschitz sum whose being < 1 defines the stationarity region.

    M route: ``sum alpha_j(f) + (E||xi||^r)^(1/r) sum alpha_j(M)``.
    H route (scalar, f = 0): ``E|xi|^r (sum alpha_j(H))^(r/2)``.
    """
    r = float(r)
    if r < 1:
        raise ContractViolation("r must be >= 1")
    theta = as_theta(theta, model.d)
    if innov.p != model.p:
        raise ContractViolation(f"innovation dimension {innov.p} does not match model p={model.p}")
    if model.variance_form == "H":
        if r < 2:
            raise ContractViolation("the squared-history route requires r >= 2")
        s = model.alpha_sum(theta, "H")
        return innov.norm_moment(r) * s ** (r / 2)
    sf = model.alpha_sum(theta, "f")
    sm = model.alpha_sum(theta, "M")
    if sm == 0.0:
        return sf
    return sf + innov.moment_root(r) * sm


def in_theta_region(model, theta, innov, r):
    return bool(contraction_value(model, theta, innov, r) < 1.0)


# --------------------------------------------------------------------------
# Finite-difference fallback for user-defined models
# --------------------------------------------------------------------------


def fd_step(theta):
    return np.maximum(1e-6, 1e-6 * np.abs(theta))


class FunctionalModel(CausalModel):
    """User-defined model from per-history callables; derivatives by central differences.

    ``f_fn(theta, window)`` and ``H_fn(theta, window)`` take a most-recent-first
    ``(L, m)`` window. ``alpha_fns`` maps ``"f"``/``"M"``/``"H"`` to callables
    ``(theta, J) -> array``; ``decays`` maps the same keys to :class:`Decay`.
    """

    family = "functional"

    def __init__(self, m, p, param_names, lower, upper, f_fn, H_fn, alpha_fns=None, decays=None,
                 max_lag=None, variance_form="M", H_floor=1e-10, theta0=None):
        super().__init__(m, p, param_names, lower, upper, H_floor=H_floor, theta0=theta0)
        self.f_fn = f_fn
        self.H_fn = H_fn
        self.alpha_fns = dict(alpha_fns or {})
        self.decays = dict(decays or {})
        self.max_lag = max_lag
        self.variance_form = variance_form

    def predict(self, theta, history):
        w = history.window
        if self.max_lag is not None:
            w = w[: self.max_lag]
        return np.asarray(self.f_fn(theta, w), float).reshape(self.m), \
            np.asarray(self.H_fn(theta, w), float).reshape(self.m, self.m)

    def _values(self, theta, X):
        n = X.shape[0]
        f = np.empty((n, self.m))
        H = np.empty((n, self.m, self.m))
        for t in range(n):
            f[t], H[t] = self.predict(theta, History(X[:t][::-1]))
        return f, H

    def filter(self, theta, X, order=0):
        theta = as_theta(theta, self.d)
        f, H = self._values(theta, X)
        out = Filtered(f, symmetrize(H))
        if order >= 1:
            h = fd_step(theta)
            n, d, m = X.shape[0], self.d, self.m
            df = np.empty((n, d, m))
            dH = np.empty((n, d, m, m))
            plus, minus = [], []
            for k in range(d):
                e = np.zeros(d)
                e[k] = h[k]
                plus.append(self._values(theta + e, X))
                minus.append(self._values(theta - e, X))
                df[:, k] = (plus[k][0] - minus[k][0]) / (2 * h[k])
                dH[:, k] = (plus[k][1] - minus[k][1]) / (2 * h[k])
            out.df, out.dH = df, symmetrize(dH)
            if order >= 2:
                h2 = np.maximum(1e-4, 1e-4 * np.abs(theta))
                d2f = np.empty((n, d, d, m))
                d2H = np.empty((n, d, d, m, m))
                for k in range(d):
                    for l in range(k, d):
                        vals = []
                        for sk, sl in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                            e = np.zeros(d)
                            e[k] += sk * h2[k]
                            e[l] += sl * h2[l]
                            vals.append(self._values(theta + e, X))
                        den = 4 * h2[k] * h2[l]
                        d2f[:, k, l] = d2f[:, l, k] = (vals[0][0] - vals[1][0] - vals[2][0] + vals[3][0]) / den
                        d2H[:, k, l] = d2H[:, l, k] = (vals[0][1] - vals[1][1] - vals[2][1] + vals[3][1]) / den
                out.d2f, out.d2H = d2f, symmetrize(d2H)
        return out

    def alpha(self, theta, which, J):
        fn = self.alpha_fns.get(which)
        if fn is None:
            return np.zeros(J)
        return np.asarray(fn(theta, J), dtype=float)

    def decay(self, theta, which):
        return self.decays.get(which, Decay.finite(0))
