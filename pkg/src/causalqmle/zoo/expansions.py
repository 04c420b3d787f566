"""Coefficient records for the model families and their infinite-lag expansions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import Decay
from ..exceptions import ConstructionError, DivergenceError

EXPANSION_TAIL = 1e-12
EXPANSION_CAP = 10**4


def _vec(x):
    return np.atleast_1d(np.asarray(x, dtype=float)).copy()


def _mats(xs, m=None):
    out = [np.atleast_2d(np.asarray(x, dtype=float)).copy() for x in (xs or [])]
    for a in out:
        if a.shape[0] != a.shape[1] or (m is not None and a.shape[0] != m):
            raise ConstructionError(f"expected square {m}x{m} coefficient matrices, got {a.shape}")
    return out


def companion_radius(mats):
    """Spectral radius of the block companion matrix of ``I - sum_k A_k z^k``."""
    if not mats:
        return 0.0
    k = mats[0].shape[0]
    q = len(mats)
    comp = np.zeros((k * q, k * q))
    comp[:k, :] = np.hstack(mats)
    if q > 1:
        comp[k:, :-k] = np.eye(k * (q - 1))
    return float(np.max(np.abs(np.linalg.eigvals(comp))))


def power_series_quotient(num, den, J, unit_lead=False):
    """Coefficients ``G_1..G_J`` of ``(I - sum den_k z^k)^{-1} (lead + sum num_i z^i)``.

    With ``unit_lead`` the numerator has constant term ``I`` (and ``G_0 = I``
    is implied); otherwise the numerator starts at lag one.
    """
    if not num and not den:
        raise ConstructionError("empty polynomial quotient")
    k = (num or den)[0].shape[0]
    G = [np.eye(k) if unit_lead else np.zeros((k, k))]
    for i in range(1, J + 1):
        g = num[i - 1].copy() if i <= len(num) else np.zeros((k, k))
        for j in range(1, min(i, len(den)) + 1):
            g = g + den[j - 1] @ G[i - j]
        G.append(g)
    return G[1:]


def default_expansion_length(rate, cap=EXPANSION_CAP):
    """Lag where a geometric tail with the given rate drops below 1e-12."""
    if rate <= 0.0:
        return 1
    if rate >= 1.0:
        return cap
    return int(min(cap, max(1, np.ceil(np.log(EXPANSION_TAIL) / np.log(rate)) + 1)))


# --------------------------------------------------------------------------
# Univariate records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ArchInfCoeffs:
    """ARCH(infinity) coefficients at a fixed parameter: intercept, lags 1..J and tail behaviour."""

    b0: float
    b: np.ndarray
    decay: Decay = None

    def __post_init__(self):
        b = _vec(self.b)
        object.__setattr__(self, "b", b)
        if not self.b0 > 0:
            raise ConstructionError("ARCH intercept b0 must be > 0")
        if np.any(b < 0):
            raise ConstructionError("ARCH coefficients b_j must be nonnegative")
        if self.decay is None:
            object.__setattr__(self, "decay", Decay.finite(b.size))


@dataclass(frozen=True)
class GarchCoeffs:
    c0: float
    c: np.ndarray
    d: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        c, d = _vec(self.c), np.asarray(self.d, dtype=float).ravel().copy()
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        if not self.c0 > 0:
            raise ConstructionError("GARCH intercept c0 must be > 0")
        if np.any(c < 0) or np.any(d < 0):
            raise ConstructionError("GARCH coefficients c_j, d_j must be nonnegative")
        if d.sum() >= 1:
            raise ConstructionError(f"sum of d_j = {d.sum():.6g} must be < 1")
        if d.size and np.any(d > 0):
            if not np.any(c > 0):
                raise ConstructionError("GARCH polynomials are not coprime: all c_j vanish")
            # sum c_i z^i = z * C(z); compare the roots of C with those of 1 - sum d_i z^i through their
            # reciprocals w = 1/z (roots of monic/finite polynomials, no overflow for tiny d_i), ignoring
            # roots beyond 1e12 in modulus (|w| < 1e-12), which are numerically at infinity
            cw = np.roots(c) if c.size > 1 else np.array([])
            dw = np.roots(np.concatenate([[1.0], -d]))
            dw = dw[np.abs(dw) >= 1e-12]
            for w in cw[np.abs(cw) >= 1e-12]:
                if np.any(np.abs(dw - w) < 1e-8):
                    raise ConstructionError("GARCH polynomials are not coprime (common root)")


@dataclass(frozen=True)
class TarchCoeffs:
    b0: float
    b_plus: np.ndarray
    b_minus: np.ndarray

    def __post_init__(self):
        bp, bm = _vec(self.b_plus), _vec(self.b_minus)
        if bp.shape != bm.shape:
            raise ConstructionError("b_plus and b_minus must have equal length")
        object.__setattr__(self, "b_plus", bp)
        object.__setattr__(self, "b_minus", bm)
        if not self.b0 > 0:
            raise ConstructionError("TARCH intercept b0 must be > 0")
        if np.any(bp < 0) or np.any(bm < 0):
            raise ConstructionError("TARCH coefficients must be nonnegative")


def garch_to_arch_coeffs(g: GarchCoeffs, J: Optional[int] = None) -> ArchInfCoeffs:
    """ARCH(infinity) representation of a GARCH(q, q') variance recursion.

    ``b_i = c_i + sum_{k=1}^{min(i, q')} d_k b_{i-k}`` with ``c_i = 0`` for ``i > q``.
    """
    S = float(np.sum(g.d))
    if S >= 1:
        raise DivergenceError("sum of d_j >= 1: ARCH(infinity) expansion diverges")
    rate = companion_radius([np.array([[x]]) for x in g.d])
    if J is None:
        J = default_expansion_length(rate)
    if J < 1:
        raise ConstructionError("expansion length J must be >= 1")
    b = np.zeros(J + 1)
    for i in range(1, J + 1):
        acc = g.c[i - 1] if i <= g.c.size else 0.0
        for k in range(1, min(i, g.d.size) + 1):
            acc += g.d[k - 1] * b[i - k]
        b[i] = acc
    decay = Decay.geometric(rate) if g.d.size and rate > 0 else Decay.finite(max(g.c.size, 1))
    return ArchInfCoeffs(g.c0 / (1.0 - S), b[1:], decay)


# --------------------------------------------------------------------------
# Multivariate records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BekkCoeffs:
    """BEKK(q, q') with one term per lag: ``H_t = C0 C0' + sum C_i X X' C_i' + sum D_j H D_j'``."""

    C0: np.ndarray
    C: Sequence[np.ndarray] = ()
    D: Sequence[np.ndarray] = ()

    def __post_init__(self):
        C0 = np.atleast_2d(np.asarray(self.C0, dtype=float)).copy()
        m = C0.shape[0]
        if C0.shape != (m, m):
            raise ConstructionError("C0 must be square")
        if np.any(np.triu(C0, 1) != 0):
            raise ConstructionError("C0 must be lower triangular")
        if not np.linalg.det(C0) > 0:
            raise ConstructionError("det C0 must be > 0")
        object.__setattr__(self, "C0", C0)
        object.__setattr__(self, "C", tuple(_mats(self.C, m)))
        object.__setattr__(self, "D", tuple(_mats(self.D, m)))
        if self.D and companion_radius([np.kron(x, x) for x in self.D]) >= 1:
            raise ConstructionError("spectral radius of the D (x) D companion operator must be < 1")

    @property
    def m(self):
        return self.C0.shape[0]


def kron_sq(A):
    return np.kron(A, A)


def bekk_to_mvarch_coeffs(b: BekkCoeffs, J: Optional[int] = None):
    """Starred multivariate ARCH(infinity) coefficients of a BEKK model.

    Returns ``(B0_star, [B_1*, ..., B_J*])`` where ``vec H_t = B0* + sum_j B_j* vec(X_{t-j} X_{t-j}')``
    with row-major ``vec`` and ``A* = A (x) A``.
    """
    Cs = [kron_sq(x) for x in b.C]
    Ds = [kron_sq(x) for x in b.D]
    rate = companion_radius(Ds)
    if rate >= 1:
        raise DivergenceError(f"spectral radius {rate:.6g} of the D* companion operator is >= 1")
    if J is None:
        J = default_expansion_length(rate) if Ds else max(len(Cs), 1)
    k = b.m ** 2
    S = np.eye(k) - (sum(Ds) if Ds else 0.0)
    B0 = np.linalg.solve(S, (b.C0 @ b.C0.T).reshape(k))
    if not Cs:
        return B0, [np.zeros((k, k)) for _ in range(J)]
    return B0, power_series_quotient(Cs, Ds, J)


@dataclass(frozen=True)
class ArmaGarchCoeffs:
    """Multivariate ARMA mean with diagonal GARCH variance.

    ``Phi(L) X_t = Psi(L) eps_t`` with ``Phi(L) = I - sum Phi_i L^i``,
    ``Psi(L) = I - sum Psi_j L^j``; ``diag H_t = C0 + sum C_i eps_{t-i}^2 + sum D_j diag H_{t-j}``.
    """

    Phi: Sequence[np.ndarray]
    Psi: Sequence[np.ndarray]
    C0: np.ndarray
    C: Sequence[np.ndarray] = ()
    D: Sequence[np.ndarray] = ()

    def __post_init__(self):
        C0 = _vec(self.C0)
        m = C0.size
        object.__setattr__(self, "C0", C0)
        for name in ("Phi", "Psi", "C", "D"):
            object.__setattr__(self, name, tuple(_mats(getattr(self, name), m)))
        if np.any(C0 <= 0):
            raise ConstructionError("variance intercept C0 must be elementwise > 0")
        if any(np.any(x < 0) for x in self.C + self.D):
            raise ConstructionError("variance coefficients C_i, D_j must be elementwise nonnegative")
        if companion_radius(list(self.Psi)) >= 1:
            raise ConstructionError("Psi(L) is not invertible (companion spectral radius >= 1)")
        if companion_radius(list(self.D)) >= 1:
            raise ConstructionError("variance recursion is explosive (D companion spectral radius >= 1)")

    @property
    def m(self):
        return self.C0.size


def arma_to_ar_coeffs(a: ArmaGarchCoeffs, J: Optional[int] = None):
    """``Gamma_1..Gamma_J`` with ``I + sum Gamma_i z^i = Psi(z)^{-1} Phi(z)``.

    The conditional mean is then ``f_t = -sum_i Gamma_i X_{t-i}``.
    """
    rate = companion_radius(list(a.Psi))
    if rate >= 1:
        raise DivergenceError("Psi(L) is not invertible")
    if J is None:
        J = default_expansion_length(rate) if a.Psi else max(len(a.Phi), 1)
    m = a.m
    num = [-x for x in a.Phi]
    if not num and not a.Psi:
        return [np.zeros((m, m)) for _ in range(J)]
    if not num:
        num = [np.zeros((m, m))]
    return power_series_quotient(num, list(a.Psi), J, unit_lead=True)


def arma_garch_variance_coeffs(a: ArmaGarchCoeffs, J: Optional[int] = None):
    """``B_1..B_J`` of ``(I - sum D_i z^i)^{-1} sum C_i z^i`` for the diagonal variance recursion."""
    rate = companion_radius(list(a.D))
    if J is None:
        J = default_expansion_length(rate) if a.D else max(len(a.C), 1)
    if not a.C:
        return [np.zeros((a.m, a.m)) for _ in range(J)]
    return power_series_quotient(list(a.C), list(a.D), J)


@dataclass(frozen=True)
class NlarchCoeffs:
    """Diagonal NLARCH with threshold lags: ``sigma_t = B0 + sum P_j x^+_{t-j} + N_j x^-_{t-j}``."""

    B0: np.ndarray
    B_plus: Sequence[np.ndarray]
    B_minus: Sequence[np.ndarray]

    def __post_init__(self):
        B0 = _vec(self.B0)
        m = B0.size
        object.__setattr__(self, "B0", B0)
        object.__setattr__(self, "B_plus", tuple(_mats(self.B_plus, m)))
        object.__setattr__(self, "B_minus", tuple(_mats(self.B_minus, m)))
        if len(self.B_plus) != len(self.B_minus):
            raise ConstructionError("B_plus and B_minus need the same number of lags")
        if np.any(B0 <= 0):
            raise ConstructionError("B0 must be elementwise > 0")
        if any(np.any(x < 0) for x in self.B_plus + self.B_minus):
            raise ConstructionError("threshold coefficients must be nonnegative")

    @property
    def m(self):
        return self.B0.size


@dataclass(frozen=True)
class NlarCoeffs:
    """Threshold AR: ``f = A0 + sum_j P_j max(x_j, 0) + N_j min(x_j, 0)`` with ``M = I``."""

    A0: np.ndarray
    P: Sequence[np.ndarray]
    N: Sequence[np.ndarray]

    def __post_init__(self):
        A0 = _vec(self.A0)
        m = A0.size
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "P", tuple(_mats(self.P, m)))
        object.__setattr__(self, "N", tuple(_mats(self.N, m)))
        if len(self.P) != len(self.N):
            raise ConstructionError("P and N need the same number of lags")

    @property
    def m(self):
        return self.A0.size
