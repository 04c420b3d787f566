"""Concrete model families built from validated coefficient records.

Every ``make_*`` constructor returns a model whose ``theta0`` is the flat
parameter vector of the record; the mapping from record to ``theta`` is the
one documented on each model class.
"""
from __future__ import annotations

import numpy as np

from ..exceptions import ConstructionError
from .expansions import (
    ArchInfCoeffs, ArmaGarchCoeffs, BekkCoeffs, GarchCoeffs, NlarchCoeffs, NlarCoeffs, TarchCoeffs,
    arma_garch_variance_coeffs, arma_to_ar_coeffs, bekk_to_mvarch_coeffs, companion_radius,
    garch_to_arch_coeffs, power_series_quotient,
)
from .multivariate import ArmaGarchModel, BekkModel, NlarchModel, NlarModel
from .univariate import (
    ArchInfModel, FiniteArchMap, GarchExpansionMap, GarchModel, PowerLawArchMap, TarchModel,
)

__all__ = [
    "ArchInfCoeffs", "GarchCoeffs", "TarchCoeffs", "BekkCoeffs", "ArmaGarchCoeffs", "NlarchCoeffs", "NlarCoeffs",
    "garch_to_arch_coeffs", "bekk_to_mvarch_coeffs", "arma_to_ar_coeffs", "arma_garch_variance_coeffs",
    "companion_radius", "power_series_quotient",
    "ArchInfModel", "FiniteArchMap", "PowerLawArchMap", "GarchExpansionMap", "GarchModel", "TarchModel",
    "BekkModel", "NlarchModel", "NlarModel", "ArmaGarchModel",
    "make_arch_inf", "make_power_law_arch", "make_garch", "make_tarch", "make_mvarch", "make_bekk",
    "make_nlarch", "make_nlar", "make_arma_garch", "pack_blocks",
]


def pack_blocks(model, arrays):
    """Flatten named coefficient arrays into ``theta`` following ``model.layout``."""
    theta = np.zeros(model.d)
    for key, (start, cells) in model.layout.blocks.items():
        arr = np.asarray(arrays[key], dtype=float)
        for k, c in enumerate(cells):
            theta[start + k] = arr[c]
    return theta


def _widen(model, theta0, lower, upper):
    """Rebuild bounds so the record's own parameter lies in the box."""
    lo = np.minimum(model.lower if lower is None else np.asarray(lower, float), theta0)
    hi = np.maximum(model.upper if upper is None else np.asarray(upper, float), theta0)
    return lo, hi


def make_arch_inf(record, J=500, lower=None, upper=None):
    """ARCH(infinity) from finite coefficients (``ArchInfCoeffs``) or a GARCH record expanded to ``J`` lags."""
    if isinstance(record, GarchCoeffs):
        cmap = GarchExpansionMap(record.c.size, record.d.size, J)
        theta0 = np.r_[record.c0, record.c, record.d]
    elif isinstance(record, ArchInfCoeffs):
        if record.b.size < 1:
            raise ConstructionError("finite ARCH needs at least one lag coefficient")
        cmap = FiniteArchMap(record.b.size)
        theta0 = np.r_[record.b0, record.b]
    else:
        raise ConstructionError(f"cannot build ARCH(infinity) from {type(record).__name__}")
    lo, hi = _widen(cmap, theta0, lower, upper)
    return ArchInfModel(cmap, lo, hi, theta0)


def make_power_law_arch(b0, beta, ell, lower=None, upper=None):
    """ARCH(infinity) with ``b_j = beta * j**-ell`` (``ell`` fixed, ``theta = (b0, beta)``)."""
    ArchInfCoeffs(b0, [beta])
    cmap = PowerLawArchMap(ell)
    theta0 = np.array([b0, beta], dtype=float)
    lo, hi = _widen(cmap, theta0, lower, upper)
    return ArchInfModel(cmap, lo, hi, theta0)


def make_garch(record: GarchCoeffs, lower=None, upper=None):
    probe = GarchModel(record.c.size, record.d.size)
    theta0 = np.r_[record.c0, record.c, record.d]
    lo, hi = _widen(probe, theta0, lower, upper)
    return GarchModel(record.c.size, record.d.size, lo, hi, theta0)


def make_tarch(record: TarchCoeffs, lower=None, upper=None):
    q = record.b_plus.size
    probe = TarchModel(q)
    theta0 = np.r_[record.b0, record.b_plus, record.b_minus]
    lo, hi = _widen(probe, theta0, lower, upper)
    return TarchModel(q, lo, hi, theta0)


def make_bekk(record: BekkCoeffs, lower=None, upper=None):
    m, q, qp = record.m, len(record.C), len(record.D)
    # C and -C give the same model: fix the sign of each (0, 0) entry
    C = [c if c[0, 0] >= 0 else -c for c in record.C]
    D = [x if x[0, 0] >= 0 else -x for x in record.D]
    probe = BekkModel(m, q, qp)
    arrays = {"C0": record.C0}
    arrays.update({f"C{i}": c for i, c in enumerate(C, start=1)})
    arrays.update({f"D{j}": x for j, x in enumerate(D, start=1)})
    theta0 = pack_blocks(probe, arrays)
    lo, hi = _widen(probe, theta0, lower, upper)
    return BekkModel(m, q, qp, lo, hi, theta0)


def make_mvarch(B0, B, lower=None, upper=None):
    """Multivariate ARCH(q): ``H = B0 + sum_i B_i X X' B_i'`` (a BEKK with no ``D`` terms)."""
    B0 = np.atleast_2d(np.asarray(B0, dtype=float))
    if not np.allclose(B0, B0.T):
        raise ConstructionError("B0 must be symmetric")
    try:
        C0 = np.linalg.cholesky(B0)
    except np.linalg.LinAlgError:
        raise ConstructionError("B0 must be positive definite (det B0 > 0)") from None
    model = make_bekk(BekkCoeffs(C0, list(B), ()), lower, upper)
    model.family = "mvarch"
    return model


def make_nlarch(record: NlarchCoeffs, lower=None, upper=None):
    m, q = record.m, len(record.B_plus)
    probe = NlarchModel(m, q)
    arrays = {"B0": record.B0}
    arrays.update({f"P{j}": x for j, x in enumerate(record.B_plus, start=1)})
    arrays.update({f"N{j}": x for j, x in enumerate(record.B_minus, start=1)})
    theta0 = pack_blocks(probe, arrays)
    lo, hi = _widen(probe, theta0, lower, upper)
    return NlarchModel(m, q, lo, hi, theta0)


def make_nlar(record: NlarCoeffs, lower=None, upper=None):
    m, q = record.m, len(record.P)
    probe = NlarModel(m, q)
    arrays = {"A0": record.A0}
    arrays.update({f"P{j}": x for j, x in enumerate(record.P, start=1)})
    arrays.update({f"N{j}": x for j, x in enumerate(record.N, start=1)})
    theta0 = pack_blocks(probe, arrays)
    lo, hi = _widen(probe, theta0, lower, upper)
    return NlarModel(m, q, lo, hi, theta0)


def make_arma_garch(record: ArmaGarchCoeffs, lower=None, upper=None):
    m = record.m
    dims = (len(record.Phi), len(record.Psi), len(record.C), len(record.D))
    probe = ArmaGarchModel(m, *dims)
    arrays = {"C0": record.C0}
    for name, seq in (("Phi", record.Phi), ("Psi", record.Psi), ("C", record.C), ("D", record.D)):
        arrays.update({f"{name}{i}": x for i, x in enumerate(seq, start=1)})
    theta0 = pack_blocks(probe, arrays)
    lo, hi = _widen(probe, theta0, lower, upper)
    return ArmaGarchModel(m, *dims, lo, hi, theta0)
