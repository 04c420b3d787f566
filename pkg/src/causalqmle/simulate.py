"""Stationary path simulation from the zero past with burn-in, and innovation sampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _rng
from .core import InnovationSpec, as_theta, contraction_value
from .exceptions import ContractViolation, DivergenceError, RegionError


@dataclass(frozen=True)
class SimConfig:
    """Simulation horizon: ``n`` kept rows after ``burn_in`` discarded ones.

    ``lag_truncation`` bounds the history fed to the model's evaluators
    (default: the model's own truncation lag) and ``burn_in`` defaults to
    twice that. ``stream`` extends the seed into independent sub-streams.
    """

    n: int
    burn_in: Optional[int] = None
    lag_truncation: Optional[int] = None
    seed: int = 0
    stream: tuple = ()

    def __post_init__(self):
        if int(self.n) < 1:
            raise ContractViolation("n must be positive")
        if self.lag_truncation is not None and int(self.lag_truncation) < 1:
            raise ContractViolation("lag_truncation must be positive")
        if self.burn_in is not None:
            if int(self.burn_in) < 1:
                raise ContractViolation("burn_in must be positive")
            if self.lag_truncation is not None and self.burn_in < self.lag_truncation:
                raise ContractViolation("burn_in must be at least lag_truncation")
        if int(self.seed) < 0:
            raise ContractViolation("seed must be a nonnegative 64-bit integer")
        object.__setattr__(self, "stream", tuple(int(s) for s in self.stream))

    def resolve(self, model, theta):
        """``(n, burn_in, lag_truncation)`` with defaults filled in from the model."""
        L = int(self.lag_truncation) if self.lag_truncation is not None else model.default_lag_truncation(theta)
        burn = int(self.burn_in) if self.burn_in is not None else 2 * L
        if burn < L:
            raise ContractViolation("burn_in must be at least lag_truncation")
        return int(self.n), burn, L


@dataclass(frozen=True)
class SeriesMatrix:
    """An observed or simulated path; row ``t`` is ``X_t``."""

    data: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.data, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1:
            raise ContractViolation("a series is an (n, m) array with n >= 1")
        if not np.all(np.isfinite(X)):
            raise ContractViolation("series entries must be finite")
        X = X.copy()
        X.setflags(write=False)
        object.__setattr__(self, "data", X)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def m(self):
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)

    def __len__(self):
        return self.n


def draw_innovations(spec: InnovationSpec, count, seed, stream=()):
    """``count`` i.i.d. ``p``-vectors from ``spec``; reproducible given ``(seed, stream)``."""
    if count < 0:
        raise ContractViolation("count must be nonnegative")
    gen = _rng.make_generator(seed, *stream)
    size = (int(count), spec.p)
    if spec.kind == "standard_gaussian":
        return _rng.std_normal(gen, size)
    if spec.kind == "rademacher_product":
        return _rng.rademacher(gen, size)
    return _rng.std_student_t(gen, spec.df, size)


def simulate_path(model, theta0, innov: InnovationSpec, cfg: SimConfig, allow_outside_region=False,
                  return_burn_in=False):
    """Iterate the model from the zero past for ``burn_in + n`` steps and keep the last ``n``.

    The parameter must lie in the second-moment stationarity region unless
    ``allow_outside_region`` is set. With ``return_burn_in`` the discarded
    prefix is returned as well (most useful for comparing plug-ins with the
    true past).
    """
    theta = as_theta(theta0, model.d)
    if innov.p != model.p:
        raise ContractViolation(f"innovation dimension {innov.p} does not match model p={model.p}")
    if not allow_outside_region:
        cv = contraction_value(model, theta, innov, 2)
        if not cv < 1.0:
            raise RegionError(f"contraction value {cv:.6g} >= 1 at r=2: no stationary solution guaranteed")
    n, burn, L = cfg.resolve(model, theta)
    xi = draw_innovations(innov, burn + n, cfg.seed, cfg.stream)
    with np.errstate(over="ignore", invalid="ignore"):
        X = model.simulate(theta, xi, L)
    if not np.all(np.isfinite(X)):
        t = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0]) + 1
        raise DivergenceError(f"simulated path exploded at step {t}")
    out = SeriesMatrix(X[burn:])
    return (out, X[:burn]) if return_burn_in else out
