"""Quasi-maximum-likelihood estimation for causal time-series models.

A model describes ``X_t = M_theta(past) xi_t + f_theta(past)``; the package
evaluates its conditional moments, checks stationarity regions, simulates
stationary paths, fits the Gaussian quasi-likelihood and estimates the
sandwich covariance of the estimator.
"""
from .asymptotics import (
    SandwichCov, confidence_intervals, covariance, estimate_F, estimate_G, inv_sqrt, sandwich, standardize,
)
from .core import (
    CausalModel, Decay, FunctionalModel, History, InnovationSpec, ParamVector, check_full_rank, contraction_value,
    eval_f, eval_H, eval_M, in_theta_region, series_sum,
)
from .exceptions import (
    A2Violation, ConstructionError, ContractViolation, DivergenceError, ExperimentError, NumericError, QMLEError,
    RegionError, UnfittableError, VarViolation,
)
from .qmle import QMLE, FitResult, LikelihoodState, fit, hessian, hessian_qt, likelihood_state, quasi_loglik, score
from .simulate import SeriesMatrix, SimConfig, draw_innovations, simulate_path

__version__ = "0.1.0"
