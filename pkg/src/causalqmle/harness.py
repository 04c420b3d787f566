"""Monte Carlo experiments: consistency rates, asymptotic normality/coverage, region sweeps.

Replications are independent tasks over ``(n, replication)`` pairs. Each
task draws its innovations from the stream ``(base_seed, n_index, rep)``, so
records do not depend on execution order or on the number of worker
processes (set with the ``CAUSALQMLE_WORKERS`` environment variable).
Aggregates are always recomputed from the records by pure functions.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import asymptotics, io, qmle
from .core import as_theta, contraction_value
from .exceptions import ContractViolation, DivergenceError, ExperimentError, QMLEError, RegionError
from .simulate import SimConfig, simulate_path

WORKERS_ENV = "CAUSALQMLE_WORKERS"
CHECKS = ("consistency", "normality", "coverage", "region_sweep")
MIN_KS_SAMPLE = 8
FAILURE_LIMIT = 0.20
EXCLUSION_FLAG = 0.05


def worker_count():
    """Parallelism degree from ``CAUSALQMLE_WORKERS`` (default: 1)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        k = int(raw)
    except ValueError:
        raise ContractViolation(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, k)


DEFAULT_ASSERTIONS = {
    "consistency": {"median_error_decreasing": True, "slope_range": [-0.7, -0.3]},
    "normality": {"ks_min_pvalue": 0.01, "coverage_95_range": [0.90, 0.98], "sigma_max_relative_error": 0.30},
}


@dataclass
class ExperimentPlan:
    """What to simulate, how often, and which checks and thresholds apply.

    ``model`` is a model document (see :mod:`causalqmle.io`); its ``params``
    are ``theta0`` and its ``innovation`` the innovation law.
    """

    model: dict
    n_grid: list
    R: int
    base_seed: int = 0
    checks: list = field(default_factory=lambda: ["consistency"])
    out_dir: Optional[str] = None
    fit: dict = field(default_factory=dict)
    burn_in: Optional[int] = None
    lag_truncation: Optional[int] = None
    levels: list = field(default_factory=lambda: [0.90, 0.95, 0.99])
    F_method: str = "hessian_avg"
    G_method: str = "score_outer"
    assertions: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n_grid = [int(n) for n in self.n_grid]
        if self.R < 1:
            raise ContractViolation("R must be >= 1")
        if not self.n_grid or any(n < 1 for n in self.n_grid):
            raise ContractViolation("n_grid must hold positive sample sizes")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ContractViolation("n_grid must be strictly increasing")
        bad = [c for c in self.checks if c not in CHECKS]
        if bad:
            raise ContractViolation(f"unknown checks {bad}; choose from {CHECKS}")
        io.model_from_dict(self.model)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ContractViolation(f"unknown plan fields {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def thresholds(self, kind):
        out = dict(DEFAULT_ASSERTIONS.get(kind, {}))
        out.update(self.assertions.get(kind, {}))
        return out


@dataclass
class McReport:
    """Records per ``(n, replication)`` plus aggregates and assertion outcomes."""

    kind: str
    plan: dict
    theta0: list
    records: list
    aggregates: dict
    assertions: dict
    flags: list = field(default_factory=list)

    @property
    def passed(self):
        return all(a["passed"] for a in self.assertions.values())

    def to_dict(self):
        return {"kind": self.kind, "plan": self.plan, "theta0": self.theta0, "records": self.records,
                "aggregates": self.aggregates, "assertions": self.assertions, "flags": self.flags,
                "passed": self.passed}

    def write(self, out_dir, stem=None):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        io.dump_json(out / f"{stem}_report.json", self.to_dict())
        io.write_records_csv(out / f"{stem}_records.csv", self.records)
        return out / f"{stem}_report.json"


# --------------------------------------------------------------------------
# Replication worker
# --------------------------------------------------------------------------


@lru_cache(maxsize=8)
def _model_doc(doc_json):
    return io.model_from_dict(json.loads(doc_json))


def _replicate(task):
    doc_json, plan, n_index, n, rep, want_cov = task
    md = _model_doc(doc_json)
    model, theta0, innov = md.model, md.theta.values, md.innovation
    seed = [int(plan["base_seed"]), n_index, rep]
    rec = {"n": n, "rep": rep, "seed": seed, "theta_hat": None, "converged": False, "objective": None,
           "sigma_diag": None, "z": None, "error": None}
    try:
        cfg = SimConfig(n, plan["burn_in"], plan["lag_truncation"], seed=seed[0], stream=(n_index, rep))
        X = simulate_path(model, theta0, innov, cfg).data
        fit_opts = dict(plan["fit"])
        fit_opts.setdefault("seed", seed[0] * 1_000_003 + n_index * 10_007 + rep)
        res = qmle.fit(model, X, options=fit_opts)
        rec.update(theta_hat=res.theta_hat.values.tolist(), converged=res.converged, objective=res.objective)
        if want_cov:
            cov = asymptotics.covariance(model, res.theta_hat, X, plan["F_method"], plan["G_method"], innov=innov)
            rec["sigma_diag"] = np.diag(cov.sigma_hat).tolist()
            rec["sigma"] = cov.sigma_hat.tolist()
            rec["z"] = asymptotics.standardize(res.theta_hat, theta0, cov).tolist()
    except (QMLEError, np.linalg.LinAlgError, FloatingPointError) as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


def _run_tasks(tasks):
    k = worker_count()
    if k > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=k) as ex:
            records = list(ex.map(_replicate, tasks, chunksize=max(1, len(tasks) // (4 * k))))
    else:
        records = [_replicate(t) for t in tasks]
    return sorted(records, key=lambda r: (r["n"], r["rep"]))


def _tasks(plan: ExperimentPlan, ns, want_cov):
    doc_json = json.dumps(plan.model, sort_keys=True)
    pd = plan.to_dict()
    return [(doc_json, pd, plan.n_grid.index(n), n, rep, want_cov) for n in ns for rep in range(plan.R)]


def _theta0(plan):
    return io.model_from_dict(plan.model).theta.values


def _check_failures(kind, records, report):
    failed = sum(r["error"] is not None for r in records)
    if records and failed / len(records) > FAILURE_LIMIT:
        raise ExperimentError(f"{kind}: {failed} of {len(records)} replications failed", report)


# --------------------------------------------------------------------------
# Consistency
# --------------------------------------------------------------------------


def aggregate_consistency(records, theta0):
    """Per-n median error, bias, RMSE and the log-log slope of the median error."""
    theta0 = np.asarray(theta0, float)
    per_n = {}
    for n in sorted({r["n"] for r in records}):
        rs = [r for r in records if r["n"] == n]
        ok = [r for r in rs if r["theta_hat"] is not None]
        entry = {"n": n, "replications": len(rs), "failed": len(rs) - len(ok),
                 "converged": sum(bool(r["converged"]) for r in ok)}
        if ok:
            T = np.array([r["theta_hat"] for r in ok])
            err = np.linalg.norm(T - theta0, axis=1)
            entry.update(median_error=float(np.median(err)), bias=(T.mean(0) - theta0).tolist(),
                         rmse=np.sqrt(((T - theta0) ** 2).mean(0)).tolist())
        else:
            entry.update(median_error=None, bias=None, rmse=None)
        per_n[str(n)] = entry
    ns = [int(k) for k, v in per_n.items() if v["median_error"] is not None and v["median_error"] > 0]
    slope = None
    if len(ns) >= 2:
        y = [math.log(per_n[str(n)]["median_error"]) for n in ns]
        slope = float(np.polyfit(np.log(ns), y, 1)[0])
    return {"per_n": per_n, "slope": slope}


def _consistency_assertions(agg, thr):
    out = {}
    meds = [v["median_error"] for v in agg["per_n"].values()]
    if thr.get("median_error_decreasing", False):
        ok = len(meds) >= 2 and all(m is not None for m in meds) and all(b < a for a, b in zip(meds, meds[1:]))
        out["median_error_decreasing"] = {"passed": bool(ok), "value": meds}
    rng = thr.get("slope_range")
    if rng is not None:
        s = agg["slope"]
        out["slope_in_range"] = {"passed": bool(s is not None and rng[0] <= s <= rng[1]), "value": s,
                                 "threshold": rng}
    return out


def run_consistency(plan: ExperimentPlan):
    """R fits per sample size; median error per n and its log-log slope."""
    md = io.model_from_dict(plan.model)
    if not contraction_value(md.model, md.theta.values, md.innovation, 2) < 1:
        raise RegionError("theta0 is outside the second-moment stationarity region")
    records = _run_tasks(_tasks(plan, plan.n_grid, want_cov=False))
    theta0 = md.theta.values
    agg = aggregate_consistency(records, theta0)
    report = McReport("consistency", plan.to_dict(), theta0.tolist(), records, agg,
                      _consistency_assertions(agg, plan.thresholds("consistency")))
    _check_failures("consistency", records, report)
    return report


# --------------------------------------------------------------------------
# Normality and coverage
# --------------------------------------------------------------------------


def aggregate_normality(records, theta0, levels):
    """KS statistics of the standardized estimates, interval coverage, and sandwich-vs-empirical spread."""
    theta0 = np.asarray(theta0, float)
    usable = [r for r in records if r["theta_hat"] is not None and r["converged"] and r["z"] is not None]
    agg = {"replications": len(records), "failed": sum(r["error"] is not None for r in records),
           "excluded": len(records) - len(usable), "used": len(usable)}
    agg["excluded_fraction"] = agg["excluded"] / len(records) if records else 0.0
    if not usable:
        agg["ks"] = None
        agg["ks_skipped"] = "no usable replications"
        return agg
    n = usable[0]["n"]
    T = np.array([r["theta_hat"] for r in usable])
    Z = np.array([r["z"] for r in usable])
    sd = np.sqrt(np.array([r["sigma_diag"] for r in usable]) / n)
    d = T.shape[1]
    if len(usable) >= MIN_KS_SAMPLE:
        ks = [stats.kstest(Z[:, k], "norm") for k in range(d)]
        agg["ks"] = [{"statistic": float(k.statistic), "pvalue": float(k.pvalue)} for k in ks]
    else:
        agg["ks"] = None
        agg["ks_skipped"] = f"only {len(usable)} usable replications (need {MIN_KS_SAMPLE})"
    cover = {}
    for lev in levels:
        z = stats.norm.ppf(0.5 + lev / 2)
        inside = np.abs(T - theta0) <= z * sd
        cover[f"{lev:g}"] = {"per_coordinate": inside.mean(0).tolist(), "joint": float(inside.all(1).mean())}
    agg["coverage"] = cover
    emp = np.atleast_2d(np.cov(np.sqrt(n) * (T - theta0), rowvar=False)) if len(usable) > 1 else None
    sig = np.mean([r["sigma"] for r in usable], axis=0)
    agg["sigma_mean"] = sig.tolist()
    if emp is not None:
        agg["empirical_cov"] = emp.tolist()
        agg["sigma_relative_error"] = float(np.linalg.norm(sig - emp, 2) / np.linalg.norm(emp, 2))
    else:
        agg["sigma_relative_error"] = None
    agg["n"] = n
    return agg


def _normality_assertions(agg, thr):
    out = {}
    if thr.get("ks_min_pvalue") is not None:
        if agg.get("ks") is None:
            out["ks"] = {"passed": True, "skipped": agg.get("ks_skipped")}
        else:
            ps = [k["pvalue"] for k in agg["ks"]]
            out["ks"] = {"passed": bool(min(ps) > thr["ks_min_pvalue"]), "value": ps,
                         "threshold": thr["ks_min_pvalue"]}
    rng = thr.get("coverage_95_range")
    if rng is not None and agg.get("coverage") and "0.95" in agg["coverage"]:
        cov = agg["coverage"]["0.95"]["per_coordinate"]
        out["coverage_95"] = {"passed": bool(all(rng[0] <= c <= rng[1] for c in cov)), "value": cov,
                              "threshold": rng}
    lim = thr.get("sigma_max_relative_error")
    if lim is not None and agg.get("sigma_relative_error") is not None:
        v = agg["sigma_relative_error"]
        out["sigma_vs_empirical"] = {"passed": bool(v < lim), "value": v, "threshold": lim}
    return out


def run_normality(plan: ExperimentPlan):
    """R fits at the last sample size of the grid with sandwich standardization."""
    md = io.model_from_dict(plan.model)
    if not contraction_value(md.model, md.theta.values, md.innovation, 4) < 1:
        raise RegionError("theta0 is outside the fourth-moment stationarity region")
    n = plan.n_grid[-1]
    records = _run_tasks(_tasks(plan, [n], want_cov=True))
    theta0 = md.theta.values
    agg = aggregate_normality(records, theta0, plan.levels)
    flags = []
    if agg["excluded_fraction"] > EXCLUSION_FLAG:
        flags.append(f"{agg['excluded']} of {agg['replications']} replications excluded (> 5%)")
    report = McReport("normality", plan.to_dict(), theta0.tolist(), records, agg,
                      _normality_assertions(agg, plan.thresholds("normality")), flags)
    _check_failures("normality", records, report)
    return report


def recompute_aggregates(report: McReport):
    """Aggregates rebuilt from the report's own records."""
    if report.kind == "consistency":
        return aggregate_consistency(report.records, report.theta0)
    return aggregate_normality(report.records, report.theta0, report.plan["levels"])


# --------------------------------------------------------------------------
# Score martingale check
# --------------------------------------------------------------------------


def _score_task(task):
    doc_json, base_seed, n, rep, burn_in, lag = task
    md = _model_doc(doc_json)
    cfg = SimConfig(n, burn_in, lag, seed=base_seed, stream=(0x73636F, rep))
    X = simulate_path(md.model, md.theta.values, md.innovation, cfg).data
    return (qmle.score(md.model, md.theta.values, X) / math.sqrt(n)).tolist()


def run_score_check(model_doc, n, R, base_seed=0, burn_in=None, lag_truncation=None, n_se=5.0):
    """Mean of ``n^{-1/2} score(theta0)`` over R paths, compared with ``n_se`` standard errors."""
    doc_json = json.dumps(model_doc, sort_keys=True)
    tasks = [(doc_json, base_seed, n, rep, burn_in, lag_truncation) for rep in range(R)]
    k = worker_count()
    if k > 1:
        with ProcessPoolExecutor(max_workers=k) as ex:
            S = np.array(list(ex.map(_score_task, tasks)))
    else:
        S = np.array([_score_task(t) for t in tasks])
    mean = S.mean(0)
    se = S.std(0, ddof=1) / math.sqrt(R)
    ok = np.abs(mean) <= n_se * se
    return {"mean": mean.tolist(), "se": se.tolist(), "t": (mean / se).tolist(), "within": ok.tolist(),
            "passed": bool(ok.all())}


# --------------------------------------------------------------------------
# Region sweeps
# --------------------------------------------------------------------------


@dataclass
class SweepReport:
    parameter: str
    r_grid: list
    table: list
    boundaries: dict
    assertions: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(a["passed"] for a in self.assertions.values())

    def to_dict(self):
        return {"parameter": self.parameter, "r_grid": self.r_grid, "table": self.table,
                "boundaries": self.boundaries, "assertions": self.assertions, "passed": self.passed}


def _path_fn(model, theta_base, path):
    if callable(path):
        return path
    name = path
    if name not in model.param_names:
        raise ContractViolation(f"unknown parameter {name!r}; choose from {model.param_names}")
    k = model.param_names.index(name)
    base = np.array(as_theta(theta_base, model.d))

    def fn(s):
        th = base.copy()
        th[k] = s
        return th

    return fn


def _excess(model, innov, r, theta):
    """``contraction_value - 1`` with non-summable points counted as outside."""
    try:
        return contraction_value(model, theta, innov, r) - 1.0
    except (DivergenceError, RegionError, np.linalg.LinAlgError):
        return math.inf


def run_region_sweep(model, theta_base, path, s_range, innov, r_grid, grid_points=101, tol=1e-6, expected=None):
    """Contraction values along a one-parameter path and the first crossing of 1 for each ``r``.

    ``path`` names a parameter to vary (others held at ``theta_base``) or is
    a callable ``s -> theta``. Crossings are refined by bisection until the
    bracket is shorter than ``tol / 10``.
    """
    fn = _path_fn(model, theta_base, path)
    lo, hi = map(float, s_range)
    if not hi > lo:
        raise ContractViolation("s_range must be increasing")
    grid = np.linspace(lo, hi, int(grid_points))
    table, boundaries = [], {}
    for r in r_grid:
        vals = [_excess(model, innov, r, fn(s)) for s in grid]
        table.extend({"r": r, "s": float(s), "value": float(v + 1.0)} for s, v in zip(grid, vals))
        cross = next((i for i in range(1, len(grid)) if vals[i - 1] < 0 <= vals[i]), None)
        if cross is None:
            boundaries[str(r)] = {"boundary": None, "reason": "path does not cross the region boundary"}
            continue
        a, b = grid[cross - 1], grid[cross]
        while b - a > tol / 10:
            mid = 0.5 * (a + b)
            if _excess(model, innov, r, fn(mid)) < 0:
                a = mid
            else:
                b = mid
        boundaries[str(r)] = {"boundary": 0.5 * (a + b), "bracket": [a, b]}
    rep = SweepReport(path if isinstance(path, str) else getattr(path, "__name__", "path"), list(r_grid), table,
                      boundaries)
    for r, exp in (expected or {}).items():
        got = boundaries.get(str(r), {}).get("boundary")
        rep.assertions[f"boundary_r{r}"] = {"passed": bool(got is not None and abs(got - exp) <= tol),
                                            "value": got, "expected": exp, "tolerance": tol}
    return rep


def check_region(model, theta, innov, r_grid):
    """Contraction value and region membership for each ``r``."""
    out = []
    for r in r_grid:
        try:
            v = contraction_value(model, theta, innov, r)
            out.append({"r": r, "value": v, "in_region": bool(v < 1)})
        except (DivergenceError, ContractViolation) as exc:
            out.append({"r": r, "value": None, "in_region": False, "error": str(exc)})
    return out
