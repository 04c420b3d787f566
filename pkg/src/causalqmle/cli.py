"""Command-line interface.

Every subcommand accepts ``--config plan.json``, whose keys are the long
option names with dashes replaced by underscores; explicit flags override the
file. Each command writes a JSON report and a CSV table and exits with 0 only
if all of its enabled assertions pass (1 if one fails, 2 on errors).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import asymptotics, harness, io, qmle
from .exceptions import ExperimentError, QMLEError
from .simulate import SimConfig, simulate_path

log = logging.getLogger("causalqmle")

EXIT_OK, EXIT_FAILED, EXIT_ERROR = 0, 1, 2


def _opt(args, cfg, name, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(name, default)


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise QMLEError("config must be a JSON object")
    return cfg


def _model_doc(value):
    """A model document given inline (dict) or as a path to a JSON file."""
    if value is None:
        raise QMLEError("a model document is required (--model or config 'model')")
    if isinstance(value, dict):
        return value
    with open(value) as fh:
        return json.load(fh)


def _sibling(path, suffix):
    p = Path(path)
    return p.with_name(p.stem + suffix)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_simulate(args, cfg):
    doc = _model_doc(_opt(args, cfg, "model"))
    md = io.model_from_dict(doc)
    n = _opt(args, cfg, "n")
    if n is None:
        raise QMLEError("--n is required")
    sc = SimConfig(int(n), _opt(args, cfg, "burn_in"), _opt(args, cfg, "lag_truncation"), int(_opt(args, cfg, "seed", 0)))
    allow = bool(_opt(args, cfg, "allow_outside_region", False))
    X = simulate_path(md.model, md.theta, md.innovation, sc, allow_outside_region=allow)
    out = _opt(args, cfg, "out", "path.csv")
    io.write_path(out, X)
    n_, burn, L = sc.resolve(md.model, md.theta.values)
    report = {"command": "simulate", "model": doc, "n": n_, "burn_in": burn, "lag_truncation": L, "seed": sc.seed,
              "path": str(out), "sample_mean": X.data.mean(0).tolist(), "sample_second_moment":
              (X.data ** 2).mean(0).tolist(), "assertions": {}, "passed": True}
    io.dump_json(_opt(args, cfg, "report") or _sibling(out, ".json"), report)
    return True


def cmd_fit(args, cfg):
    doc = _model_doc(_opt(args, cfg, "model"))
    md = io.model_from_dict(doc)
    data = _opt(args, cfg, "data")
    if data is None:
        raise QMLEError("--data is required")
    X = io.read_path(data)
    options = {"optimizer": _opt(args, cfg, "optimizer", "auto"), "starts": int(_opt(args, cfg, "starts", 5)),
               "seed": int(_opt(args, cfg, "seed", 0)), "max_iter": int(_opt(args, cfg, "max_iter", qmle.MAX_ITER))}
    if _opt(args, cfg, "tol") is not None:
        options["tol"] = float(_opt(args, cfg, "tol"))
    res = qmle.fit(md.model, X, options=options)
    passed = res.converged if _opt(args, cfg, "require_converged", True) else True
    out = _opt(args, cfg, "out", "fit.json")
    report = {"command": "fit", "config": {"model": doc, "data": str(data), "options": options},
              **res.to_dict(), "params": io.params_dict(md.model, res.theta_hat.values),
              "assertions": {"converged": {"passed": bool(passed), "value": res.converged}}, "passed": bool(passed)}
    io.dump_json(out, report)
    io.write_records_csv(_sibling(out, "_starts.csv"), [
        {k: v for k, v in s.items()} for s in res.starts])
    return passed


def cmd_asymptotics(args, cfg):
    doc = _model_doc(_opt(args, cfg, "model"))
    md = io.model_from_dict(doc)
    X = io.read_path(_opt(args, cfg, "data"))
    fit_path = _opt(args, cfg, "fit")
    if fit_path is None:
        raise QMLEError("--fit is required")
    with open(fit_path) as fh:
        theta = np.asarray(json.load(fh)["theta_hat"], dtype=float)
    Fm = _opt(args, cfg, "F_method", "hessian_avg")
    Gm = _opt(args, cfg, "G_method", "score_outer")
    level = float(_opt(args, cfg, "level", 0.95))
    cov = asymptotics.covariance(md.model, theta, X, Fm, Gm, innov=md.innovation)
    ci = asymptotics.confidence_intervals(theta, cov, level)
    passed = not cov.diagnostics.get("G_check", {}).get("flagged", False) or not _opt(
        args, cfg, "assert_G_agreement", False)
    out = _opt(args, cfg, "out", "cov.json")
    rows = [{"name": nm, "theta_hat": float(t), "std_error": float(np.sqrt(cov.sigma_hat[i, i] / X.n)),
             "lower": float(ci[i, 0]), "upper": float(ci[i, 1])}
            for i, (nm, t) in enumerate(zip(md.model.param_names, theta))]
    report = {"command": "asymptotics", "config": {"model": doc, "data": str(_opt(args, cfg, "data")),
                                                   "fit": str(fit_path), "level": level},
              **cov.to_dict(), "intervals": rows, "level": level,
              "assertions": {"F_positive_definite": {"passed": True}}, "passed": bool(passed)}
    io.dump_json(out, report)
    io.write_records_csv(_sibling(out, "_intervals.csv"), rows)
    return passed


def cmd_check_region(args, cfg):
    doc = _model_doc(_opt(args, cfg, "model"))
    md = io.model_from_dict(doc)
    r_grid = _opt(args, cfg, "r", None) or [2.0]
    rows = harness.check_region(md.model, md.theta.values, md.innovation, [float(r) for r in r_grid])
    passed = all(r["in_region"] for r in rows)
    out = _opt(args, cfg, "out", "region.json")
    io.dump_json(out, {"command": "check-region", "model": doc, "results": rows,
                       "assertions": {"in_region": {"passed": passed}}, "passed": passed})
    io.write_records_csv(_sibling(out, ".csv"), rows, columns=["r", "value", "in_region", "error"])
    return passed


def _plan(args, cfg):
    d = dict(cfg)
    for key in ("n_grid", "R", "base_seed", "out_dir"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    if getattr(args, "model", None) is not None:
        d["model"] = args.model
    d["model"] = _model_doc(d.get("model"))
    d.pop("command", None)
    return harness.ExperimentPlan.from_dict(d)


def _run_mc(args, cfg, runner, stem):
    plan = _plan(args, cfg)
    out_dir = plan.out_dir or "."
    try:
        report = runner(plan)
    except ExperimentError as exc:
        if exc.report is not None:
            exc.report.write(out_dir, stem)
        raise
    report.write(out_dir, stem)
    log.info("%s: %s", stem, json.dumps(report.assertions))
    return report.passed


def cmd_mc_consistency(args, cfg):
    return _run_mc(args, cfg, harness.run_consistency, "consistency")


def cmd_mc_normality(args, cfg):
    return _run_mc(args, cfg, harness.run_normality, "normality")


def cmd_sweep(args, cfg):
    doc = _model_doc(_opt(args, cfg, "model"))
    md = io.model_from_dict(doc)
    param = _opt(args, cfg, "param")
    s_range = _opt(args, cfg, "range")
    if param is None or s_range is None:
        raise QMLEError("--param and --range are required")
    r_grid = [float(r) for r in (_opt(args, cfg, "r") or [2.0])]
    expected = {float(k): float(v) for k, v in (cfg.get("expected") or {}).items()}
    rep = harness.run_region_sweep(md.model, md.theta.values, param, s_range, md.innovation, r_grid,
                                   grid_points=int(_opt(args, cfg, "grid_points", 101)),
                                   tol=float(_opt(args, cfg, "tol", 1e-6)), expected=expected)
    out = _opt(args, cfg, "out", "sweep.json")
    io.dump_json(out, {"command": "sweep", "model": doc, **rep.to_dict()})
    io.write_records_csv(_sibling(out, ".csv"), rep.table, columns=["r", "s", "value"])
    return rep.passed


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="causalqmle", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file with option values")
        sp.set_defaults(func=fn)
        return sp

    sp = add("simulate", cmd_simulate, "simulate a stationary path")
    sp.add_argument("--model")
    sp.add_argument("--n", type=int)
    sp.add_argument("--burn-in", dest="burn_in", type=int)
    sp.add_argument("--lag-truncation", dest="lag_truncation", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="path file (.csv or .cqts)")
    sp.add_argument("--report")
    sp.add_argument("--allow-outside-region", dest="allow_outside_region", action="store_true", default=None)

    sp = add("fit", cmd_fit, "maximize the quasi-likelihood")
    sp.add_argument("--model")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--optimizer", choices=["auto", "bfgs_projected", "nelder_mead"])
    sp.add_argument("--starts", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--no-require-converged", dest="require_converged", action="store_false", default=None)

    sp = add("asymptotics", cmd_asymptotics, "sandwich covariance and confidence intervals")
    sp.add_argument("--model")
    sp.add_argument("--data")
    sp.add_argument("--fit")
    sp.add_argument("--out")
    sp.add_argument("--F-method", dest="F_method", choices=list(asymptotics.F_METHODS))
    sp.add_argument("--G-method", dest="G_method", choices=list(asymptotics.G_METHODS))
    sp.add_argument("--level", type=float)
    sp.add_argument("--assert-G-agreement", dest="assert_G_agreement", action="store_true", default=None)

    sp = add("check-region", cmd_check_region, "contraction value and region membership")
    sp.add_argument("--model")
    sp.add_argument("--r", type=float, nargs="+")
    sp.add_argument("--out")

    for name, fn, help_ in (("mc-consistency", cmd_mc_consistency, "Monte Carlo consistency study"),
                            ("mc-normality", cmd_mc_normality, "Monte Carlo normality and coverage study")):
        sp = add(name, fn, help_)
        sp.add_argument("--model")
        sp.add_argument("--n-grid", dest="n_grid", type=int, nargs="+")
        sp.add_argument("--R", type=int)
        sp.add_argument("--seed", dest="base_seed", type=int)
        sp.add_argument("--out-dir", dest="out_dir")

    sp = add("sweep", cmd_sweep, "locate region boundaries along a parameter path")
    sp.add_argument("--model")
    sp.add_argument("--param")
    sp.add_argument("--range", type=float, nargs=2)
    sp.add_argument("--r", type=float, nargs="+")
    sp.add_argument("--grid-points", dest="grid_points", type=int)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--out")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        ok = args.func(args, cfg)
    except (QMLEError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if ok else EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
