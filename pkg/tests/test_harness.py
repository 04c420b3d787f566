import json
import math

import numpy as np
import pytest

from causalqmle import ContractViolation, ExperimentError, InnovationSpec, RegionError, zoo
from causalqmle.harness import (
    ExperimentPlan, McReport, check_region, recompute_aggregates, run_consistency, run_normality, run_region_sweep,
    run_score_check, worker_count,
)

GARCH_DOC = {"family": "garch", "params": {"c0": 0.1, "c": [0.2], "d": [0.5]},
             "innovation": {"kind": "standard_gaussian"}}


def plan(**kw):
    base = {"model": GARCH_DOC, "n_grid": [100, 200], "R": 2, "base_seed": 5, "fit": {"starts": 1}}
    base.update(kw)
    return ExperimentPlan.from_dict(base)


def test_plan_validation():
    with pytest.raises(ContractViolation, match="unknown plan fields"):
        ExperimentPlan.from_dict({"model": GARCH_DOC, "n_grid": [100], "R": 1, "speed": 2})
    with pytest.raises(ContractViolation):
        plan(n_grid=[200, 100])
    with pytest.raises(ContractViolation):
        plan(R=0)
    with pytest.raises(ContractViolation):
        plan(checks=["everything"])
    with pytest.raises(ContractViolation):
        plan(model={**GARCH_DOC, "extra": 1})


def test_consistency_smoke_and_record_shape():
    rep = run_consistency(plan(n_grid=[50], R=1))
    assert rep.kind == "consistency" and len(rep.records) == 1
    r = rep.records[0]
    assert r["n"] == 50 and r["rep"] == 0 and r["seed"] == [5, 0, 0] and len(r["theta_hat"]) == 3


def test_reports_are_byte_identical(tmp_path):
    a = run_consistency(plan())
    b = run_consistency(plan())
    pa, pb = a.write(tmp_path / "a"), b.write(tmp_path / "b")
    assert pa.read_bytes() == pb.read_bytes()
    assert (tmp_path / "a" / "consistency_records.csv").read_bytes() == \
        (tmp_path / "b" / "consistency_records.csv").read_bytes()


def test_records_independent_of_worker_count(monkeypatch):
    monkeypatch.setenv("CAUSALQMLE_WORKERS", "1")
    serial = run_consistency(plan())
    monkeypatch.setenv("CAUSALQMLE_WORKERS", "2")
    parallel = run_consistency(plan())
    assert json.dumps(serial.records) == json.dumps(parallel.records)


def test_replications_differ_and_seeds_are_distinct():
    rep = run_consistency(plan())
    seeds = [tuple(r["seed"]) for r in rep.records]
    assert len(set(seeds)) == len(seeds)
    assert rep.records[0]["theta_hat"] != rep.records[1]["theta_hat"]


def test_recompute_aggregates_matches_stored(tmp_path):
    rep = run_consistency(plan())
    assert json.dumps(recompute_aggregates(rep)) == json.dumps(rep.aggregates)
    path = rep.write(tmp_path)
    stored = json.loads(path.read_text())
    again = McReport(stored["kind"], stored["plan"], stored["theta0"], stored["records"], stored["aggregates"],
                     stored["assertions"])
    assert recompute_aggregates(again) == stored["aggregates"]


def test_normality_small_R_skips_ks():
    rep = run_normality(plan(n_grid=[300], R=2, checks=["normality", "coverage"]))
    assert rep.aggregates["ks"] is None and "ks_skipped" in rep.aggregates
    assert rep.assertions["ks"]["passed"] and rep.assertions["ks"]["skipped"]
    assert all(r["z"] is not None and len(r["sigma_diag"]) == 3 for r in rep.records)
    assert json.dumps(recompute_aggregates(rep)) == json.dumps(rep.aggregates)


def test_consistency_needs_region():
    outside = {**GARCH_DOC, "params": {"c0": 0.1, "c": [0.6], "d": [0.5]}}
    with pytest.raises(RegionError):
        run_consistency(plan(model=outside))


def test_normality_needs_fourth_moment_region():
    # c1 / (1 - d1) = 0.6: second moments exist but 3 * 0.36 > 1
    doc = {**GARCH_DOC, "params": {"c0": 0.1, "c": [0.3], "d": [0.5]}}
    with pytest.raises(RegionError):
        run_normality(plan(model=doc))


def test_failed_replications_abort_with_report(monkeypatch):
    import causalqmle.harness as h

    def broken(model, X, **kw):
        raise h.QMLEError("no")

    monkeypatch.setattr(h.qmle, "fit", broken)
    with pytest.raises(ExperimentError) as exc:
        run_consistency(plan())
    assert exc.value.report is not None and all(r["error"] for r in exc.value.report.records)


def test_worker_count(monkeypatch):
    monkeypatch.delenv("CAUSALQMLE_WORKERS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("CAUSALQMLE_WORKERS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("CAUSALQMLE_WORKERS", "many")
    with pytest.raises(ContractViolation):
        worker_count()


def test_score_check_small():
    out = run_score_check(GARCH_DOC, n=300, R=20, base_seed=1)
    assert len(out["mean"]) == 3 and out["passed"] == all(out["within"])


# ---- region sweeps ----------------------------------------------------------------------------


def garch():
    return zoo.make_garch(zoo.GarchCoeffs(0.1, [0.2], [0.5]))


def test_sweep_garch_r2_boundary():
    m = garch()
    rep = run_region_sweep(m, m.theta0, "c1", (0.0, 0.9), InnovationSpec(), [2.0], expected={2.0: 0.5})
    assert rep.passed and abs(rep.boundaries["2.0"]["boundary"] - 0.5) <= 1e-6


def test_sweep_garch_r4_boundary():
    m = garch()
    want = 0.5 / math.sqrt(3)
    rep = run_region_sweep(m, m.theta0, "c1", (0.0, 0.9), InnovationSpec(), [4.0], expected={4.0: want})
    assert rep.passed and abs(rep.boundaries["4.0"]["boundary"] - 0.288675) < 1e-6


def test_sweep_power_law_arch_boundary():
    m = zoo.make_power_law_arch(0.1, 0.3, 2.0)
    rep = run_region_sweep(m, m.theta0, lambda s: np.array([0.1, s]), (0.0, 1.0), InnovationSpec(), [2.0],
                           expected={2.0: 6 / math.pi**2})
    assert rep.passed, rep.boundaries


def test_sweep_without_crossing_is_reported():
    m = garch()
    rep = run_region_sweep(m, m.theta0, "c1", (0.0, 0.3), InnovationSpec(), [2.0])
    assert rep.boundaries["2.0"]["boundary"] is None and rep.passed
    assert len(rep.table) == 101


def test_check_region_rows():
    m = garch()
    rows = check_region(m, m.theta0, InnovationSpec(), [2.0, 4.0, 1.0])
    assert rows[0]["in_region"] and rows[1]["in_region"]
    assert rows[2]["in_region"] is False and "error" in rows[2]
