"""Model documents (JSON) and path files (CSV and a compact binary format).

Model document::

    {"family": "garch", "dims": {"m": 1, "p": 1, "d": 3},
     "params": {"c0": 0.1, "c": [0.2], "d": [0.5]},
     "bounds": {"lower": [...], "upper": [...]},
     "innovation": {"kind": "standard_gaussian", "seed": 1}}

validated against ``schema/model.schema.json`` (unknown fields rejected).

Path files: CSV with header ``t,x_1,...,x_m`` (``t`` from 1), or the binary
``.cqts`` layout: 4-byte magic ``CQTS``, little-endian ``uint16`` version (1),
``uint16`` reserved (0), ``uint32`` m, ``uint64`` n, then ``n*m`` little-endian
``float64`` values in row-major order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import zoo
from .core import InnovationSpec, ParamVector, as_theta
from .exceptions import ContractViolation
from .simulate import SeriesMatrix

MAGIC = b"CQTS"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sHHIQ")


# --------------------------------------------------------------------------
# Model documents
# --------------------------------------------------------------------------


@lru_cache(maxsize=1)
def model_schema():
    return json.loads(resources.files("causalqmle").joinpath("schema/model.schema.json").read_text())


@dataclass(frozen=True)
class ModelDoc:
    """A model, its parameter point and its innovation law, as read from JSON."""

    model: object
    theta: ParamVector
    innovation: InnovationSpec


def _mats(xs):
    return [np.asarray(x, dtype=float) for x in xs]


def _build(family, params):
    P = params
    if family == "arch_inf":
        if "b" in P:
            return zoo.make_arch_inf(zoo.ArchInfCoeffs(P["b0"], P["b"]))
        if "beta" in P:
            return zoo.make_power_law_arch(P["b0"], P["beta"], P["ell"])
        return zoo.make_arch_inf(zoo.GarchCoeffs(P["c0"], P["c"], P["d"]), J=P.get("expansion_lags", 500))
    if family == "garch":
        return zoo.make_garch(zoo.GarchCoeffs(P["c0"], P["c"], P["d"]))
    if family == "tarch":
        return zoo.make_tarch(zoo.TarchCoeffs(P["b0"], P["b_plus"], P["b_minus"]))
    if family == "mvarch":
        return zoo.make_mvarch(np.asarray(P["B0"], float), _mats(P["B"]))
    if family == "bekk":
        return zoo.make_bekk(zoo.BekkCoeffs(np.asarray(P["C0"], float), _mats(P["C"]), _mats(P["D"])))
    if family == "nlarch":
        return zoo.make_nlarch(zoo.NlarchCoeffs(P["B0"], _mats(P["B_plus"]), _mats(P["B_minus"])))
    if family == "nlar":
        return zoo.make_nlar(zoo.NlarCoeffs(P["A0"], _mats(P["P"]), _mats(P["N"])))
    if family == "arma_garch":
        return zoo.make_arma_garch(zoo.ArmaGarchCoeffs(_mats(P["Phi"]), _mats(P["Psi"]), P["C0"], _mats(P["C"]),
                                                       _mats(P["D"])))
    raise ContractViolation(f"unknown family {family!r}")


def model_from_dict(doc):
    """Validate a model document and build ``ModelDoc``."""
    try:
        jsonschema.validate(doc, model_schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ContractViolation(f"invalid model document at '{path}': {exc.message}") from None
    model = _build(doc["family"], doc["params"])
    if "bounds" in doc:
        lo, hi = np.asarray(doc["bounds"]["lower"], float), np.asarray(doc["bounds"]["upper"], float)
        if lo.shape != (model.d,) or hi.shape != (model.d,):
            raise ContractViolation(f"bounds must have length d={model.d}")
        model = rebound(model, lo, hi)
    dims = doc.get("dims")
    if dims is not None and (dims["m"], dims["p"], dims["d"]) != (model.m, model.p, model.d):
        raise ContractViolation(f"dims {dims} do not match the parameters (m={model.m}, p={model.p}, d={model.d})")
    inn = doc.get("innovation", {"kind": "standard_gaussian"})
    innov = InnovationSpec(kind=inn["kind"], p=model.p, df=inn.get("df"), seed=inn.get("seed", 20240101),
                           mc_draws=inn.get("mc_draws", 10**6))
    return ModelDoc(model, model.params(), innov)


def rebound(model, lower, upper):
    """Same model with a different parameter box."""
    import copy

    out = copy.copy(model)
    lo, hi = np.asarray(lower, float).copy(), np.asarray(upper, float).copy()
    if np.any(lo > hi):
        raise ContractViolation("lower bound exceeds upper bound")
    lo.setflags(write=False)
    hi.setflags(write=False)
    out.lower, out.upper = lo, hi
    return out


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def params_dict(model, theta):
    """Named coefficient arrays of ``theta`` in the document layout of ``model.family``."""
    th = as_theta(theta, model.d)
    fam = model.family
    if fam == "arch_inf":
        cm = model.cmap
        if cm.kind == "finite":
            return {"b0": th[0], "b": th[1:].tolist()}
        if cm.kind == "power_law":
            return {"b0": th[0], "beta": th[1], "ell": cm.ell}
        return {"c0": th[0], "c": th[1:1 + cm.q].tolist(), "d": th[1 + cm.q:].tolist(), "expansion_lags": cm.J}
    if fam == "garch":
        c0, c, d = model.split(th)
        return {"c0": c0, "c": c.tolist(), "d": d.tolist()}
    if fam == "tarch":
        return {"b0": th[0], "b_plus": th[1:1 + model.q].tolist(), "b_minus": th[1 + model.q:].tolist()}
    if fam in ("bekk", "mvarch"):
        C0, Cs, Ds = model.matrices(th)
        if fam == "mvarch":
            return {"B0": (C0 @ C0.T).tolist(), "B": [c.tolist() for c in Cs]}
        return {"C0": C0.tolist(), "C": [c.tolist() for c in Cs], "D": [x.tolist() for x in Ds]}
    if fam == "nlarch":
        B0, Ps, Ns = model.matrices(th)
        return {"B0": B0.tolist(), "B_plus": [x.tolist() for x in Ps], "B_minus": [x.tolist() for x in Ns]}
    if fam == "nlar":
        A0, Ps, Ns = model.matrices(th)
        return {"A0": A0.tolist(), "P": [x.tolist() for x in Ps], "N": [x.tolist() for x in Ns]}
    if fam == "arma_garch":
        mats = model.matrices(th)
        return {k: (v.tolist() if isinstance(v, np.ndarray) else [x.tolist() for x in v]) for k, v in mats.items()}
    raise ContractViolation(f"family {fam!r} has no document form")


def model_to_dict(model, theta=None, innov: InnovationSpec = None):
    theta = model.theta0 if theta is None else getattr(theta, "values", theta)
    doc = {
        "family": model.family,
        "dims": {"m": model.m, "p": model.p, "d": model.d},
        "params": _plain(params_dict(model, theta)),
        "bounds": {"lower": list(map(float, model.lower)), "upper": list(map(float, model.upper))},
    }
    if innov is not None:
        inn = {"kind": innov.kind, "seed": innov.seed}
        if innov.df is not None:
            inn["df"] = innov.df
        doc["innovation"] = inn
    return doc


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def doc_with_theta(doc, theta_values):
    """Copy of a model document with its ``params`` replaced by ``theta``."""
    md = model_from_dict(doc)
    out = dict(doc)
    out["params"] = _plain(params_dict(md.model, theta_values))
    return out


# --------------------------------------------------------------------------
# Path files
# --------------------------------------------------------------------------


def write_csv(path, X):
    X = np.asarray(getattr(X, "data", X), dtype=float)
    n, m = X.shape
    header = "t," + ",".join(f"x_{k}" for k in range(1, m + 1))
    table = np.column_stack([np.arange(1, n + 1), X])
    fmt = ["%d"] + ["%.17g"] * m
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)


def read_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t" or any(h != f"x_{k}" for k, h in enumerate(header[1:], start=1)):
        raise ContractViolation(f"{path}: header must be 't,x_1,...,x_m'")
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if table.shape[1] != len(header):
        raise ContractViolation(f"{path}: rows do not match the header width")
    return SeriesMatrix(table[:, 1:])


def write_binary(path, X):
    X = np.ascontiguousarray(getattr(X, "data", X), dtype="<f8")
    n, m = X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, BINARY_VERSION, 0, m, n))
        fh.write(X.tobytes(order="C"))


def read_binary(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ContractViolation(f"{path}: truncated header")
    magic, version, _, m, n = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != BINARY_VERSION:
        raise ContractViolation(f"{path}: not a version-{BINARY_VERSION} path file")
    body = raw[_HEADER.size:]
    if len(body) != 8 * n * m:
        raise ContractViolation(f"{path}: expected {n}x{m} values, found {len(body) // 8}")
    return SeriesMatrix(np.frombuffer(body, dtype="<f8").reshape(n, m))


def write_path(path, X):
    (write_binary if str(path).endswith(".cqts") else write_csv)(path, X)


def read_path(path):
    return read_binary(path) if str(path).endswith(".cqts") else read_csv(path)


def write_records_csv(path, records, columns=None):
    """Flat CSV of record dictionaries; list-valued fields expand to ``name_1, name_2, ...``."""
    import csv

    rows = []
    for r in records:
        flat = {}
        for k, v in r.items():
            if isinstance(v, (list, tuple, np.ndarray)):
                for i, x in enumerate(np.ravel(np.asarray(v, dtype=object)), start=1):
                    flat[f"{k}_{i}"] = x
            else:
                flat[k] = v
        rows.append(flat)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(c for c in r if c not in columns)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({c: (repr(v) if isinstance(v, float) else v) for c, v in r.items()})


def dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_plain(obj), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
