"""Deterministic JSON/CSV writers, run manifests and the output validator."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from pathlib import Path

import numpy as np

# file stem -> CSV header; the data dictionary documents every column
CSV_SCHEMAS = {
    "eigs": ["level", "lambda", "multiplicity", "residual"],
    "fucik": ["a", "nu", "mu", "n_residual_flag", "m_residual_flag"],
    "fucik_symmetry": ["a", "b", "n_ab", "n_ba", "m_ab", "m_ba", "theta_diff", "tau_diff"],
    "bubble": ["record", "expected_exponent", "fitted_exponent", "loglog_slope",
               "correction_exponent", "passed"],
    "bubble_data": ["eps", "seminorm_dev", "critical_dev", "l1", "p_minus_1", "l2"],
    "linking": ["sample", "sup", "sigma", "tau", "interior", "I"],
    "cutoff": ["mu", "difference_seminorm", "seminorm_increase", "critical_loss", "jumping_loss", "cutoff_operator_norm"],
    "solve_trace": ["iteration", "level", "grad_norm", "step", "t"],
    "solution": None,          # x [y] u, header depends on dimension
    "degiorgi": ["side", "k", "C_k", "A_k", "U_k", "support_measure", "monotone", "set_inclusion",
                 "measure_bound", "pointwise_bound", "recursion", "decay"],
}

JSON_KEYS = {
    "eigs": ["config", "lambdas", "multiplicities", "residuals", "sign_hypothesis", "passed"],
    "fucik": ["config", "level", "checks", "crossing", "symmetry", "passed"],
    "bubble": ["config", "sobolev", "estimates", "passed"],
    "linking": ["config", "above_sup", "passed"],
    "solve": ["config", "problem", "result", "passed"],
    "degiorgi": ["config", "result", "passed"],
    "operator": ["config", "n_dof", "files", "quadrature"],
    "manifest": ["tool", "version", "command", "seed", "config", "timings", "files"],
}


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row width {len(row)} does not match {len(columns)} columns in {path}")
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, command, seed, config, timings, files, version) -> str:
    path = os.path.join(directory, "manifest.json")
    digests = {os.path.basename(f): sha256(f) for f in sorted(files)}
    write_json(path, {"tool": "fracfucik", "version": version, "command": command, "seed": seed,
                      "config": config, "timings": timings, "files": digests})
    return path


# ---------------------------------------------------------------------------
# validation

def validate_file(path) -> list:
    """Problems found in one output file (empty list when it re-parses cleanly)."""
    path = Path(path)
    problems = []
    if not path.exists():
        return [f"{path}: missing"]
    kind = path.stem
    try:
        if path.suffix == ".csv":
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))
            if not rows:
                return [f"{path}: empty CSV"]
            header, body = rows[0], rows[1:]
            expected = CSV_SCHEMAS.get(kind, "unknown")
            if expected == "unknown":
                problems.append(f"{path}: unknown CSV kind '{kind}'")
            elif expected is not None and header != expected:
                problems.append(f"{path}: header {header} != {expected}")
            elif expected is None and (header[-1] != "u" or not 2 <= len(header) <= 3):
                problems.append(f"{path}: solution header {header} invalid")
            for i, row in enumerate(body, 2):
                if len(row) != len(header):
                    problems.append(f"{path}:{i}: {len(row)} fields, expected {len(header)}")
                    continue
                for name, val in zip(header, row):
                    if name in ("record", "side") or name.endswith("_flag") or val == "":
                        continue
                    float(val)
        elif path.suffix == ".json":
            data = json.loads(path.read_text())
            keys = JSON_KEYS.get(kind)
            if keys is None:
                problems.append(f"{path}: unknown JSON kind '{kind}'")
            else:
                missing = [k for k in keys if k not in data]
                if missing:
                    problems.append(f"{path}: missing keys {missing}")
            if kind == "manifest":
                for name, digest in data.get("files", {}).items():
                    target = path.parent / name
                    if not target.exists():
                        problems.append(f"{path}: listed file {name} missing")
                    elif sha256(target) != digest:
                        problems.append(f"{path}: digest mismatch for {name}")
        elif path.suffix == ".triplets":
            data = np.loadtxt(path, comments="#", ndmin=2)
            if data.size and data.shape[1] != 3:
                problems.append(f"{path}: expected 3 columns")
        else:
            problems.append(f"{path}: unknown file type")
    except (ValueError, json.JSONDecodeError, csv.Error, UnicodeDecodeError) as exc:
        problems.append(f"{path}: {exc}")
    return problems
