"""Run records and their JSON / CSV serialization."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .montecarlo import EmpiricalStats
from .problem import CSProblem, problem_to_mapping
from .sdp import CSSolution


class IoError(OSError):
    pass


def problem_digest(p: CSProblem) -> str:
    canon = json.dumps(problem_to_mapping(p), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def ellipse(Sigma: np.ndarray) -> dict[str, list]:
    """Eigen-pairs of a covariance (ascending), enough to draw confidence ellipses."""
    w, V = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
    return {"eigenvalues": w.tolist(), "eigenvectors": V.T.tolist()}


def step_records(mu: np.ndarray, Sigma: np.ndarray) -> list[dict[str, Any]]:
    return [
        {"k": k, "mu": mu[k].tolist(), "Sigma": Sigma[k].tolist(), "ellipse": ellipse(Sigma[k])}
        for k in range(mu.shape[0])
    ]


def solution_summary(sol: CSSolution) -> dict[str, Any]:
    return {
        "J_sdp": sol.J_sdp,
        "J_decision": sol.J_decision,
        "J_mean": sol.J_mean,
        "J_cov": sol.J_cov,
        "terminal_w2": sol.terminal_w2,
        "q_norm_max": sol.q_norm_max,
        "moment_mismatch": sol.moment_mismatch,
        "conic": {
            "backend": sol.conic.backend,
            "status": sol.conic.status,
            "iterations": sol.conic.iterations,
            "residuals": list(sol.conic.residuals),
        },
        "policy": {
            "v": sol.policy.v.tolist(),
            "K": sol.policy.K.tolist(),
            "Q": sol.policy.Q.tolist(),
        },
        "steps": step_records(sol.trajectory.mu, sol.trajectory.Sigma),
    }


@dataclass
class RunResult:
    command: str
    problem_digest: str
    options: dict[str, Any]
    summary: dict[str, Any]
    timings_ms: dict[str, float] = field(default_factory=dict)
    tool_version: str = __version__

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def _finite(obj) -> bool:
    if isinstance(obj, float):
        return math.isfinite(obj)
    if isinstance(obj, dict):
        return all(_finite(v) for v in obj.values())
    if isinstance(obj, (list, tuple)):
        return all(_finite(v) for v in obj)
    return True


def _jsonable(obj):
    if isinstance(obj, RunResult):
        return obj.to_dict()
    if isinstance(obj, EmpiricalStats):
        return {
            "rollouts": obj.rollouts,
            "seed": obj.seed,
            "terminal_w2": obj.terminal_w2,
            "steps": step_records(obj.sample_mean, obj.sample_cov),
        }
    return obj


def _step_rows(steps: list[dict[str, Any]]) -> tuple[list[str], list[list]]:
    n = len(steps[0]["mu"])
    head = ["k"] + [f"mu_{i}" for i in range(n)]
    head += [f"Sigma_{i}_{j}" for j in range(n) for i in range(j + 1)]
    head += [f"eigval_{i}" for i in range(n)]
    head += [f"eigvec_{i}_{j}" for i in range(n) for j in range(n)]
    rows = []
    for s in steps:
        S = s["Sigma"]
        row = [s["k"], *s["mu"]]
        row += [S[i][j] for j in range(n) for i in range(j + 1)]
        row += s["ellipse"]["eigenvalues"]
        row += [x for vec in s["ellipse"]["eigenvectors"] for x in vec]
        rows.append(row)
    return head, rows


def export_results(obj, path, fmt: str = "json") -> Path:
    """Write a run record, empirical statistics or a table (list of dicts).

    JSON is the complete record.  CSV writes flat per-step rows (``k``, mean,
    upper-triangle covariance, ellipse eigen-data) for records with steps, or
    one row per entry for tables.
    """
    path = Path(path)
    data = _jsonable(obj)
    if not _finite(data):
        raise ValueError("refusing to export non-finite numbers")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            path.write_text(json.dumps(data, indent=2) + "\n")
        elif fmt == "csv":
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                if isinstance(data, list):
                    keys = list(data[0].keys()) if data else []
                    writer.writerow(keys)
                    for row in data:
                        writer.writerow([row[k] for k in keys])
                else:
                    steps = data["summary"]["steps"] if "summary" in data else data["steps"]
                    head, rows = _step_rows(steps)
                    writer.writerow(head)
                    writer.writerows(rows)
        else:
            raise ValueError(f"unknown format {fmt!r}")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
