"""Batch statistics over evaluation CSVs: Pearson correlation and OLS fits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from loguru import logger
from scipy import stats

from agentgraph.errors import DegenerateSampleError, RankDeficiencyError

REPORT_METRICS = (
    "node_f1",
    "edge_f1",
    "tool_f1",
    "node_label_similarity",
    "ssi",
    "path_length_similarity",
    "ged",
    "expected_complexity",
)
TARGET = "answer_score"


def pearson_r(x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
    """Sample correlation and its two-sided p-value (t-distribution, n - 2 dof)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateSampleError(f"samples must be 1-d and of equal length, got {x.shape} and {y.shape}")
    n = x.shape[0]
    if n < 3:
        raise DegenerateSampleError(f"need at least 3 observations, got {n}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateSampleError("samples contain non-finite values")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateSampleError("correlation is undefined for a constant sample")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * stats.t.sf(abs(t), n - 2))


@dataclass(frozen=True)
class OlsFit:
    intercept: float
    coefficients: Tuple[float, ...]
    r_squared: float


def ols_fit(features, target: Sequence[float]) -> OlsFit:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(target, dtype=float)
    n, k = X.shape
    if y.shape != (n,):
        raise ValueError(f"target has shape {y.shape}, expected ({n},)")
    if n < k + 1:
        raise RankDeficiencyError(f"{n} rows cannot fit {k} features plus an intercept")
    A = np.column_stack([np.ones(n), X])
    if np.linalg.matrix_rank(A) < k + 1:
        raise RankDeficiencyError("feature matrix (with intercept) is not full column rank")
    beta, *_ = np.linalg.lstsq(A, y, rcond=None)
    ss_res = float(np.sum((y - A @ beta) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 0.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return OlsFit(float(beta[0]), tuple(float(b) for b in beta[1:]), r_squared)


# ---------- Report ----------
def _correlations(frame: pd.DataFrame, metrics: Sequence[str], target: str) -> Dict[str, Optional[Dict[str, float]]]:
    out: Dict[str, Optional[Dict[str, float]]] = {}
    for metric in metrics:
        pair = frame[[metric, target]].dropna()
        try:
            r, p = pearson_r(pair[metric].to_numpy(), pair[target].to_numpy())
            out[metric] = {"r": r, "p": p}
        except DegenerateSampleError as e:
            logger.debug("r({}, {}) left blank: {}", metric, target, e)
            out[metric] = None
    return out


def _regression(frame: pd.DataFrame, metrics: Sequence[str],
                target: str) -> Tuple[Optional[Dict[str, Any]], Optional[str]]:
    """OLS over the non-constant metrics, or (None, reason it was left blank)."""
    data = frame[list(metrics) + [target]].dropna()
    # constant columns are collinear with the intercept
    usable = [m for m in metrics if data[m].nunique() > 1]
    if not usable:
        return None, f"no metric varies across the {len(data)} complete row(s)"
    if len(data) < len(usable) + 1:
        return None, (f"{len(usable)} varying metric(s) need at least {len(usable) + 1} complete rows, "
                      f"got {len(data)}")
    try:
        fit = ols_fit(data[usable].to_numpy(), data[target].to_numpy())
    except RankDeficiencyError as e:
        logger.debug("regression on {} left blank: {}", target, e)
        return None, str(e)
    coefficients = dict(zip(usable, fit.coefficients))
    return {
        "n": int(len(data)),
        "r_squared": fit.r_squared,
        "intercept": fit.intercept,
        "coefficients": coefficients,
        "ranking": sorted(coefficients, key=lambda m: (-abs(coefficients[m]), m)),
    }, None


def correlation_report(frame: pd.DataFrame, metrics: Sequence[str] = REPORT_METRICS, target: str = TARGET,
                       by: str = "category") -> Dict[str, Dict[str, Any]]:
    """Per group: r and p of each metric against the target, plus one OLS fit over all metrics."""
    metrics = [m for m in metrics if m in frame.columns]
    frame = frame.copy()
    for column in metrics + [target]:
        frame[column] = pd.to_numeric(frame[column], errors="coerce")
    report: Dict[str, Dict[str, Any]] = {}
    groups: List[Tuple[str, pd.DataFrame]] = [(str(name), part) for name, part in frame.groupby(by, sort=True)]
    groups.append(("all", frame))
    for name, part in groups:
        regression, note = _regression(part, metrics, target)
        report[name] = {
            "n": int(len(part)),
            "correlations": _correlations(part, metrics, target),
            "regression": regression,
            "regression_note": note,
        }
    return report


def report_table(report: Dict[str, Dict[str, Any]]) -> pd.DataFrame:
    """Metric rows x (group r, group p) columns; blank cells are degenerate."""
    columns: Dict[str, Dict[str, Optional[float]]] = {}
    rows: List[str] = []
    for group, section in report.items():
        for metric, cell in section["correlations"].items():
            columns.setdefault(f"{group} r", {})[metric] = cell["r"] if cell else None
            columns.setdefault(f"{group} p", {})[metric] = cell["p"] if cell else None
            if metric not in rows:
                rows.append(metric)
        reg = section["regression"]
        columns.setdefault(f"{group} r", {})["R^2 (OLS)"] = reg["r_squared"] if reg else None
    return pd.DataFrame(columns).reindex(rows + ["R^2 (OLS)"])
