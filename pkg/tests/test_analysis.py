from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from agentgraph.analysis import correlation_report, ols_fit, pearson_r, report_table
from agentgraph.errors import DegenerateSampleError, RankDeficiencyError


def test_pearson_perfect_correlation() -> None:
    assert pearson_r([1, 2, 3], [2, 4, 6]) == (1.0, 0.0)
    assert pearson_r([1, 2, 3], [3, 2, 1]) == (-1.0, 0.0)


def test_pearson_matches_reference_values() -> None:
    x, y = [1, 2, 3, 4], [1, 3, 2, 4]
    r, p = pearson_r(x, y)
    assert r == pytest.approx(0.8)
    reference = stats.pearsonr(x, y)
    assert r == pytest.approx(reference[0])
    assert p == pytest.approx(reference[1])
    # by hand: t = r * sqrt((n - 2) / (1 - r^2)) with 2 degrees of freedom
    t = 0.8 * math.sqrt(2 / 0.36)
    assert p == pytest.approx(2 * stats.t.sf(t, 2))


@pytest.mark.parametrize(
    "x, y",
    [
        ([1, 2], [1, 2]),
        ([1, 1, 1], [1, 2, 3]),
        ([1, 2, 3], [5, 5, 5]),
        ([1, 2, float("nan")], [1, 2, 3]),
        ([1, 2, 3], [1, 2, 3, 4]),
    ],
)
def test_pearson_degenerate_samples(x, y) -> None:
    with pytest.raises(DegenerateSampleError):
        pearson_r(x, y)


def test_ols_recovers_an_exact_plane() -> None:
    X = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [2, 3]], dtype=float)
    y = 3 + 2 * X[:, 0] - X[:, 1]
    fit = ols_fit(X, y)
    assert fit.intercept == pytest.approx(3.0)
    assert fit.coefficients == pytest.approx((2.0, -1.0))
    assert fit.r_squared == pytest.approx(1.0)


def test_ols_single_feature_matches_hand_computation() -> None:
    fit = ols_fit([1, 2, 3, 4], [1, 3, 2, 4])
    # slope = sxy / sxx = 4 / 5, intercept = 2.5 - 0.8 * 2.5
    assert fit.coefficients == pytest.approx((0.8,))
    assert fit.intercept == pytest.approx(0.5)
    assert fit.r_squared == pytest.approx(0.64)


def test_ols_constant_target_has_zero_r_squared() -> None:
    fit = ols_fit([1, 2, 3], [2, 2, 2])
    assert fit.r_squared == 0.0
    assert fit.coefficients == pytest.approx((0.0,))


def test_ols_rank_deficiency() -> None:
    with pytest.raises(RankDeficiencyError):
        ols_fit([[1, 2], [2, 4], [3, 6], [4, 8]], [1, 2, 3, 4])
    with pytest.raises(RankDeficiencyError):
        ols_fit([[1, 2], [2, 1]], [1, 2])
    with pytest.raises(RankDeficiencyError):
        ols_fit([4, 4, 4], [1, 2, 3])
    with pytest.raises(ValueError):
        ols_fit([1, 2, 3], [1, 2])


@pytest.fixture
def metrics_frame():
    return pd.DataFrame({
        "scenario": ["a", "b", "c", "d", "e", "f"],
        "category": ["seq", "seq", "seq", "parallel", "parallel", "seq"],
        "node_f1": [0.2, 0.5, 0.9, 1.0, 0.4, 0.7],
        "ssi": [0.5, 0.5, 0.5, 0.7, 0.2, 0.5],
        "answer_score": [0.1, 0.5, 0.8, 0.9, 0.3, None],
    })


def test_correlation_report_groups(metrics_frame) -> None:
    report = correlation_report(metrics_frame, metrics=("node_f1", "ssi", "missing_metric"))
    assert list(report) == ["parallel", "seq", "all"]
    assert report["seq"]["n"] == 4
    assert report["all"]["n"] == 6

    seq = report["seq"]
    expected_r, expected_p = stats.pearsonr([0.2, 0.5, 0.9], [0.1, 0.5, 0.8])
    assert seq["correlations"]["node_f1"] == pytest.approx({"r": expected_r, "p": expected_p})
    assert seq["correlations"]["ssi"] is None
    assert "missing_metric" not in seq["correlations"]
    assert report["parallel"]["correlations"]["node_f1"] is None

    assert seq["regression"]["n"] == 3
    assert list(seq["regression"]["coefficients"]) == ["node_f1"]
    assert seq["regression"]["r_squared"] == pytest.approx(expected_r ** 2)

    everything = report["all"]["regression"]
    assert set(everything["coefficients"]) == {"node_f1", "ssi"}
    coefficients = everything["coefficients"]
    assert everything["ranking"] == sorted(coefficients, key=lambda m: -abs(coefficients[m]))


def test_report_table_layout(metrics_frame) -> None:
    report = correlation_report(metrics_frame, metrics=("node_f1", "ssi"))
    table = report_table(report)
    assert list(table.columns) == ["parallel r", "parallel p", "seq r", "seq p", "all r", "all p"]
    assert list(table.index) == ["node_f1", "ssi", "R^2 (OLS)"]
    assert table.loc["node_f1", "all r"] == pytest.approx(report["all"]["correlations"]["node_f1"]["r"])
    assert pd.isna(table.loc["ssi", "seq r"])
    assert pd.isna(table.loc["R^2 (OLS)", "all p"])


def test_blank_regressions_carry_a_reason(metrics_frame) -> None:
    report = correlation_report(metrics_frame, metrics=("node_f1", "ssi"))
    assert report["seq"]["regression_note"] is None
    parallel = report["parallel"]
    assert parallel["regression"] is None
    assert "need at least 3 complete rows, got 2" in parallel["regression_note"]

    flat = metrics_frame.assign(node_f1=0.5, ssi=0.5)
    note = correlation_report(flat, metrics=("node_f1", "ssi"))["all"]["regression_note"]
    assert note == "no metric varies across the 5 complete row(s)"
