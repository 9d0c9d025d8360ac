"""Figure builders for the dashboard pages."""
from __future__ import annotations

import html
from typing import Any, Dict

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

from agentgraph.execution import ExecutionTrace

_LAYOUT = dict(
    plot_bgcolor="rgba(255,255,255,0.9)",
    paper_bgcolor="rgba(255,255,255,0.9)",
    font=dict(color="#2D3748"),
)

STATUS_COLORS = {"completed": "#4ECDC4", "failed": "#FF6B6B", "skipped": "#A0AEC0"}


def answer_card_html(answer: str) -> str:
    """Answer card markup; model text is escaped before it reaches unsafe_allow_html."""
    body = html.escape(answer).replace("\n", "<br>")
    return f'<div class="answer-card"><strong>Final answer</strong><br>{body}</div>'


def timeline_frame(trace: ExecutionTrace) -> pd.DataFrame:
    """One row per task that ran, offsets in seconds from the start of the run."""
    offsets = trace.timing.offsets()
    rows = []
    for result in trace.ordered_results():
        if result.task_id not in offsets:
            continue
        start, end = offsets[result.task_id]
        rows.append({
            "task": result.task_id,
            "label": result.label,
            "status": result.status.value,
            "start": start,
            "end": end,
            "duration": end - start,
            "tool_calls": len(result.tool_calls),
        })
    return pd.DataFrame(rows, columns=["task", "label", "status", "start", "end", "duration", "tool_calls"])


def timeline_figure(trace: ExecutionTrace) -> go.Figure:
    frame = timeline_frame(trace)
    fig = px.bar(frame, x="duration", y="task", base="start", orientation="h", color="status",
                 color_discrete_map=STATUS_COLORS, hover_data=["label", "tool_calls"],
                 title=f"Task timeline ({trace.mode.value}, {trace.wall_time:.3f}s)",
                 labels={"duration": "seconds since run start", "task": "Task"})
    fig.update_yaxes(autorange="reversed")
    fig.update_layout(**_LAYOUT)
    return fig


def correlation_frame(report: Dict[str, Dict[str, Any]], group: str) -> pd.DataFrame:
    rows = []
    for metric, cell in report[group]["correlations"].items():
        if cell is not None:
            rows.append({"metric": metric, "r": cell["r"], "p": cell["p"]})
    return pd.DataFrame(rows, columns=["metric", "r", "p"])


def correlation_figure(report: Dict[str, Dict[str, Any]], group: str) -> go.Figure:
    frame = correlation_frame(report, group)
    fig = px.bar(frame, x="metric", y="r", hover_data=["p"], range_y=[-1, 1],
                 title=f"Correlation with answer score ({group})",
                 labels={"r": "Pearson r", "metric": "Metric"})
    fig.update_layout(**_LAYOUT)
    return fig
