import json
from pathlib import Path

import pandas as pd
import streamlit as st

from agentgraph.execution import load_trace
from agentgraph.plots import timeline_figure, timeline_frame

st.set_page_config(page_title="Trace Timeline", layout="wide")
st.title("📊 Trace Timeline")

trace_dir = Path(st.sidebar.text_input("Trace directory", "traces"))
files = sorted(trace_dir.glob("*.json")) if trace_dir.is_dir() else []
if not files:
    st.warning(f"No trace files in {trace_dir}. Run `python -m agentgraph run ...` first.")
    st.stop()

picked = st.selectbox("Trace", files, format_func=lambda p: p.stem)
try:
    trace = load_trace(picked)
except (OSError, KeyError, ValueError) as e:
    st.error(f"Cannot read {picked}: {e}")
    st.stop()

st.markdown(f"**Query:** {trace.query}  \n**Mode:** {trace.mode.value}  \n**Wall time:** {trace.wall_time:.3f}s")
st.plotly_chart(timeline_figure(trace), use_container_width=True)

rows = [{"task": r.task_id, "label": r.label, "status": r.status.value, "output": r.output,
         "error": r.error or ""} for r in trace.ordered_results()]
st.dataframe(pd.DataFrame(rows), use_container_width=True, hide_index=True)

with st.expander("Timing"):
    st.dataframe(timeline_frame(trace), use_container_width=True, hide_index=True)
with st.expander("Run configuration"):
    st.code(json.dumps(trace.config, indent=2, sort_keys=True), language="json")
