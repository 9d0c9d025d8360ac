from pathlib import Path

import pandas as pd
import streamlit as st

from agentgraph.analysis import correlation_report, report_table
from agentgraph.plots import correlation_figure

st.set_page_config(page_title="Metric Report", layout="wide")
st.title("📈 Metric Report")

csv_path = Path(st.sidebar.text_input("Metrics CSV", "reports/metrics.csv"))
if not csv_path.is_file():
    st.warning(f"{csv_path} not found. Run `python -m agentgraph eval ...` first.")
    st.stop()

frame = pd.read_csv(csv_path)
st.dataframe(frame, use_container_width=True, hide_index=True)

if "category" not in frame.columns or "answer_score" not in frame.columns:
    st.error("The CSV needs 'category' and 'answer_score' columns.")
    st.stop()

report = correlation_report(frame)
st.markdown("### Correlation with answer score")
st.dataframe(report_table(report), use_container_width=True)

group = st.selectbox("Group", list(report), index=len(report) - 1)
st.plotly_chart(correlation_figure(report, group), use_container_width=True)

regression = report[group]["regression"]
if regression:
    st.metric("R² (OLS)", f"{regression['r_squared']:.3f}")
    st.write("Features by |coefficient|: " + ", ".join(regression["ranking"]))
else:
    st.info(f"No regression for this group: {report[group]['regression_note']}")
