import streamlit as st

from agentgraph.backends import load_rules
from agentgraph.errors import AgentGraphError
from agentgraph.embedding import HashEmbeddingProvider
from agentgraph.pipeline import Pipeline
from agentgraph.plots import answer_card_html, timeline_figure, timeline_frame
from agentgraph.tool_registry import load_manifest

# Page configuration
st.set_page_config(
    page_title="AgentGraph Console",
    layout="wide",
    initial_sidebar_state="expanded"
)

st.markdown("""
<style>
    @import url('https://fonts.googleapis.com/css2?family=Inter:wght@300;400;600;700&display=swap');

    .stApp {
        background: linear-gradient(135deg, #667eea 0%, #764ba2 100%);
        font-family: 'Inter', sans-serif;
    }

    .console-title {
        font-size: 3.2rem;
        font-weight: 800;
        background: linear-gradient(45deg, #FF6B35, #4ECDC4, #A363D9);
        -webkit-background-clip: text;
        -webkit-text-fill-color: transparent;
        text-align: center;
        margin-bottom: 1rem;
    }

    .answer-card {
        background: rgba(255, 255, 255, 0.98);
        padding: 1.5rem;
        border-radius: 15px;
        margin: 1rem 0;
        box-shadow: 0 5px 15px rgba(0,0,0,0.1);
        border-left: 4px solid #4ECDC4;
        color: #2D3748;
    }

    .stats-card {
        background: rgba(255, 255, 255, 0.95);
        padding: 1.2rem;
        border-radius: 15px;
        text-align: center;
        box-shadow: 0 10px 25px rgba(0,0,0,0.1);
    }
</style>
""", unsafe_allow_html=True)

st.markdown('<h1 class="console-title">🕸️ AgentGraph Console</h1>', unsafe_allow_html=True)

# Sidebar: run settings
st.sidebar.markdown("### ⚙️ Run settings")
rules_path = st.sidebar.text_input("Scripted rules (YAML)", "data/rules/dinner.yaml")
tools_path = st.sidebar.text_input("Tool manifest (JSON)", "data/catalog/tools.json")
mode = st.sidebar.radio("Execution mode", ["par", "seq"], horizontal=True)
strategy = st.sidebar.selectbox("Decomposition strategy", ["default", "coarse", "fine", "critical_path"])
latency_ms = st.sidebar.slider("Simulated tool latency (ms)", 0, 500, 0, step=50)
tool_filtering = st.sidebar.checkbox("Semantic tool filtering", value=True)
indirect = st.sidebar.checkbox("Buffer indirect dependencies", value=False)
feedback = st.sidebar.checkbox("Progress feedback", value=False)

query = st.text_input("Query", "plan a dinner in Paris")

if st.button("🚀 Run", use_container_width=True):
    try:
        backend = load_rules(rules_path)
        catalog = load_manifest(tools_path, HashEmbeddingProvider())
        if latency_ms:
            catalog = catalog.with_latency(latency_ms / 1000.0)
        pipeline = Pipeline(backend, catalog, strategy=strategy, mode=mode,
                            semantic_tool_filtering=tool_filtering,
                            include_indirect_dependencies=indirect,
                            generate_feedback=feedback)
        with st.spinner("Running task graph..."):
            st.session_state["trace"] = pipeline.run(query)
    except (AgentGraphError, OSError, ValueError) as e:
        st.error(f"Run failed: {e}")

trace = st.session_state.get("trace")
if trace is not None:
    st.markdown(answer_card_html(trace.final_answer), unsafe_allow_html=True)

    col1, col2, col3, col4 = st.columns(4)
    statuses = [r.status.value for r in trace.ordered_results()]
    with col1:
        st.metric("Tasks", len(statuses))
    with col2:
        st.metric("Completed", statuses.count("completed"))
    with col3:
        st.metric("Tool calls", len(trace.tool_call_names()))
    with col4:
        st.metric("Wall time", f"{trace.wall_time:.3f}s")

    st.plotly_chart(timeline_figure(trace), use_container_width=True)
    st.dataframe(timeline_frame(trace), use_container_width=True, hide_index=True)

    if trace.feedback:
        st.markdown("### 💬 Feedback")
        for event in trace.feedback:
            st.info(f"[{event.task_id}] {event.phrase}")

st.sidebar.success("✅ **Trace and report pages are in the sidebar**")
