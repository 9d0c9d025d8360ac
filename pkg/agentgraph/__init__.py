"""Task-graph execution engine and evaluation toolkit for LLM-driven agents."""
from agentgraph.graph_core import TaskEdge, TaskGraph, TaskNode, critical_path, topological_order, validate
from agentgraph.orchestration import DecompositionStrategy, produce_task_graph
from agentgraph.execution import ExecutionOptions, ExecutionTrace, execute_parallel, execute_sequential
from agentgraph.pipeline import Pipeline

__version__ = "0.1.0"

__all__ = [
    "DecompositionStrategy",
    "ExecutionOptions",
    "ExecutionTrace",
    "Pipeline",
    "TaskEdge",
    "TaskGraph",
    "TaskNode",
    "critical_path",
    "execute_parallel",
    "execute_sequential",
    "produce_task_graph",
    "topological_order",
    "validate",
]
