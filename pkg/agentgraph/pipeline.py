from __future__ import annotations

from typing import Optional, Union

from loguru import logger

from agentgraph.backends import ModelBackend
from agentgraph.execution import (
    ExecutionMode,
    ExecutionOptions,
    ExecutionTrace,
    Executor,
    FeedbackSystem,
)
from agentgraph.orchestration import DEFAULT_MAX_REPAIRS, DecompositionStrategy, Orchestrator
from agentgraph.tool_registry import ToolCatalog


class Pipeline:
    """Query in, trace out: orchestrate a task graph then execute it.

    The four switches mirror the component flags of the agent architecture:
    semantic tool filtering, indirect-dependency buffers, progress feedback and
    timing profiles.
    """

    def __init__(self, backend: ModelBackend, catalog: ToolCatalog, *,
                 strategy: Union[str, DecompositionStrategy] = DecompositionStrategy.DEFAULT,
                 mode: Union[str, ExecutionMode] = ExecutionMode.PARALLEL,
                 semantic_tool_filtering: bool = True,
                 include_indirect_dependencies: bool = False,
                 generate_feedback: bool = False,
                 profile_execution_timings: bool = False,
                 max_concurrency: Optional[int] = None,
                 tool_k: int = 5,
                 tool_min_sim: float = 0.0,
                 max_repairs: int = DEFAULT_MAX_REPAIRS,
                 consolidation: str = "backend",
                 feedback_system: Optional[FeedbackSystem] = None):
        self.orchestrator = Orchestrator(backend, strategy, max_repairs)
        self.backend = backend
        self.catalog = catalog
        self.mode = ExecutionMode.parse(mode)
        feedback = feedback_system if feedback_system is not None else (FeedbackSystem() if generate_feedback else None)
        self.options = ExecutionOptions(
            include_indirect_dependencies=include_indirect_dependencies,
            max_concurrency=max_concurrency,
            semantic_tool_filtering=semantic_tool_filtering,
            tool_k=tool_k,
            tool_min_sim=tool_min_sim,
            feedback=feedback,
            profile=profile_execution_timings,
            consolidation=consolidation,
        )

    def run(self, query: str) -> ExecutionTrace:
        graph = self.orchestrator.generate_task_graph(query)
        logger.info("task graph: {} tasks, {} dependencies", len(graph.nodes), len(graph.edges))
        trace = Executor(graph, self.catalog, self.backend, self.options, query).run(self.mode)
        trace.config = {
            "strategy": self.orchestrator.strategy.value,
            "max_repairs": self.orchestrator.max_repairs,
            "mode": self.mode.value,
            **trace.config,
        }
        return trace
