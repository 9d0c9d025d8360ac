"""Query -> TaskGraph through a model backend, with a bounded repair loop."""
from __future__ import annotations

import json
from enum import Enum
from typing import Any, Dict, Optional, Union

from loguru import logger

from agentgraph.backends import ModelBackend
from agentgraph.errors import GraphValidationError, OrchestrationError, ParseError
from agentgraph.graph_core import TaskGraph, validate
from agentgraph.prompts import PROMPT_REPAIR, PROMPT_TASK_GRAPH, STRATEGY_CLAUSES, fill

DEFAULT_MAX_REPAIRS = 2


class DecompositionStrategy(str, Enum):
    COARSE = "coarse"
    FINE = "fine"
    CRITICAL_PATH = "critical_path"
    DEFAULT = "default"

    @classmethod
    def parse(cls, value: Union[str, "DecompositionStrategy", None]) -> "DecompositionStrategy":
        if value is None:
            return cls.DEFAULT
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower().replace("-", "_"))
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown decomposition strategy {value!r} (choose from {choices})") from None


def build_task_graph_prompt(query: str, strategy: DecompositionStrategy = DecompositionStrategy.DEFAULT) -> str:
    if not query or not query.strip():
        raise ValueError("query must be non-empty")
    strategy = DecompositionStrategy.parse(strategy)
    prompt = fill(PROMPT_TASK_GRAPH, user_query=query)
    clause = STRATEGY_CLAUSES.get(strategy.value)
    if clause:
        prompt += "\n\n" + clause
    return prompt


def extract_json_object(text: str) -> Dict[str, Any]:
    """First top-level JSON object in `text`; surrounding prose is ignored."""
    decoder = json.JSONDecoder()
    start = text.find("{")
    while start != -1:
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            start = text.find("{", start + 1)
            continue
        if isinstance(obj, dict):
            return obj
        start = text.find("{", start + 1)
    raise ParseError("model response contains no JSON object")


def produce_task_graph(backend: ModelBackend, query: str,
                       strategy: DecompositionStrategy = DecompositionStrategy.DEFAULT,
                       max_repairs: int = DEFAULT_MAX_REPAIRS) -> TaskGraph:
    if max_repairs < 0:
        raise ValueError(f"max_repairs must be >= 0, got {max_repairs}")
    base_prompt = build_task_graph_prompt(query, strategy)
    prompt = base_prompt
    last_error: Optional[GraphValidationError] = None
    attempts = max_repairs + 1

    for attempt in range(1, attempts + 1):
        # BackendError is not caught: transport failures are not repairable
        response = backend.complete(prompt)
        try:
            graph = validate(extract_json_object(response))
        except GraphValidationError as e:
            last_error = e
            logger.warning("task graph attempt {}/{} rejected: {}", attempt, attempts, e)
            prompt = base_prompt + fill(PROMPT_REPAIR, error=str(e))
            continue
        logger.debug("task graph accepted on attempt {} ({} nodes, {} edges)",
                     attempt, len(graph.nodes), len(graph.edges))
        return graph

    raise OrchestrationError(last_error, attempts)


class Orchestrator:
    """Holds the decomposition settings; every call is independent."""

    def __init__(self, backend: ModelBackend,
                 strategy: Union[str, DecompositionStrategy] = DecompositionStrategy.DEFAULT,
                 max_repairs: int = DEFAULT_MAX_REPAIRS):
        self.backend = backend
        self.strategy = DecompositionStrategy.parse(strategy)
        self.max_repairs = max_repairs

    def generate_task_graph(self, query: str) -> TaskGraph:
        return produce_task_graph(self.backend, query, self.strategy, self.max_repairs)
