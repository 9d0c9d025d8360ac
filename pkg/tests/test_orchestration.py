from __future__ import annotations

import json

import pytest

from agentgraph.backends import load_rules
from agentgraph.errors import BackendError, CycleError, OrchestrationError, ParseError
from agentgraph.orchestration import (
    DecompositionStrategy,
    Orchestrator,
    build_task_graph_prompt,
    extract_json_object,
    produce_task_graph,
)
from agentgraph.prompts import STRATEGY_CLAUSES, fill

VALID = json.dumps({"nodes": [{"id": 1, "label": "boil water"}, {"id": 2, "label": "pour tea"}],
                    "edges": [{"from": 1, "to": 2}]})
CYCLIC = json.dumps({"nodes": [{"id": 1, "label": "a"}, {"id": 2, "label": "b"}],
                     "edges": [{"from": 1, "to": 2}, {"from": 2, "to": 1}]})


def test_fill_is_single_pass_and_keeps_unknown_slots() -> None:
    assert fill("{a} and {b}", a="{b}", b="x") == "{b} and x"
    assert fill('{"id": 1} {missing}') == '{"id": 1} {missing}'


def test_prompt_includes_query_and_strategy_clause() -> None:
    prompt = build_task_graph_prompt("make tea", DecompositionStrategy.DEFAULT)
    assert "User Query: make tea" in prompt
    assert not any(clause in prompt for clause in STRATEGY_CLAUSES.values())
    coarse = build_task_graph_prompt("make tea", "coarse")
    assert coarse.startswith(prompt)
    assert coarse.endswith(STRATEGY_CLAUSES["coarse"])


def test_prompt_rejects_empty_query() -> None:
    with pytest.raises(ValueError):
        build_task_graph_prompt("   ")


def test_strategy_parse() -> None:
    assert DecompositionStrategy.parse("critical-path") is DecompositionStrategy.CRITICAL_PATH
    assert DecompositionStrategy.parse("FINE") is DecompositionStrategy.FINE
    assert DecompositionStrategy.parse(None) is DecompositionStrategy.DEFAULT
    with pytest.raises(ValueError):
        DecompositionStrategy.parse("balanced")


def test_extract_json_object_skips_prose_and_broken_objects() -> None:
    assert extract_json_object('Sure! {"a": 1} hope that helps') == {"a": 1}
    assert extract_json_object('{oops} then {"b": {"c": 2}}') == {"b": {"c": 2}}
    with pytest.raises(ParseError):
        extract_json_object("[1, 2, 3]")
    with pytest.raises(ParseError):
        extract_json_object("no graph here")


def test_valid_first_response_uses_one_call(sequence_backend) -> None:
    backend = sequence_backend([f"Here you go:\n{VALID}"])
    graph = produce_task_graph(backend, "make tea")
    assert graph.labels() == {"1": "boil water", "2": "pour tea"}
    assert len(backend.prompts) == 1


def test_cycle_is_repaired_with_error_in_prompt(sequence_backend) -> None:
    backend = sequence_backend([CYCLIC, VALID])
    graph = produce_task_graph(backend, "make tea", max_repairs=2)
    assert len(graph.nodes) == 2
    assert len(backend.prompts) == 2
    assert backend.prompts[1].startswith(backend.prompts[0])
    assert "task graph contains a cycle" in backend.prompts[1]


@pytest.mark.parametrize("max_repairs", [0, 1, 3])
def test_attempts_are_bounded(sequence_backend, max_repairs) -> None:
    backend = sequence_backend([CYCLIC])
    with pytest.raises(OrchestrationError) as excinfo:
        produce_task_graph(backend, "make tea", max_repairs=max_repairs)
    assert excinfo.value.attempts == max_repairs + 1
    assert isinstance(excinfo.value.last_error, CycleError)
    assert len(backend.prompts) == max_repairs + 1


def test_unparseable_responses_exhaust_repairs(sequence_backend) -> None:
    backend = sequence_backend(["I would rather not."])
    with pytest.raises(OrchestrationError) as excinfo:
        produce_task_graph(backend, "make tea", max_repairs=1)
    assert isinstance(excinfo.value.last_error, ParseError)


def test_negative_repairs_rejected(sequence_backend) -> None:
    with pytest.raises(ValueError):
        produce_task_graph(sequence_backend([VALID]), "make tea", max_repairs=-1)


def test_backend_errors_are_not_repaired(failing_backend) -> None:
    with pytest.raises(BackendError):
        produce_task_graph(failing_backend, "make tea")


def test_orchestrator_with_rule_file(data_dir) -> None:
    backend = load_rules(data_dir / "rules" / "dinner.yaml")
    graph = Orchestrator(backend, "fine").generate_task_graph("plan a dinner in Paris")
    assert graph.labels() == {"1": "weather forecast", "2": "find nearby restaurants", "3": "send email"}
    assert graph.edge_pairs() == [("1", "3"), ("2", "3")]
    assert backend.call_count == 1
    assert STRATEGY_CLAUSES["fine"] in backend.calls[0]["prompt"]
