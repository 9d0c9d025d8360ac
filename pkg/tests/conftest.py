"""Shared fixtures: offline provider, fixture catalog, scripted backends, scenario trees."""
import shutil
import sys
from pathlib import Path

import pytest
from loguru import logger

from agentgraph.backends import ScriptedBackend
from agentgraph.embedding import HashEmbeddingProvider
from agentgraph.errors import BackendError
from agentgraph.execution import tool_call_block
from agentgraph.graph_core import build_graph
from agentgraph.tool_registry import build_catalog, load_manifest

DATA = Path(__file__).resolve().parent.parent / "data"


class SequenceBackend:
    """Returns responses in order across successive complete() calls; repeats the last one."""

    backend_id = "sequence"

    def __init__(self, responses):
        self.responses = list(responses)
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        return self.responses[min(len(self.prompts), len(self.responses)) - 1]


class FailingBackend:
    backend_id = "failing"

    def complete(self, prompt):
        raise BackendError("connection refused")


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def provider():
    return HashEmbeddingProvider()


@pytest.fixture
def catalog(provider):
    return load_manifest(DATA / "catalog" / "tools.json", provider)


@pytest.fixture
def scripted():
    """Factory fixture: scripted(pairs=[(substring, response)], fallback='')."""

    def _factory(pairs=(), fallback=""):
        return ScriptedBackend.from_pairs(list(pairs), fallback=fallback)

    return _factory


@pytest.fixture
def sequence_backend():
    return SequenceBackend


@pytest.fixture
def failing_backend():
    return FailingBackend()


@pytest.fixture
def fixed_catalog(provider):
    """Factory fixture: one fixed_output tool per (name, description, output)."""

    def _factory(*tools):
        entries = [
            {"name": name, "description": description, "params": [],
             "behavior": {"kind": "fixed_output", "payload": output}}
            for name, description, output in tools
        ]
        return build_catalog(entries, provider)

    return _factory


@pytest.fixture
def briefing_graph():
    # 1 and 4 are independent; 4 -> 2 -> 3
    return build_graph(
        [(1, "fetch sunrise time"), (2, "convert money"), (3, "send email"), (4, "weather forecast")],
        [(4, 2), (2, 3)],
    )


@pytest.fixture
def briefing_backend(scripted):
    calls = {
        "fetch sunrise time": ("sunrise_time", {}),
        "weather forecast": ("weather_lookup", {"city": "Lisbon"}),
        "convert money": ("currency_convert", {"pair": "USD-EUR"}),
        "send email": ("send_email", {"recipient": "team"}),
    }
    pairs = [("Generate a concise final response", "briefing ready")]
    pairs += [(f"Task: {label}", tool_call_block([call])) for label, call in calls.items()]
    return scripted(pairs)


@pytest.fixture
def scenario_tree(tmp_path):
    root = tmp_path / "scenarios"
    shutil.copytree(DATA / "scenarios", root)
    return root


@pytest.fixture(autouse=True)
def _reset_logging():
    # main() swaps the loguru sinks
    yield
    logger.remove()
    logger.add(sys.stderr, level="DEBUG")
