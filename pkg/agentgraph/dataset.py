"""Evaluation scenarios: graph builders, on-disk layout, validation and CSV builds.

A scenario directory (named ``slug(name)``) holds::

    metadata.json        {"name", "category", "complexity"}
    graph.json           {"task_graph": {"nodes": [...], "edges": [...]}}
    tools.json           tool manifest
    expected_calls.json  ordered tool names
    gold_response.txt    plain text
"""
from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import pandas as pd
from jsonschema import Draft202012Validator
from loguru import logger

from agentgraph.backends import ModelBackend
from agentgraph.embedding import EmbeddingProvider, HashEmbeddingProvider
from agentgraph.errors import (
    AgentGraphError,
    BackendError,
    GraphValidationError,
    ScenarioError,
    ToolRegistryError,
)
from agentgraph.graph_core import (
    TaskGraph,
    build_graph,
    complexity_score,
    serialize,
    topological_order,
    validate,
)
from agentgraph.orchestration import extract_json_object
from agentgraph.prompts import PROMPT_GENERATE_BEHAVIOR, fill
from agentgraph.tool_registry import (
    nearest_kept,
    parse_tool,
    remove_semantic_duplicates,
    render_output,
    to_manifest_entry,
)

CATEGORIES = ("sequential", "parallel", "async")
BOUNDARY_LABELS = ("Start", "End")
DEDUP_THRESHOLD = 0.8

METADATA_FILE = "metadata.json"
GRAPH_FILE = "graph.json"
TOOLS_FILE = "tools.json"
CALLS_FILE = "expected_calls.json"
GOLD_FILE = "gold_response.txt"
SCENARIO_FILES = (METADATA_FILE, GRAPH_FILE, TOOLS_FILE, CALLS_FILE, GOLD_FILE)

METADATA_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "category", "complexity"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "category": {"enum": list(CATEGORIES)},
        "complexity": {"type": "integer", "minimum": 0},
    },
}
_metadata_validator = Draft202012Validator(METADATA_SCHEMA)


def slug(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", name.lower()).strip("-") or "scenario"


def canonical_json(document: Any) -> str:
    return json.dumps(document, indent=2, ensure_ascii=False) + "\n"


# ---------- Graph builders ----------
def create_seq_task_graph(edges: Sequence[Tuple[Any, Any]], node_descriptions: Sequence[str]) -> TaskGraph:
    """Drop Start/End, renumber the rest task_1..task_k; edges are 1-based positions."""
    task_map: Dict[str, str] = {}
    nodes = []
    for position, description in enumerate(node_descriptions, start=1):
        if description in BOUNDARY_LABELS:
            continue
        task_id = f"task_{len(nodes) + 1}"
        task_map[str(position)] = task_id
        nodes.append((task_id, description))
    kept = [(task_map[str(u)], task_map[str(v)]) for u, v in edges if str(u) in task_map and str(v) in task_map]
    return build_graph(nodes, kept)


def create_parallel_graph(tools: Sequence[str]) -> TaskGraph:
    if not tools:
        raise ValueError("a parallel graph needs at least one tool")
    return build_graph([(i, tool) for i, tool in enumerate(tools, start=1)], [])


def create_async_graph(edges: Sequence[Tuple[Any, Any]], node_descriptions: Sequence[str]) -> TaskGraph:
    return build_graph(list(enumerate(node_descriptions, start=1)), list(edges))


# ---------- Records ----------
@dataclass(frozen=True)
class ScenarioRecord:
    name: str
    category: str
    expected_graph: TaskGraph
    tool_manifest: Tuple[Mapping[str, Any], ...]
    expected_tool_calls: Tuple[str, ...]
    gold_response: str
    complexity: int
    path: Optional[Path] = None

    @property
    def query(self) -> str:
        return self.name

    @property
    def slug(self) -> str:
        return slug(self.name)


def make_record(name: str, category: str, graph: TaskGraph, manifest: Sequence[Mapping[str, Any]],
                expected_calls: Sequence[str], gold_response: str) -> ScenarioRecord:
    return ScenarioRecord(name=name, category=category, expected_graph=graph, tool_manifest=tuple(manifest),
                          expected_tool_calls=tuple(expected_calls), gold_response=gold_response,
                          complexity=complexity_score(graph))


def check_record(record: ScenarioRecord) -> List[str]:
    """Invariant violations, empty when the record is consistent."""
    issues = []
    graph = record.expected_graph
    actual = complexity_score(graph)
    if record.complexity != actual:
        issues.append(f"complexity {record.complexity} in {METADATA_FILE} does not match graph complexity {actual}")
    if not graph.nodes:
        issues.append("graph has no tasks")
    if record.category not in CATEGORIES:
        issues.append(f"unknown category {record.category!r}")
    if record.category == "parallel" and graph.edges:
        issues.append(f"parallel scenario has {len(graph.edges)} edge(s)")
    if record.category == "sequential":
        dg = graph.digraph()
        if any(dg.in_degree(n) > 1 or dg.out_degree(n) > 1 for n in dg.nodes):
            issues.append("sequential scenario is not a chain")
    names = {entry.get("name") for entry in record.tool_manifest}
    unknown = sorted({call for call in record.expected_tool_calls if call not in names})
    if unknown:
        issues.append(f"expected calls name unknown tools: {', '.join(unknown)}")
    if not record.gold_response.strip():
        issues.append("gold response is empty")
    return issues


# ---------- Reading ----------
def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ScenarioError(path, "file is missing") from None
    except json.JSONDecodeError as e:
        raise ScenarioError(path, f"not valid JSON: {e}") from e


def load_scenario(directory: Union[str, Path]) -> ScenarioRecord:
    directory = Path(directory)
    meta_path = directory / METADATA_FILE
    meta = _read_json(meta_path)
    errors = list(_metadata_validator.iter_errors(meta))
    if errors:
        raise ScenarioError(meta_path, errors[0].message)

    graph_path = directory / GRAPH_FILE
    try:
        graph = validate(_read_json(graph_path))
    except GraphValidationError as e:
        raise ScenarioError(graph_path, str(e)) from e

    tools_path = directory / TOOLS_FILE
    manifest = _read_json(tools_path)
    if not isinstance(manifest, list):
        raise ScenarioError(tools_path, "tool manifest must be a list")
    seen = set()
    for entry in manifest:
        try:
            tool = parse_tool(entry)
        except (ToolRegistryError, TypeError) as e:
            raise ScenarioError(tools_path, str(e)) from e
        if tool.name in seen:
            raise ScenarioError(tools_path, f"tool {tool.name!r} declared twice")
        seen.add(tool.name)

    calls_path = directory / CALLS_FILE
    calls = _read_json(calls_path)
    if not isinstance(calls, list) or not all(isinstance(c, str) for c in calls):
        raise ScenarioError(calls_path, "expected calls must be a list of tool names")

    gold_path = directory / GOLD_FILE
    try:
        gold = gold_path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ScenarioError(gold_path, "file is missing") from None
    if gold.endswith("\n"):
        gold = gold[:-1]

    record = ScenarioRecord(name=meta["name"], category=meta["category"], expected_graph=graph,
                            tool_manifest=tuple(manifest), expected_tool_calls=tuple(calls),
                            gold_response=gold, complexity=meta["complexity"], path=directory)
    issues = check_record(record)
    if issues:
        raise ScenarioError(directory, "; ".join(issues))
    return record


def load_scenarios(root: Union[str, Path], max_workers: int = 4) -> Tuple[List[ScenarioRecord], List[ScenarioError]]:
    """Every scenario under `root`, sorted by name, plus one diagnostic per broken directory."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"scenario directory not found: {root}")
    directories = sorted(p for p in root.iterdir() if p.is_dir())

    def attempt(directory: Path) -> Union[ScenarioRecord, ScenarioError]:
        try:
            return load_scenario(directory)
        except ScenarioError as e:
            return e

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        outcomes = list(pool.map(attempt, directories))
    records = sorted((o for o in outcomes if isinstance(o, ScenarioRecord)), key=lambda r: r.name)
    diagnostics = [o for o in outcomes if isinstance(o, ScenarioError)]
    for diagnostic in diagnostics:
        logger.warning("skipping scenario: {}", diagnostic)
    return records, diagnostics


# ---------- Writing ----------
def serialize_scenario(record: ScenarioRecord) -> Dict[str, str]:
    """File name -> canonical file text."""
    return {
        METADATA_FILE: canonical_json({"name": record.name, "category": record.category,
                                       "complexity": record.complexity}),
        GRAPH_FILE: canonical_json(serialize(record.expected_graph)),
        TOOLS_FILE: canonical_json(list(record.tool_manifest)),
        CALLS_FILE: canonical_json(list(record.expected_tool_calls)),
        GOLD_FILE: record.gold_response + "\n",
    }


def write_scenario(record: ScenarioRecord, root: Union[str, Path]) -> Path:
    directory = Path(root) / record.slug
    directory.mkdir(parents=True, exist_ok=True)
    for filename, text in serialize_scenario(record).items():
        (directory / filename).write_text(text, encoding="utf-8")
    return directory


# ---------- Tool manifest synthesis ----------
def tool_name(description: str, taken: Sequence[str] = ()) -> str:
    base = re.sub(r"[^a-z0-9]+", "_", description.lower()).strip("_") or "tool"
    if base[0].isdigit():
        base = f"tool_{base}"
    name, n = base, 2
    while name in taken:
        name, n = f"{base}_{n}", n + 1
    return name


def _offline_entry(name: str, description: str) -> Dict[str, Any]:
    ref = hashlib.blake2b(description.encode("utf-8"), digest_size=3).hexdigest()
    return {
        "name": name,
        "description": description,
        "params": [],
        "behavior": {"kind": "fixed_output", "payload": f"{description}: done (ref {ref})"},
    }


def _proposed_entry(backend: ModelBackend, name: str, description: str) -> Dict[str, Any]:
    proposal = extract_json_object(backend.complete(fill(PROMPT_GENERATE_BEHAVIOR, description=description)))
    entry = {"name": name, "description": description,
             "params": proposal.get("params", []), "behavior": proposal.get("behavior")}
    return to_manifest_entry(parse_tool(entry))


def synthesize_tool_manifest(tool_descriptions: Sequence[str],
                             backend: Optional[ModelBackend] = None) -> List[Dict[str, Any]]:
    """One manifest entry per description; backend proposals get one retry before the offline fallback."""
    if not tool_descriptions:
        raise ValueError("need at least one tool description")
    manifest: List[Dict[str, Any]] = []
    names: List[str] = []
    for description in tool_descriptions:
        name = tool_name(description, names)
        names.append(name)
        entry = None
        if backend is not None:
            for attempt in (1, 2):
                try:
                    entry = _proposed_entry(backend, name, description)
                    break
                except (AgentGraphError, TypeError) as e:
                    logger.warning("behavior proposal {} for {!r} rejected: {}", attempt, name, e)
                    if isinstance(e, BackendError):
                        break
        manifest.append(entry or _offline_entry(name, description))
    return manifest


# ---------- Building from AsyncHow-format CSV ----------
CSV_COLUMNS = ("name", "category", "node_descriptions", "edges")


def _graph_for(category: str, descriptions: List[str], edges: List[Tuple[str, str]]) -> TaskGraph:
    if category == "sequential":
        return create_seq_task_graph(edges, descriptions)
    if category == "parallel":
        return create_parallel_graph([d for d in descriptions if d not in BOUNDARY_LABELS])
    return create_async_graph(edges, descriptions)


def build_record(name: str, category: str, descriptions: List[str], edges: List[Tuple[str, str]],
                 provider: EmbeddingProvider, backend: Optional[ModelBackend] = None,
                 gold_response: Optional[str] = None, threshold: float = DEDUP_THRESHOLD) -> ScenarioRecord:
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    graph = _graph_for(category, descriptions, edges)
    order = topological_order(graph)
    labels = [graph.label_of(t) for t in order]
    unique = remove_semantic_duplicates(list(dict.fromkeys(labels)), provider, threshold)
    manifest = synthesize_tool_manifest(unique, backend)
    by_description = {entry["description"]: entry["name"] for entry in manifest}
    calls = [by_description[nearest_kept(label, unique, provider)] for label in labels]

    if not gold_response:
        tools = {entry["name"]: parse_tool(entry) for entry in manifest}
        outputs = []
        for call in calls:
            try:
                outputs.append(render_output(tools[call], {}))
            except ToolRegistryError:
                outputs.append(tools[call].description)
        gold_response = "\n".join(outputs)
    return make_record(name, category, graph, manifest, calls, gold_response)


def build_from_csv(csv_path: Union[str, Path], out_root: Union[str, Path],
                   provider: Optional[EmbeddingProvider] = None, backend: Optional[ModelBackend] = None,
                   threshold: float = DEDUP_THRESHOLD) -> Tuple[List[Path], List[ScenarioError]]:
    csv_path = Path(csv_path)
    provider = provider or HashEmbeddingProvider()
    frame = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    missing = [c for c in CSV_COLUMNS if c not in frame.columns]
    if missing:
        raise ScenarioError(csv_path, f"missing column(s): {', '.join(missing)}")

    names = list(dict.fromkeys(frame["name"]))
    kept = set(remove_semantic_duplicates(names, provider, threshold)) if names else set()
    for dropped in (n for n in names if n not in kept):
        logger.info("dropping near-duplicate scenario {!r}", dropped)

    written: List[Path] = []
    diagnostics: List[ScenarioError] = []
    seen = set()
    for row_number, row in enumerate(frame.to_dict("records"), start=2):
        name = row["name"]
        if name not in kept or name in seen:
            continue
        seen.add(name)
        where = f"{csv_path}:{row_number}"
        try:
            descriptions = json.loads(row["node_descriptions"])
            edges = [(str(u), str(v)) for u, v in json.loads(row["edges"] or "[]")]
            record = build_record(name, row["category"], descriptions, edges, provider, backend,
                                  row.get("gold_response") or None, threshold)
        except (json.JSONDecodeError, ValueError, TypeError) as e:
            diagnostics.append(ScenarioError(where, str(e)))
            continue
        issues = check_record(record)
        if issues:
            diagnostics.append(ScenarioError(where, "; ".join(issues)))
            continue
        written.append(write_scenario(record, out_root))
        logger.info("wrote scenario {} ({} tasks, {} tools)", record.slug, len(record.expected_graph.nodes),
                    len(record.tool_manifest))
    for diagnostic in diagnostics:
        logger.warning("not built: {}", diagnostic)
    return written, diagnostics
