from __future__ import annotations

import json
import string
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from jsonschema import Draft202012Validator
from loguru import logger

from agentgraph.embedding import EmbeddingProvider, EmbeddingVector, similarity_matrix
from agentgraph.errors import (
    BadBehaviorSpecError,
    DuplicateToolError,
    ManifestParseError,
    MissingArgumentError,
    TableKeyError,
    ToolRenderError,
    UnknownToolError,
)

BEHAVIOR_KINDS = ("fixed_output", "template", "table_lookup")

# ---------- Manifest schema ----------
MANIFEST_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "additionalProperties": False,
        "required": ["name", "description", "params", "behavior"],
        "properties": {
            "name": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"},
            "description": {"type": "string", "minLength": 1},
            "params": {
                "type": "array",
                "items": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["name", "type", "required"],
                    "properties": {
                        "name": {"type": "string", "pattern": "^[A-Za-z_][A-Za-z0-9_]*$"},
                        "type": {"type": "string", "minLength": 1},
                        "required": {"type": "boolean"},
                        "default": {},
                    },
                },
            },
            "behavior": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind", "payload"],
                "properties": {
                    "kind": {"enum": list(BEHAVIOR_KINDS)},
                    "payload": {},
                },
            },
        },
    },
}

_manifest_validator = Draft202012Validator(MANIFEST_SCHEMA)
_NO_DEFAULT = object()


# ---------- Types ----------
@dataclass(frozen=True)
class ToolParam:
    name: str
    type: str
    required: bool = True
    default: Any = _NO_DEFAULT

    @property
    def has_default(self) -> bool:
        return self.default is not _NO_DEFAULT


@dataclass(frozen=True)
class BehaviorSpec:
    kind: str
    payload: Any


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    params: Tuple[ToolParam, ...]
    behavior: BehaviorSpec
    embedding: Optional[EmbeddingVector] = None

    def signature(self) -> str:
        args = ", ".join(f"{p.name}{'' if p.required else '?'}: {p.type}" for p in self.params)
        return f"{self.name}({args}): {self.description}"


@dataclass(frozen=True)
class ToolCall:
    tool_name: str
    arguments: Mapping[str, Any]
    output: str
    at: float = 0.0


@dataclass(frozen=True)
class ToolCatalog:
    tools: Mapping[str, ToolDescriptor]
    provider: EmbeddingProvider
    latency: Optional[Callable[[str], float]] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.tools)

    def names(self) -> List[str]:
        return sorted(self.tools)

    def get(self, name: str) -> ToolDescriptor:
        try:
            return self.tools[name]
        except KeyError:
            raise UnknownToolError(f"unknown tool {name!r}") from None

    def with_latency(self, latency: Union[float, Callable[[str], float]]) -> "ToolCatalog":
        """Copy of this catalog whose invoke sleeps `latency` seconds (or latency(name))."""
        fn = latency if callable(latency) else (lambda _name, s=float(latency): s)
        return replace(self, latency=fn)

    def invoke(self, name: str, arguments: Optional[Mapping[str, Any]] = None) -> ToolCall:
        return invoke(self, name, arguments or {})

    def filter(self, task_label: str, k: int = 5, min_sim: float = 0.0) -> List[ToolDescriptor]:
        return filter_tools_by_task(self, task_label, k, min_sim)


# ---------- Parsing ----------
def _template_slots(template: str) -> List[Tuple[str, str, Optional[str]]]:
    """(field name, format spec, conversion) for every replacement field."""
    try:
        return [(name, spec, conv) for _, name, spec, conv in string.Formatter().parse(template) if name is not None]
    except ValueError as e:
        raise BadBehaviorSpecError(f"malformed template {template!r}: {e}") from e


def check_behavior(behavior: BehaviorSpec, params: Sequence[ToolParam], tool: str = "?") -> None:
    names = {p.name for p in params}
    if behavior.kind == "fixed_output":
        if not isinstance(behavior.payload, str):
            raise BadBehaviorSpecError(f"{tool}: fixed_output payload must be a string")
    elif behavior.kind == "template":
        if not isinstance(behavior.payload, str):
            raise BadBehaviorSpecError(f"{tool}: template payload must be a string")
        for slot, spec, conv in _template_slots(behavior.payload):
            if spec or conv:
                raise BadBehaviorSpecError(f"{tool}: template slot {{{slot}}} may not carry a conversion or format spec")
            if not slot.isidentifier():
                raise BadBehaviorSpecError(f"{tool}: template slot {{{slot}}} is not a plain parameter name")
            if slot not in names:
                raise BadBehaviorSpecError(f"{tool}: template slot {{{slot}}} is not a declared parameter")
    elif behavior.kind == "table_lookup":
        payload = behavior.payload
        if not isinstance(payload, Mapping) or not isinstance(payload.get("table"), Mapping):
            raise BadBehaviorSpecError(f"{tool}: table_lookup payload needs a 'table' object")
        if set(payload) - {"table", "default"}:
            raise BadBehaviorSpecError(f"{tool}: unknown table_lookup fields {sorted(set(payload) - {'table', 'default'})}")
        table = payload["table"]
        if not table or any(not str(k) for k in table):
            raise BadBehaviorSpecError(f"{tool}: table must have non-empty keys")
        if not all(isinstance(v, str) for v in table.values()):
            raise BadBehaviorSpecError(f"{tool}: table values must be strings")
        if "default" in payload and not isinstance(payload["default"], str):
            raise BadBehaviorSpecError(f"{tool}: table default must be a string")
        if not params:
            raise BadBehaviorSpecError(f"{tool}: table_lookup needs at least one parameter to key on")
    else:
        raise BadBehaviorSpecError(f"{tool}: unknown behavior kind {behavior.kind!r}")


def parse_tool(entry: Mapping[str, Any]) -> ToolDescriptor:
    errors = list(_manifest_validator.iter_errors([entry]))
    if errors:
        raise ManifestParseError(f"invalid tool entry: {errors[0].message}")
    params = tuple(
        ToolParam(p["name"], p["type"], p["required"], p.get("default", _NO_DEFAULT)) for p in entry["params"]
    )
    seen = set()
    for p in params:
        if p.name in seen:
            raise ManifestParseError(f"{entry['name']}: duplicate parameter {p.name!r}")
        seen.add(p.name)
    behavior = BehaviorSpec(entry["behavior"]["kind"], entry["behavior"]["payload"])
    check_behavior(behavior, params, entry["name"])
    return ToolDescriptor(entry["name"], entry["description"], params, behavior)


def to_manifest_entry(tool: ToolDescriptor) -> Dict[str, Any]:
    params = []
    for p in tool.params:
        item: Dict[str, Any] = {"name": p.name, "type": p.type, "required": p.required}
        if p.has_default:
            item["default"] = p.default
        params.append(item)
    return {
        "name": tool.name,
        "description": tool.description,
        "params": params,
        "behavior": {"kind": tool.behavior.kind, "payload": tool.behavior.payload},
    }


def build_catalog(entries: Sequence[Mapping[str, Any]], provider: EmbeddingProvider) -> ToolCatalog:
    if not isinstance(entries, (list, tuple)):
        raise ManifestParseError("tool manifest must be a list of tool entries")
    tools: Dict[str, ToolDescriptor] = {}
    for entry in entries:
        if not isinstance(entry, Mapping):
            raise ManifestParseError("each manifest entry must be an object")
        tool = parse_tool(entry)
        if tool.name in tools:
            raise DuplicateToolError(f"tool {tool.name!r} declared twice")
        tools[tool.name] = tool
    if tools:
        vectors = provider.embed([t.description for t in tools.values()])
        tools = {name: replace(t, embedding=v) for (name, t), v in zip(tools.items(), vectors)}
    return ToolCatalog(tools=MappingProxyType(tools), provider=provider)


def load_manifest(path: Union[str, Path], provider: EmbeddingProvider) -> ToolCatalog:
    path = Path(path)
    try:
        entries = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestParseError(f"{path}: not valid JSON: {e}") from e
    catalog = build_catalog(entries, provider)
    logger.debug("loaded {} tools from {}", len(catalog), path)
    return catalog


# ---------- Semantic filtering ----------
def rank_tools(catalog: ToolCatalog, task_label: str) -> List[Tuple[ToolDescriptor, float]]:
    tools = list(catalog.tools.values())
    if not tools:
        return []
    query = catalog.provider.embed([task_label])[0]
    sims = similarity_matrix([query], [t.embedding for t in tools])[0]
    ranked = [(t, float(s)) for t, s in zip(tools, sims)]
    ranked.sort(key=lambda pair: (-pair[1], pair[0].name))
    return ranked


def filter_tools_by_task(catalog: ToolCatalog, task_label: str, k: int = 5,
                         min_sim: float = 0.0) -> List[ToolDescriptor]:
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if k == 0:
        return []
    return [t for t, s in rank_tools(catalog, task_label) if s >= min_sim][:k]


def filter_tools_by_tasks(catalog: ToolCatalog, task_labels: Sequence[str], k: int = 5,
                          min_sim: float = 0.0) -> List[ToolDescriptor]:
    """Per-task filtering, unioned in first-seen order."""
    picked: Dict[str, ToolDescriptor] = {}
    for label in task_labels:
        for tool in filter_tools_by_task(catalog, label, k, min_sim):
            picked.setdefault(tool.name, tool)
    return list(picked.values())


# ---------- Invocation ----------
def render_output(tool: ToolDescriptor, arguments: Mapping[str, Any]) -> str:
    values: Dict[str, Any] = {}
    for p in tool.params:
        if p.name in arguments:
            values[p.name] = arguments[p.name]
        elif p.has_default:
            values[p.name] = p.default
        elif p.required:
            raise MissingArgumentError(f"{tool.name}: missing required argument {p.name!r}")
        else:
            values[p.name] = ""

    kind, payload = tool.behavior.kind, tool.behavior.payload
    if kind == "fixed_output":
        return payload
    if kind == "template":
        try:
            return payload.format_map(values)
        except (KeyError, IndexError, ValueError) as e:
            raise ToolRenderError(f"{tool.name}: cannot render template: {e}") from e
    key_param = tool.params[0].name
    if key_param not in arguments and not tool.params[0].has_default:
        raise MissingArgumentError(f"{tool.name}: lookup key {key_param!r} not given")
    key = str(values[key_param])
    if key in payload["table"]:
        return payload["table"][key]
    if "default" in payload:
        return payload["default"]
    raise TableKeyError(f"{tool.name}: no table entry for {key!r}")


def invoke(catalog: ToolCatalog, name: str, arguments: Mapping[str, Any]) -> ToolCall:
    tool = catalog.get(name)
    output = render_output(tool, arguments)
    if catalog.latency is not None:
        time.sleep(max(0.0, catalog.latency(name)))
    return ToolCall(tool_name=name, arguments=dict(arguments), output=output, at=time.perf_counter())


# ---------- Deduplication ----------
def remove_semantic_duplicates(names: Sequence[str], provider: EmbeddingProvider,
                               threshold: float = 0.8) -> List[str]:
    """Keep a name only if it is at most `threshold` similar to every name kept before it."""
    if not names:
        return []
    sims = similarity_matrix(provider.embed(list(names)), provider.embed(list(names)))
    kept: List[int] = []
    for i in range(len(names)):
        if not any(sims[i, j] > threshold for j in kept):
            kept.append(i)
    return [names[i] for i in kept]


def nearest_kept(name: str, kept: Sequence[str], provider: EmbeddingProvider) -> str:
    """The kept name most similar to `name` (itself when kept)."""
    if name in kept:
        return name
    sims = similarity_matrix(provider.embed([name]), provider.embed(list(kept)))[0]
    return kept[int(np.argmax(sims))]
