"""Run configuration: built-in defaults < YAML file < command-line flags."""
from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import yaml
from jsonschema import Draft202012Validator

from agentgraph.backends import HttpBackend, ModelBackend, load_rules
from agentgraph.embedding import (
    EmbeddingProvider,
    HashEmbeddingProvider,
    HttpEmbeddingProvider,
    SentenceTransformerProvider,
)
from agentgraph.errors import ConfigError
from agentgraph.evaluation import EvaluationConfig
from agentgraph.execution import ExecutionOptions, FeedbackSystem

DEFAULT_TOKEN_ENV = "AGENTGRAPH_API_TOKEN"

_NUMBER = {"type": "number"}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "backend": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["scripted", "http"]},
                "rules": {"type": ["string", "null"]},
                "base_url": {"type": ["string", "null"]},
                "token_env": {"type": "string", "minLength": 1},
                "model": {"type": ["string", "null"]},
                "temperature": {"type": "number", "minimum": 0, "maximum": 2},
                "timeout": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "embedding": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["hash", "http", "sentence_transformers"]},
                "dim": {"type": "integer", "minimum": 8},
                "endpoint": {"type": ["string", "null"]},
                "model": {"type": ["string", "null"]},
                "timeout": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "strategy": {"enum": ["coarse", "fine", "critical_path", "critical-path", "default"]},
        "mode": {"enum": ["seq", "par"]},
        "max_concurrency": {"type": ["integer", "null"], "minimum": 1},
        "include_indirect_dependencies": {"type": "boolean"},
        "semantic_tool_filtering": {"type": "boolean"},
        "feedback": {"type": "boolean"},
        "profile": {"type": "boolean"},
        "tool_k": {"type": "integer", "minimum": 0},
        "tool_min_sim": {"type": "number", "minimum": -1, "maximum": 1.01},
        "tool_latency_ms": {"type": "number", "minimum": 0},
        "max_repairs": {"type": "integer", "minimum": 0},
        "theta": {"type": "number", "minimum": 0, "maximum": 1},
        "alpha": {"type": "number", "exclusiveMinimum": 0},
        "matching": {"enum": ["greedy", "optimal"]},
        "ged_exact_limit": {"type": "integer", "minimum": 0},
        "consolidation": {"enum": ["backend", "concat"]},
        "tools": {"type": ["string", "null"]},
        "out": {"type": ["string", "null"]},
    },
}
_config_validator = Draft202012Validator(CONFIG_SCHEMA)


@dataclass
class BackendConfig:
    kind: str = "scripted"
    rules: Optional[str] = None
    base_url: Optional[str] = None
    token_env: str = DEFAULT_TOKEN_ENV
    model: Optional[str] = None
    temperature: float = 0.0
    timeout: float = 60.0


@dataclass
class EmbeddingConfig:
    kind: str = "hash"
    dim: int = 256
    endpoint: Optional[str] = None
    model: Optional[str] = None
    timeout: float = 30.0


@dataclass
class RunConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    strategy: str = "default"
    mode: str = "par"
    max_concurrency: Optional[int] = None
    include_indirect_dependencies: bool = False
    semantic_tool_filtering: bool = True
    feedback: bool = False
    profile: bool = False
    tool_k: int = 5
    tool_min_sim: float = 0.0
    tool_latency_ms: float = 0.0
    max_repairs: int = 2
    theta: float = 0.75
    alpha: float = 1.0
    matching: str = "greedy"
    ged_exact_limit: int = 12
    consolidation: str = "backend"
    tools: Optional[str] = None
    out: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    # -- builders --
    def make_backend(self) -> ModelBackend:
        b = self.backend
        if b.kind == "http":
            if not b.base_url or not b.model:
                raise ConfigError("http backend needs backend.base_url and backend.model")
            return HttpBackend(b.base_url, b.model, b.token_env, b.temperature, b.timeout)
        if not b.rules:
            raise ConfigError("scripted backend needs a rules file (backend.rules or --rules)")
        return load_rules(b.rules)

    def make_provider(self) -> EmbeddingProvider:
        e = self.embedding
        if e.kind == "http":
            if not e.endpoint or not e.model:
                raise ConfigError("http embeddings need embedding.endpoint and embedding.model")
            return HttpEmbeddingProvider(e.endpoint, e.model, e.dim, e.timeout,
                                         os.environ.get(self.backend.token_env))
        if e.kind == "sentence_transformers":
            return SentenceTransformerProvider(e.model or "all-MiniLM-L6-v2")
        return HashEmbeddingProvider(e.dim)

    def execution_options(self) -> ExecutionOptions:
        return ExecutionOptions(
            include_indirect_dependencies=self.include_indirect_dependencies,
            max_concurrency=self.max_concurrency,
            semantic_tool_filtering=self.semantic_tool_filtering,
            tool_k=self.tool_k,
            tool_min_sim=self.tool_min_sim,
            feedback=FeedbackSystem() if self.feedback else None,
            profile=self.profile,
            consolidation=self.consolidation,
        )

    def evaluation_config(self) -> EvaluationConfig:
        return EvaluationConfig(theta=self.theta, alpha=self.alpha, matching=self.matching,
                                ged_exact_limit=self.ged_exact_limit)


def _check(document: Mapping[str, Any], source: str) -> None:
    errors = sorted(_config_validator.iter_errors(document), key=lambda e: list(e.path))
    if errors:
        first = errors[0]
        where = ".".join(str(p) for p in first.path) or "<root>"
        raise ConfigError(f"{source}: {where}: {first.message}")


def _merge(base: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def build_config(path: Union[str, Path, None] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Defaults, then the YAML file at `path`, then `overrides` (None values are ignored)."""
    document = RunConfig().to_dict()
    if path is not None:
        path = Path(path)
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: invalid YAML: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        _check(loaded, str(path))
        document = _merge(document, loaded)

    def prune(mapping: Mapping[str, Any]) -> Dict[str, Any]:
        out = {}
        for k, v in mapping.items():
            if isinstance(v, Mapping):
                v = prune(v)
                if v:
                    out[k] = v
            elif v is not None:
                out[k] = v
        return out

    flags = prune(overrides or {})
    _check(flags, "command line")
    document = _merge(document, flags)
    _check(document, "effective config")

    names = {f.name for f in fields(RunConfig)}
    top = {k: v for k, v in document.items() if k in names and k not in ("backend", "embedding")}
    config = RunConfig(backend=BackendConfig(**document["backend"]),
                       embedding=EmbeddingConfig(**document["embedding"]), **top)
    config.strategy = config.strategy.replace("-", "_")
    return config
