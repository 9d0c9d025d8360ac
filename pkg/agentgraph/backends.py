"""Model backends: a scripted one for offline runs and an HTTP chat-completions client."""
from __future__ import annotations

import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Pattern, Protocol, Sequence, Union

import requests
import yaml
from loguru import logger

from agentgraph.errors import BackendError, ConfigError


class ModelBackend(Protocol):
    backend_id: str

    def complete(self, prompt: str) -> str:
        ...


# ---------- Scripted backend ----------
@dataclass(frozen=True)
class ScriptRule:
    response: str
    match: Optional[str] = None
    pattern: Optional[str] = None
    _compiled: Optional[Pattern[str]] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if (self.match is None) == (self.pattern is None):
            raise ConfigError("each scripted rule needs exactly one of 'match' or 'pattern'")
        if self.pattern is not None:
            try:
                object.__setattr__(self, "_compiled", re.compile(self.pattern, re.DOTALL))
            except re.error as e:
                raise ConfigError(f"bad rule pattern {self.pattern!r}: {e}") from e

    def matches(self, prompt: str) -> bool:
        if self.match is not None:
            return self.match in prompt
        return self._compiled.search(prompt) is not None


class ScriptedBackend:
    """First matching rule wins; no rule matching returns the fallback."""

    def __init__(self, rules: Sequence[ScriptRule] = (), fallback: str = "", backend_id: str = "scripted"):
        self.rules = list(rules)
        self.fallback = fallback
        self.backend_id = backend_id
        self.calls: List[Dict[str, str]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple], fallback: str = "", backend_id: str = "scripted") -> "ScriptedBackend":
        return cls([ScriptRule(response=r, match=m) for m, r in pairs], fallback, backend_id)

    def complete(self, prompt: str) -> str:
        response = self.fallback
        for rule in self.rules:
            if rule.matches(prompt):
                response = rule.response
                break
        with self._lock:
            self.calls.append({"prompt": prompt, "response": response})
        return response

    @property
    def call_count(self) -> int:
        with self._lock:
            return len(self.calls)


def load_rules(path: Union[str, Path]) -> ScriptedBackend:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(doc, dict) or not isinstance(doc.get("rules", []), list):
        raise ConfigError(f"{path}: expected a mapping with a 'rules' list")
    unknown = set(doc) - {"rules", "fallback", "backend_id"}
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    rules = []
    for i, raw in enumerate(doc.get("rules", [])):
        if not isinstance(raw, dict) or "response" not in raw or set(raw) - {"match", "pattern", "response"}:
            raise ConfigError(f"{path}: rule #{i} must have 'response' and one of 'match'/'pattern'")
        try:
            rules.append(ScriptRule(response=str(raw["response"]), match=raw.get("match"), pattern=raw.get("pattern")))
        except ConfigError as e:
            raise ConfigError(f"{path}: rule #{i}: {e}") from e
    return ScriptedBackend(rules, str(doc.get("fallback", "")), str(doc.get("backend_id", path.stem)))


# ---------- HTTP backend ----------
class HttpBackend:
    """OpenAI-compatible /chat/completions client."""

    def __init__(self, base_url: str, model: str, token_env: str = "AGENTGRAPH_API_TOKEN",
                 temperature: float = 0.0, timeout: float = 60.0):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.temperature = temperature
        self.timeout = timeout
        self.backend_id = f"http:{model}"
        token = os.environ.get(token_env)
        self._headers = {"Content-Type": "application/json"}
        if token:
            self._headers["Authorization"] = f"Bearer {token}"
        else:
            logger.warning("environment variable {} is not set; calling {} without a token", token_env, self.url)

    def complete(self, prompt: str) -> str:
        body = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        try:
            r = requests.post(self.url, json=body, headers=self._headers, timeout=self.timeout)
            r.raise_for_status()
            return r.json()["choices"][0]["message"]["content"]
        except requests.Timeout as e:
            raise BackendError(f"backend timed out after {self.timeout}s") from e
        except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as e:
            raise BackendError(f"backend call to {self.url} failed: {e}") from e
