from __future__ import annotations

from typing import Optional, Sequence


class AgentGraphError(Exception):
    """Base class for every error raised by agentgraph."""


# ---------- Task graphs ----------
class GraphValidationError(AgentGraphError, ValueError):
    pass


class ParseError(GraphValidationError):
    pass


class CycleError(GraphValidationError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = tuple(cycle)
        path = " -> ".join(list(self.cycle) + list(self.cycle[:1]))
        super().__init__(f"task graph contains a cycle: {path}")


class DanglingEdgeError(GraphValidationError):
    pass


class DuplicateIdError(GraphValidationError):
    pass


class DuplicateEdgeError(GraphValidationError):
    pass


# ---------- Embeddings ----------
class EmbeddingError(AgentGraphError, ValueError):
    pass


class DimensionMismatchError(EmbeddingError):
    pass


class ZeroVectorError(EmbeddingError):
    pass


class EmptyTextError(EmbeddingError):
    pass


# ---------- Tools ----------
class ToolRegistryError(AgentGraphError):
    pass


class ManifestParseError(ToolRegistryError, ValueError):
    pass


class DuplicateToolError(ToolRegistryError, ValueError):
    pass


class BadBehaviorSpecError(ToolRegistryError, ValueError):
    pass


class UnknownToolError(ToolRegistryError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown tool"


class MissingArgumentError(ToolRegistryError, ValueError):
    pass


class TableKeyError(ToolRegistryError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "table key not found"


class ToolRenderError(ToolRegistryError, ValueError):
    pass


# ---------- Model backends / orchestration / execution ----------
class BackendError(AgentGraphError):
    """Transport, timeout or protocol failure talking to a model backend."""


class OrchestrationError(AgentGraphError):
    def __init__(self, last_error: Optional[BaseException], attempts: int):
        self.last_error = last_error
        self.attempts = attempts
        super().__init__(f"no valid task graph after {attempts} attempt(s): {last_error}")


class ToolDirectiveError(AgentGraphError, ValueError):
    pass


# ---------- Evaluation ----------
class EvaluationError(AgentGraphError):
    pass


class EmptyExpectedGraphError(EvaluationError, ValueError):
    pass


class JudgeError(EvaluationError):
    pass


class DegenerateSampleError(EvaluationError, ValueError):
    pass


class RankDeficiencyError(EvaluationError, ValueError):
    pass


# ---------- Dataset / config ----------
class ScenarioError(AgentGraphError, ValueError):
    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class ConfigError(AgentGraphError, ValueError):
    pass
