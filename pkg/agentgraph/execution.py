"""Runs a TaskGraph: inter-task buffers, per-task tool selection, consolidation, timing.

Two schedules share one task runner:

* sequential - one task at a time in ``topological_order``;
* parallel   - ``graphlib.TopologicalSorter`` feeding a thread pool, a task is
  submitted once all of its direct predecessors have finished.

A task whose predecessor failed (or was skipped) is skipped, so every
descendant of a failure ends up skipped. The trace separates a hash-stable
``content`` section from the ``timing`` and ``feedback`` sections.
"""
from __future__ import annotations

import json
import re
import threading
import time
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from graphlib import TopologicalSorter
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from loguru import logger

from agentgraph.backends import ModelBackend
from agentgraph.errors import BackendError, EmbeddingError, ToolDirectiveError, ToolRegistryError
from agentgraph.graph_core import (
    TaskGraph,
    dependency_view,
    id_key,
    serialize,
    topological_order,
    validate,
)
from agentgraph.prompts import PROMPT_CONSOLIDATE_TASKS, PROMPT_EXECUTE_TASK, PROMPT_FEEDBACK, fill
from agentgraph.tool_registry import ToolCall, ToolCatalog, filter_tools_by_task

MAX_DEFAULT_CONCURRENCY = 16

DEFAULT_FEEDBACK_PHRASES = (
    "Working on it...",
    "Making progress on your request...",
    "Almost there, putting the pieces together...",
)


class TaskStatus(str, Enum):
    COMPLETED = "completed"
    FAILED = "failed"
    SKIPPED = "skipped"


class ExecutionMode(str, Enum):
    SEQUENTIAL = "sequential"
    PARALLEL = "parallel"

    @classmethod
    def parse(cls, value: Union[str, "ExecutionMode"]) -> "ExecutionMode":
        if isinstance(value, cls):
            return value
        aliases = {"seq": cls.SEQUENTIAL, "par": cls.PARALLEL}
        value = str(value).strip().lower()
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown execution mode {value!r} (choose seq or par)") from None


# ---------- Results ----------
@dataclass(frozen=True)
class TaskResult:
    task_id: str
    label: str
    status: TaskStatus
    output: str = ""
    tool_calls: Tuple[ToolCall, ...] = ()
    started: Optional[float] = None
    ended: Optional[float] = None
    # intra-task record: what was sent and what came back
    prompt: str = ""
    response: str = ""
    error: Optional[str] = None

    @classmethod
    def skipped(cls, task_id: str, label: str, reason: str) -> "TaskResult":
        return cls(task_id=task_id, label=label, status=TaskStatus.SKIPPED, error=reason)


class InterTaskBuffer:
    """Completed outputs keyed by task id. Each task writes only its own entry, once."""

    def __init__(self):
        self._entries: Dict[str, Tuple[str, str]] = {}
        self._lock = threading.Lock()

    def put(self, task_id: str, label: str, output: str) -> None:
        with self._lock:
            if task_id in self._entries:
                raise ValueError(f"buffer entry for {task_id!r} already written")
            self._entries[task_id] = (label, output)

    def entries(self, task_ids: Iterable[str], order: Mapping[str, int]) -> List[Tuple[str, str, str]]:
        with self._lock:
            picked = [(t, *self._entries[t]) for t in task_ids if t in self._entries]
        return sorted(picked, key=lambda entry: order[entry[0]])

    def __contains__(self, task_id: str) -> bool:
        with self._lock:
            return task_id in self._entries


def render_buffer(entries: Sequence[Tuple[str, str, str]]) -> str:
    if not entries:
        return "(none)"
    return "\n".join(f"- [{task_id}] {label}: {output}" for task_id, label, output in entries)


# ---------- Timing ----------
@dataclass(frozen=True)
class TimingProfile:
    run_start: float
    run_end: float
    intervals: Mapping[str, Tuple[float, float]]

    @property
    def wall_time(self) -> float:
        return self.run_end - self.run_start

    def offsets(self) -> Dict[str, Tuple[float, float]]:
        return {t: (s - self.run_start, e - self.run_start) for t, (s, e) in self.intervals.items()}

    def overlaps(self, a: str, b: str) -> bool:
        (sa, ea), (sb, eb) = self.intervals[a], self.intervals[b]
        return sa < eb and sb < ea

    def peak_concurrency(self) -> int:
        points = sorted([(s, 1) for s, _ in self.intervals.values()] + [(e, -1) for _, e in self.intervals.values()],
                        key=lambda p: (p[0], p[1]))
        peak = running = 0
        for _, step in points:
            running += step
            peak = max(peak, running)
        return peak


class TimingProfiler:
    def __init__(self, clock: Callable[[], float] = time.perf_counter):
        self._clock = clock
        self._lock = threading.Lock()
        self._starts: Dict[str, float] = {}
        self._intervals: Dict[str, Tuple[float, float]] = {}
        self.run_start: Optional[float] = None
        self.run_end: Optional[float] = None

    def start_run(self) -> float:
        self.run_start = self._clock()
        return self.run_start

    def stop_run(self) -> float:
        self.run_end = self._clock()
        return self.run_end

    def start_task_timing(self, task_id: str) -> float:
        now = self._clock()
        with self._lock:
            self._starts[task_id] = now
        return now

    def stop_task_timing(self, task_id: str) -> float:
        now = self._clock()
        with self._lock:
            self._intervals[task_id] = (self._starts.pop(task_id), now)
        return now

    def profile(self) -> TimingProfile:
        with self._lock:
            return TimingProfile(self.run_start or 0.0, self.run_end or 0.0, dict(self._intervals))


# ---------- Feedback ----------
@dataclass(frozen=True)
class FeedbackEvent:
    task_id: str
    phrase: str
    at: float


def log_feedback(event: FeedbackEvent) -> None:
    logger.info("[{}] {}", event.task_id, event.phrase)


class FeedbackSystem:
    """Progress phrases: from the backend when one is given, else round-robin over canned ones."""

    def __init__(self, phrases: Sequence[str] = DEFAULT_FEEDBACK_PHRASES, backend: Optional[ModelBackend] = None,
                 sink: Callable[[FeedbackEvent], None] = log_feedback):
        if not phrases:
            raise ValueError("at least one canned feedback phrase is required")
        self.phrases = tuple(phrases)
        self.backend = backend
        self.sink = sink
        self.events: List[FeedbackEvent] = []
        self._next = 0
        self._lock = threading.Lock()

    def _canned(self) -> str:
        with self._lock:
            phrase = self.phrases[self._next % len(self.phrases)]
            self._next += 1
        return phrase

    def feedback_phrase(self, task_id: str, task_label: str) -> FeedbackEvent:
        phrase = ""
        if self.backend is not None:
            try:
                phrase = self.backend.complete(fill(PROMPT_FEEDBACK, task_description=task_label)).strip()
            except BackendError as e:
                logger.debug("feedback backend failed for {}: {}", task_id, e)
        event = FeedbackEvent(task_id=task_id, phrase=phrase or self._canned(), at=time.perf_counter())
        with self._lock:
            self.events.append(event)
        try:
            self.sink(event)
        except Exception as e:  # a broken sink must not affect the task
            logger.warning("feedback sink raised for {}: {}", task_id, e)
        return event


# ---------- Tool-call directives ----------
_DIRECTIVE = re.compile(r"```tool_calls[ \t]*\n(.*?)```", re.DOTALL)


def parse_directives(response: str) -> Tuple[str, List[Tuple[str, Dict[str, Any]]]]:
    """Split a response into (free text, [(tool, arguments), ...])."""
    blocks = _DIRECTIVE.findall(response)
    if response.count("```tool_calls") != len(blocks):
        raise ToolDirectiveError("unterminated tool_calls block")
    if len(blocks) > 1:
        raise ToolDirectiveError("more than one tool_calls block")
    text = _DIRECTIVE.sub("", response).strip()
    if not blocks:
        return text, []
    try:
        items = json.loads(blocks[0])
    except json.JSONDecodeError as e:
        raise ToolDirectiveError(f"tool_calls block is not valid JSON: {e}") from e
    if not isinstance(items, list):
        raise ToolDirectiveError("tool_calls block must be a JSON list")
    calls = []
    for item in items:
        if not isinstance(item, dict) or not isinstance(item.get("tool"), str):
            raise ToolDirectiveError(f"malformed tool call entry: {item!r}")
        arguments = item.get("arguments", {})
        if not isinstance(arguments, dict):
            raise ToolDirectiveError(f"arguments for {item['tool']!r} must be an object")
        calls.append((item["tool"], arguments))
    return text, calls


def tool_call_block(calls: Sequence[Tuple[str, Mapping[str, Any]]]) -> str:
    """Render calls the way parse_directives reads them (used by scripted rule files)."""
    body = json.dumps([{"tool": name, "arguments": dict(args)} for name, args in calls])
    return f"```tool_calls\n{body}\n```"


# ---------- Options / trace ----------
@dataclass
class ExecutionOptions:
    include_indirect_dependencies: bool = False
    max_concurrency: Optional[int] = None
    semantic_tool_filtering: bool = True
    tool_k: int = 5
    tool_min_sim: float = 0.0
    feedback: Optional[FeedbackSystem] = None
    profile: bool = False
    consolidation: str = "backend"

    def __post_init__(self):
        if self.max_concurrency is not None and self.max_concurrency < 1:
            raise ValueError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.tool_k < 0:
            raise ValueError(f"tool_k must be >= 0, got {self.tool_k}")
        if self.consolidation not in ("backend", "concat"):
            raise ValueError(f"consolidation must be 'backend' or 'concat', got {self.consolidation!r}")

    def concurrency_for(self, graph: TaskGraph) -> int:
        if self.max_concurrency is not None:
            return self.max_concurrency
        return max(1, min(MAX_DEFAULT_CONCURRENCY, len(graph.roots())))

    def describe(self) -> Dict[str, Any]:
        return {
            "include_indirect_dependencies": self.include_indirect_dependencies,
            "max_concurrency": self.max_concurrency,
            "semantic_tool_filtering": self.semantic_tool_filtering,
            "tool_k": self.tool_k,
            "tool_min_sim": self.tool_min_sim,
            "feedback": self.feedback is not None,
            "profile": self.profile,
            "consolidation": self.consolidation,
        }


@dataclass
class ExecutionTrace:
    query: str
    graph: TaskGraph
    results: Dict[str, TaskResult]
    final_answer: str
    mode: ExecutionMode
    timing: TimingProfile
    feedback: List[FeedbackEvent] = field(default_factory=list)
    consolidation_fallback: bool = False
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def wall_time(self) -> float:
        return self.timing.wall_time

    def ordered_results(self) -> List[TaskResult]:
        return [self.results[t] for t in topological_order(self.graph)]

    def tool_call_names(self) -> List[str]:
        return [c.tool_name for r in self.ordered_results() for c in r.tool_calls]

    def task_outputs(self) -> Dict[str, str]:
        return {t: r.output for t, r in self.results.items()}

    def content(self) -> Dict[str, Any]:
        tasks = []
        for r in self.ordered_results():
            tasks.append({
                "id": r.task_id,
                "label": r.label,
                "status": r.status.value,
                "output": r.output,
                "tool_calls": [{"tool": c.tool_name, "arguments": dict(c.arguments), "output": c.output}
                               for c in r.tool_calls],
                "prompt": r.prompt,
                "response": r.response,
                "error": r.error,
            })
        return {
            "query": self.query,
            "mode": self.mode.value,
            "task_graph": serialize(self.graph)["task_graph"],
            "tasks": tasks,
            "final_answer": self.final_answer,
            "consolidation_fallback": self.consolidation_fallback,
            "config": self.config,
        }

    def to_document(self) -> Dict[str, Any]:
        t0 = self.timing.run_start
        timing = {
            "wall_time": self.wall_time,
            "tasks": {t: {"start": s, "end": e} for t, (s, e) in self.timing.offsets().items()},
            "tool_calls": {r.task_id: [c.at - t0 for c in r.tool_calls] for r in self.ordered_results()
                           if r.tool_calls},
        }
        feedback = [{"task_id": ev.task_id, "phrase": ev.phrase, "at": ev.at - t0} for ev in self.feedback]
        return {"content": self.content(), "timing": timing, "feedback": feedback}

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_document(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                        encoding="utf-8")
        return path


def load_trace(path: Union[str, Path]) -> ExecutionTrace:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    content, timing = doc["content"], doc.get("timing", {})
    graph = validate({"task_graph": content["task_graph"]})
    call_times = timing.get("tool_calls", {})
    task_times = timing.get("tasks", {})

    results: Dict[str, TaskResult] = {}
    for item in content["tasks"]:
        tid = item["id"]
        ats = call_times.get(tid, [])
        calls = tuple(
            ToolCall(c["tool"], c["arguments"], c["output"], ats[i] if i < len(ats) else 0.0)
            for i, c in enumerate(item["tool_calls"])
        )
        span = task_times.get(tid)
        results[tid] = TaskResult(
            task_id=tid, label=item["label"], status=TaskStatus(item["status"]), output=item["output"],
            tool_calls=calls, started=span["start"] if span else None, ended=span["end"] if span else None,
            prompt=item.get("prompt", ""), response=item.get("response", ""), error=item.get("error"),
        )
    profile = TimingProfile(0.0, float(timing.get("wall_time", 0.0)),
                            {t: (v["start"], v["end"]) for t, v in task_times.items()})
    feedback = [FeedbackEvent(ev["task_id"], ev["phrase"], ev["at"]) for ev in doc.get("feedback", [])]
    return ExecutionTrace(
        query=content["query"], graph=graph, results=results, final_answer=content["final_answer"],
        mode=ExecutionMode(content["mode"]), timing=profile, feedback=feedback,
        consolidation_fallback=content.get("consolidation_fallback", False), config=content.get("config", {}),
    )


# ---------- Consolidation ----------
def concat_results(results: Sequence[TaskResult]) -> str:
    return "\n".join(f"{r.label}: {r.output}" for r in results if r.status is TaskStatus.COMPLETED)


def consolidate(query: str, results: Sequence[TaskResult], backend: Optional[ModelBackend],
                mode: str = "backend") -> Tuple[str, bool]:
    """Final answer from completed results (given in topological order).

    Returns (answer, fell_back); fell_back is True when the backend failed or
    replied with nothing and the label-prefixed concatenation was used instead.
    """
    completed = [r for r in results if r.status is TaskStatus.COMPLETED]
    if not completed:
        raise ValueError("consolidate needs at least one completed task")
    if mode == "concat" or backend is None:
        return concat_results(completed), False
    task_results = "\n".join(f"- {r.label}: {r.output}" for r in completed)
    try:
        answer = backend.complete(fill(PROMPT_CONSOLIDATE_TASKS, user_query=query, task_results=task_results)).strip()
    except BackendError as e:
        logger.warning("consolidation backend failed, concatenating task outputs instead: {}", e)
        return concat_results(completed), True
    if not answer:
        logger.warning("consolidation backend returned an empty answer, concatenating task outputs instead")
        return concat_results(completed), True
    return answer, False


# ---------- Executor ----------
class Executor:
    def __init__(self, graph: TaskGraph, catalog: ToolCatalog, backend: ModelBackend,
                 options: Optional[ExecutionOptions] = None, query: str = ""):
        self.graph = graph
        self.catalog = catalog
        self.backend = backend
        self.options = options or ExecutionOptions()
        self.query = query
        self.order = topological_order(graph)
        self.position = {t: i for i, t in enumerate(self.order)}
        self.labels = graph.labels()
        self.view = dependency_view(graph)
        self.buffer = InterTaskBuffer()
        self.profiler = TimingProfiler()
        self._results: Dict[str, TaskResult] = {}
        self._lock = threading.Lock()

    # -- per task --
    def buffer_keys(self, task_id: str) -> Iterable[str]:
        if self.options.include_indirect_dependencies:
            return self.view.ancestors[task_id]
        return self.view.direct_predecessors[task_id]

    def offered_tools(self, label: str) -> str:
        if self.options.semantic_tool_filtering:
            tools = filter_tools_by_task(self.catalog, label, self.options.tool_k, self.options.tool_min_sim)
        else:
            tools = [self.catalog.get(name) for name in self.catalog.names()]
        return "\n".join(t.signature() for t in tools) or "(none)"

    def task_prompt(self, task_id: str) -> str:
        label = self.labels[task_id]
        entries = self.buffer.entries(self.buffer_keys(task_id), self.position)
        return fill(PROMPT_EXECUTE_TASK, task_label=label, buffer=render_buffer(entries),
                    tools=self.offered_tools(label))

    def run_task(self, task_id: str) -> TaskResult:
        label = self.labels[task_id]
        if self.options.feedback is not None:
            self.options.feedback.feedback_phrase(task_id, label)

        logger.debug("task {} started: {}", task_id, label)
        started = self.profiler.start_task_timing(task_id)
        prompt, response, calls, error = "", "", [], None
        try:
            prompt = self.task_prompt(task_id)
            response = self.backend.complete(prompt)
            text, directives = parse_directives(response)
            for name, arguments in directives:
                calls.append(self.catalog.invoke(name, arguments))
            output = "\n".join(part for part in [text] + [c.output for c in calls] if part)
        except (BackendError, ToolDirectiveError, ToolRegistryError, EmbeddingError) as e:
            error = f"{type(e).__name__}: {e}"
        ended = self.profiler.stop_task_timing(task_id)

        if error is not None:
            logger.warning("task {} failed: {}", task_id, error)
            return TaskResult(task_id, label, TaskStatus.FAILED, "", tuple(calls), started, ended,
                              prompt, response, error)
        self.buffer.put(task_id, label, output)
        logger.debug("task {} completed with {} tool call(s)", task_id, len(calls))
        return TaskResult(task_id, label, TaskStatus.COMPLETED, output, tuple(calls), started, ended,
                          prompt, response)

    def blocked_by(self, task_id: str) -> Optional[str]:
        for pred in sorted(self.view.direct_predecessors[task_id], key=id_key):
            if pred not in self.buffer:
                return pred
        return None

    def _record(self, result: TaskResult) -> None:
        with self._lock:
            self._results[result.task_id] = result

    def _skip(self, task_id: str, pred: str) -> None:
        logger.info("task {} skipped: predecessor {} did not complete", task_id, pred)
        self._record(TaskResult.skipped(task_id, self.labels[task_id], f"predecessor {pred} did not complete"))

    # -- schedules --
    def _run_sequential(self) -> None:
        for task_id in self.order:
            pred = self.blocked_by(task_id)
            if pred is not None:
                self._skip(task_id, pred)
            else:
                self._record(self.run_task(task_id))

    def _run_parallel(self) -> None:
        sorter = TopologicalSorter({t: set(self.view.direct_predecessors[t]) for t in self.order})
        sorter.prepare()
        pending: Dict[Future, str] = {}
        with ThreadPoolExecutor(max_workers=self.options.concurrency_for(self.graph),
                                thread_name_prefix="agentgraph-task") as pool:
            while sorter.is_active():
                for task_id in sorted(sorter.get_ready(), key=id_key):
                    pred = self.blocked_by(task_id)
                    if pred is not None:
                        self._skip(task_id, pred)
                        sorter.done(task_id)
                    else:
                        pending[pool.submit(self.run_task, task_id)] = task_id
                if not pending:
                    continue
                finished, _ = wait(list(pending), return_when=FIRST_COMPLETED)
                for future in sorted(finished, key=lambda f: id_key(pending[f])):
                    task_id = pending.pop(future)
                    self._record(future.result())
                    sorter.done(task_id)

    def run(self, mode: Union[str, ExecutionMode]) -> ExecutionTrace:
        mode = ExecutionMode.parse(mode)
        first_event = len(self.options.feedback.events) if self.options.feedback is not None else 0
        self.profiler.start_run()
        if mode is ExecutionMode.PARALLEL:
            self._run_parallel()
        else:
            self._run_sequential()

        results = [self._results[t] for t in self.order]
        final_answer, fell_back = "", False
        if any(r.status is TaskStatus.COMPLETED for r in results):
            final_answer, fell_back = consolidate(self.query, results, self.backend, self.options.consolidation)
        self.profiler.stop_run()

        profile = self.profiler.profile()
        if self.options.profile:
            for task_id, (start, end) in profile.offsets().items():
                logger.info("task {} ran from {:.3f}s to {:.3f}s", task_id, start, end)
            logger.info("{} run finished in {:.3f}s", mode.value, profile.wall_time)
        feedback = list(self.options.feedback.events[first_event:]) if self.options.feedback is not None else []
        return ExecutionTrace(
            query=self.query, graph=self.graph, results={r.task_id: r for r in results},
            final_answer=final_answer, mode=mode, timing=profile, feedback=feedback,
            consolidation_fallback=fell_back, config=self.options.describe(),
        )


def execute_sequential(graph: TaskGraph, catalog: ToolCatalog, backend: ModelBackend,
                       options: Optional[ExecutionOptions] = None, *, query: str = "") -> ExecutionTrace:
    return Executor(graph, catalog, backend, options, query).run(ExecutionMode.SEQUENTIAL)


def execute_parallel(graph: TaskGraph, catalog: ToolCatalog, backend: ModelBackend,
                     options: Optional[ExecutionOptions] = None, *, query: str = "") -> ExecutionTrace:
    return Executor(graph, catalog, backend, options, query).run(ExecutionMode.PARALLEL)
