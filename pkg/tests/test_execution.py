from __future__ import annotations

import random
import statistics

import pytest

from agentgraph.backends import load_rules
from agentgraph.dataset import load_scenarios
from agentgraph.errors import BackendError, ToolDirectiveError
from agentgraph.execution import (
    ExecutionMode,
    ExecutionOptions,
    Executor,
    FeedbackSystem,
    InterTaskBuffer,
    TaskResult,
    TaskStatus,
    TimingProfiler,
    consolidate,
    execute_parallel,
    execute_sequential,
    load_trace,
    parse_directives,
    render_buffer,
    tool_call_block,
)
from agentgraph.graph_core import build_graph
from agentgraph.tool_registry import BehaviorSpec, ToolCatalog, ToolDescriptor, ToolParam, build_catalog

CONSOLIDATE = "Generate a concise final response"
MODES = [execute_sequential, execute_parallel]


@pytest.fixture
def chain():
    return build_graph([(1, "alpha step"), (2, "beta step"), (3, "gamma step")], [(1, 2), (2, 3)])


@pytest.fixture
def chain_backend(scripted):
    return scripted([
        (CONSOLIDATE, "all steps done"),
        ("Task: alpha step", "alpha done"),
        ("Task: beta step", "beta done"),
        ("Task: gamma step", "gamma done"),
    ])


@pytest.fixture
def noop_catalog(fixed_catalog):
    return fixed_catalog(("noop", "does nothing useful", "ok"))


# ---------- directives ----------
def test_parse_directives_plain_text() -> None:
    assert parse_directives("  just an answer \n") == ("just an answer", [])


def test_parse_directives_with_block() -> None:
    response = "Booking now.\n" + tool_call_block([("restaurant_search", {"cuisine": "french"}), ("sunrise_time", {})])
    text, calls = parse_directives(response)
    assert text == "Booking now."
    assert calls == [("restaurant_search", {"cuisine": "french"}), ("sunrise_time", {})]


def test_parse_directives_arguments_default_to_empty() -> None:
    _, calls = parse_directives('```tool_calls\n[{"tool": "sunrise_time"}]\n```')
    assert calls == [("sunrise_time", {})]


@pytest.mark.parametrize(
    "response",
    [
        "```tool_calls\n[]",
        "```tool_calls\n[]\n```\n```tool_calls\n[]\n```",
        "```tool_calls\n[{oops}]\n```",
        '```tool_calls\n{"tool": "x"}\n```',
        '```tool_calls\n[{"name": "x"}]\n```',
        '```tool_calls\n[{"tool": "x", "arguments": [1]}]\n```',
    ],
)
def test_parse_directives_rejects_malformed_blocks(response) -> None:
    with pytest.raises(ToolDirectiveError):
        parse_directives(response)


# ---------- buffer ----------
def test_buffer_entries_are_written_once_and_ordered() -> None:
    buffer = InterTaskBuffer()
    buffer.put("2", "beta", "b")
    buffer.put("1", "alpha", "a")
    with pytest.raises(ValueError):
        buffer.put("1", "alpha", "again")
    assert "1" in buffer and "3" not in buffer
    assert buffer.entries(["2", "1", "3"], {"1": 0, "2": 1, "3": 2}) == [("1", "alpha", "a"), ("2", "beta", "b")]
    assert render_buffer([]) == "(none)"
    assert render_buffer([("1", "alpha", "a")]) == "- [1] alpha: a"


@pytest.mark.parametrize("run", MODES)
def test_direct_predecessor_outputs_reach_the_prompt(run, chain, noop_catalog, chain_backend) -> None:
    trace = run(chain, noop_catalog, chain_backend, query="do the steps")
    prompts = {r.task_id: r.prompt for r in trace.ordered_results()}
    assert "(none)" in prompts["1"]
    assert "- [1] alpha step: alpha done" in prompts["2"]
    assert "- [2] beta step: beta done" in prompts["3"]
    assert "alpha done" not in prompts["3"]
    assert trace.final_answer == "all steps done"


@pytest.mark.parametrize("run", MODES)
def test_indirect_dependencies_are_included_when_enabled(run, chain, noop_catalog, chain_backend) -> None:
    options = ExecutionOptions(include_indirect_dependencies=True)
    trace = run(chain, noop_catalog, chain_backend, options)
    assert "- [1] alpha step: alpha done\n- [2] beta step: beta done" in trace.results["3"].prompt


# ---------- failures ----------
@pytest.mark.parametrize("run", MODES)
def test_failure_skips_descendants_only(run, noop_catalog, scripted) -> None:
    graph = build_graph([(1, "alpha step"), (2, "beta step"), (3, "gamma step"), (4, "delta step")],
                        [(1, 2), (2, 3)])
    backend = scripted([
        (CONSOLIDATE, "partial"),
        ("Task: beta step", tool_call_block([("teleport", {})])),
    ], fallback="fine")
    trace = run(graph, noop_catalog, backend)
    status = {t: r.status for t, r in trace.results.items()}
    assert status == {"1": TaskStatus.COMPLETED, "2": TaskStatus.FAILED,
                      "3": TaskStatus.SKIPPED, "4": TaskStatus.COMPLETED}
    assert "UnknownToolError" in trace.results["2"].error
    assert trace.results["3"].error == "predecessor 2 did not complete"
    assert trace.results["3"].prompt == ""
    assert trace.final_answer == "partial"
    # skipped tasks are never sent to the backend
    assert not any("Task: gamma step" in c["prompt"] for c in backend.calls)


@pytest.mark.parametrize("run", MODES)
def test_backend_failure_fails_roots_and_skips_the_rest(run, chain, noop_catalog, failing_backend) -> None:
    trace = run(chain, noop_catalog, failing_backend)
    assert [r.status for r in trace.ordered_results()] == [TaskStatus.FAILED, TaskStatus.SKIPPED, TaskStatus.SKIPPED]
    assert trace.final_answer == ""


def test_missing_argument_fails_the_task(catalog, scripted) -> None:
    graph = build_graph([(1, "weather forecast")], [])
    backend = scripted([("Task: weather forecast", tool_call_block([("weather_lookup", {})]))])
    trace = execute_sequential(graph, catalog, backend)
    assert trace.results["1"].status is TaskStatus.FAILED
    assert "MissingArgumentError" in trace.results["1"].error


@pytest.mark.parametrize("run", MODES)
def test_unrenderable_template_fails_only_its_task(run, provider, scripted) -> None:
    # built directly, so the manifest check never saw the format spec
    thermo = ToolDescriptor(
        name="thermo",
        description="read the thermometer",
        params=(ToolParam("temp", "string"),),
        behavior=BehaviorSpec("template", "it is {temp:d} degrees"),
    )
    catalog = ToolCatalog(tools={"thermo": thermo}, provider=provider)
    graph = build_graph([(1, "read the thermometer"), (2, "report temperature"), (3, "water plants")], [(1, 2)])
    backend = scripted([
        (CONSOLIDATE, "plants watered"),
        ("Task: read the thermometer", tool_call_block([("thermo", {"temp": "20"})])),
    ], fallback="fine")
    trace = run(graph, catalog, backend, ExecutionOptions(semantic_tool_filtering=False))
    status = {t: r.status for t, r in trace.results.items()}
    assert status == {"1": TaskStatus.FAILED, "2": TaskStatus.SKIPPED, "3": TaskStatus.COMPLETED}
    assert trace.results["1"].error.startswith("ToolRenderError")
    assert trace.final_answer == "plants watered"


# ---------- tool use ----------
def test_task_output_joins_text_and_tool_outputs(catalog, scripted) -> None:
    graph = build_graph([(1, "find nearby restaurants")], [])
    backend = scripted([
        (CONSOLIDATE, "booked"),
        ("Task: find nearby restaurants",
         "Booking a table nearby.\n" + tool_call_block([("restaurant_search", {"cuisine": "french"})])),
    ])
    result = execute_sequential(graph, catalog, backend).results["1"]
    assert result.output == "Booking a table nearby.\ntable for two at Chez Marie, 19:30"
    assert [c.tool_name for c in result.tool_calls] == ["restaurant_search"]


def test_offered_tools_follow_the_filter_settings(catalog, chain, scripted) -> None:
    backend = scripted()
    filtered = Executor(chain, catalog, backend, ExecutionOptions(tool_k=2))
    assert len(filtered.offered_tools("send email").splitlines()) == 2
    assert filtered.offered_tools("send email").startswith("send_email(")
    unfiltered = Executor(chain, catalog, backend, ExecutionOptions(semantic_tool_filtering=False))
    lines = unfiltered.offered_tools("send email").splitlines()
    assert [line.split("(")[0] for line in lines] == catalog.names()
    none = Executor(chain, catalog, backend, ExecutionOptions(tool_k=0))
    assert none.offered_tools("send email") == "(none)"


# ---------- schedules ----------
def test_parallel_overlaps_independent_tasks(briefing_graph, catalog, briefing_backend) -> None:
    slow = catalog.with_latency(0.2)
    seq = execute_sequential(briefing_graph, slow, briefing_backend, query="morning briefing")
    par = execute_parallel(briefing_graph, slow, briefing_backend, query="morning briefing")

    assert par.timing.overlaps("1", "4")
    assert par.timing.intervals["2"][0] >= par.timing.intervals["4"][1]
    assert par.timing.intervals["3"][0] >= par.timing.intervals["2"][1]
    assert not any(seq.timing.overlaps(a, b) for a in "1234" for b in "1234" if a < b)
    assert seq.wall_time >= 0.8
    assert seq.wall_time - par.wall_time > 0.1


def test_modes_produce_the_same_content(briefing_graph, catalog, briefing_backend) -> None:
    seq = execute_sequential(briefing_graph, catalog, briefing_backend, query="morning briefing")
    par = execute_parallel(briefing_graph, catalog, briefing_backend, query="morning briefing")
    assert seq.task_outputs() == par.task_outputs() == {
        "1": "sunrise at 06:42",
        "2": "1 USD = 0.92 EUR",
        "3": "email sent to team: hello",
        "4": "weather in Lisbon: sunny",
    }
    assert seq.tool_call_names() == par.tool_call_names() == [
        "sunrise_time", "weather_lookup", "currency_convert", "send_email"]
    assert seq.final_answer == par.final_answer == "briefing ready"
    assert {**seq.content(), "mode": None} == {**par.content(), "mode": None}


def test_parallel_content_is_stable_across_runs(briefing_graph, catalog, briefing_backend) -> None:
    contents = [execute_parallel(briefing_graph, catalog, briefing_backend, query="q").content() for _ in range(3)]
    assert contents[0] == contents[1] == contents[2]


def test_parallel_schedule_under_jittered_latency(briefing_graph, catalog, briefing_backend) -> None:
    rng = random.Random(7)
    jittery = catalog.with_latency(lambda _name: rng.uniform(0.005, 0.02))
    overlapping, outputs = 0, set()
    for _ in range(100):
        trace = execute_parallel(briefing_graph, jittery, briefing_backend, query="morning briefing")
        spans = trace.timing.intervals
        for edge in briefing_graph.edges:
            assert spans[edge.source][1] <= spans[edge.target][0], (edge, spans)
        overlapping += trace.timing.overlaps("1", "4")
        outputs.add(tuple(sorted(trace.task_outputs().items())))
    assert overlapping >= 95
    assert len(outputs) == 1


def test_parallel_speedup_on_independent_tasks(noop_catalog, scripted) -> None:
    graph = build_graph([(1, "first chore"), (2, "second chore")], [])
    backend = scripted([(CONSOLIDATE, "done")], fallback=tool_call_block([("noop", {})]))
    slow = noop_catalog.with_latency(0.1)
    seq = statistics.median(execute_sequential(graph, slow, backend).wall_time for _ in range(10))
    par = statistics.median(execute_parallel(graph, slow, backend).wall_time for _ in range(10))
    assert seq > 0.19
    assert par < 0.15


def test_modes_agree_on_every_scenario(data_dir, provider) -> None:
    records, diagnostics = load_scenarios(data_dir / "scenarios")
    assert len(records) == 6 and not diagnostics
    backend = load_rules(data_dir / "rules" / "scenarios.yaml")
    for record in records:
        catalog = build_catalog(record.tool_manifest, provider)
        seq = execute_sequential(record.expected_graph, catalog, backend, query=record.query)
        par = execute_parallel(record.expected_graph, catalog, backend, query=record.query)
        assert all(r.status is TaskStatus.COMPLETED for r in seq.ordered_results()), record.name
        assert seq.task_outputs() == par.task_outputs(), record.name
        assert seq.tool_call_names() == par.tool_call_names(), record.name
        assert seq.final_answer == par.final_answer != "", record.name
        assert seq.final_answer == record.gold_response.strip(), record.name


def test_concurrency_is_bounded(catalog, scripted) -> None:
    graph = build_graph([(i, f"independent chore {i}") for i in range(1, 5)], [])
    backend = scripted([(CONSOLIDATE, "done")], fallback=tool_call_block([("sunrise_time", {})]))
    slow = catalog.with_latency(0.1)
    capped = execute_parallel(graph, slow, backend, ExecutionOptions(max_concurrency=2))
    assert capped.timing.peak_concurrency() <= 2
    wide = execute_parallel(graph, slow, backend)
    assert wide.timing.peak_concurrency() >= 2


def test_default_concurrency_follows_roots(briefing_graph) -> None:
    assert ExecutionOptions().concurrency_for(briefing_graph) == 2
    assert ExecutionOptions(max_concurrency=7).concurrency_for(briefing_graph) == 7
    wide = build_graph([(i, f"t{i}") for i in range(1, 21)], [])
    assert ExecutionOptions().concurrency_for(wide) == 16


def test_options_validation() -> None:
    with pytest.raises(ValueError):
        ExecutionOptions(max_concurrency=0)
    with pytest.raises(ValueError):
        ExecutionOptions(tool_k=-1)
    with pytest.raises(ValueError):
        ExecutionOptions(consolidation="vote")


def test_mode_aliases() -> None:
    assert ExecutionMode.parse("seq") is ExecutionMode.SEQUENTIAL
    assert ExecutionMode.parse("parallel") is ExecutionMode.PARALLEL
    with pytest.raises(ValueError):
        ExecutionMode.parse("async")


# ---------- timing ----------
def test_profiler_with_fake_clock() -> None:
    ticks = iter([10.0, 10.5, 11.0, 10.75, 12.0, 13.0])
    profiler = TimingProfiler(clock=lambda: next(ticks))
    profiler.start_run()
    profiler.start_task_timing("a")
    profiler.start_task_timing("b")
    profiler.stop_task_timing("a")
    profiler.stop_task_timing("b")
    profiler.stop_run()
    profile = profiler.profile()
    assert profile.wall_time == 3.0
    assert profile.offsets() == {"a": (0.5, 0.75), "b": (1.0, 2.0)}
    assert not profile.overlaps("a", "b")
    assert profile.peak_concurrency() == 1


# ---------- feedback ----------
def test_canned_feedback_round_robin(chain, noop_catalog, chain_backend) -> None:
    seen = []
    feedback = FeedbackSystem(phrases=("one", "two"), sink=seen.append)
    trace = execute_sequential(chain, noop_catalog, chain_backend, ExecutionOptions(feedback=feedback))
    assert [(e.task_id, e.phrase) for e in trace.feedback] == [("1", "one"), ("2", "two"), ("3", "one")]
    assert seen == trace.feedback
    # feedback precedes the task it describes
    assert all(e.at <= trace.timing.intervals[e.task_id][0] for e in trace.feedback)


def test_feedback_from_backend_and_fallbacks(scripted, failing_backend) -> None:
    backend = scripted([("Generate a new feedback phrase", "  Hang tight!  ")])
    assert FeedbackSystem(backend=backend, sink=lambda e: None).feedback_phrase("1", "boil water").phrase == "Hang tight!"
    assert FeedbackSystem(backend=scripted(), sink=lambda e: None).feedback_phrase("1", "x").phrase == "Working on it..."
    assert FeedbackSystem(backend=failing_backend, sink=lambda e: None).feedback_phrase("1", "x").phrase == "Working on it..."


def test_broken_sink_does_not_fail_the_run(chain, noop_catalog, chain_backend) -> None:
    def sink(event):
        raise RuntimeError("display closed")

    trace = execute_parallel(chain, noop_catalog, chain_backend, ExecutionOptions(feedback=FeedbackSystem(sink=sink)))
    assert all(r.status is TaskStatus.COMPLETED for r in trace.ordered_results())
    assert len(trace.feedback) == 3


def test_feedback_events_are_per_run(chain, noop_catalog, chain_backend) -> None:
    options = ExecutionOptions(feedback=FeedbackSystem(sink=lambda e: None))
    execute_sequential(chain, noop_catalog, chain_backend, options)
    second = execute_sequential(chain, noop_catalog, chain_backend, options)
    assert len(second.feedback) == 3


# ---------- consolidation ----------
def _done(task_id, label, output):
    return TaskResult(task_id, label, TaskStatus.COMPLETED, output)


def test_consolidate_modes(scripted, failing_backend) -> None:
    results = [_done("1", "boil water", "boiled"), TaskResult.skipped("2", "pour", "x"), _done("3", "serve", "served")]
    backend = scripted([(CONSOLIDATE, " Tea is served. ")])
    assert consolidate("make tea", results, backend) == ("Tea is served.", False)
    assert "Task Results: - boil water: boiled\n- serve: served" in backend.calls[0]["prompt"]
    assert consolidate("make tea", results, backend, mode="concat") == ("boil water: boiled\nserve: served", False)
    assert consolidate("make tea", results, None) == ("boil water: boiled\nserve: served", False)
    assert consolidate("make tea", results, failing_backend) == ("boil water: boiled\nserve: served", True)
    with pytest.raises(ValueError):
        consolidate("make tea", [TaskResult.skipped("2", "pour", "x")], backend)


@pytest.mark.parametrize("reply", ["", "   ", "\n\t"])
def test_blank_consolidation_reply_falls_back(scripted, reply) -> None:
    results = [_done("1", "boil water", "boiled"), _done("3", "serve", "served")]
    backend = scripted([(CONSOLIDATE, reply)], fallback="unused")
    assert consolidate("make tea", results, backend) == ("boil water: boiled\nserve: served", True)


def test_blank_consolidation_reply_is_recorded(chain, noop_catalog, scripted) -> None:
    backend = scripted([
        ("Task: alpha step", "alpha done"),
        ("Task: beta step", "beta done"),
        ("Task: gamma step", "gamma done"),
    ], fallback="")
    trace = execute_parallel(chain, noop_catalog, backend)
    assert trace.consolidation_fallback is True
    assert trace.final_answer == "alpha step: alpha done\nbeta step: beta done\ngamma step: gamma done"


def test_consolidation_fallback_is_recorded(chain, noop_catalog, scripted) -> None:
    class ConsolidationFails:
        backend_id = "flaky"

        def __init__(self):
            self.inner = scripted(fallback="step done")

        def complete(self, prompt):
            if CONSOLIDATE in prompt:
                raise BackendError("overloaded")
            return self.inner.complete(prompt)

    trace = execute_sequential(chain, noop_catalog, ConsolidationFails())
    assert trace.consolidation_fallback is True
    assert trace.final_answer == "alpha step: step done\nbeta step: step done\ngamma step: step done"


# ---------- trace files ----------
def test_trace_file_round_trip(tmp_path, briefing_graph, catalog, briefing_backend) -> None:
    options = ExecutionOptions(feedback=FeedbackSystem(sink=lambda e: None))
    trace = execute_parallel(briefing_graph, catalog, briefing_backend, options, query="morning briefing")
    path = trace.write(tmp_path / "out" / "trace.json")
    loaded = load_trace(path)
    assert loaded.content() == trace.content()
    assert loaded.wall_time == pytest.approx(trace.wall_time)
    for task_id, span in trace.timing.offsets().items():
        assert loaded.timing.offsets()[task_id] == pytest.approx(span)
    assert [e.phrase for e in loaded.feedback] == [e.phrase for e in trace.feedback]
    document = trace.to_document()
    assert set(document) == {"content", "timing", "feedback"}
    assert set(document["timing"]["tasks"]) == {"1", "2", "3", "4"}
    assert document["content"]["config"]["feedback"] is True
