# Prompt skeletons. Only {word} slots are substituted, so the literal JSON
# braces in the examples need no escaping.
import re

PROMPT_TASK_GRAPH = """You are responsible for generating a task graph from the following user query. Decompose the query into individual tasks and create a Directed Acyclic Graph (DAG) with nodes as tasks and edges as dependencies. Ensure there are no cyclic dependencies.

User Query: {user_query}

Respond with the task graph in the following JSON format:
{
  "nodes": [
    {"id": 1, "label": "Task description 1"},
    {"id": 2, "label": "Task description 2"}
  ],
  "edges": [
    {"from": 1, "to": 2}
  ]
}"""

STRATEGY_CLAUSES = {
    "coarse": "Decomposition strategy: coarse-grained. Use a small number of large tasks, each covering a substantial amount of work, to keep scheduling and hand-over overhead low.",
    "fine": "Decomposition strategy: fine-grained. Use a large number of small, granular tasks so that independent steps can run in parallel.",
    "critical_path": "Decomposition strategy: critical-path optimization. Keep the longest chain of dependent tasks as short as possible and only add an edge when a task needs another task's result.",
}

PROMPT_REPAIR = """

Your previous response could not be used as a task graph.
Error: {error}
Respond again with a corrected task graph in the same JSON format."""

PROMPT_EXECUTE_TASK = """You are an agent executing one task from a larger task graph.

Task: {task_label}

Results of prerequisite tasks:
{buffer}

Available tools:
{tools}

To call tools, include exactly one block of the form
```tool_calls
[{"tool": "tool_name", "arguments": {"param": "value"}}]
```
Any text outside that block is your answer for this task."""

PROMPT_CONSOLIDATE_TASKS = """You are an assistant operating within an LLM-based Agentic Architecture. Your task is to generate a final response to the user's query by considering the results of multiple tasks. These tasks were generated from the user's query using a task graph. Ensure the final response addresses all aspects of the user's query.

User Query: {user_query}

Task Results: {task_results}

Generate a concise final response in 50 words or less."""

PROMPT_FEEDBACK = """You are responsible for generating a short feedback phrase for a task that is being processed. The feedback should be friendly and let the user know their task is in progress.

Task: {task_description}

Generate a new feedback phrase:"""

PROMPT_GENERATE_BEHAVIOR = """You are building a deterministic stand-in for a real-world tool. Given the tool description, propose how the tool responds.

Tool description: {description}

Respond with one JSON object:
{"params": [{"name": "param", "type": "string", "required": true}],
 "behavior": {"kind": "fixed_output" | "template" | "table_lookup", "payload": ...}}
A template payload is a string with {param} slots; a table_lookup payload is {"table": {"key": "value"}, "default": "optional"} keyed on the first parameter."""

PROMPT_JUDGE_ANSWER = """Rate how well the answer matches the reference answer, from 0 (unrelated or wrong) to 1 (equivalent).

Reference answer: {gold}

Answer: {actual}

Reply with a single number between 0 and 1."""


_SLOT = re.compile(r"\{(\w+)\}")


def fill(template: str, **slots) -> str:
    # single pass: text inside a filled value is never substituted again
    return _SLOT.sub(lambda m: str(slots[m.group(1)]) if m.group(1) in slots else m.group(0), template)
