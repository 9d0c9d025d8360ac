"""Command-line entry point: run, eval, report, dataset build|validate.

Exit codes: 0 ok, 2 orchestration failure, 3 bad configuration, 4 missing or
unreadable input, 5 nothing evaluated, 6 dataset diagnostics.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from loguru import logger

from agentgraph.analysis import correlation_report, report_table
from agentgraph.backends import load_rules
from agentgraph.config import RunConfig, build_config
from agentgraph.dataset import build_from_csv, load_scenarios, slug
from agentgraph.errors import (
    AgentGraphError,
    BackendError,
    ConfigError,
    OrchestrationError,
    ScenarioError,
    ToolRegistryError,
)
from agentgraph.evaluation import evaluate_batch, reports_frame
from agentgraph.execution import ExecutionTrace, load_trace
from agentgraph.pipeline import Pipeline
from agentgraph.tool_registry import load_manifest

EXIT_OK = 0
EXIT_ORCHESTRATION = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_NOTHING_EVALUATED = 5
EXIT_DIAGNOSTICS = 6

DEFAULT_TRACE_DIR = "traces"
DEFAULT_REPORT_DIR = "reports"
METRICS_CSV = "metrics.csv"


def configure_logging(verbose: bool = False) -> None:
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO",
               format="<green>{time:HH:mm:ss}</green> <level>{level: <8}</level> {message}")


def _write_json(path: Path, document: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


# ---------- run ----------
def _pipeline(config: RunConfig, tools: str) -> Pipeline:
    backend = config.make_backend()
    catalog = load_manifest(tools, config.make_provider())
    if config.tool_latency_ms:
        catalog = catalog.with_latency(config.tool_latency_ms / 1000.0)
    return Pipeline(
        backend, catalog,
        strategy=config.strategy,
        mode=config.mode,
        semantic_tool_filtering=config.semantic_tool_filtering,
        include_indirect_dependencies=config.include_indirect_dependencies,
        generate_feedback=config.feedback,
        profile_execution_timings=config.profile,
        max_concurrency=config.max_concurrency,
        tool_k=config.tool_k,
        tool_min_sim=config.tool_min_sim,
        max_repairs=config.max_repairs,
        consolidation=config.consolidation,
    )


def _run_one(query: str, config: RunConfig, tools: str, name: Optional[str] = None) -> ExecutionTrace:
    trace = _pipeline(config, tools).run(query)
    # effective config echoed for provenance; the output path is not part of the content
    trace.config = {k: v for k, v in config.to_dict().items() if k != "out"}
    out = Path(config.out or DEFAULT_TRACE_DIR) / f"{slug(name or query)}.json"
    trace.write(out)
    logger.info("trace written to {}", out)
    return trace


def cmd_run(query: str, config: RunConfig, name: Optional[str] = None) -> int:
    try:
        if not config.tools:
            raise ConfigError("no tool manifest given (--tools or 'tools' in the config file)")
        trace = _run_one(query, config, config.tools, name)
    except (OrchestrationError, BackendError) as e:
        logger.error("orchestration failed: {}", e)
        return EXIT_ORCHESTRATION
    except (OSError, ToolRegistryError) as e:
        logger.error("cannot read input: {}", e)
        return EXIT_IO
    except (ConfigError, ValueError) as e:
        logger.error("configuration error: {}", e)
        return EXIT_CONFIG
    print(trace.final_answer)
    return EXIT_OK


def cmd_run_scenarios(scenarios_dir: str, config: RunConfig) -> int:
    """Runs every scenario's query (its name) against its own tool manifest."""
    try:
        records, _ = load_scenarios(scenarios_dir)
    except OSError as e:
        logger.error("cannot read scenarios: {}", e)
        return EXIT_IO
    failures = 0
    for record in records:
        tools = config.tools or str(record.path / "tools.json")
        try:
            _run_one(record.query, config, tools, record.name)
        except (OrchestrationError, BackendError) as e:
            logger.error("{}: orchestration failed: {}", record.name, e)
            failures += 1
        except (OSError, ToolRegistryError) as e:
            logger.error("{}: cannot read input: {}", record.name, e)
            return EXIT_IO
        except (ConfigError, ValueError) as e:
            logger.error("configuration error: {}", e)
            return EXIT_CONFIG
    return EXIT_ORCHESTRATION if failures and failures == len(records) else EXIT_OK


# ---------- eval ----------
def cmd_eval(scenarios_dir: str, traces_dir: str, config: RunConfig) -> int:
    traces_path = Path(traces_dir)
    try:
        records, _ = load_scenarios(scenarios_dir)
        if not traces_path.is_dir():
            raise FileNotFoundError(f"trace directory not found: {traces_path}")
        provider = config.make_provider()
        cfg = config.evaluation_config()
    except OSError as e:
        logger.error("{}", e)
        return EXIT_IO
    except (ConfigError, ValueError) as e:
        logger.error("configuration error: {}", e)
        return EXIT_CONFIG

    trace_files = {p.stem: p for p in sorted(traces_path.glob("*.json"))}
    pairs = []
    for record in records:
        path = trace_files.pop(record.slug, None)
        if path is None:
            logger.warning("no trace for scenario {!r} (expected {}.json)", record.name, record.slug)
            continue
        try:
            pairs.append((record, load_trace(path)))
        except (OSError, KeyError, ValueError, AgentGraphError) as e:
            logger.warning("unreadable trace {}: {}", path, e)
    for stem in trace_files:
        logger.warning("trace {}.json matches no scenario", stem)
    if not pairs:
        logger.error("nothing to evaluate")
        return EXIT_NOTHING_EVALUATED

    reports = evaluate_batch(pairs, provider, cfg)
    out = Path(config.out or DEFAULT_REPORT_DIR)
    out.mkdir(parents=True, exist_ok=True)
    effective = {k: v for k, v in config.to_dict().items() if k != "out"}
    for report in reports:
        _write_json(out / f"{slug(report.scenario)}.json", {"config": effective, "report": report.to_dict()})
    frame = reports_frame(reports)
    frame.to_csv(out / METRICS_CSV, index=False)
    print(frame[["scenario", "node_f1", "edge_f1", "tool_f1", "ssi", "ged", "answer_score"]].to_string(index=False))
    logger.info("{} scenario(s) evaluated, results in {}", len(reports), out)
    return EXIT_OK


# ---------- report ----------
def cmd_report(csv_path: str, out: Optional[str] = None) -> int:
    path = Path(csv_path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        logger.error("cannot read {}: {}", path, e)
        return EXIT_IO
    missing = [c for c in ("category", "answer_score") if c not in frame.columns]
    if missing:
        logger.error("{} lacks column(s): {}", path, ", ".join(missing))
        return EXIT_IO
    small = frame.groupby("category").size()
    for category, n in small[small < 3].items():
        logger.warning("category {!r} has only {} row(s); its statistics will be blank", category, n)

    report = correlation_report(frame)
    print(report_table(report).to_string(float_format=lambda v: f"{v:.4f}", na_rep=""))
    for group, section in report.items():
        regression = section["regression"]
        if regression is None:
            logger.warning("{}: OLS left blank: {}", group, section["regression_note"])
            continue
        ranked = ", ".join(f"{m} ({regression['coefficients'][m]:+.4f})" for m in regression["ranking"])
        print(f"{group}: R^2 = {regression['r_squared']:.4f}; features by |coefficient|: {ranked}")
    target = Path(out) if out else path.with_suffix(".report.json")
    _write_json(target, report)
    logger.info("report written to {}", target)
    return EXIT_OK


# ---------- dataset ----------
def cmd_dataset(subcommand: str, paths: Sequence[str], config: Optional[RunConfig] = None) -> int:
    config = config or RunConfig()
    if subcommand == "validate":
        try:
            records, diagnostics = load_scenarios(paths[0])
        except OSError as e:
            logger.error("{}", e)
            return EXIT_IO
        for diagnostic in diagnostics:
            print(f"INVALID {diagnostic}")
        print(f"{len(records)} valid scenario(s), {len(diagnostics)} diagnostic(s)")
        return EXIT_DIAGNOSTICS if diagnostics else EXIT_OK

    csv_path, out_root = paths
    try:
        backend = load_rules(config.backend.rules) if config.backend.rules else None
        written, diagnostics = build_from_csv(csv_path, out_root, config.make_provider(), backend)
    except ScenarioError as e:
        logger.error("{}", e)
        return EXIT_IO
    except OSError as e:
        logger.error("cannot read input: {}", e)
        return EXIT_IO
    except ConfigError as e:
        logger.error("configuration error: {}", e)
        return EXIT_CONFIG
    for diagnostic in diagnostics:
        print(f"NOT BUILT {diagnostic}")
    print(f"{len(written)} scenario(s) written to {out_root}")
    return EXIT_DIAGNOSTICS if diagnostics else EXIT_OK


# ---------- argument parsing ----------
def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--backend", choices=["scripted", "http"])
    p.add_argument("--rules", help="scripted backend rule file (YAML)")
    p.add_argument("--out", help="output directory (or file for report)")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tools", help="tool manifest (JSON)")
    p.add_argument("--strategy", choices=["coarse", "fine", "critical-path", "critical_path", "default"])
    p.add_argument("--mode", choices=["seq", "par"])
    p.add_argument("--max-concurrency", type=int)
    p.add_argument("--indirect-deps", action="store_true", default=None,
                   help="buffer every ancestor's output, not only direct predecessors")
    p.add_argument("--no-tool-filtering", dest="semantic_tool_filtering", action="store_false", default=None,
                   help="offer every catalog tool to every task")
    p.add_argument("--feedback", action="store_true", default=None)
    p.add_argument("--profile", action="store_true", default=None)
    p.add_argument("--tool-k", type=int)
    p.add_argument("--tool-min-sim", type=float)
    p.add_argument("--tool-latency-ms", type=float)
    p.add_argument("--max-repairs", type=int)
    p.add_argument("--consolidation", choices=["backend", "concat"])


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--theta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--matching", choices=["greedy", "optimal"])
    p.add_argument("--ged-exact-limit", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentgraph", description="Task-graph agent runner and evaluation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="decompose and execute a query")
    run.add_argument("query", nargs="?")
    run.add_argument("--scenarios", help="run every scenario in this directory instead of one query")
    run.add_argument("--name", help="trace file name (defaults to the query)")
    _add_config_flags(run)
    _add_run_flags(run)

    ev = sub.add_parser("eval", help="score traces against scenarios")
    ev.add_argument("scenarios")
    ev.add_argument("traces")
    _add_config_flags(ev)
    _add_eval_flags(ev)

    rep = sub.add_parser("report", help="correlation and regression over an eval CSV")
    rep.add_argument("csv")
    rep.add_argument("--out")

    ds = sub.add_parser("dataset", help="build or validate scenario directories")
    ds_sub = ds.add_subparsers(dest="dataset_command", required=True)
    build = ds_sub.add_parser("build", help="build scenarios from an AsyncHow-format CSV")
    build.add_argument("csv")
    build.add_argument("out_root")
    build.add_argument("--config")
    build.add_argument("--rules", help="scripted backend proposing tool behaviors")
    validate = ds_sub.add_parser("validate", help="load scenarios and report diagnostics")
    validate.add_argument("root")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    flags = vars(args)
    top = ("strategy", "mode", "max_concurrency", "semantic_tool_filtering", "feedback", "profile", "tool_k",
           "tool_min_sim", "tool_latency_ms", "max_repairs", "consolidation", "tools", "out", "theta", "alpha",
           "matching", "ged_exact_limit")
    overrides = {k: flags.get(k) for k in top}
    overrides["include_indirect_dependencies"] = flags.get("indirect_deps")
    overrides["backend"] = {"kind": flags.get("backend"), "rules": flags.get("rules")}
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        config = build_config(getattr(args, "config", None), _overrides(args))
    except ConfigError as e:
        logger.error("{}", e)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("cannot read config: {}", e)
        return EXIT_IO

    if args.command == "run":
        if args.scenarios:
            return cmd_run_scenarios(args.scenarios, config)
        if not args.query:
            logger.error("give a query or --scenarios")
            return EXIT_CONFIG
        return cmd_run(args.query, config, args.name)
    if args.command == "eval":
        return cmd_eval(args.scenarios, args.traces, config)
    if args.command == "report":
        return cmd_report(args.csv, args.out)
    if args.dataset_command == "build":
        return cmd_dataset("build", [args.csv, args.out_root], config)
    return cmd_dataset("validate", [args.root], config)
