"""Scores a predicted task graph / trace against a gold scenario."""
from __future__ import annotations

import math
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from loguru import logger
from scipy.optimize import linear_sum_assignment

from agentgraph.backends import ModelBackend
from agentgraph.embedding import EmbeddingProvider, similarity_matrix, tokenize
from agentgraph.errors import AgentGraphError, BackendError, EmptyExpectedGraphError, JudgeError
from agentgraph.graph_core import TaskGraph, complexity_score, id_key
from agentgraph.prompts import PROMPT_JUDGE_ANSWER, fill

if TYPE_CHECKING:
    from agentgraph.dataset import ScenarioRecord
    from agentgraph.execution import ExecutionTrace

DEFAULT_THETA = 0.75
DEFAULT_ALPHA = 1.0
DEFAULT_GED_EXACT_LIMIT = 12

MATCHING_MODES = ("greedy", "optimal")


# ---------- Matching ----------
@dataclass(frozen=True)
class MatchResult:
    pairs: Tuple[Tuple[str, str, float], ...]
    tp: int
    fp: int
    fn: int

    @property
    def mapping(self) -> Dict[str, str]:
        """expected id -> actual id"""
        return {e: a for e, a, _ in self.pairs}


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float


def _label_sims(expected: TaskGraph, actual: TaskGraph, provider: EmbeddingProvider) -> np.ndarray:
    if not expected.nodes or not actual.nodes:
        return np.zeros((len(expected.nodes), len(actual.nodes)))
    rows = provider.embed([n.label for n in expected.nodes])
    cols = provider.embed([n.label for n in actual.nodes])
    return similarity_matrix(rows, cols)


def match_nodes(expected: TaskGraph, actual: TaskGraph, provider: EmbeddingProvider,
                theta: float = DEFAULT_THETA, method: str = "greedy") -> MatchResult:
    """One-to-one node matching on label cosine >= theta.

    greedy: repeatedly take the most similar unmatched pair, ties by
    (expected id, actual id). optimal: maximum total similarity assignment.
    """
    if method not in MATCHING_MODES:
        raise ValueError(f"unknown matching method {method!r}")
    sims = _label_sims(expected, actual, provider)
    e_ids, a_ids = expected.node_ids, actual.node_ids

    chosen: List[Tuple[int, int]] = []
    if sims.size:
        if method == "greedy":
            candidates = sorted(
                ((i, j) for i in range(len(e_ids)) for j in range(len(a_ids)) if sims[i, j] >= theta),
                key=lambda ij: (-sims[ij], id_key(e_ids[ij[0]]), id_key(a_ids[ij[1]])),
            )
            used_e, used_a = set(), set()
            for i, j in candidates:
                if i not in used_e and j not in used_a:
                    used_e.add(i)
                    used_a.add(j)
                    chosen.append((i, j))
        else:
            weights = np.where(sims >= theta, sims, 0.0)
            rows, cols = linear_sum_assignment(weights, maximize=True)
            chosen = [(i, j) for i, j in zip(rows, cols) if sims[i, j] >= theta]

    pairs = tuple(sorted(((e_ids[i], a_ids[j], float(sims[i, j])) for i, j in chosen),
                         key=lambda p: id_key(p[0])))
    tp = len(pairs)
    return MatchResult(pairs=pairs, tp=tp, fp=len(a_ids) - tp, fn=len(e_ids) - tp)


def match_edges(expected: TaskGraph, actual: TaskGraph, node_match: MatchResult) -> MatchResult:
    """Direction-sensitive: (u, v) hits iff both ends matched and the mapped edge is expected."""
    back = {a: e for e, a, _ in node_match.pairs}
    expected_edges = set(expected.edge_pairs())
    pairs = []
    for u, v in actual.edge_pairs():
        if u in back and v in back and (back[u], back[v]) in expected_edges:
            pairs.append((f"{back[u]}->{back[v]}", f"{u}->{v}", 1.0))
    tp = len(pairs)
    return MatchResult(pairs=tuple(pairs), tp=tp, fp=len(actual.edges) - tp, fn=len(expected.edges) - tp)


def match_tools(expected_calls: Sequence[str], actual_calls: Sequence[str]) -> MatchResult:
    want, got = Counter(expected_calls), Counter(actual_calls)
    hits = want & got
    pairs = tuple((name, name, 1.0) for name in sorted(hits) for _ in range(hits[name]))
    return MatchResult(
        pairs=pairs,
        tp=sum(hits.values()),
        fp=sum((got - want).values()),
        fn=sum((want - got).values()),
    )


def prf1(m: MatchResult) -> PRF1:
    # nothing expected and nothing produced counts as a perfect match
    if m.tp == m.fp == m.fn == 0:
        return PRF1(1.0, 1.0, 1.0)
    precision = m.tp / (m.tp + m.fp) if m.tp + m.fp else 0.0
    recall = m.tp / (m.tp + m.fn) if m.tp + m.fn else 0.0
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return PRF1(precision, recall, f1)


# ---------- Structural similarity ----------
@dataclass(frozen=True)
class PathSimilarityConfig:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


def node_label_similarity(expected: TaskGraph, actual: TaskGraph, provider: EmbeddingProvider) -> float:
    if not expected.nodes:
        raise EmptyExpectedGraphError("node label similarity needs a non-empty expected graph")
    if not actual.nodes:
        return 0.0
    best = np.clip(_label_sims(expected, actual, provider).max(axis=1), 0.0, 1.0)
    return float(best.mean())


def ssi(expected: TaskGraph, actual: TaskGraph, provider: EmbeddingProvider, theta: float = DEFAULT_THETA,
        node_match: Optional[MatchResult] = None) -> float:
    node_match = node_match or match_nodes(expected, actual, provider, theta)
    edge_f1 = prf1(match_edges(expected, actual, node_match)).f1
    return (node_label_similarity(expected, actual, provider) + edge_f1) / 2


def path_length_similarity(expected: TaskGraph, actual: TaskGraph, node_match: MatchResult,
                           cfg: PathSimilarityConfig = PathSimilarityConfig()) -> float:
    """Agreement of directed shortest-path lengths over ordered pairs of matched nodes.

    Unreachable in both graphs scores 1, reachable in only one scores 0; the
    sum is normalised by (number of matched nodes) squared.
    """
    m = len(node_match.pairs)
    if m == 0:
        return 0.0
    d_exp = dict(nx.all_pairs_shortest_path_length(expected.digraph()))
    d_act = dict(nx.all_pairs_shortest_path_length(actual.digraph()))
    total = 0.0
    for e1, a1, _ in node_match.pairs:
        for e2, a2, _ in node_match.pairs:
            d1, d2 = d_exp[e1].get(e2), d_act[a1].get(a2)
            if d1 is None and d2 is None:
                total += 1.0
            elif d1 is not None and d2 is not None:
                total += math.exp(-cfg.alpha * abs(d1 - d2))
    return total / (m * m)


# ---------- Graph edit distance ----------
class GedResult(NamedTuple):
    cost: int
    exact: bool


def ged_upper_bound(expected: TaskGraph, actual: TaskGraph, node_match: MatchResult) -> int:
    """Cost of the edit path induced by a node matching (matched pairs substitute for free)."""
    edges = match_edges(expected, actual, node_match)
    return node_match.fp + node_match.fn + edges.fp + edges.fn


def graph_edit_distance(expected: TaskGraph, actual: TaskGraph, provider: EmbeddingProvider,
                        theta: float = DEFAULT_THETA, exact_limit: int = DEFAULT_GED_EXACT_LIMIT,
                        node_match: Optional[MatchResult] = None) -> GedResult:
    if not expected.nodes or not actual.nodes:
        return GedResult(complexity_score(expected) + complexity_score(actual), True)
    node_match = node_match or match_nodes(expected, actual, provider, theta)
    bound = ged_upper_bound(expected, actual, node_match)
    if len(expected.nodes) + len(actual.nodes) > exact_limit:
        return GedResult(bound, False)

    sims = _label_sims(expected, actual, provider)
    g1, g2 = expected.digraph(), actual.digraph()
    for i, n in enumerate(expected.node_ids):
        g1.nodes[n]["row"] = i
    for j, n in enumerate(actual.node_ids):
        g2.nodes[n]["col"] = j

    cost = nx.graph_edit_distance(
        g1, g2,
        node_subst_cost=lambda a, b: 0.0 if sims[a["row"], b["col"]] >= theta else 1.0,
        node_del_cost=lambda a: 1.0,
        node_ins_cost=lambda b: 1.0,
        edge_subst_cost=lambda a, b: 0.0,
        edge_del_cost=lambda a: 1.0,
        edge_ins_cost=lambda b: 1.0,
        upper_bound=bound,
    )
    if cost is None:
        return GedResult(bound, True)
    return GedResult(int(round(cost)), True)


# ---------- Answer scoring ----------
Judge = Callable[[str, str], float]


def token_f1(gold: str, actual: str) -> float:
    """Token-level F1 after lowercasing and dropping punctuation."""
    gold_tokens, actual_tokens = Counter(tokenize(gold)), Counter(tokenize(actual))
    shared = sum((gold_tokens & actual_tokens).values())
    if shared == 0:
        return 0.0
    precision = shared / sum(actual_tokens.values())
    recall = shared / sum(gold_tokens.values())
    return 2 * precision * recall / (precision + recall)


class BackendJudge:
    """Asks a model backend for a 0..1 rating."""

    _NUMBER = re.compile(r"[-+]?\d*\.?\d+")

    def __init__(self, backend: ModelBackend):
        self.backend = backend

    def __call__(self, gold: str, actual: str) -> float:
        try:
            reply = self.backend.complete(fill(PROMPT_JUDGE_ANSWER, gold=gold, actual=actual))
        except BackendError as e:
            raise JudgeError(f"judge backend failed: {e}") from e
        found = self._NUMBER.search(reply)
        if not found:
            raise JudgeError(f"judge reply has no number: {reply!r}")
        score = float(found.group())
        if not 0.0 <= score <= 1.0:
            raise JudgeError(f"judge score {score} outside [0, 1]")
        return score


def score_answer(gold: str, actual: str, judge: Optional[Judge] = None) -> float:
    if not gold or not tokenize(gold):
        raise ValueError("gold response must contain at least one token")
    judge = judge or token_f1
    try:
        score = float(judge(gold, actual))
    except JudgeError:
        raise
    except Exception as e:
        raise JudgeError(f"judge failed: {e}") from e
    if not 0.0 <= score <= 1.0:
        raise JudgeError(f"judge score {score} outside [0, 1]")
    return score


# ---------- Reports ----------
@dataclass(frozen=True)
class EvaluationConfig:
    theta: float = DEFAULT_THETA
    alpha: float = DEFAULT_ALPHA
    matching: str = "greedy"
    ged_exact_limit: int = DEFAULT_GED_EXACT_LIMIT
    judge: Optional[Judge] = field(default=None, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be within [0, 1], got {self.theta}")
        if self.matching not in MATCHING_MODES:
            raise ValueError(f"matching must be one of {MATCHING_MODES}, got {self.matching!r}")
        PathSimilarityConfig(self.alpha)


@dataclass
class MetricReport:
    scenario: str
    category: str
    model_id: str
    theta: float
    alpha: float
    matching: str
    node: Optional[PRF1] = None
    edge: Optional[PRF1] = None
    tool: Optional[PRF1] = None
    node_label_similarity: Optional[float] = None
    ssi: Optional[float] = None
    path_length_similarity: Optional[float] = None
    ged: Optional[int] = None
    ged_exact: Optional[bool] = None
    expected_complexity: int = 0
    actual_complexity: int = 0
    answer_score: Optional[float] = None
    node_pairs: List[Tuple[str, str, float]] = field(default_factory=list)
    errors: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["node_pairs"] = [list(p) for p in self.node_pairs]
        return doc

    def csv_row(self) -> Dict[str, Any]:
        row: Dict[str, Any] = {"scenario": self.scenario, "category": self.category}
        for family in ("node", "edge", "tool"):
            scores = getattr(self, family)
            for part in ("precision", "recall", "f1"):
                row[f"{family}_{part}"] = getattr(scores, part) if scores is not None else None
        row.update({
            "node_label_similarity": self.node_label_similarity,
            "ssi": self.ssi,
            "path_length_similarity": self.path_length_similarity,
            "ged": self.ged,
            "ged_exact": self.ged_exact,
            "expected_complexity": self.expected_complexity,
            "actual_complexity": self.actual_complexity,
            "answer_score": self.answer_score,
            "theta": self.theta,
            "alpha": self.alpha,
            "model_id": self.model_id,
        })
        return row


CSV_COLUMNS = (
    "scenario", "category",
    "node_precision", "node_recall", "node_f1",
    "edge_precision", "edge_recall", "edge_f1",
    "tool_precision", "tool_recall", "tool_f1",
    "node_label_similarity", "ssi", "path_length_similarity",
    "ged", "ged_exact", "expected_complexity", "actual_complexity",
    "answer_score", "theta", "alpha", "model_id",
)


def evaluate_graphs(expected: TaskGraph, actual: TaskGraph, provider: EmbeddingProvider,
                    cfg: EvaluationConfig = EvaluationConfig(), report: Optional[MetricReport] = None) -> MetricReport:
    """Every graph-level metric; a failing metric leaves its field empty and records the error."""
    report = report or MetricReport(scenario="", category="", model_id=provider.model_id,
                                    theta=cfg.theta, alpha=cfg.alpha, matching=cfg.matching)
    report.expected_complexity = complexity_score(expected)
    report.actual_complexity = complexity_score(actual)

    def attempt(name: str, fn: Callable[[], Any]) -> Any:
        try:
            return fn()
        except (AgentGraphError, ValueError) as e:
            logger.warning("{}: {} could not be computed: {}", report.scenario or "<graphs>", name, e)
            report.errors[name] = str(e)
            return None

    nodes = attempt("node", lambda: match_nodes(expected, actual, provider, cfg.theta, cfg.matching))
    if nodes is not None:
        report.node = prf1(nodes)
        report.node_pairs = list(nodes.pairs)
        report.edge = prf1(match_edges(expected, actual, nodes))
        report.path_length_similarity = attempt(
            "path_length_similarity",
            lambda: path_length_similarity(expected, actual, nodes, PathSimilarityConfig(cfg.alpha)))
        ged = attempt("ged", lambda: graph_edit_distance(expected, actual, provider, cfg.theta,
                                                         cfg.ged_exact_limit, nodes))
        if ged is not None:
            report.ged, report.ged_exact = ged.cost, ged.exact
    report.node_label_similarity = attempt("node_label_similarity",
                                           lambda: node_label_similarity(expected, actual, provider))
    if report.node_label_similarity is not None and report.edge is not None:
        report.ssi = (report.node_label_similarity + report.edge.f1) / 2
    return report


def evaluate_scenario(record: "ScenarioRecord", trace: "ExecutionTrace", provider: EmbeddingProvider,
                      cfg: EvaluationConfig = EvaluationConfig()) -> MetricReport:
    report = MetricReport(scenario=record.name, category=record.category, model_id=provider.model_id,
                          theta=cfg.theta, alpha=cfg.alpha, matching=cfg.matching)
    evaluate_graphs(record.expected_graph, trace.graph, provider, cfg, report)
    report.tool = prf1(match_tools(record.expected_tool_calls, trace.tool_call_names()))
    try:
        report.answer_score = score_answer(record.gold_response, trace.final_answer, cfg.judge)
    except (JudgeError, ValueError) as e:
        logger.warning("{}: answer not scored: {}", record.name, e)
        report.errors["answer_score"] = str(e)
    return report


def evaluate_batch(pairs: Sequence[Tuple["ScenarioRecord", "ExecutionTrace"]], provider: EmbeddingProvider,
                   cfg: EvaluationConfig = EvaluationConfig(), max_workers: int = 4) -> List[MetricReport]:
    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        return list(pool.map(lambda pair: evaluate_scenario(pair[0], pair[1], provider, cfg), pairs))


def reports_frame(reports: Sequence[MetricReport]) -> pd.DataFrame:
    return pd.DataFrame([r.csv_row() for r in reports], columns=list(CSV_COLUMNS))
