"""Metrics: dependency precision/recall, plan binary-match accuracy, the
0-to-2 judge score, and the with/without-PPR ablation comparison.

Binary match is rule-based and strict: the generated plan must use exactly
the gold multiset of tools and cover every gold dependency pair. The judge
path goes through the gateway so it can be a hosted model, a replay
fixture, or the deterministic stub rubric.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import JudgeProtocolError
from .gateway import Gateway, Role, request_for
from .planning import PlanArtifact
from .schemas import GoldPlan, QueryRecord, canonical_json, iter_jsonl

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DependencyEvalReport:
    predicted_count: int
    gold_count: int
    true_positive_count: int

    def __post_init__(self):
        if self.true_positive_count > min(self.predicted_count, self.gold_count):
            raise ValueError("true positives cannot exceed either side")

    @property
    def precision(self) -> float:
        return self.true_positive_count / self.predicted_count if self.predicted_count else 0.0

    @property
    def recall(self) -> float:
        return self.true_positive_count / self.gold_count if self.gold_count else 0.0

    @property
    def precision_pct(self) -> float:
        return round(100.0 * self.precision, 1)

    @property
    def recall_pct(self) -> float:
        return round(100.0 * self.recall, 1)

    @classmethod
    def from_counts(cls, predicted: int, gold: int, true_positives: int) -> "DependencyEvalReport":
        return cls(predicted, gold, true_positives)


def score_dependencies(
    predicted: Iterable[tuple[str, str]], gold: Iterable[tuple[str, str]]
) -> DependencyEvalReport:
    """Pair-level precision/recall: matching on (source tool, target tool)."""
    predicted_set = set(predicted)
    gold_set = set(gold)
    return DependencyEvalReport(
        predicted_count=len(predicted_set),
        gold_count=len(gold_set),
        true_positive_count=len(predicted_set & gold_set),
    )


# --- plan-level metrics -------------------------------------------------------


def binary_match(artifact: PlanArtifact, gold_plan: GoldPlan) -> bool:
    """Tool multisets agree and every gold dependency pair is wired."""
    artifact_tools = Counter(artifact.tool_ids())
    gold_tools = Counter(s.tool_id for s in gold_plan.steps)
    if artifact_tools != gold_tools:
        return False
    return set(gold_plan.gold_dependencies) <= artifact.dependency_pairs()


def plan_judge_payload(artifact: PlanArtifact, gold_plan: GoldPlan) -> str:
    return canonical_json(
        {
            "artifact": {
                "tools": sorted(artifact.tool_ids()),
                "dependencies": sorted(list(p) for p in artifact.dependency_pairs()),
            },
            "gold": {
                "tools": sorted(s.tool_id for s in gold_plan.steps),
                "dependencies": sorted(list(p) for p in gold_plan.gold_dependencies),
            },
        }
    )


def judge_plan(artifact: PlanArtifact, gold_plan: GoldPlan, gateway: Gateway) -> int:
    """Plan coverage score in {0, 1, 2}; anything else is a protocol breach."""
    response = gateway.complete(
        request_for(Role.PLAN_JUDGE, plan_judge_payload(artifact, gold_plan))
    )
    try:
        score = int(response.strip())
    except ValueError:
        raise JudgeProtocolError(f"judge returned non-integer output {response!r}")
    if score not in (0, 1, 2):
        raise JudgeProtocolError(f"judge score {score} outside the 0..2 range")
    return score


@dataclass(frozen=True)
class PerQueryResult:
    query_id: str
    artifact_id: str
    matched: bool
    judge_score: int


@dataclass(frozen=True)
class PlanEvalReport:
    n_queries: int
    binary_match_accuracy: float
    mean_judge_score: float
    per_query: tuple[PerQueryResult, ...]

    @classmethod
    def from_results(cls, results: Sequence[PerQueryResult]) -> "PlanEvalReport":
        n = len(results)
        matches = sum(1 for r in results if r.matched)
        total_score = sum(r.judge_score for r in results)
        return cls(
            n_queries=n,
            binary_match_accuracy=matches / n if n else 0.0,
            mean_judge_score=total_score / n if n else 0.0,
            per_query=tuple(results),
        )


def evaluate_plans(
    queries: Sequence[QueryRecord],
    artifacts: Iterable[PlanArtifact],
    gateway: Gateway,
) -> PlanEvalReport:
    """Score artifacts against gold plans, one result per evaluable query.

    Queries without a gold plan are skipped; queries whose artifact is
    missing (generation failed) count as unmatched with judge score 0.
    """
    by_query: dict[str, PlanArtifact] = {}
    for artifact in artifacts:
        by_query[artifact.query_id] = artifact

    results: list[PerQueryResult] = []
    for query in sorted(queries, key=lambda q: q.query_id):
        if query.gold_plan is None:
            continue
        artifact = by_query.get(query.query_id)
        if artifact is None:
            results.append(PerQueryResult(query.query_id, "", False, 0))
            continue
        matched = binary_match(artifact, query.gold_plan)
        score = judge_plan(artifact, query.gold_plan, gateway)
        results.append(
            PerQueryResult(query.query_id, artifact.artifact_id, matched, score)
        )
    return PlanEvalReport.from_results(results)


@dataclass(frozen=True)
class AblationReport:
    with_ppr: PlanEvalReport
    without_ppr: PlanEvalReport
    queries_won: tuple[str, ...]  # matched with PPR, missed without
    queries_lost: tuple[str, ...]

    @property
    def delta(self) -> float:
        return self.with_ppr.binary_match_accuracy - self.without_ppr.binary_match_accuracy


def run_ablation(
    queries: Sequence[QueryRecord],
    artifacts_with_ppr: Iterable[PlanArtifact],
    artifacts_without_ppr: Iterable[PlanArtifact],
    gateway: Gateway,
) -> AblationReport:
    """Paired comparison of the two retrieval arms on identical queries."""
    with_report = evaluate_plans(queries, artifacts_with_ppr, gateway)
    without_report = evaluate_plans(queries, artifacts_without_ppr, gateway)
    with_matched = {r.query_id for r in with_report.per_query if r.matched}
    without_matched = {r.query_id for r in without_report.per_query if r.matched}
    return AblationReport(
        with_ppr=with_report,
        without_ppr=without_report,
        queries_won=tuple(sorted(with_matched - without_matched)),
        queries_lost=tuple(sorted(without_matched - with_matched)),
    )


# --- report files -------------------------------------------------------------


def save_plan_report(path: str | Path, report: PlanEvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            canonical_json(
                {
                    "record": "summary",
                    "n_queries": report.n_queries,
                    "binary_match_accuracy": report.binary_match_accuracy,
                    "mean_judge_score": report.mean_judge_score,
                }
            )
        )
        fh.write("\n")
        for r in report.per_query:
            fh.write(
                canonical_json(
                    {
                        "record": "query",
                        "query_id": r.query_id,
                        "artifact_id": r.artifact_id,
                        "binary_match": r.matched,
                        "judge_score": r.judge_score,
                    }
                )
            )
            fh.write("\n")


def load_plan_report(path: str | Path) -> PlanEvalReport:
    summary: dict[str, Any] | None = None
    results: list[PerQueryResult] = []
    for _line, record in iter_jsonl(path):
        if record.get("record") == "summary":
            summary = record
        elif record.get("record") == "query":
            results.append(
                PerQueryResult(
                    query_id=str(record["query_id"]),
                    artifact_id=str(record["artifact_id"]),
                    matched=bool(record["binary_match"]),
                    judge_score=int(record["judge_score"]),
                )
            )
    report = PlanEvalReport.from_results(results)
    if summary is not None and (
        summary["n_queries"] != report.n_queries
        or abs(summary["binary_match_accuracy"] - report.binary_match_accuracy) > 1e-12
    ):
        logger.warning("report summary disagrees with per-query records in %s", path)
    return report


def save_dependency_report(path: str | Path, report: DependencyEvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            canonical_json(
                {
                    "record": "summary",
                    "predicted": report.predicted_count,
                    "gold": report.gold_count,
                    "true_positives": report.true_positive_count,
                    "precision_pct": report.precision_pct,
                    "recall_pct": report.recall_pct,
                }
            )
        )
        fh.write("\n")


def save_ablation_report(path: str | Path, report: AblationReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            canonical_json(
                {
                    "record": "summary",
                    "with_ppr_accuracy": report.with_ppr.binary_match_accuracy,
                    "without_ppr_accuracy": report.without_ppr.binary_match_accuracy,
                    "delta": report.delta,
                    "queries_won": list(report.queries_won),
                    "queries_lost": list(report.queries_lost),
                }
            )
        )
        fh.write("\n")
        for tag, rep in (("with_ppr", report.with_ppr), ("without_ppr", report.without_ppr)):
            for r in rep.per_query:
                fh.write(
                    canonical_json(
                        {
                            "record": "query",
                            "arm": tag,
                            "query_id": r.query_id,
                            "artifact_id": r.artifact_id,
                            "binary_match": r.matched,
                            "judge_score": r.judge_score,
                        }
                    )
                )
                fh.write("\n")
