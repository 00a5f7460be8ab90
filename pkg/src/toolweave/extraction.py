"""Dependency extraction: enumerate candidate tool pairs, propose field-level
dependencies through the gateway, and verify each with a judge call.

Results are merged in canonical pair order no matter how many requests were
in flight, so output is reproducible byte for byte across concurrency
settings and input orderings.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import (
    ConfigError,
    EmptyAfterNormalization,
    GatewayFailure,
    MalformedRecord,
    TooFewTools,
)
from .gateway import Gateway, Mode, Role, request_for
from .schemas import (
    ToolSchema,
    canonical_json,
    compatible_types,
    iter_jsonl,
    normalize_tool_id,
    tool_schema_to_record,
)

logger = logging.getLogger(__name__)


class Blocking(str, Enum):
    ALL_PAIRS = "all_pairs"
    FIELD_OVERLAP = "field_overlap"


class Verdict(str, Enum):
    ACCEPTED = "accepted"
    REJECTED = "rejected"


class Provenance(str, Enum):
    LLM = "llm"
    HEURISTIC = "heuristic"
    FIXTURE = "fixture"


_MODE_PROVENANCE = {
    Mode.LIVE: Provenance.LLM,
    Mode.STUB: Provenance.HEURISTIC,
    Mode.REPLAY: Provenance.FIXTURE,
}

# above this corpus size the O(n^2) pair set gets blocked on field overlap
AUTO_BLOCKING_THRESHOLD = 200


@dataclass(frozen=True)
class DependencyCandidate:
    source_tool: str
    target_tool: str
    output_field: str
    input_argument: str
    rationale: str = ""
    confidence: float = 1.0


@dataclass(frozen=True)
class ToolDependency:
    source_tool: str
    target_tool: str
    output_field: str
    input_argument: str
    rationale: str
    confidence: float
    verdict: Verdict
    judge_rationale: str = ""
    provenance: Provenance = Provenance.HEURISTIC

    def sort_key(self):
        return (self.source_tool, self.target_tool, self.output_field, self.input_argument)


@dataclass
class ExtractionConfig:
    pair_blocking: Blocking | None = None  # None = auto by corpus size
    max_in_flight: int = 1
    judge_enabled: bool = True

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ConfigError("extraction.max_in_flight", "must be >= 1")

    def resolve_blocking(self, n_tools: int) -> Blocking:
        if self.pair_blocking is not None:
            return self.pair_blocking
        return Blocking.FIELD_OVERLAP if n_tools > AUTO_BLOCKING_THRESHOLD else Blocking.ALL_PAIRS


@dataclass
class ExtractionStats:
    pairs: int = 0
    proposals: int = 0
    accepts: int = 0
    rejects: int = 0
    invalid_proposals: int = 0
    malformed_proposals: int = 0
    malformed_verdicts: int = 0
    pair_failures: list[tuple[str, str, str]] = field(default_factory=list)

    def as_dict(self) -> dict[str, Any]:
        return {
            "pairs": self.pairs,
            "proposals": self.proposals,
            "accepts": self.accepts,
            "rejects": self.rejects,
            "invalid_proposals": self.invalid_proposals,
            "malformed_proposals": self.malformed_proposals,
            "malformed_verdicts": self.malformed_verdicts,
            "pair_failures": [list(f) for f in self.pair_failures],
        }


# --- pair enumeration -------------------------------------------------------


_WORDS = re.compile(r"[a-z0-9]+")


def _name_tokens(name: str) -> set[str]:
    return set(_WORDS.findall(name.lower()))


def _overlap(source: ToolSchema, target: ToolSchema) -> bool:
    for fld in source.output_payload:
        fld_tokens = _name_tokens(fld.name)
        if not fld_tokens:
            continue
        for arg in target.arguments:
            if fld_tokens & (_name_tokens(arg.name) | _name_tokens(arg.description)):
                return True
    return False


def enumerate_candidate_pairs(
    tools: Sequence[ToolSchema], config: ExtractionConfig | None = None
) -> list[tuple[ToolSchema, ToolSchema]]:
    """Ordered (source, target) pairs, sorted lexicographically by tool_id."""
    config = config or ExtractionConfig()
    if len(tools) < 2:
        raise TooFewTools(f"need at least 2 tools, got {len(tools)}")
    ordered = sorted(tools, key=lambda t: t.tool_id)
    blocking = config.resolve_blocking(len(tools))
    pairs = []
    for source in ordered:
        for target in ordered:
            if source.tool_id == target.tool_id:
                continue
            if blocking is Blocking.FIELD_OVERLAP and not _overlap(source, target):
                continue
            pairs.append((source, target))
    return pairs


# --- the heuristic oracle ---------------------------------------------------


def _normalized_or_none(name: str) -> str | None:
    try:
        return normalize_tool_id(name)
    except EmptyAfterNormalization:
        return None


def heuristic_match_oracle(pair: tuple[ToolSchema, ToolSchema]) -> list[DependencyCandidate]:
    """Deterministic stand-in for the proposal model, also the test oracle.

    One candidate per (payload field, argument) pair whose normalized names
    are equal and whose type tags are compatible (equal, or either unknown).
    """
    source, target = pair
    candidates = []
    for fld in source.output_payload:
        fld_name = _normalized_or_none(fld.name)
        if fld_name is None:
            continue
        for arg in target.arguments:
            if _normalized_or_none(arg.name) == fld_name and compatible_types(
                fld.type_tag, arg.type_tag
            ):
                candidates.append(
                    DependencyCandidate(
                        source_tool=source.tool_id,
                        target_tool=target.tool_id,
                        output_field=fld.name,
                        input_argument=arg.name,
                        rationale=f"output {fld.name!r} feeds argument {arg.name!r}",
                        confidence=1.0,
                    )
                )
    candidates.sort(key=lambda c: (c.output_field, c.input_argument))
    return candidates


# --- gateway-backed proposal and judging ------------------------------------


def _tool_payload_record(schema: ToolSchema) -> dict[str, Any]:
    record = tool_schema_to_record(schema)
    record["tool_id"] = schema.tool_id
    return record


def propose_payload(source: ToolSchema, target: ToolSchema) -> str:
    return canonical_json(
        {"source": _tool_payload_record(source), "target": _tool_payload_record(target)}
    )


def judge_payload(
    candidate: DependencyCandidate, source: ToolSchema, target: ToolSchema
) -> str:
    fld = source.payload_field(candidate.output_field)
    arg = target.argument(candidate.input_argument)
    return canonical_json(
        {
            "source_tool": candidate.source_tool,
            "target_tool": candidate.target_tool,
            "output_field": candidate.output_field,
            "input_argument": candidate.input_argument,
            "output_type": fld.type_tag.value if fld else "unknown",
            "input_type": arg.type_tag.value if arg else "unknown",
            "rationale": candidate.rationale,
            "confidence": candidate.confidence,
        }
    )


def propose_dependencies(
    pair: tuple[ToolSchema, ToolSchema],
    gateway: Gateway,
    stats: ExtractionStats | None = None,
) -> list[DependencyCandidate]:
    """One gateway call proposing candidates for an ordered pair.

    Unparseable output counts as zero candidates; proposals referencing
    fields absent from the schemas are discarded and counted.
    """
    source, target = pair
    stats = stats if stats is not None else ExtractionStats()
    response = gateway.complete(request_for(Role.PROPOSE, propose_payload(source, target)))
    try:
        parsed = json.loads(response)
        raw_candidates = parsed["candidates"]
        if not isinstance(raw_candidates, list):
            raise TypeError("candidates is not a list")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        logger.warning(
            "malformed proposal for (%s, %s): %s", source.tool_id, target.tool_id, exc
        )
        stats.malformed_proposals += 1
        return []

    candidates = []
    for raw in raw_candidates:
        try:
            candidate = DependencyCandidate(
                source_tool=source.tool_id,
                target_tool=target.tool_id,
                output_field=str(raw["output_field"]),
                input_argument=str(raw["input_argument"]),
                rationale=str(raw.get("rationale", "")),
                confidence=float(raw.get("confidence", 1.0)),
            )
        except (KeyError, TypeError, ValueError):
            stats.malformed_proposals += 1
            continue
        if (
            source.payload_field(candidate.output_field) is None
            or target.argument(candidate.input_argument) is None
        ):
            logger.info(
                "discarding proposal naming nonexistent field %r or argument %r on (%s, %s)",
                candidate.output_field,
                candidate.input_argument,
                source.tool_id,
                target.tool_id,
            )
            stats.invalid_proposals += 1
            continue
        candidates.append(candidate)
    stats.proposals += len(candidates)
    candidates.sort(key=lambda c: (c.output_field, c.input_argument))
    return candidates


def parse_verdict(text: str) -> tuple[bool, str]:
    """Accepts bare accept/reject tokens or {"verdict":..., "rationale":...}."""
    stripped = text.strip()
    lowered = stripped.lower()
    if lowered in ("accept", "accepted"):
        return True, ""
    if lowered in ("reject", "rejected"):
        return False, ""
    parsed = json.loads(stripped)  # raises on junk; callers classify
    verdict = str(parsed["verdict"]).strip().lower()
    rationale = str(parsed.get("rationale", ""))
    if verdict in ("accept", "accepted"):
        return True, rationale
    if verdict in ("reject", "rejected"):
        return False, rationale
    raise ValueError(f"unrecognized verdict {verdict!r}")


def judge_dependency(
    candidate: DependencyCandidate,
    gateway: Gateway,
    source: ToolSchema,
    target: ToolSchema,
    stats: ExtractionStats | None = None,
) -> ToolDependency:
    """Verify one candidate; malformed judge output counts as a rejection."""
    stats = stats if stats is not None else ExtractionStats()
    provenance = _MODE_PROVENANCE[gateway.mode]
    response = gateway.complete(
        request_for(Role.JUDGE, judge_payload(candidate, source, target))
    )
    try:
        accepted, rationale = parse_verdict(response)
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        logger.warning(
            "malformed verdict for %s->%s: %s",
            candidate.source_tool,
            candidate.target_tool,
            exc,
        )
        stats.malformed_verdicts += 1
        accepted, rationale = False, f"unparseable judge output"
    return ToolDependency(
        source_tool=candidate.source_tool,
        target_tool=candidate.target_tool,
        output_field=candidate.output_field,
        input_argument=candidate.input_argument,
        rationale=candidate.rationale,
        confidence=candidate.confidence,
        verdict=Verdict.ACCEPTED if accepted else Verdict.REJECTED,
        judge_rationale=rationale,
        provenance=provenance,
    )


def run_extraction(
    tools: Sequence[ToolSchema],
    config: ExtractionConfig,
    gateway: Gateway,
) -> tuple[list[ToolDependency], ExtractionStats]:
    """Propose-then-judge over all enumerated pairs.

    Up to config.max_in_flight pairs are processed concurrently; results
    are keyed by pair and merged in canonical order, so the output stream
    is identical whatever the completion order. Pair-level gateway failures
    are recorded in the stats and do not stop the batch.
    """
    stats = ExtractionStats()
    pairs = enumerate_candidate_pairs(tools, config)
    stats.pairs = len(pairs)
    provenance = _MODE_PROVENANCE[gateway.mode]
    lock = threading.Lock()
    results: dict[tuple[str, str], list[ToolDependency]] = {}

    def work(pair: tuple[ToolSchema, ToolSchema]) -> None:
        source, target = pair
        local = ExtractionStats()
        deps: list[ToolDependency] = []
        try:
            for candidate in propose_dependencies(pair, gateway, local):
                if config.judge_enabled:
                    deps.append(judge_dependency(candidate, gateway, source, target, local))
                else:
                    deps.append(
                        ToolDependency(
                            source_tool=candidate.source_tool,
                            target_tool=candidate.target_tool,
                            output_field=candidate.output_field,
                            input_argument=candidate.input_argument,
                            rationale=candidate.rationale,
                            confidence=candidate.confidence,
                            verdict=Verdict.ACCEPTED,
                            judge_rationale="judging disabled",
                            provenance=provenance,
                        )
                    )
        except GatewayFailure as exc:
            with lock:
                stats.pair_failures.append((source.tool_id, target.tool_id, str(exc)))
            return
        with lock:
            results[(source.tool_id, target.tool_id)] = deps
            stats.proposals += local.proposals
            stats.invalid_proposals += local.invalid_proposals
            stats.malformed_proposals += local.malformed_proposals
            stats.malformed_verdicts += local.malformed_verdicts

    if config.max_in_flight == 1:
        for pair in pairs:
            work(pair)
    else:
        with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
            list(pool.map(work, pairs))

    merged: list[ToolDependency] = []
    for key in sorted(results):
        merged.extend(sorted(results[key], key=ToolDependency.sort_key))
    stats.accepts = sum(1 for d in merged if d.verdict is Verdict.ACCEPTED)
    stats.rejects = sum(1 for d in merged if d.verdict is Verdict.REJECTED)
    stats.pair_failures.sort()
    return merged, stats


# --- serialization ----------------------------------------------------------


def dependency_to_record(dep: ToolDependency) -> dict[str, Any]:
    return {
        "source_tool": dep.source_tool,
        "target_tool": dep.target_tool,
        "output_field": dep.output_field,
        "input_argument": dep.input_argument,
        "rationale": dep.rationale,
        "confidence": dep.confidence,
        "verdict": dep.verdict.value,
        "judge_rationale": dep.judge_rationale,
        "provenance": dep.provenance.value,
    }


def parse_dependency_record(raw: dict[str, Any], line: int | None = None) -> ToolDependency:
    try:
        return ToolDependency(
            source_tool=str(raw["source_tool"]),
            target_tool=str(raw["target_tool"]),
            output_field=str(raw["output_field"]),
            input_argument=str(raw["input_argument"]),
            rationale=str(raw.get("rationale", "")),
            confidence=float(raw.get("confidence", 1.0)),
            verdict=Verdict(raw["verdict"]),
            judge_rationale=str(raw.get("judge_rationale", "")),
            provenance=Provenance(raw.get("provenance", "heuristic")),
        )
    except (KeyError, ValueError) as exc:
        raise MalformedRecord(f"bad dependency record: {exc}", line)


def save_dependencies(path: str | Path, deps: Iterable[ToolDependency]) -> None:
    ordered = sorted(deps, key=ToolDependency.sort_key)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for dep in ordered:
            fh.write(canonical_json(dependency_to_record(dep)))
            fh.write("\n")


def load_dependencies(path: str | Path) -> list[ToolDependency]:
    return [parse_dependency_record(record, line) for line, record in iter_jsonl(path)]


def accepted_pairs(deps: Iterable[ToolDependency]) -> set[tuple[str, str]]:
    return {
        (d.source_tool, d.target_tool) for d in deps if d.verdict is Verdict.ACCEPTED
    }
