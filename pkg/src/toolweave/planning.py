"""Assemble query-tailored context, generate exemplar plan artifacts through
the gateway, validate them structurally, and persist them.

A plan artifact is an ordered list of steps. Each step names a tool, binds
its arguments to literals or to earlier steps' output fields, and lists the
earlier steps it depends on. Validation guarantees every persisted artifact
resolves against the tool corpus and wires an acyclic dependency graph.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    EmptySubgraph,
    GenerationRejected,
    MalformedRecord,
)
from .gateway import Gateway, Mode, Role, request_for
from .graph import FusedGraph, Relation, subgraph_fingerprint
from .retrieval import EntryKind, VectorStore, embed
from .schemas import (
    EmptyAfterNormalization,
    QueryRecord,
    ToolSchema,
    canonical_json,
    iter_jsonl,
    normalize_tool_id,
)

logger = logging.getLogger(__name__)


class GenProvenance(str, Enum):
    LIVE = "live"
    REPLAY = "replay"
    STUB = "stub"


_MODE_PROVENANCE = {
    Mode.LIVE: GenProvenance.LIVE,
    Mode.REPLAY: GenProvenance.REPLAY,
    Mode.STUB: GenProvenance.STUB,
}


@dataclass(frozen=True)
class StepRef:
    """A binding that pulls a payload field from an earlier step's output."""

    step: int
    field: str


@dataclass(frozen=True)
class PlanStep:
    step_index: int  # 1-based
    tool_id: str
    argument_bindings: tuple[tuple[str, Any], ...] = ()
    depends_on: tuple[int, ...] = ()

    @property
    def bindings(self) -> dict[str, Any]:
        return dict(self.argument_bindings)


@dataclass(frozen=True)
class PlanArtifact:
    query_id: str
    query_text: str
    steps: tuple[PlanStep, ...]
    supporting_passage_ids: tuple[str, ...] = ()
    subgraph_fingerprint: str = ""
    provenance: GenProvenance = GenProvenance.STUB
    artifact_id: str = ""

    def tool_ids(self) -> list[str]:
        return [s.tool_id for s in self.steps]

    def dependency_pairs(self) -> set[tuple[str, str]]:
        """Tool-level wiring: (earlier step's tool, this step's tool)."""
        by_index = {s.step_index: s for s in self.steps}
        pairs = set()
        for step in self.steps:
            upstream = set(step.depends_on)
            for _, value in step.argument_bindings:
                if isinstance(value, StepRef):
                    upstream.add(value.step)
            for j in upstream:
                if j in by_index and j != step.step_index:
                    pairs.add((by_index[j].tool_id, step.tool_id))
        return pairs


@dataclass(frozen=True)
class PromptBundle:
    query_id: str
    query_text: str
    triplet_texts: tuple[str, ...]
    passage_ids: tuple[str, ...]
    passage_texts: tuple[str, ...]
    token_budget: int
    triplets_dropped: int
    passages_dropped: int
    subgraph_fingerprint: str = ""

    def render(self) -> str:
        lines = [f"QUERY: {self.query_text}", "TRIPLETS:"]
        lines.extend(self.triplet_texts)
        lines.append("PASSAGES:")
        for pid, text in zip(self.passage_ids, self.passage_texts):
            lines.append(f"[{pid}] {_flatten(text)}")
        return "\n".join(lines)


def _flatten(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def count_tokens(text: str) -> int:
    """Whitespace-split token count: the budget unit for prompt bundles."""
    return len(text.split())


def assemble_context(
    query: QueryRecord,
    subgraph: FusedGraph,
    passages: Sequence[tuple[str, str, float]],
    budget: int,
    node_scores: Mapping[str, float] | None = None,
    edge_scores: Mapping[tuple[str, str], float] | None = None,
) -> PromptBundle:
    """Pack top triplets then top passages into a budgeted prompt bundle.

    Dependency triplets are ordered by edge_scores when given, else by the
    endpoint sum of node_scores, else canonically. Passages arrive as
    (id, text, retrieval score) and are ordered by score. Inclusion is a
    strict greedy prefix: packing stops at the first item that would
    overflow the whitespace-token budget, and the drop counts are recorded.
    """
    if not subgraph.nodes:
        raise EmptySubgraph(f"no context nodes for query {query.query_id!r}")

    from .retrieval import verbalize_triplet

    def edge_rank(edge) -> tuple[float, tuple[str, str]]:
        if edge_scores is not None:
            score = edge_scores.get((edge.src, edge.dst), 0.0)
        elif node_scores is not None:
            score = node_scores.get(edge.src, 0.0) + node_scores.get(edge.dst, 0.0)
        else:
            score = 0.0
        return (-score, (edge.src, edge.dst))

    edges = sorted(subgraph.edges_with_relation(Relation.CAN_USE), key=edge_rank)
    triplet_texts = [verbalize_triplet(e, subgraph) for e in edges]
    ranked_passages = sorted(passages, key=lambda p: (-p[2], p[0]))

    base = PromptBundle(
        query_id=query.query_id,
        query_text=query.text,
        triplet_texts=(),
        passage_ids=(),
        passage_texts=(),
        token_budget=budget,
        triplets_dropped=0,
        passages_dropped=0,
    )
    used = count_tokens(base.render())

    kept_triplets: list[str] = []
    for text in triplet_texts:
        cost = count_tokens(text)
        if used + cost > budget:
            break
        kept_triplets.append(text)
        used += cost

    kept_ids: list[str] = []
    kept_texts: list[str] = []
    for pid, text, _score in ranked_passages:
        cost = count_tokens(f"[{pid}] {_flatten(text)}")
        if used + cost > budget:
            break
        kept_ids.append(pid)
        kept_texts.append(text)
        used += cost

    return PromptBundle(
        query_id=query.query_id,
        query_text=query.text,
        triplet_texts=tuple(kept_triplets),
        passage_ids=tuple(kept_ids),
        passage_texts=tuple(kept_texts),
        token_budget=budget,
        triplets_dropped=len(triplet_texts) - len(kept_triplets),
        passages_dropped=len(ranked_passages) - len(kept_ids),
        subgraph_fingerprint=subgraph_fingerprint(subgraph),
    )


# --- plan parsing and validation ---------------------------------------------


def _parse_binding(value: Any) -> Any:
    if isinstance(value, dict) and set(value) == {"$step", "$field"}:
        return StepRef(step=int(value["$step"]), field=str(value["$field"]))
    return value


def _binding_record(value: Any) -> Any:
    if isinstance(value, StepRef):
        return {"$step": value.step, "$field": value.field}
    return value


def parse_plan_steps(raw_steps: Any) -> tuple[PlanStep, ...]:
    """Raw JSON steps -> PlanStep tuple. Raises ValueError on shape problems."""
    if not isinstance(raw_steps, list):
        raise ValueError("steps is not a list")
    steps = []
    for i, raw in enumerate(raw_steps, start=1):
        if not isinstance(raw, dict) or "tool" not in raw:
            raise ValueError(f"step {i} lacks a tool")
        try:
            tool_id = normalize_tool_id(str(raw["tool"]))
        except EmptyAfterNormalization:
            raise ValueError(f"step {i} has an empty tool name")
        args = raw.get("args", {}) or {}
        if not isinstance(args, dict):
            raise ValueError(f"step {i} args is not a map")
        bindings = tuple(sorted((str(k), _parse_binding(v)) for k, v in args.items()))
        depends = raw.get("depends_on", []) or []
        if not isinstance(depends, list):
            raise ValueError(f"step {i} depends_on is not a list")
        implied = {b.step for _, b in bindings if isinstance(b, StepRef)}
        depends_on = tuple(sorted(set(int(d) for d in depends) | implied))
        steps.append(
            PlanStep(
                step_index=i,
                tool_id=tool_id,
                argument_bindings=bindings,
                depends_on=depends_on,
            )
        )
    return tuple(steps)


def validate_plan(
    artifact: PlanArtifact,
    tool_index: Mapping[str, ToolSchema],
    graph: FusedGraph | None = None,
    strict: bool = False,
) -> list[str]:
    """Structural checks; violations are returned as data, never raised.

    strict mode additionally requires every cross-step reference to have a
    matching dependency edge in the graph.
    """
    violations: list[str] = []
    by_index = {s.step_index: s for s in artifact.steps}
    can_use: set[tuple[str, str]] = set()
    if graph is not None:
        can_use = {
            (graph.node(e.src).label, graph.node(e.dst).label)
            for e in graph.edges_with_relation(Relation.CAN_USE)
        }

    for step in artifact.steps:
        schema = tool_index.get(step.tool_id)
        if schema is None:
            violations.append(f"unknown tool {step.tool_id}")
        for j in step.depends_on:
            if j not in by_index:
                violations.append(f"missing step {j} referenced from step {step.step_index}")
            elif j >= step.step_index:
                violations.append(f"forward reference from step {step.step_index} to step {j}")
        for name, value in step.argument_bindings:
            if schema is not None and schema.argument(name) is None:
                violations.append(f"unknown argument {name} on {step.tool_id}")
            if isinstance(value, StepRef):
                upstream = by_index.get(value.step)
                if upstream is None:
                    violations.append(
                        f"missing step {value.step} referenced from step {step.step_index}"
                    )
                    continue
                if value.step >= step.step_index:
                    violations.append(
                        f"forward reference from step {step.step_index} to step {value.step}"
                    )
                    continue
                upstream_schema = tool_index.get(upstream.tool_id)
                if (
                    upstream_schema is not None
                    and upstream_schema.payload_field(value.field) is None
                ):
                    violations.append(
                        f"unknown output field {value.field} on {upstream.tool_id}"
                    )
                if strict and (upstream.tool_id, step.tool_id) not in can_use:
                    violations.append(
                        f"no dependency edge from {upstream.tool_id} to {step.tool_id}"
                    )
    return violations


def generate_plan(
    bundle: PromptBundle,
    gateway: Gateway,
    tool_index: Mapping[str, ToolSchema],
    graph: FusedGraph | None = None,
    strict: bool = False,
    max_attempts: int = 3,
) -> PlanArtifact:
    """One gateway generation call, parsed and validated into an artifact.

    Invalid outputs raise GenerationRejected with the violation list. Only
    live mode retries: replay and stub responses are deterministic, so a
    second attempt cannot differ.
    """
    attempts = max_attempts if gateway.mode is Mode.LIVE else 1
    reasons: list[str] = []
    for attempt in range(attempts):
        response = gateway.complete(request_for(Role.GENERATE, bundle.render()))
        try:
            parsed = json.loads(response)
            steps = parse_plan_steps(parsed["steps"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            reasons = [f"unparseable generation output: {exc}"]
            logger.warning("attempt %d: %s", attempt + 1, reasons[0])
            continue
        artifact = PlanArtifact(
            query_id=bundle.query_id,
            query_text=bundle.query_text,
            steps=steps,
            supporting_passage_ids=bundle.passage_ids,
            subgraph_fingerprint=bundle.subgraph_fingerprint,
            provenance=_MODE_PROVENANCE[gateway.mode],
        )
        violations = validate_plan(artifact, tool_index, graph, strict)
        if not violations:
            return artifact
        reasons = violations
        logger.warning("attempt %d rejected: %s", attempt + 1, "; ".join(violations))
    raise GenerationRejected(reasons)


# --- persistence -------------------------------------------------------------


def artifact_to_record(artifact: PlanArtifact) -> dict[str, Any]:
    return {
        "artifact_id": artifact.artifact_id,
        "query_id": artifact.query_id,
        "query_text": artifact.query_text,
        "provenance": artifact.provenance.value,
        "subgraph_fingerprint": artifact.subgraph_fingerprint,
        "supporting_passages": list(artifact.supporting_passage_ids),
        "steps": [
            {
                "tool": s.tool_id,
                "args": {k: _binding_record(v) for k, v in s.argument_bindings},
                "depends_on": list(s.depends_on),
            }
            for s in artifact.steps
        ],
    }


def parse_artifact_record(raw: dict[str, Any], line: int | None = None) -> PlanArtifact:
    try:
        steps = parse_plan_steps(raw["steps"])
        return PlanArtifact(
            query_id=str(raw["query_id"]),
            query_text=str(raw.get("query_text", "")),
            steps=steps,
            supporting_passage_ids=tuple(str(p) for p in raw.get("supporting_passages", [])),
            subgraph_fingerprint=str(raw.get("subgraph_fingerprint", "")),
            provenance=GenProvenance(raw.get("provenance", "stub")),
            artifact_id=str(raw.get("artifact_id", "")),
        )
    except (KeyError, ValueError) as exc:
        raise MalformedRecord(f"bad artifact record: {exc}", line)


def save_artifacts(path: str | Path, artifacts: Iterable[PlanArtifact]) -> None:
    ordered = sorted(artifacts, key=lambda a: a.artifact_id)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for artifact in ordered:
            fh.write(canonical_json(artifact_to_record(artifact)))
            fh.write("\n")


def load_artifacts(path: str | Path) -> list[PlanArtifact]:
    return [parse_artifact_record(record, line) for line, record in iter_jsonl(path)]


_ARTIFACT_ID = re.compile(r"^artifact-(\d{6})$")


def next_artifact_id(store: VectorStore) -> str:
    highest = 0
    for entry_id in store.entries:
        m = _ARTIFACT_ID.match(entry_id)
        if m:
            highest = max(highest, int(m.group(1)))
    return f"artifact-{highest + 1:06d}"


def store_artifact(store: VectorStore, artifact: PlanArtifact, gateway: Gateway) -> str:
    """Embed the artifact (query text + step summary) and index it.

    Returns the assigned id, "artifact-" plus a zero-padded counter.
    """
    artifact_id = artifact.artifact_id or next_artifact_id(store)
    summary = f"{artifact.query_text}\nplan: {' -> '.join(artifact.tool_ids())}"
    vector = embed(summary, gateway)
    store.add(
        artifact_id,
        vector,
        EntryKind.ARTIFACT,
        {"query_id": artifact.query_id},
    )
    return artifact_id
