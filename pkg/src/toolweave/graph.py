"""Heterogeneous graph over tools, entities, and passages, with Personalized
PageRank and subgraph extraction.

Node ids are strings namespaced by kind ("tool:get_order",
"entity:warehouse", "passage:doc1:0") so equal labels of the same kind map
to the same node across corpora and runs. Graphs are immutable after
construction; every traversal function is pure and safe for concurrent
callers sharing one graph.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    EmptyAfterNormalization,
    EmptySeeds,
    GraphFormatError,
    InvalidSeedMass,
    StoreWriteError,
    UnknownSeedNode,
    UnknownToolInDependency,
)
from .extraction import ToolDependency, Verdict
from .schemas import DocumentRecord, ToolSchema, canonical_json, normalize_tool_id

logger = logging.getLogger(__name__)


class NodeKind(str, Enum):
    TOOL = "tool"
    ENTITY = "entity"
    PASSAGE = "passage"


class Relation(str, Enum):
    CAN_USE = "can_use_this_tool_output"
    DOC_TRIPLE = "doc_triple"
    MENTIONS_TOOL = "mentions_tool"
    IN_PASSAGE = "in_passage"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    label: str
    payload_ref: tuple[tuple[str, Any], ...] = ()

    @property
    def payload(self) -> dict[str, Any]:
        return dict(self.payload_ref)


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    relation: Relation
    predicate: str = ""
    weight: float = 1.0

    def sort_key(self):
        return (self.src, self.dst, self.relation.value, self.predicate, self.weight)


def tool_node_id(tool_id: str) -> str:
    return f"tool:{tool_id}"


def entity_node_id(label: str) -> str:
    return f"entity:{label}"


def passage_node_id(doc_id: str, paragraph: int) -> str:
    return f"passage:{doc_id}:{paragraph}"


class FusedGraph:
    """Immutable node/edge container with adjacency indices.

    Edges are set-like: exact duplicates collapse. Parallel dependencies
    between the same tools must be pre-aggregated into the edge weight
    (build_tool_graph does this).
    """

    def __init__(self, nodes: Iterable[Node], edges: Iterable[Edge]):
        by_id: dict[str, Node] = {}
        for node in nodes:
            existing = by_id.get(node.id)
            if existing is not None and existing != node:
                raise GraphFormatError(f"conflicting definitions for node {node.id!r}")
            by_id[node.id] = node
        self.nodes: dict[str, Node] = {nid: by_id[nid] for nid in sorted(by_id)}

        unique = sorted(set(edges), key=Edge.sort_key)
        for edge in unique:
            if edge.src not in self.nodes or edge.dst not in self.nodes:
                raise GraphFormatError(
                    f"edge {edge.src!r}->{edge.dst!r} references a missing node"
                )
            if edge.relation is Relation.CAN_USE and edge.src == edge.dst:
                raise GraphFormatError(f"self-loop {edge.src!r} on {edge.relation.value}")
            if edge.weight <= 0:
                raise GraphFormatError(f"non-positive weight on {edge.src!r}->{edge.dst!r}")
        self.edges: tuple[Edge, ...] = tuple(unique)

        out_adj: dict[str, list[int]] = {nid: [] for nid in self.nodes}
        in_adj: dict[str, list[int]] = {nid: [] for nid in self.nodes}
        for i, edge in enumerate(self.edges):
            out_adj[edge.src].append(i)
            in_adj[edge.dst].append(i)
        self._out = {k: tuple(v) for k, v in out_adj.items()}
        self._in = {k: tuple(v) for k, v in in_adj.items()}

    def node(self, node_id: str) -> Node:
        return self.nodes[node_id]

    def out_edges(self, node_id: str) -> tuple[Edge, ...]:
        return tuple(self.edges[i] for i in self._out[node_id])

    def in_edges(self, node_id: str) -> tuple[Edge, ...]:
        return tuple(self.edges[i] for i in self._in[node_id])

    def edges_with_relation(self, relation: Relation) -> tuple[Edge, ...]:
        return tuple(e for e in self.edges if e.relation is relation)

    @property
    def relation_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for edge in self.edges:
            counts[edge.relation.value] = counts.get(edge.relation.value, 0) + 1
        return counts

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FusedGraph)
            and self.nodes == other.nodes
            and self.edges == other.edges
        )

    def __repr__(self) -> str:
        return f"FusedGraph(nodes={len(self.nodes)}, edges={len(self.edges)})"


# --- construction -----------------------------------------------------------


def build_tool_graph(
    tools: Sequence[ToolSchema], dependencies: Iterable[ToolDependency]
) -> FusedGraph:
    """One Tool node per schema; accepted dependencies become weighted edges.

    Field-level parallels between the same tool pair collapse into a single
    edge whose weight is the dependency count.
    """
    nodes = [
        Node(
            id=tool_node_id(t.tool_id),
            kind=NodeKind.TOOL,
            label=t.tool_id,
            payload_ref=(("description", t.description), ("tool_id", t.tool_id)),
        )
        for t in tools
    ]
    known = {t.tool_id for t in tools}
    pair_weight: dict[tuple[str, str], int] = {}
    for dep in dependencies:
        if dep.verdict is not Verdict.ACCEPTED:
            continue
        if dep.source_tool not in known or dep.target_tool not in known:
            raise UnknownToolInDependency(
                f"dependency {dep.source_tool!r}->{dep.target_tool!r} references a tool not in the corpus"
            )
        key = (dep.source_tool, dep.target_tool)
        pair_weight[key] = pair_weight.get(key, 0) + 1
    edges = [
        Edge(
            src=tool_node_id(src),
            dst=tool_node_id(dst),
            relation=Relation.CAN_USE,
            weight=float(count),
        )
        for (src, dst), count in pair_weight.items()
    ]
    return FusedGraph(nodes, edges)


_CAPITALIZED_RUN = re.compile(r"\b[A-Z][A-Za-z0-9]*(?:[ \t]+[A-Z][A-Za-z0-9]*)*")

# sentence-initial function words the capitalized-run heuristic would
# otherwise promote to entities
_ENTITY_STOPWORDS = {
    "the", "a", "an", "and", "or", "but", "if", "then", "it", "its", "this",
    "that", "these", "those", "i", "we", "you", "they", "he", "she", "is",
    "are", "was", "were", "be", "been", "to", "of", "in", "on", "for", "with",
    "when", "while", "after", "before", "use", "run", "see", "note",
}

EntityBackend = Callable[[str], tuple[list[str], list[tuple[str, str, str]]]]


def heuristic_entity_labels(text: str) -> list[str]:
    """Capitalized-term extraction: runs of adjacent capitalized tokens.

    Returns sorted unique normalized labels. Deterministic, offline.
    """
    labels = set()
    for match in _CAPITALIZED_RUN.finditer(text):
        run = match.group(0)
        if run.lower() in _ENTITY_STOPWORDS:
            continue
        try:
            labels.add(normalize_tool_id(run))
        except EmptyAfterNormalization:
            continue
    return sorted(labels)


def heuristic_entity_backend(text: str) -> tuple[list[str], list[tuple[str, str, str]]]:
    """Default extraction backend: entities only, no relation triples."""
    return heuristic_entity_labels(text), []


def gateway_entity_backend(gateway) -> EntityBackend:
    """Extraction backend that asks the gateway (role 'extract') per paragraph.

    The response is either a JSON list of labels or an object
    {"entities": [...], "triples": [[subj, predicate, obj], ...]}.
    """
    import json

    from .gateway import Role, request_for

    def backend(text: str) -> tuple[list[str], list[tuple[str, str, str]]]:
        raw = gateway.complete(request_for(Role.EXTRACT, text))
        parsed = json.loads(raw)
        if isinstance(parsed, list):
            return sorted(str(x) for x in parsed), []
        entities = sorted(str(x) for x in parsed.get("entities", []))
        triples = [tuple(str(p) for p in t) for t in parsed.get("triples", [])]
        return entities, triples

    return backend


def split_paragraphs(body: str) -> list[str]:
    return [p.strip() for p in re.split(r"\n\s*\n", body) if p.strip()]


def ingest_document_graph(
    docs: Sequence[DocumentRecord], entity_backend: EntityBackend | None = None
) -> FusedGraph:
    """Passage node per paragraph, Entity nodes from the extraction backend,
    membership edges entity->passage, and doc_triple edges when the backend
    reports relations."""
    backend = entity_backend or heuristic_entity_backend
    nodes: list[Node] = []
    edges: list[Edge] = []
    entity_ids: set[str] = set()

    def ensure_entity(label: str) -> str:
        nid = entity_node_id(label)
        if nid not in entity_ids:
            entity_ids.add(nid)
            nodes.append(Node(id=nid, kind=NodeKind.ENTITY, label=label))
        return nid

    for doc in docs:
        for i, paragraph in enumerate(split_paragraphs(doc.body)):
            pid = passage_node_id(doc.doc_id, i)
            nodes.append(
                Node(
                    id=pid,
                    kind=NodeKind.PASSAGE,
                    label=f"{doc.doc_id}:{i}",
                    payload_ref=(
                        ("doc_id", doc.doc_id),
                        ("paragraph", i),
                        ("text", paragraph),
                    ),
                )
            )
            entities, triples = backend(paragraph)
            for label in entities:
                eid = ensure_entity(label)
                edges.append(Edge(src=eid, dst=pid, relation=Relation.IN_PASSAGE))
            for subj, predicate, obj in triples:
                sid = ensure_entity(subj)
                oid = ensure_entity(obj)
                edges.append(
                    Edge(src=sid, dst=oid, relation=Relation.DOC_TRIPLE, predicate=predicate)
                )
    return FusedGraph(nodes, edges)


_NON_WORD = re.compile(r"[^a-z0-9_]+")


def _mention_blob(text: str) -> str:
    return "_" + _NON_WORD.sub("_", text.lower()).strip("_") + "_"


def contains_tool_mention(text: str, tool_id: str) -> bool:
    """Token-boundary containment of the normalized tool id."""
    return f"_{tool_id}_" in _mention_blob(text)


def fuse(left: FusedGraph, right: FusedGraph) -> FusedGraph:
    """Union of two graphs plus lexical tool-mention links.

    Every Entity or Passage whose normalized label or body text contains a
    normalized tool_id gets a mentions_tool edge to that Tool node.
    Idempotent: fusing the result with either input again changes nothing.
    """
    nodes = list(left.nodes.values()) + list(right.nodes.values())
    edges = [e for e in left.edges + right.edges if e.relation is not Relation.MENTIONS_TOOL]

    merged_nodes: dict[str, Node] = {}
    for node in nodes:
        existing = merged_nodes.get(node.id)
        if existing is not None and existing != node:
            logger.warning("fuse: conflicting payloads for %s, keeping first", node.id)
            continue
        merged_nodes[node.id] = node

    tool_ids = sorted(
        node.label for node in merged_nodes.values() if node.kind is NodeKind.TOOL
    )
    for node in merged_nodes.values():
        if node.kind is NodeKind.TOOL:
            continue
        text = node.label if node.kind is NodeKind.ENTITY else str(node.payload.get("text", ""))
        for tool_id in tool_ids:
            if contains_tool_mention(text, tool_id):
                edges.append(
                    Edge(src=node.id, dst=tool_node_id(tool_id), relation=Relation.MENTIONS_TOOL)
                )
    return FusedGraph(merged_nodes.values(), edges)


# --- Personalized PageRank --------------------------------------------------


class DanglingPolicy(str, Enum):
    TO_SEEDS = "to_seeds"


class EdgeDirection(str, Enum):
    AS_IS = "as_is"
    SYMMETRIZE = "symmetrize"


@dataclass(frozen=True)
class PprConfig:
    damping: float = 0.85
    tolerance: float = 1e-8
    max_iterations: int = 100
    dangling_policy: DanglingPolicy = DanglingPolicy.TO_SEEDS
    edge_direction: EdgeDirection = EdgeDirection.SYMMETRIZE

    def __post_init__(self):
        if not 0.0 < self.damping < 1.0:
            raise ConfigError("ppr.damping", f"must be in (0,1), got {self.damping}")
        if self.tolerance <= 0:
            raise ConfigError("ppr.tolerance", f"must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ConfigError("ppr.max_iterations", f"must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class PprResult:
    scores: dict[str, float]
    converged: bool
    iterations: int


def _validate_seeds(graph: FusedGraph, seeds: Mapping[str, float]) -> None:
    if not seeds:
        raise EmptySeeds("at least one seed node is required")
    for node_id in seeds:
        if node_id not in graph.nodes:
            raise UnknownSeedNode(f"seed {node_id!r} is not a graph node")
    masses = list(seeds.values())
    if any(m < 0 for m in masses):
        raise InvalidSeedMass("seed masses must be non-negative")
    total = sum(masses)
    if abs(total - 1.0) > 1e-12:
        raise InvalidSeedMass(f"seed masses must sum to 1, got {total!r}")


def uniform_seeds(node_ids: Iterable[str]) -> dict[str, float]:
    ids = sorted(set(node_ids))
    if not ids:
        raise EmptySeeds("cannot build a seed distribution over zero nodes")
    mass = 1.0 / len(ids)
    seeds = {nid: mass for nid in ids}
    # nudge the last entry so the masses sum to exactly 1.0
    seeds[ids[-1]] += 1.0 - sum(seeds.values())
    return seeds


def _transition_rows(graph: FusedGraph, order: list[str], config: PprConfig) -> np.ndarray:
    n = len(order)
    index = {nid: i for i, nid in enumerate(order)}
    W = np.zeros((n, n), dtype=np.float64)
    for edge in graph.edges:
        i, j = index[edge.src], index[edge.dst]
        W[i, j] += edge.weight
        if config.edge_direction is EdgeDirection.SYMMETRIZE:
            W[j, i] += edge.weight
    return W


def personalized_pagerank(
    graph: FusedGraph, seeds: Mapping[str, float], config: PprConfig | None = None
) -> PprResult:
    """Random walk with restart toward the seed distribution.

    Iterates p <- (1-d)*s + d*(W_rn^T p + dangling_mass * s) where W_rn is
    the row-normalized (optionally symmetrized) weighted adjacency and
    dangling nodes hand their mass to the seeds. Stops when the L1 change
    drops to the configured tolerance. Non-convergence returns the best
    iterate with converged=False rather than raising.
    """
    config = config or PprConfig()
    _validate_seeds(graph, seeds)
    order = sorted(graph.nodes)
    n = len(order)
    index = {nid: i for i, nid in enumerate(order)}

    s = np.zeros(n, dtype=np.float64)
    for node_id, mass in seeds.items():
        s[index[node_id]] = mass

    W = _transition_rows(graph, order, config)
    rowsum = W.sum(axis=1)
    dangling = rowsum == 0.0
    M = np.divide(W, rowsum[:, None], out=np.zeros_like(W), where=rowsum[:, None] > 0)

    d = config.damping
    p = s.copy()
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iterations + 1):
        dangling_mass = float(p[dangling].sum())
        nxt = (1.0 - d) * s + d * (M.T @ p + dangling_mass * s)
        delta = float(np.abs(nxt - p).sum())
        p = nxt
        if delta <= config.tolerance:
            converged = True
            break
    if not converged:
        logger.warning(
            "PPR did not converge in %d iterations (returning best iterate)",
            config.max_iterations,
        )
    return PprResult(
        scores={nid: float(p[index[nid]]) for nid in order},
        converged=converged,
        iterations=iterations,
    )


def extract_subgraph(
    graph: FusedGraph,
    scores: Mapping[str, float],
    top_n: int,
    seeds: Iterable[str] = (),
) -> FusedGraph:
    """Induced subgraph on the top_n nodes by score plus all seed nodes.

    Ties at the cutoff break toward the lower node id.
    """
    if top_n < 1:
        raise ConfigError("top_n", f"must be >= 1, got {top_n}")
    ranked = sorted(graph.nodes, key=lambda nid: (-scores.get(nid, 0.0), nid))
    selected = set(ranked[:top_n])
    selected.update(seeds)
    nodes = [graph.nodes[nid] for nid in sorted(selected)]
    edges = [e for e in graph.edges if e.src in selected and e.dst in selected]
    return FusedGraph(nodes, edges)


def subgraph_fingerprint(graph: FusedGraph) -> str:
    """Hash of the sorted node id set; names which context produced a plan."""
    import hashlib

    blob = canonical_json(sorted(graph.nodes))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --- serialization ----------------------------------------------------------

_GRAPH_HEADER_KIND = "toolweave-graph"
_GRAPH_VERSION = 1


def save_graph(path: str | Path, graph: FusedGraph) -> None:
    """Header record, then nodes sorted by id, then edges in canonical order."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(
                canonical_json(
                    {
                        "kind": _GRAPH_HEADER_KIND,
                        "version": _GRAPH_VERSION,
                        "n_nodes": len(graph.nodes),
                        "n_edges": len(graph.edges),
                        "relations": graph.relation_counts,
                    }
                )
            )
            fh.write("\n")
            for node_id in sorted(graph.nodes):
                node = graph.nodes[node_id]
                fh.write(
                    canonical_json(
                        {
                            "record": "node",
                            "id": node.id,
                            "node_kind": node.kind.value,
                            "label": node.label,
                            "payload": node.payload,
                        }
                    )
                )
                fh.write("\n")
            for edge in graph.edges:
                fh.write(
                    canonical_json(
                        {
                            "record": "edge",
                            "src": edge.src,
                            "dst": edge.dst,
                            "relation": edge.relation.value,
                            "predicate": edge.predicate,
                            "weight": edge.weight,
                        }
                    )
                )
                fh.write("\n")
    except OSError as exc:
        raise StoreWriteError(f"cannot write graph to {path}: {exc}")


def load_graph(path: str | Path) -> FusedGraph:
    import json

    nodes: list[Node] = []
    edges: list[Edge] = []
    header: dict[str, Any] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise GraphFormatError(f"line {line_no}: invalid JSON: {exc.msg}")
            if header is None:
                if record.get("kind") != _GRAPH_HEADER_KIND:
                    raise GraphFormatError(f"line {line_no}: not a graph file header")
                if record.get("version") != _GRAPH_VERSION:
                    raise GraphFormatError(
                        f"unsupported graph version {record.get('version')!r}"
                    )
                header = record
                continue
            kind = record.get("record")
            if kind == "node":
                try:
                    nodes.append(
                        Node(
                            id=str(record["id"]),
                            kind=NodeKind(record["node_kind"]),
                            label=str(record["label"]),
                            payload_ref=tuple(sorted(record.get("payload", {}).items())),
                        )
                    )
                except (KeyError, ValueError) as exc:
                    raise GraphFormatError(f"line {line_no}: bad node record: {exc}")
            elif kind == "edge":
                try:
                    edges.append(
                        Edge(
                            src=str(record["src"]),
                            dst=str(record["dst"]),
                            relation=Relation(record["relation"]),
                            predicate=str(record.get("predicate", "")),
                            weight=float(record["weight"]),
                        )
                    )
                except (KeyError, ValueError) as exc:
                    raise GraphFormatError(f"line {line_no}: bad edge record: {exc}")
            else:
                raise GraphFormatError(f"line {line_no}: unknown record kind {kind!r}")
    if header is None:
        raise GraphFormatError("empty graph file")
    if header["n_nodes"] != len(nodes) or header["n_edges"] != len(edges):
        raise GraphFormatError(
            f"header counts ({header['n_nodes']} nodes, {header['n_edges']} edges) "
            f"do not match body ({len(nodes)} nodes, {len(edges)} edges)"
        )
    return FusedGraph(nodes, edges)
