"""Dense retrieval: verbalize tool triplets, embed texts through the gateway,
and serve exact cosine top-K from a small vector store.

Search is exhaustive by design. At the target scale (a few thousand
triplets, passages, and artifacts) approximate indexing buys nothing and
costs reproducibility.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .errors import (
    DimsMismatch,
    DuplicateStoreId,
    EmptyText,
    GatewayError,
    StoreFormatError,
    StoreWriteError,
    WrongRelation,
)
from .gateway import Gateway, Role, request_for
from .graph import Edge, FusedGraph, NodeKind, Relation
from .schemas import canonical_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    normalized: bool = True

    @property
    def dims(self) -> int:
        return len(self.values)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    if a.dims != b.dims:
        raise DimsMismatch(f"cannot compare {a.dims}-dim and {b.dims}-dim vectors")
    va, vb = np.asarray(a.values), np.asarray(b.values)
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    return float(va @ vb / denom)


class EntryKind(str, Enum):
    TRIPLET = "triplet"
    PASSAGE = "passage"
    ARTIFACT = "artifact"


@dataclass(frozen=True)
class StoreEntry:
    entry_id: str
    vector: EmbeddingVector
    kind: EntryKind
    metadata: tuple[tuple[str, Any], ...] = ()

    @property
    def meta(self) -> dict[str, Any]:
        return dict(self.metadata)


class VectorStore:
    """id -> (vector, kind, metadata) with exact cosine search.

    Single-writer: the bulk index phase fills the store, queries come after.
    """

    def __init__(self, dims: int):
        if dims < 1:
            raise StoreFormatError(f"dims must be >= 1, got {dims}")
        self.dims = dims
        self.entries: dict[str, StoreEntry] = {}

    def add(
        self,
        entry_id: str,
        vector: EmbeddingVector,
        kind: EntryKind,
        metadata: dict[str, Any] | None = None,
    ) -> None:
        if entry_id in self.entries:
            raise DuplicateStoreId(f"store already contains {entry_id!r}")
        if vector.dims != self.dims:
            raise DimsMismatch(
                f"vector for {entry_id!r} has {vector.dims} dims, store expects {self.dims}"
            )
        self.entries[entry_id] = StoreEntry(
            entry_id=entry_id,
            vector=vector,
            kind=kind,
            metadata=tuple(sorted((metadata or {}).items())),
        )

    def remove_kind(self, kind: EntryKind) -> int:
        doomed = [eid for eid, e in self.entries.items() if e.kind is kind]
        for eid in doomed:
            del self.entries[eid]
        return len(doomed)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VectorStore)
            and self.dims == other.dims
            and self.entries == other.entries
        )


def top_k(
    store: VectorStore,
    query_vector: EmbeddingVector,
    k: int,
    kind_filter: EntryKind | None = None,
) -> list[tuple[str, float]]:
    """Exact cosine ranking, descending, ties broken by ascending id."""
    if k < 1:
        raise StoreFormatError(f"k must be >= 1, got {k}")
    if query_vector.dims != store.dims:
        raise DimsMismatch(
            f"query has {query_vector.dims} dims, store expects {store.dims}"
        )
    candidates = [
        e for e in store.entries.values() if kind_filter is None or e.kind is kind_filter
    ]
    if not candidates:
        return []
    candidates.sort(key=lambda e: e.entry_id)
    matrix = np.asarray([c.vector.values for c in candidates])
    q = np.asarray(query_vector.values)
    norms = np.linalg.norm(matrix, axis=1) * float(np.linalg.norm(q))
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = np.where(norms > 0, matrix @ q / norms, 0.0)
    ranked = sorted(
        zip((c.entry_id for c in candidates), scores.tolist()),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return ranked[: min(k, len(ranked))]


# --- verbalization and embedding --------------------------------------------


def verbalize_triplet(edge: Edge, graph: FusedGraph) -> str:
    """Deterministic template for a dependency edge, ready for embedding."""
    if edge.relation is not Relation.CAN_USE:
        raise WrongRelation(
            f"can only verbalize {Relation.CAN_USE.value} edges, got {edge.relation.value}"
        )
    src, dst = graph.node(edge.src), graph.node(edge.dst)
    src_desc = str(src.payload.get("description", ""))
    dst_desc = str(dst.payload.get("description", ""))
    return (
        f"{src.label} —{Relation.CAN_USE.value}→ {dst.label}: {src_desc} / {dst_desc}"
    )


def triplet_entry_id(edge: Edge) -> str:
    return f"triplet:{edge.src}->{edge.dst}"


def embed(text: str, gateway: Gateway) -> EmbeddingVector:
    """Embed one text through the gateway; always returns an L2-normalized vector."""
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    raw = gateway.complete(request_for(Role.EMBED, text))
    try:
        values = [float(x) for x in json.loads(raw)]
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise GatewayError(f"embedding response is not a number list: {exc}")
    arr = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0 or not math.isfinite(norm):
        raise GatewayError("embedding response has zero or non-finite norm")
    if abs(norm - 1.0) > 1e-6:
        arr = arr / norm
    return EmbeddingVector(values=tuple(float(x) for x in arr), normalized=True)


def build_store(graph: FusedGraph, gateway: Gateway) -> VectorStore:
    """Index every dependency triplet and passage of a fused graph.

    Entry ids are stable: "triplet:<src>-><dst>" and the passage node id.
    """
    texts: list[tuple[str, EntryKind, str, dict[str, Any]]] = []
    for edge in graph.edges_with_relation(Relation.CAN_USE):
        text = verbalize_triplet(edge, graph)
        texts.append(
            (
                triplet_entry_id(edge),
                EntryKind.TRIPLET,
                text,
                {"src": edge.src, "dst": edge.dst, "text": text},
            )
        )
    for node_id in sorted(graph.nodes):
        node = graph.nodes[node_id]
        if node.kind is NodeKind.PASSAGE:
            text = str(node.payload.get("text", ""))
            if not text.strip():
                continue
            texts.append((node.id, EntryKind.PASSAGE, text, {"text": text}))

    store: VectorStore | None = None
    for entry_id, kind, text, metadata in texts:
        vector = embed(text, gateway)
        if store is None:
            store = VectorStore(dims=vector.dims)
        store.add(entry_id, vector, kind, metadata)
    return store if store is not None else VectorStore(dims=1)


# --- persistence -------------------------------------------------------------

_STORE_HEADER_KIND = "toolweave-store"
_STORE_VERSION = 1


def save_store(path: str | Path, store: VectorStore) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(
                canonical_json(
                    {
                        "kind": _STORE_HEADER_KIND,
                        "version": _STORE_VERSION,
                        "dims": store.dims,
                        "n_entries": len(store.entries),
                    }
                )
            )
            fh.write("\n")
            for entry_id in sorted(store.entries):
                entry = store.entries[entry_id]
                fh.write(
                    canonical_json(
                        {
                            "id": entry.entry_id,
                            "entry_kind": entry.kind.value,
                            "normalized": entry.vector.normalized,
                            "vector": list(entry.vector.values),
                            "metadata": entry.meta,
                        }
                    )
                )
                fh.write("\n")
    except OSError as exc:
        raise StoreWriteError(f"cannot write store to {path}: {exc}")


def load_store(path: str | Path) -> VectorStore:
    store: VectorStore | None = None
    expected = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise StoreFormatError(f"line {line_no}: invalid JSON: {exc.msg}")
            if store is None:
                if record.get("kind") != _STORE_HEADER_KIND:
                    raise StoreFormatError(f"line {line_no}: not a vector store header")
                if record.get("version") != _STORE_VERSION:
                    raise StoreFormatError(
                        f"unsupported store version {record.get('version')!r}"
                    )
                store = VectorStore(dims=int(record["dims"]))
                expected = int(record["n_entries"])
                continue
            try:
                store.add(
                    str(record["id"]),
                    EmbeddingVector(
                        values=tuple(float(x) for x in record["vector"]),
                        normalized=bool(record.get("normalized", True)),
                    ),
                    EntryKind(record["entry_kind"]),
                    dict(record.get("metadata", {})),
                )
            except (KeyError, ValueError) as exc:
                raise StoreFormatError(f"line {line_no}: bad entry: {exc}")
    if store is None:
        raise StoreFormatError("empty store file")
    if len(store.entries) != expected:
        raise StoreFormatError(
            f"header says {expected} entries, file has {len(store.entries)}"
        )
    return store
