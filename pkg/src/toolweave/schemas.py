"""Domain model and file loaders for tool schemas, queries, and documents.

All corpora are line-delimited JSON: one record per line. The record shapes
are documented in the README under "File formats". Parsing is strict about
invariants (unique names, non-empty ids) and lenient about unknown extra
fields, which are ignored.
"""

from __future__ import annotations

import json
import logging
import random
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import (
    DuplicateArgumentName,
    DuplicatePayloadField,
    DuplicateToolId,
    EmptyAfterNormalization,
    EmptyToolName,
    MalformedRecord,
    NotEnoughRecords,
    UnknownLevel,
)

logger = logging.getLogger(__name__)


class TypeTag(str, Enum):
    """Coarse type vocabulary used for dependency compatibility checks."""

    STRING = "string"
    INTEGER = "integer"
    NUMBER = "number"
    BOOLEAN = "boolean"
    LIST = "list"
    OBJECT = "object"
    UNKNOWN = "unknown"


# Aliases seen in the wild map onto the 7-value vocabulary; anything else
# that is a non-empty string is treated as a rich scalar and coerced to
# string. A missing or empty annotation stays unknown.
_TYPE_ALIASES = {
    "string": TypeTag.STRING,
    "str": TypeTag.STRING,
    "text": TypeTag.STRING,
    "integer": TypeTag.INTEGER,
    "int": TypeTag.INTEGER,
    "long": TypeTag.INTEGER,
    "number": TypeTag.NUMBER,
    "float": TypeTag.NUMBER,
    "double": TypeTag.NUMBER,
    "boolean": TypeTag.BOOLEAN,
    "bool": TypeTag.BOOLEAN,
    "list": TypeTag.LIST,
    "array": TypeTag.LIST,
    "object": TypeTag.OBJECT,
    "dict": TypeTag.OBJECT,
    "map": TypeTag.OBJECT,
    "unknown": TypeTag.UNKNOWN,
}


def coerce_type_tag(raw: Any) -> TypeTag:
    if raw is None:
        return TypeTag.UNKNOWN
    text = str(raw).strip().lower()
    if not text:
        return TypeTag.UNKNOWN
    return _TYPE_ALIASES.get(text, TypeTag.STRING)


def compatible_types(a: TypeTag, b: TypeTag) -> bool:
    """Equal tags are compatible, and unknown is compatible with anything."""
    return a == b or TypeTag.UNKNOWN in (a, b)


_WHITESPACE = re.compile(r"\s+")


def normalize_tool_id(raw_name: str) -> str:
    """Canonicalize a tool or field name for joining across corpora.

    Lowercase, collapse whitespace runs to single underscores, strip leading
    and trailing punctuation. Idempotent by construction.
    """
    s = raw_name.strip().lower()
    s = _WHITESPACE.sub("_", s)
    s = s.strip(string.punctuation)
    if not s:
        raise EmptyAfterNormalization(f"nothing left of {raw_name!r} after normalization")
    return s


@dataclass(frozen=True)
class ArgumentSpec:
    name: str
    type_tag: TypeTag = TypeTag.UNKNOWN
    required: bool = False
    description: str = ""


@dataclass(frozen=True)
class PayloadField:
    name: str
    type_tag: TypeTag = TypeTag.UNKNOWN
    description: str = ""


@dataclass(frozen=True)
class ToolSchema:
    tool_id: str
    name: str
    description: str = ""
    arguments: tuple[ArgumentSpec, ...] = ()
    output_payload: tuple[PayloadField, ...] = ()

    def argument(self, name: str) -> ArgumentSpec | None:
        for arg in self.arguments:
            if arg.name == name:
                return arg
        return None

    def payload_field(self, name: str) -> PayloadField | None:
        for f in self.output_payload:
            if f.name == name:
                return f
        return None


class QueryLevel(str, Enum):
    G1 = "G1"
    G2 = "G2"
    G3 = "G3"


@dataclass(frozen=True)
class GoldStep:
    tool_id: str
    arguments: tuple[tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class GoldPlan:
    steps: tuple[GoldStep, ...]
    gold_dependencies: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class QueryRecord:
    query_id: str
    text: str
    level: QueryLevel
    gold_plan: GoldPlan | None = None


@dataclass(frozen=True)
class DocumentRecord:
    doc_id: str
    title: str
    body: str
    referenced_tools: tuple[str, ...] = ()


# --- record parsing --------------------------------------------------------


def parse_tool_schema(raw: dict[str, Any], line: int | None = None) -> ToolSchema:
    """Validate one tool record into a ToolSchema.

    Missing type annotations map to TypeTag.UNKNOWN. Argument and payload
    field names must be unique within the tool.
    """
    if not isinstance(raw, dict):
        raise MalformedRecord(f"expected an object, got {type(raw).__name__}", line)
    if "name" not in raw:
        raise MalformedRecord("missing required field 'name'", line)
    name = str(raw["name"])
    try:
        tool_id = normalize_tool_id(name)
    except EmptyAfterNormalization:
        raise EmptyToolName(f"tool name {name!r} is empty after normalization", line)

    arguments: list[ArgumentSpec] = []
    seen_args: set[str] = set()
    for entry in _expect_list(raw.get("arguments", []), "arguments", line):
        arg = ArgumentSpec(
            name=str(_require(entry, "name", "argument", line)),
            type_tag=coerce_type_tag(entry.get("type")),
            required=bool(entry.get("required", False)),
            description=str(entry.get("description", "")),
        )
        if not arg.name:
            raise MalformedRecord("argument with empty name", line)
        if arg.name in seen_args:
            raise DuplicateArgumentName(f"argument {arg.name!r} repeated on tool {tool_id!r}", line)
        seen_args.add(arg.name)
        arguments.append(arg)

    payload: list[PayloadField] = []
    seen_fields: set[str] = set()
    for entry in _expect_list(raw.get("output_payload", []), "output_payload", line):
        fld = PayloadField(
            name=str(_require(entry, "name", "payload field", line)),
            type_tag=coerce_type_tag(entry.get("type")),
            description=str(entry.get("description", "")),
        )
        if not fld.name:
            raise MalformedRecord("payload field with empty name", line)
        if fld.name in seen_fields:
            raise DuplicatePayloadField(f"payload field {fld.name!r} repeated on tool {tool_id!r}", line)
        seen_fields.add(fld.name)
        payload.append(fld)

    return ToolSchema(
        tool_id=tool_id,
        name=name,
        description=str(raw.get("description", "")),
        arguments=tuple(arguments),
        output_payload=tuple(payload),
    )


def tool_schema_to_record(schema: ToolSchema) -> dict[str, Any]:
    """Inverse of parse_tool_schema: parse(tool_schema_to_record(s)) == s."""
    return {
        "name": schema.name,
        "description": schema.description,
        "arguments": [
            {
                "name": a.name,
                "type": a.type_tag.value,
                "required": a.required,
                "description": a.description,
            }
            for a in schema.arguments
        ],
        "output_payload": [
            {"name": f.name, "type": f.type_tag.value, "description": f.description}
            for f in schema.output_payload
        ],
    }


def _require(entry: Any, key: str, what: str, line: int | None) -> Any:
    if not isinstance(entry, dict) or key not in entry:
        raise MalformedRecord(f"{what} missing required field {key!r}", line)
    return entry[key]


def _expect_list(value: Any, what: str, line: int | None) -> list:
    if not isinstance(value, list):
        raise MalformedRecord(f"{what} must be a list", line)
    return value


def parse_query_record(raw: dict[str, Any], line: int | None = None) -> QueryRecord:
    if "query_id" not in raw or "text" not in raw:
        raise MalformedRecord("query record needs 'query_id' and 'text'", line)
    level_raw = str(raw.get("level", ""))
    try:
        level = QueryLevel(level_raw)
    except ValueError:
        raise UnknownLevel(f"unknown query level {level_raw!r}")

    gold = None
    if raw.get("gold_plan") is not None:
        gp = raw["gold_plan"]
        steps = []
        for entry in _expect_list(gp.get("steps", []), "gold_plan.steps", line):
            tool = str(_require(entry, "tool", "gold step", line))
            args = entry.get("args", {}) or {}
            steps.append(
                GoldStep(
                    tool_id=normalize_tool_id(tool),
                    arguments=tuple(sorted(args.items())),
                )
            )
        deps = []
        for pair in _expect_list(gp.get("dependencies", []), "gold_plan.dependencies", line):
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise MalformedRecord("gold dependency must be a [source, target] pair", line)
            deps.append((normalize_tool_id(str(pair[0])), normalize_tool_id(str(pair[1]))))
        gold = GoldPlan(steps=tuple(steps), gold_dependencies=tuple(deps))

    return QueryRecord(
        query_id=str(raw["query_id"]),
        text=str(raw["text"]),
        level=level,
        gold_plan=gold,
    )


def query_record_to_record(query: QueryRecord) -> dict[str, Any]:
    record: dict[str, Any] = {
        "query_id": query.query_id,
        "text": query.text,
        "level": query.level.value,
    }
    if query.gold_plan is not None:
        record["gold_plan"] = {
            "steps": [
                {"tool": s.tool_id, "args": dict(s.arguments)} for s in query.gold_plan.steps
            ],
            "dependencies": [list(p) for p in query.gold_plan.gold_dependencies],
        }
    return record


def parse_document_record(raw: dict[str, Any], line: int | None = None) -> DocumentRecord:
    if "doc_id" not in raw:
        raise MalformedRecord("document record needs 'doc_id'", line)
    refs = []
    for name in raw.get("referenced_tools", []) or []:
        refs.append(normalize_tool_id(str(name)))
    return DocumentRecord(
        doc_id=str(raw["doc_id"]),
        title=str(raw.get("title", "")),
        body=str(raw.get("body", "")),
        referenced_tools=tuple(refs),
    )


def document_record_to_record(doc: DocumentRecord) -> dict[str, Any]:
    return {
        "doc_id": doc.doc_id,
        "title": doc.title,
        "body": doc.body,
        "referenced_tools": list(doc.referenced_tools),
    }


# --- file IO ---------------------------------------------------------------


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield (line_number, record) pairs; blank lines are skipped."""
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(f"invalid JSON at offset {exc.pos}: {exc.msg}", line_no)
            yield line_no, record


def write_jsonl(path: str | Path, records: Iterable[dict[str, Any]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(canonical_json(record))
            fh.write("\n")


def canonical_json(obj: Any) -> str:
    """Stable, compact JSON used for every file this package writes."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def load_tools(path: str | Path) -> list[ToolSchema]:
    """Load a tool corpus, enforcing tool_id uniqueness."""
    tools: list[ToolSchema] = []
    seen: dict[str, int] = {}
    for line_no, record in iter_jsonl(path):
        schema = parse_tool_schema(record, line=line_no)
        if schema.tool_id in seen:
            raise DuplicateToolId(
                f"tool_id {schema.tool_id!r} already defined at line {seen[schema.tool_id]}",
                line_no,
            )
        seen[schema.tool_id] = line_no
        tools.append(schema)
    return tools


def tool_index(tools: Iterable[ToolSchema]) -> dict[str, ToolSchema]:
    return {t.tool_id: t for t in tools}


def load_documents(path: str | Path) -> list[DocumentRecord]:
    docs: list[DocumentRecord] = []
    seen: set[str] = set()
    for line_no, record in iter_jsonl(path):
        doc = parse_document_record(record, line=line_no)
        if doc.doc_id in seen:
            raise MalformedRecord(f"doc_id {doc.doc_id!r} repeated", line_no)
        seen.add(doc.doc_id)
        docs.append(doc)
    return docs


def load_query_set(
    path: str | Path,
    level: str | QueryLevel | None,
    sample_n: int | None = None,
    rng_seed: int = 0,
) -> list[QueryRecord]:
    """Load queries of one level and draw a deterministic sample.

    The sample order is the seeded shuffle order, identical across runs and
    platforms for a fixed (path, level, sample_n, rng_seed). sample_n=None
    (or 0) keeps the whole partition in file order; level=None keeps all
    levels.
    """
    wanted: QueryLevel | None = None
    if level is not None:
        try:
            wanted = QueryLevel(level)
        except ValueError:
            raise UnknownLevel(f"unknown query level {level!r}")

    records = []
    for line_no, record in iter_jsonl(path):
        query = parse_query_record(record, line=line_no)
        if wanted is None or query.level == wanted:
            records.append(query)

    if not sample_n:
        return records
    if sample_n > len(records):
        label = wanted.value if wanted is not None else "total"
        raise NotEnoughRecords(
            f"requested {sample_n} {label} queries, only {len(records)} available"
        )
    indices = list(range(len(records)))
    random.Random(rng_seed).shuffle(indices)
    return [records[i] for i in indices[:sample_n]]


def drop_invalid_gold_plans(
    queries: Iterable[QueryRecord], known_tool_ids: set[str]
) -> tuple[list[QueryRecord], int]:
    """Filter queries whose gold plan cannot be trusted.

    A gold plan is invalid when it references an unresolvable tool, is empty,
    or contains a self-dependency. Queries without a gold plan pass through.
    Returns the kept queries and the dropped count.
    """
    kept: list[QueryRecord] = []
    dropped = 0
    for query in queries:
        plan = query.gold_plan
        if plan is None:
            kept.append(query)
            continue
        bad = (
            not plan.steps
            or any(s.tool_id not in known_tool_ids for s in plan.steps)
            or any(src not in known_tool_ids or dst not in known_tool_ids for src, dst in plan.gold_dependencies)
            or any(src == dst for src, dst in plan.gold_dependencies)
        )
        if bad:
            dropped += 1
        else:
            kept.append(query)
    if dropped:
        logger.info("dropped %d queries with invalid gold plans", dropped)
    return kept, dropped
