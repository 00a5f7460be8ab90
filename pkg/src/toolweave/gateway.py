"""Uniform client for completion and embedding providers.

Three modes:

* ``live``    — HTTP calls against a configured endpoint, with retry,
                timeout, optional rate limiting, and optional recording.
* ``replay``  — responses come from a fixture file keyed by request
                fingerprint; an unknown fingerprint is an error, never a
                silent fabrication. No network activity occurs.
* ``stub``    — deterministic rule-based responses per role, so the whole
                pipeline runs offline with no fixtures at all.

A request fingerprint is the sha256 of the canonical JSON encoding of
(role, payloads), stable across runs and platforms.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable

import requests

from .errors import (
    EmptyText,
    FixtureFormatError,
    GatewayError,
    GatewayTimeout,
    MissingFixture,
    ProviderHttpError,
    StoreWriteError,
)
from .schemas import canonical_json, compatible_types, normalize_tool_id

logger = logging.getLogger(__name__)

ENV_API_KEY = "TOOLWEAVE_API_KEY"
ENV_ENDPOINT = "TOOLWEAVE_ENDPOINT"


class Role(str, Enum):
    """What a request is for; selects the stub rule and labels fixtures."""

    PROPOSE = "propose"
    JUDGE = "judge"
    GENERATE = "generate"
    PLAN_JUDGE = "plan_judge"
    EMBED = "embed"
    EXTRACT = "extract"


class Mode(str, Enum):
    LIVE = "live"
    REPLAY = "replay"
    STUB = "stub"


@dataclass(frozen=True)
class GatewayRequest:
    role: Role
    payloads: tuple[str, ...]

    @property
    def fingerprint(self) -> str:
        blob = canonical_json([self.role.value, list(self.payloads)])
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def request_for(role: Role | str, payload: str) -> GatewayRequest:
    return GatewayRequest(role=Role(role), payloads=(payload,))


@dataclass
class GatewayConfig:
    endpoint: str = ""
    model: str = ""
    api_key: str = ""
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    requests_per_second: float = 0.0  # 0 disables rate limiting
    embed_dims: int = 256


# --- fixtures ---------------------------------------------------------------


@dataclass(frozen=True)
class FixtureEntry:
    role: Role
    response: str
    metadata: tuple[tuple[str, Any], ...] = ()


def load_fixtures(path: str | Path) -> dict[str, FixtureEntry]:
    """Read a fixture file: line-delimited {fingerprint, role, response} records."""
    fixtures: dict[str, FixtureEntry] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise FixtureFormatError(f"line {line_no}: invalid JSON: {exc.msg}")
            for key in ("fingerprint", "role", "response"):
                if key not in record:
                    raise FixtureFormatError(f"line {line_no}: missing field {key!r}")
            try:
                role = Role(record["role"])
            except ValueError:
                raise FixtureFormatError(f"line {line_no}: unknown role {record['role']!r}")
            fingerprint = str(record["fingerprint"])
            if fingerprint in fixtures:
                logger.warning("duplicate fingerprint %s at line %d, keeping later entry", fingerprint, line_no)
            fixtures[fingerprint] = FixtureEntry(
                role=role,
                response=str(record["response"]),
                metadata=tuple(sorted((record.get("metadata") or {}).items())),
            )
    return fixtures


def save_fixtures(path: str | Path, fixtures: dict[str, FixtureEntry]) -> None:
    """Write fixtures sorted by fingerprint, one canonical JSON record per line."""
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for fingerprint in sorted(fixtures):
                entry = fixtures[fingerprint]
                fh.write(
                    canonical_json(
                        {
                            "fingerprint": fingerprint,
                            "role": entry.role.value,
                            "response": entry.response,
                            "metadata": dict(entry.metadata),
                        }
                    )
                )
                fh.write("\n")
    except OSError as exc:
        raise StoreWriteError(f"cannot write fixtures to {path}: {exc}")


def merge_fixtures(
    base: dict[str, FixtureEntry], incoming: dict[str, FixtureEntry]
) -> dict[str, FixtureEntry]:
    """Union keyed by fingerprint; the incoming side wins conflicts with a warning."""
    merged = dict(base)
    for fingerprint, entry in incoming.items():
        if fingerprint in merged and merged[fingerprint] != entry:
            logger.warning("fixture conflict on %s: keeping later recording", fingerprint)
        merged[fingerprint] = entry
    return merged


# --- stub rules -------------------------------------------------------------


def stub_embedding(text: str, dims: int) -> list[float]:
    """Hashed character-3-gram bag, L2-normalized.

    Deterministic across runs and platforms (blake2s). Texts shorter than
    3 characters hash as a single gram.
    """
    if not text:
        raise EmptyText("cannot embed empty text")
    counts = [0.0] * dims
    grams = [text[i : i + 3] for i in range(len(text) - 2)] or [text]
    for gram in grams:
        digest = hashlib.blake2s(gram.encode("utf-8")).digest()
        counts[int.from_bytes(digest[:4], "big") % dims] += 1.0
    norm = sum(c * c for c in counts) ** 0.5
    return [c / norm for c in counts]


def embedding_buckets(text: str, dims: int) -> set[int]:
    """Which stub-embedder buckets a text occupies; used to build test fixtures."""
    grams = [text[i : i + 3] for i in range(len(text) - 2)] or [text]
    return {
        int.from_bytes(hashlib.blake2s(g.encode("utf-8")).digest()[:4], "big") % dims
        for g in grams
    }


def _stub_embed(payload: str, config: GatewayConfig) -> str:
    return canonical_json(stub_embedding(payload, config.embed_dims))


def _stub_propose(payload: str, config: GatewayConfig) -> str:
    """Exact-name, compatible-type field matching between two tool records."""
    pair = json.loads(payload)
    source, target = pair["source"], pair["target"]
    candidates = []
    for fld in source.get("output_payload", []):
        for arg in target.get("arguments", []):
            if _names_match(fld["name"], arg["name"]) and compatible_types(
                _tag(fld.get("type")), _tag(arg.get("type"))
            ):
                candidates.append(
                    {
                        "output_field": fld["name"],
                        "input_argument": arg["name"],
                        "rationale": f"output {fld['name']!r} feeds argument {arg['name']!r}",
                        "confidence": 1.0,
                    }
                )
    candidates.sort(key=lambda c: (c["output_field"], c["input_argument"]))
    return canonical_json({"candidates": candidates})


def _stub_judge(payload: str, config: GatewayConfig) -> str:
    """Accept iff normalized names match and type tags are compatible."""
    record = json.loads(payload)
    ok = _names_match(record["output_field"], record["input_argument"]) and compatible_types(
        _tag(record.get("output_type")), _tag(record.get("input_type"))
    )
    return "accept" if ok else "reject"


def _names_match(a: str, b: str) -> bool:
    try:
        return normalize_tool_id(a) == normalize_tool_id(b)
    except Exception:
        return False


def _tag(raw: Any):
    from .schemas import coerce_type_tag

    return coerce_type_tag(raw)


_QUERY_LINE = re.compile(r"^QUERY:\s*(.*)$")
_TRIPLET_LINE = re.compile(r"^(\S+) —can_use_this_tool_output→ (\S+):")


def _stub_generate(payload: str, config: GatewayConfig) -> str:
    """Mechanical planner over a rendered prompt bundle.

    Takes every tool named in the query at a token boundary, closes over
    the dependency edges listed in the TRIPLETS section, and emits steps
    in topological order with dependency wiring and empty bindings.
    """
    query = ""
    edges: list[tuple[str, str]] = []
    for line in payload.splitlines():
        m = _QUERY_LINE.match(line)
        if m:
            query = m.group(1)
            continue
        m = _TRIPLET_LINE.match(line)
        if m:
            edges.append((m.group(1), m.group(2)))

    tools = sorted({t for edge in edges for t in edge})
    query_blob = "_" + re.sub(r"[^a-z0-9_]+", "_", query.lower()) + "_"
    selected = {t for t in tools if f"_{t}_" in query_blob}
    # forward closure over listed dependency edges
    changed = True
    while changed:
        changed = False
        for src, dst in edges:
            if src in selected and dst not in selected:
                selected.add(dst)
                changed = True

    # topological order (Kahn), lexicographic tie-break
    chosen_edges = [(s, d) for s, d in edges if s in selected and d in selected and s != d]
    indegree = {t: 0 for t in selected}
    for _, dst in set(chosen_edges):
        indegree[dst] += 1
    order: list[str] = []
    ready = sorted(t for t, deg in indegree.items() if deg == 0)
    seen_edges = set(chosen_edges)
    while ready:
        tool = ready.pop(0)
        order.append(tool)
        for src, dst in sorted(seen_edges):
            if src == tool:
                indegree[dst] -= 1
                if indegree[dst] == 0 and dst not in order and dst not in ready:
                    ready.append(dst)
        ready.sort()
    for tool in sorted(selected):
        if tool not in order:  # cycle remnant: append deterministically
            order.append(tool)

    position = {tool: i + 1 for i, tool in enumerate(order)}
    steps = []
    for tool in order:
        depends = sorted(
            position[src] for src, dst in set(chosen_edges) if dst == tool and position[src] < position[tool]
        )
        steps.append({"tool": tool, "args": {}, "depends_on": depends})
    return canonical_json({"steps": steps})


def _stub_plan_judge(payload: str, config: GatewayConfig) -> str:
    """Coverage rubric: 2 exact match, 1 if at least half the gold tools, else 0.

    Exact match means the tool multisets agree and every gold dependency
    pair appears in the artifact wiring.
    """
    record = json.loads(payload)
    artifact, gold = record["artifact"], record["gold"]
    art_tools = sorted(artifact.get("tools", []))
    gold_tools = sorted(gold.get("tools", []))
    art_deps = {tuple(p) for p in artifact.get("dependencies", [])}
    gold_deps = {tuple(p) for p in gold.get("dependencies", [])}
    if art_tools == gold_tools and gold_deps <= art_deps:
        return "2"
    remaining = list(art_tools)
    present = 0
    for tool in gold_tools:
        if tool in remaining:
            remaining.remove(tool)
            present += 1
    if gold_tools and present * 2 >= len(gold_tools):
        return "1"
    return "0"


def _stub_extract(payload: str, config: GatewayConfig) -> str:
    from .graph import heuristic_entity_labels

    return canonical_json(heuristic_entity_labels(payload))


_STUB_HANDLERS: dict[Role, Callable[[str, GatewayConfig], str]] = {
    Role.EMBED: _stub_embed,
    Role.PROPOSE: _stub_propose,
    Role.JUDGE: _stub_judge,
    Role.GENERATE: _stub_generate,
    Role.PLAN_JUDGE: _stub_plan_judge,
    Role.EXTRACT: _stub_extract,
}


# --- rate limiting ----------------------------------------------------------


class _TokenBucket:
    def __init__(self, rate: float, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.tokens = rate
        self.clock = clock
        self.sleep = sleep
        self.last = clock()
        self.lock = threading.Lock()

    def acquire(self) -> None:
        if self.rate <= 0:
            return
        with self.lock:
            while True:
                now = self.clock()
                self.tokens = min(self.rate, self.tokens + (now - self.last) * self.rate)
                self.last = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                self.sleep((1.0 - self.tokens) / self.rate)


# --- the gateway ------------------------------------------------------------


def default_transport(config: GatewayConfig):
    """HTTP POST transport. Returns (status_code, body_text)."""

    def send(body: dict[str, Any]) -> tuple[int, str]:
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        response = requests.post(
            config.endpoint, json=body, headers=headers, timeout=config.timeout
        )
        return response.status_code, response.text

    return send


class Gateway:
    """Shareable across concurrent callers; see module docstring for modes."""

    def __init__(
        self,
        mode: Mode | str,
        config: GatewayConfig | None = None,
        fixtures: dict[str, FixtureEntry] | None = None,
        transport: Callable[[dict[str, Any]], tuple[int, str]] | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.mode = Mode(mode)
        self.config = config or GatewayConfig()
        self.config.endpoint = os.environ.get(ENV_ENDPOINT, self.config.endpoint)
        self.config.api_key = os.environ.get(ENV_API_KEY, self.config.api_key)
        self.fixtures = fixtures or {}
        self._transport = transport
        self._sleep = sleep
        self._bucket = _TokenBucket(self.config.requests_per_second)
        self._recorded: dict[str, FixtureEntry] = {}
        self._record_lock = threading.Lock()

    def complete(self, request: GatewayRequest) -> str:
        if self.mode is Mode.STUB:
            handler = _STUB_HANDLERS[request.role]
            return handler(request.payloads[0], self.config)
        if self.mode is Mode.REPLAY:
            entry = self.fixtures.get(request.fingerprint)
            if entry is None:
                raise MissingFixture(
                    f"no fixture for fingerprint {request.fingerprint}",
                    context=f"role={request.role.value}",
                )
            return entry.response
        return self._complete_live(request)

    def _complete_live(self, request: GatewayRequest) -> str:
        transport = self._transport or default_transport(self.config)
        body = {
            "model": self.config.model,
            "role": request.role.value,
            "inputs": list(request.payloads),
        }
        attempts = max(1, self.config.max_attempts)
        last_error: GatewayError | None = None
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            self._bucket.acquire()
            try:
                status, text = transport(body)
            except requests.Timeout:
                last_error = GatewayTimeout(
                    f"no response within {self.config.timeout}s",
                    context=f"role={request.role.value}",
                )
                continue
            except requests.RequestException as exc:
                last_error = GatewayError(str(exc), context=f"role={request.role.value}")
                continue
            if status >= 500:
                last_error = ProviderHttpError(status, text, context=f"role={request.role.value}")
                continue
            if status >= 400:
                raise ProviderHttpError(status, text, context=f"role={request.role.value}")
            response = self._parse_live_response(text)
            self._record(request, response)
            return response
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse_live_response(text: str) -> str:
        try:
            parsed = json.loads(text)
            outputs = parsed.get("outputs")
            if isinstance(outputs, list) and outputs:
                return str(outputs[0])
        except (json.JSONDecodeError, AttributeError):
            pass
        return text

    def _record(self, request: GatewayRequest, response: str) -> None:
        with self._record_lock:
            self._recorded[request.fingerprint] = FixtureEntry(
                role=request.role,
                response=response,
                metadata=tuple(
                    sorted({"model": self.config.model, "timestamp": time.time()}.items())
                ),
            )

    @property
    def recorded(self) -> dict[str, FixtureEntry]:
        with self._record_lock:
            return dict(self._recorded)

    def save_recorded(self, path: str | Path) -> None:
        """Persist everything recorded this session, merging into an existing file."""
        existing: dict[str, FixtureEntry] = {}
        if Path(path).exists():
            existing = load_fixtures(path)
        save_fixtures(path, merge_fixtures(existing, self.recorded))
