"""Deterministic synthetic tool ecosystems for tests and demos.

A generated corpus plants dependencies as exact name+type matches (so the
extraction oracle recovers precisely the gold set), sprinkles distractor
fields that share a name but clash on type, and wires at least one buried
tool: a tool no embedding lookup can surface for its query because its
name and description share no vocabulary with it, reachable only through
a planted dependency edge. The generator verifies the buried scenario
numerically under the stub embedder and redraws until it holds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .errors import InfeasibleSpec
from .extraction import (
    Provenance,
    ToolDependency,
    Verdict,
    heuristic_match_oracle,
    save_dependencies,
)
from .gateway import Gateway, Mode
from .graph import (
    FusedGraph,
    PprConfig,
    build_tool_graph,
    extract_subgraph,
    fuse,
    ingest_document_graph,
    personalized_pagerank,
    tool_node_id,
    uniform_seeds,
)
from .retrieval import EntryKind, build_store, embed, top_k
from .schemas import (
    ArgumentSpec,
    DocumentRecord,
    GoldPlan,
    GoldStep,
    PayloadField,
    QueryLevel,
    QueryRecord,
    ToolSchema,
    TypeTag,
    document_record_to_record,
    normalize_tool_id,
    query_record_to_record,
    tool_schema_to_record,
    write_jsonl,
)

# Vocabulary partitions. Tool names draw exclusively from NOUNS x VERBS,
# query/document filler from CONTEXT and GLUE, and buried tools from
# generated junk strings. Keeping the pools disjoint guarantees no query
# ever names a tool it should not, since the stub planner selects tools by
# token-boundary match against the query text.
_NOUNS = (
    "orders", "invoices", "shipments", "stock", "customers", "payments",
    "routes", "tariffs", "vendors", "coupons", "returns", "tickets",
    "assets", "leads", "quotes", "contracts", "permits", "claims",
    "parcels", "depots",
)
_VERBS = (
    "lookup", "sync", "export", "merge", "fetch", "submit", "verify",
    "archive", "notify", "render", "resolve", "publish", "convert",
    "inspect", "compile", "digest", "rotate", "sample", "bundle", "relay",
)
_CONTEXT = (
    "order", "invoice", "shipment", "inventory", "refund", "billing",
    "customer", "ledger", "dispatch", "payment", "warehouse", "catalog",
    "pricing", "account", "tracking", "carrier", "quota", "audit",
    "revenue", "manifest", "region", "cycle",
)
_CONCRETE_TYPES = (
    TypeTag.STRING,
    TypeTag.INTEGER,
    TypeTag.NUMBER,
    TypeTag.BOOLEAN,
    TypeTag.LIST,
    TypeTag.OBJECT,
)
_JUNK_LETTERS = "bcdfghjklmnpqrstvwxz"

_MIN_DECOY_EDGE_MARGIN = 4
_SEED_STRIDE = 1000003  # distinct RNG stream per redraw attempt


@dataclass(frozen=True)
class CorpusSpec:
    """Size and difficulty knobs for one synthetic corpus."""

    n_tools: int = 50
    n_planted_dependencies: int = 40
    n_docs: int = 12
    doc_tool_mention_rate: float = 0.5
    distractor_field_rate: float = 0.1
    rng_seed: int = 7
    n_queries: int = 6
    n_buried_queries: int = 1
    retrieval_k: int = 20
    ppr_top_n: int = 50
    max_draw_attempts: int = 20

    def __post_init__(self):
        for name in (
            "n_tools",
            "n_planted_dependencies",
            "n_docs",
            "rng_seed",
            "n_queries",
            "n_buried_queries",
            "retrieval_k",
            "ppr_top_n",
            "max_draw_attempts",
        ):
            if int(getattr(self, name)) < 0:
                raise InfeasibleSpec(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("doc_tool_mention_rate", "distractor_field_rate"):
            value = getattr(self, name)
            if not 0.0 <= float(value) <= 1.0:
                raise InfeasibleSpec(f"{name} must be in [0, 1], got {value}")
        cap = self.n_tools * (self.n_tools - 1)
        if self.n_planted_dependencies > cap:
            raise InfeasibleSpec(
                f"{self.n_planted_dependencies} planted dependencies exceed "
                f"the {cap} ordered pairs available among {self.n_tools} tools"
            )
        if self.n_buried_queries < 1:
            raise InfeasibleSpec("at least one buried-tool query is required")
        if self.n_buried_queries > self.n_queries:
            raise InfeasibleSpec("more buried queries than queries")
        if self.retrieval_k < 1 or self.ppr_top_n < 1 or self.max_draw_attempts < 1:
            raise InfeasibleSpec("retrieval_k, ppr_top_n, max_draw_attempts must be >= 1")


_SPEC_FIELDS = {f.name for f in CorpusSpec.__dataclass_fields__.values()}


def corpus_spec_from_mapping(raw: Mapping[str, object]) -> CorpusSpec:
    unknown = sorted(set(raw) - _SPEC_FIELDS)
    if unknown:
        raise InfeasibleSpec(f"unknown corpus spec fields: {', '.join(unknown)}")
    return CorpusSpec(**raw)  # type: ignore[arg-type]


@dataclass(frozen=True)
class BuriedScenario:
    """One planted lexical-miss case: query names only the anchor, the
    buried tool hangs off it by a single dependency edge, and the feeder
    edge exists so retrieval still seeds the anchor."""

    query_id: str
    anchor_tool_id: str
    buried_tool_id: str
    feeder_tool_id: str


@dataclass(frozen=True)
class GeneratedCorpus:
    tools: tuple[ToolSchema, ...]
    dependencies: tuple[ToolDependency, ...]
    documents: tuple[DocumentRecord, ...]
    queries: tuple[QueryRecord, ...]
    buried: tuple[BuriedScenario, ...]

    def gold_pairs(self) -> set[tuple[str, str]]:
        return {(d.source_tool, d.target_tool) for d in self.dependencies}


class _DrawFailed(Exception):
    """Internal: this draw violated a scenario property; try another."""


def _junk_word(rng: random.Random) -> str:
    return "".join(rng.choice(_JUNK_LETTERS) for _ in range(rng.randint(5, 7)))


def _context_phrase(rng: random.Random, n: int) -> str:
    return " ".join(rng.choice(_CONTEXT) for _ in range(n))


def _title(name: str) -> str:
    return " ".join(w.capitalize() for w in name.split())


@dataclass
class _ToolDraft:
    name: str
    description: str
    arguments: list[ArgumentSpec] = field(default_factory=list)
    payload: list[PayloadField] = field(default_factory=list)

    @property
    def tool_id(self) -> str:
        return normalize_tool_id(self.name)

    def freeze(self) -> ToolSchema:
        return ToolSchema(
            tool_id=self.tool_id,
            name=self.name,
            description=self.description,
            arguments=tuple(self.arguments),
            output_payload=tuple(self.payload),
        )


def _sample_name_pairs(rng: random.Random, count: int) -> list[str]:
    pool = [(n, v) for n in _NOUNS for v in _VERBS]
    if count > len(pool):
        raise InfeasibleSpec(
            f"{count} named tools requested but only {len(pool)} unique names exist"
        )
    return [f"{n} {v}" for n, v in rng.sample(pool, count)]


def _sample_ordered_pairs(
    rng: random.Random, items: Sequence[str], count: int
) -> list[tuple[str, str]]:
    pool = [(a, b) for a in items for b in items if a != b]
    return rng.sample(pool, count)


def _structure(spec: CorpusSpec) -> tuple[int, int, int, int]:
    """Tool and plant budget split; raises InfeasibleSpec when it can't fit."""
    n_decoy_edges = spec.retrieval_k + _MIN_DECOY_EDGE_MARGIN
    n_decoys = 2
    while n_decoys * (n_decoys - 1) < n_decoy_edges:
        n_decoys += 1
    n_plain = spec.n_queries - spec.n_buried_queries
    scenario_tools = 3 * spec.n_buried_queries + n_decoys + 2 * n_plain
    if scenario_tools > spec.n_tools:
        raise InfeasibleSpec(
            f"scenario needs {scenario_tools} tools but the spec allows {spec.n_tools}"
        )
    scenario_plants = 2 * spec.n_buried_queries + n_decoy_edges + n_plain
    if scenario_plants > spec.n_planted_dependencies:
        raise InfeasibleSpec(
            f"scenario needs {scenario_plants} planted dependencies but the "
            f"spec allows {spec.n_planted_dependencies}"
        )
    n_fillers = spec.n_tools - scenario_tools
    extra = spec.n_planted_dependencies - scenario_plants
    if extra > n_fillers * (n_fillers - 1):
        raise InfeasibleSpec(
            f"{extra} extra plants do not fit among {n_fillers} filler tools"
        )
    return n_decoys, n_decoy_edges, n_plain, n_fillers


def _draw(spec: CorpusSpec, rng: random.Random) -> GeneratedCorpus:
    n_decoys, n_decoy_edges, n_plain, n_fillers = _structure(spec)

    n_named = spec.n_tools - spec.n_buried_queries  # buried tools get junk names
    names = _sample_name_pairs(rng, n_named)
    drafts: dict[str, _ToolDraft] = {}

    def add(name: str, description: str) -> _ToolDraft:
        draft = _ToolDraft(name=name, description=description)
        if draft.tool_id in drafts:
            raise _DrawFailed(f"duplicate tool id {draft.tool_id}")
        drafts[draft.tool_id] = draft
        return draft

    cursor = iter(names)
    decoys = [add(next(cursor), _context_phrase(rng, 10)) for _ in range(n_decoys)]
    anchors, feeders, burieds = [], [], []
    for _ in range(spec.n_buried_queries):
        anchors.append(add(next(cursor), _context_phrase(rng, 6)))
        feeders.append(add(next(cursor), _context_phrase(rng, 8)))
        junk_name = f"{_junk_word(rng)} {_junk_word(rng)}"
        junk_desc = " ".join(_junk_word(rng) for _ in range(10))
        burieds.append(add(junk_name, junk_desc))
    plain_pairs = [
        (add(next(cursor), _context_phrase(rng, 4)), add(next(cursor), _context_phrase(rng, 4)))
        for _ in range(n_plain)
    ]
    fillers = [
        add(next(cursor), " ".join(_junk_word(rng) for _ in range(3)) + " " + rng.choice(_CONTEXT))
        for _ in range(n_fillers)
    ]

    counter = 0
    for draft in drafts.values():
        for _ in range(rng.randint(1, 2)):
            counter += 1
            draft.arguments.append(
                ArgumentSpec(
                    name=f"p{counter:04d}",
                    type_tag=rng.choice(_CONCRETE_TYPES),
                    required=rng.random() < 0.7,
                    description=_context_phrase(rng, 2),
                )
            )
        for _ in range(rng.randint(1, 2)):
            counter += 1
            draft.payload.append(
                PayloadField(
                    name=f"f{counter:04d}",
                    type_tag=rng.choice(_CONCRETE_TYPES),
                    description=_context_phrase(rng, 2),
                )
            )

    # Planted dependencies: exact name+type matches, one unique field per plant.
    plant_pairs: list[tuple[_ToolDraft, _ToolDraft]] = []
    decoy_ids = [d.tool_id for d in decoys]
    for src_id, dst_id in _sample_ordered_pairs(rng, decoy_ids, n_decoy_edges):
        plant_pairs.append((drafts[src_id], drafts[dst_id]))
    for feeder, anchor, buried in zip(feeders, anchors, burieds):
        plant_pairs.append((feeder, anchor))
        plant_pairs.append((anchor, buried))
    plant_pairs.extend(plain_pairs)
    filler_ids = [f.tool_id for f in fillers]
    extra = spec.n_planted_dependencies - len(plant_pairs)
    for src_id, dst_id in _sample_ordered_pairs(rng, filler_ids, extra):
        plant_pairs.append((drafts[src_id], drafts[dst_id]))

    dependencies: list[ToolDependency] = []
    for j, (src, dst) in enumerate(plant_pairs, start=1):
        field_name = f"field_{j:04d}"
        shared = rng.choice(_CONCRETE_TYPES)
        src.payload.append(
            PayloadField(name=field_name, type_tag=shared, description=_context_phrase(rng, 2))
        )
        dst.arguments.append(
            ArgumentSpec(
                name=field_name,
                type_tag=shared,
                required=False,
                description=_context_phrase(rng, 2),
            )
        )
        dependencies.append(
            ToolDependency(
                source_tool=src.tool_id,
                target_tool=dst.tool_id,
                output_field=field_name,
                input_argument=field_name,
                rationale=f"output {field_name!r} feeds argument {field_name!r}",
                confidence=1.0,
                verdict=Verdict.ACCEPTED,
                judge_rationale="planted exact name and type match",
                provenance=Provenance.HEURISTIC,
            )
        )

    # Distractors: same field name on both sides, concretely different types.
    all_ids = sorted(drafts)
    n_distractors = round(spec.distractor_field_rate * spec.n_planted_dependencies)
    for j in range(1, n_distractors + 1):
        src_id, dst_id = rng.sample(all_ids, 2)
        out_type, in_type = rng.sample(_CONCRETE_TYPES, 2)
        clash = f"clash_{j:04d}"
        drafts[src_id].payload.append(
            PayloadField(name=clash, type_tag=out_type, description=_context_phrase(rng, 2))
        )
        drafts[dst_id].arguments.append(
            ArgumentSpec(
                name=clash,
                type_tag=in_type,
                required=False,
                description=_context_phrase(rng, 2),
            )
        )

    tools = tuple(draft.freeze() for _, draft in sorted(drafts.items()))

    # Documents: a slice of them mentions plain/filler tools by name.
    mention_pool = sorted(
        {d.tool_id for pair in plain_pairs for d in pair} | set(filler_ids)
    )
    documents: list[DocumentRecord] = []
    n_mentioning = round(spec.doc_tool_mention_rate * spec.n_docs)
    for i in range(1, spec.n_docs + 1):
        title = f"{_title(_context_phrase(rng, 2))} Procedure"
        sentences = [
            f"The {_context_phrase(rng, 2)} follows the {_context_phrase(rng, 2)}.",
            f"Each {rng.choice(_CONTEXT)} is reconciled during the {_context_phrase(rng, 2)}.",
        ]
        referenced: list[str] = []
        if i <= n_mentioning and mention_pool:
            tool_id = rng.choice(mention_pool)
            referenced.append(tool_id)
            sentences.insert(
                1,
                f"Operators trigger {_title(drafts[tool_id].name)} before the "
                f"{_context_phrase(rng, 2)}.",
            )
        body = " ".join(sentences[:2]) + "\n\n" + sentences[-1]
        documents.append(
            DocumentRecord(
                doc_id=f"doc-{i:03d}",
                title=title,
                body=body,
                referenced_tools=tuple(referenced),
            )
        )

    # Queries: plain ones name both plan tools, buried ones only the anchor.
    queries: list[QueryRecord] = []
    scenarios: list[BuriedScenario] = []
    qn = 0
    for a, b in plain_pairs:
        qn += 1
        queries.append(
            QueryRecord(
                query_id=f"q-{qn:03d}",
                text=(
                    f"Please run {_title(a.name)} and feed the result into "
                    f"{_title(b.name)} for the {_context_phrase(rng, 2)} review"
                ),
                level=QueryLevel.G2,
                gold_plan=GoldPlan(
                    steps=(GoldStep(a.tool_id), GoldStep(b.tool_id)),
                    gold_dependencies=((a.tool_id, b.tool_id),),
                ),
            )
        )
    for anchor, buried in zip(anchors, burieds):
        qn += 1
        query_id = f"q-{qn:03d}"
        queries.append(
            QueryRecord(
                query_id=query_id,
                text=(
                    f"After the {_context_phrase(rng, 2)} closes, run "
                    f"{_title(anchor.name)} and keep the {_context_phrase(rng, 2)} aligned"
                ),
                level=QueryLevel.G3,
                gold_plan=GoldPlan(
                    steps=(GoldStep(anchor.tool_id), GoldStep(buried.tool_id)),
                    gold_dependencies=((anchor.tool_id, buried.tool_id),),
                ),
            )
        )
        scenarios.append(
            BuriedScenario(
                query_id=query_id,
                anchor_tool_id=anchor.tool_id,
                buried_tool_id=buried.tool_id,
                feeder_tool_id=feeders[len(scenarios)].tool_id,
            )
        )

    return GeneratedCorpus(
        tools=tools,
        dependencies=tuple(sorted(dependencies, key=lambda d: d.sort_key())),
        documents=tuple(documents),
        queries=tuple(queries),
        buried=tuple(scenarios),
    )


def _check_oracle_equality(corpus: GeneratedCorpus) -> None:
    planted = {
        (d.source_tool, d.target_tool, d.output_field, d.input_argument)
        for d in corpus.dependencies
    }
    found = set()
    for src in corpus.tools:
        for dst in corpus.tools:
            if src.tool_id == dst.tool_id:
                continue
            for candidate in heuristic_match_oracle((src, dst)):
                found.add(
                    (
                        candidate.source_tool,
                        candidate.target_tool,
                        candidate.output_field,
                        candidate.input_argument,
                    )
                )
    if found != planted:
        raise _DrawFailed(
            f"oracle found {len(found)} matches, planted {len(planted)}"
        )


def _assemble_fused_graph(corpus: GeneratedCorpus) -> FusedGraph:
    tool_graph = build_tool_graph(corpus.tools, corpus.dependencies)
    doc_graph = ingest_document_graph(corpus.documents)
    return fuse(tool_graph, doc_graph)


def _check_buried_scenarios(spec: CorpusSpec, corpus: GeneratedCorpus) -> None:
    """Verify the retrieval-vs-PPR split numerically under the stub embedder."""
    graph = _assemble_fused_graph(corpus)
    gateway = Gateway(Mode.STUB)
    store = build_store(graph, gateway)
    by_query = {q.query_id: q for q in corpus.queries}

    for scenario in corpus.buried:
        query = by_query[scenario.query_id]
        query_vector = embed(query.text, gateway)
        hits = top_k(store, query_vector, spec.retrieval_k, kind_filter=EntryKind.TRIPLET)
        buried_node = tool_node_id(scenario.buried_tool_id)
        anchor_node = tool_node_id(scenario.anchor_tool_id)
        seeds: set[str] = set()
        for entry_id, _score in hits:
            meta = store.entries[entry_id].meta
            seeds.update((meta["src"], meta["dst"]))
        if buried_node in seeds:
            raise _DrawFailed(f"{scenario.buried_tool_id} leaked into embedding top-k")
        if anchor_node not in seeds:
            raise _DrawFailed(f"anchor {scenario.anchor_tool_id} missed embedding top-k")
        result = personalized_pagerank(graph, uniform_seeds(sorted(seeds)), PprConfig())
        subgraph = extract_subgraph(graph, result.scores, spec.ppr_top_n, sorted(seeds))
        if buried_node not in subgraph.nodes:
            raise _DrawFailed(
                f"{scenario.buried_tool_id} outside the top-{spec.ppr_top_n} PPR subgraph"
            )

    # Plain queries must anchor on their own planted edge in embedding space,
    # so the two retrieval arms disagree only on buried queries.
    buried_ids = {s.query_id for s in corpus.buried}
    for query in corpus.queries:
        if query.query_id in buried_ids or query.gold_plan is None:
            continue
        src, dst = query.gold_plan.gold_dependencies[0]
        wanted = f"triplet:{tool_node_id(src)}->{tool_node_id(dst)}"
        query_vector = embed(query.text, gateway)
        hits = top_k(store, query_vector, spec.retrieval_k, kind_filter=EntryKind.TRIPLET)
        if wanted not in {entry_id for entry_id, _ in hits}:
            raise _DrawFailed(f"plain query {query.query_id} lost its anchor triplet")


def generate_corpus(spec: CorpusSpec) -> GeneratedCorpus:
    """Deterministic per seed. Redraws with a derived seed whenever a draw
    violates a scenario property; raises InfeasibleSpec when the budget of
    attempts runs out or the spec cannot fit the scenario at all."""
    _structure(spec)  # fail fast on structural impossibility
    failures: list[str] = []
    for attempt in range(spec.max_draw_attempts):
        rng = random.Random(spec.rng_seed + attempt * _SEED_STRIDE)
        try:
            corpus = _draw(spec, rng)
            _check_oracle_equality(corpus)
            _check_buried_scenarios(spec, corpus)
            return corpus
        except _DrawFailed as exc:
            failures.append(str(exc))
    raise InfeasibleSpec(
        f"no draw satisfied the buried-tool scenario in {spec.max_draw_attempts} "
        f"attempts; last failure: {failures[-1]}"
    )


def write_corpus(corpus: GeneratedCorpus, out_dir: str | Path) -> dict[str, Path]:
    """Write the corpus in the exact formats the ingest loaders consume."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "tools": out / "tools.jsonl",
        "dependencies": out / "gold_dependencies.jsonl",
        "documents": out / "documents.jsonl",
        "queries": out / "queries.jsonl",
    }
    write_jsonl(paths["tools"], (tool_schema_to_record(t) for t in corpus.tools))
    save_dependencies(paths["dependencies"], corpus.dependencies)
    write_jsonl(paths["documents"], (document_record_to_record(d) for d in corpus.documents))
    write_jsonl(paths["queries"], (query_record_to_record(q) for q in corpus.queries))
    return paths
