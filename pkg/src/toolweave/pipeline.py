"""Stage functions behind the CLI subcommands, plus the full chain.

Every stage reads its inputs from the configured paths, writes its outputs
canonically, and returns a flat summary dict. Re-running any stage on
unchanged inputs in stub or replay mode rewrites byte-identical files.
"""

from __future__ import annotations

import dataclasses
import logging
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .config import PipelineConfig
from .errors import (
    EmptySeeds,
    GenerationRejected,
    InvalidSeedMass,
    ValidationFailure,
)
from .evaluation import (
    evaluate_plans,
    run_ablation,
    save_ablation_report,
    save_plan_report,
)
from .extraction import load_dependencies, run_extraction, save_dependencies
from .gateway import Gateway, GatewayConfig, Mode, load_fixtures
from .graph import (
    FusedGraph,
    Relation,
    build_tool_graph,
    extract_subgraph,
    fuse,
    ingest_document_graph,
    load_graph,
    personalized_pagerank,
    save_graph,
    uniform_seeds,
)
from .planning import (
    PlanArtifact,
    assemble_context,
    generate_plan,
    load_artifacts,
    save_artifacts,
    store_artifact,
)
from .retrieval import (
    EntryKind,
    VectorStore,
    build_store,
    embed,
    load_store,
    save_store,
    top_k,
)
from .schemas import (
    QueryRecord,
    canonical_json,
    drop_invalid_gold_plans,
    load_documents,
    load_query_set,
    load_tools,
    tool_index,
)

logger = logging.getLogger(__name__)

Summary = dict[str, Any]


def build_gateway(config: PipelineConfig) -> Gateway:
    gateway_config = GatewayConfig(
        endpoint=config.gateway.endpoint,
        model=config.gateway.model,
        timeout=config.gateway.timeout,
        max_attempts=config.gateway.max_attempts,
        backoff_base=config.gateway.backoff_base,
        requests_per_second=config.gateway.requests_per_second,
        embed_dims=config.gateway.embed_dims,
    )
    mode = Mode(config.mode)
    fixtures = None
    if mode is Mode.REPLAY:
        fixtures = load_fixtures(config.require_path("fixtures"))
    return Gateway(mode, config=gateway_config, fixtures=fixtures)


def derived_path(path: Path, tag: str) -> Path:
    """graph.jsonl -> graph.<tag>.jsonl; intermediate files share the stem."""
    return path.with_name(f"{path.stem}.{tag}{path.suffix}")


def _reports_dir(config: PipelineConfig) -> Path:
    out = config.require_path("reports", must_exist=False)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- ingest and graph stages --------------------------------------------------


def stage_ingest_tools(config: PipelineConfig) -> Summary:
    tools = load_tools(config.require_path("tools"))
    return {"stage": "ingest-tools", "tools": len(tools)}


def stage_extract_deps(config: PipelineConfig, gateway: Gateway) -> Summary:
    tools = load_tools(config.require_path("tools"))
    out = config.require_path("dependencies", must_exist=False)
    deps, stats = run_extraction(tools, config.extraction.to_extraction_config(), gateway)
    save_dependencies(out, deps)
    summary: Summary = {"stage": "extract-deps", "tools": len(tools), "out": str(out)}
    summary.update(stats.as_dict())
    summary["pair_failures"] = len(stats.pair_failures)
    return summary


def stage_build_graph(config: PipelineConfig) -> Summary:
    tools = load_tools(config.require_path("tools"))
    deps = load_dependencies(config.require_path("dependencies"))
    graph = build_tool_graph(tools, deps)
    out = derived_path(config.require_path("graph", must_exist=False), "tools")
    save_graph(out, graph)
    return {
        "stage": "build-graph",
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "out": str(out),
    }


def stage_ingest_docs(config: PipelineConfig) -> Summary:
    docs = load_documents(config.require_path("docs"))
    graph = ingest_document_graph(docs)
    out = derived_path(config.require_path("graph", must_exist=False), "docs")
    save_graph(out, graph)
    return {
        "stage": "ingest-docs",
        "docs": len(docs),
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "out": str(out),
    }


def stage_fuse(config: PipelineConfig) -> Summary:
    fused_path = config.require_path("graph", must_exist=False)
    tool_graph = load_graph(derived_path(fused_path, "tools"))
    doc_graph = load_graph(derived_path(fused_path, "docs"))
    graph = fuse(tool_graph, doc_graph)
    save_graph(fused_path, graph)
    mentions = len(graph.edges_with_relation(Relation.MENTIONS_TOOL))
    return {
        "stage": "fuse",
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "mentions": mentions,
        "out": str(fused_path),
    }


def stage_index(config: PipelineConfig, gateway: Gateway) -> Summary:
    graph = load_graph(config.require_path("graph"))
    store = build_store(graph, gateway)
    out = config.require_path("store", must_exist=False)
    save_store(out, store)
    kinds = {kind: 0 for kind in EntryKind}
    for entry in store.entries.values():
        kinds[entry.kind] += 1
    return {
        "stage": "index",
        "entries": len(store),
        "triplets": kinds[EntryKind.TRIPLET],
        "passages": kinds[EntryKind.PASSAGE],
        "dims": store.dims,
        "out": str(out),
    }


# --- ppr ----------------------------------------------------------------------


def parse_seed_spec(raw: str) -> dict[str, float]:
    """Parse "node:mass,node:mass" CLI seed syntax."""
    seeds: dict[str, float] = {}
    if not raw.strip():
        raise EmptySeeds("no seeds given")
    for part in raw.split(","):
        node, sep, mass = part.strip().rpartition(":")
        if not sep or not node:
            raise InvalidSeedMass(f"seed {part!r} is not node:mass")
        try:
            seeds[node] = float(mass)
        except ValueError:
            raise InvalidSeedMass(f"seed mass {mass!r} is not a number")
    return seeds


def stage_ppr(
    config: PipelineConfig, seeds: Mapping[str, float], out: Path | None = None
) -> Summary:
    graph = load_graph(config.require_path("graph"))
    result = personalized_pagerank(graph, seeds, config.ppr.to_ppr_config())
    ranked = sorted(result.scores.items(), key=lambda kv: (-kv[1], kv[0]))
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            for node_id, score in ranked:
                fh.write(canonical_json({"id": node_id, "score": score}))
                fh.write("\n")
    top_id, top_score = ranked[0]
    summary: Summary = {
        "stage": "ppr",
        "nodes": len(result.scores),
        "converged": result.converged,
        "iterations": result.iterations,
        "top": f"{top_id}:{top_score:.6f}",
    }
    if out is not None:
        summary["out"] = str(out)
    return summary


# --- generation ---------------------------------------------------------------


def _load_queries(config: PipelineConfig) -> list[QueryRecord]:
    block = config.generation
    return load_query_set(
        config.require_path("queries"),
        block.query_level or None,
        block.sample_n or None,
        block.sample_seed,
    )


def _retrieved_context(
    config: PipelineConfig,
    graph: FusedGraph,
    store: VectorStore,
    gateway: Gateway,
    query: QueryRecord,
) -> tuple[FusedGraph, dict[str, float] | None, dict[tuple[str, str], float] | None, list[tuple[str, str, float]]]:
    """Dense retrieval for one query, then either PPR expansion or the raw
    retrieved edges, mirroring the two ablation arms."""
    query_vector = embed(query.text, gateway)
    triplet_hits = top_k(
        store, query_vector, config.retrieval.k_triplets, kind_filter=EntryKind.TRIPLET
    )
    passages: list[tuple[str, str, float]] = []
    if config.retrieval.k_passages and any(
        e.kind is EntryKind.PASSAGE for e in store.entries.values()
    ):
        for entry_id, score in top_k(
            store, query_vector, config.retrieval.k_passages, kind_filter=EntryKind.PASSAGE
        ):
            passages.append((entry_id, str(store.entries[entry_id].meta["text"]), score))

    edges = []
    edge_scores: dict[tuple[str, str], float] = {}
    for entry_id, score in triplet_hits:
        meta = store.entries[entry_id].meta
        for edge in graph.out_edges(meta["src"]):
            if edge.dst == meta["dst"] and edge.relation is Relation.CAN_USE:
                edges.append(edge)
                edge_scores[(edge.src, edge.dst)] = score
                break

    if not config.ppr.enabled:
        nodes = {nid: graph.node(nid) for e in edges for nid in (e.src, e.dst)}
        context = FusedGraph(nodes=list(nodes.values()), edges=edges)
        return context, None, edge_scores, passages

    seeds = sorted({nid for e in edges for nid in (e.src, e.dst)})
    result = personalized_pagerank(graph, uniform_seeds(seeds), config.ppr.to_ppr_config())
    subgraph = extract_subgraph(graph, result.scores, config.ppr.top_n, seeds)
    return subgraph, result.scores, None, passages


def stage_generate(
    config: PipelineConfig,
    gateway: Gateway,
    artifacts_path: Path | None = None,
    persist_store: bool = True,
) -> Summary:
    tools = load_tools(config.require_path("tools"))
    index = tool_index(tools)
    graph = load_graph(config.require_path("graph"))
    store_path = config.require_path("store")
    store = load_store(store_path)
    # Idempotency: prior artifact embeddings are rebuilt from scratch.
    store.remove_kind(EntryKind.ARTIFACT)

    queries, dropped = drop_invalid_gold_plans(_load_queries(config), set(index))
    out = artifacts_path or config.require_path("artifacts", must_exist=False)

    artifacts: list[PlanArtifact] = []
    failures = 0
    for query in queries:
        try:
            context, node_scores, edge_scores, passages = _retrieved_context(
                config, graph, store, gateway, query
            )
            bundle = assemble_context(
                query,
                context,
                passages,
                config.generation.token_budget,
                node_scores=node_scores,
                edge_scores=edge_scores,
            )
            artifact = generate_plan(
                bundle,
                gateway,
                index,
                graph=graph if config.generation.strict else None,
                strict=config.generation.strict,
                max_attempts=config.generation.max_attempts,
            )
        except (GenerationRejected, ValidationFailure) as exc:
            failures += 1
            logger.warning("query %s: generation failed: %s", query.query_id, exc)
            continue
        artifact_id = store_artifact(store, artifact, gateway)
        artifacts.append(dataclasses.replace(artifact, artifact_id=artifact_id))

    save_artifacts(out, artifacts)
    if persist_store:
        save_store(store_path, store)
    return {
        "stage": "generate",
        "queries": len(queries),
        "dropped_gold": dropped,
        "artifacts": len(artifacts),
        "failures": failures,
        "out": str(out),
    }


# --- evaluation ---------------------------------------------------------------


def stage_evaluate(config: PipelineConfig, gateway: Gateway) -> Summary:
    queries = _load_queries(config)
    artifacts = load_artifacts(config.require_path("artifacts"))
    report = evaluate_plans(queries, artifacts, gateway)
    out = _reports_dir(config) / "evaluation.jsonl"
    save_plan_report(out, report)
    return {
        "stage": "evaluate",
        "queries": report.n_queries,
        "accuracy": round(report.binary_match_accuracy, 4),
        "mean_judge": round(report.mean_judge_score, 4),
        "out": str(out),
    }


def stage_ablate(config: PipelineConfig, gateway: Gateway) -> Summary:
    """Generate with both retrieval arms, then compare binary-match accuracy.

    Neither arm persists its store mutations; the artifact files land next
    to the configured artifacts path with .with_ppr/.no_ppr tags.
    """
    artifacts_path = config.require_path("artifacts", must_exist=False)
    arms = {}
    for tag, enabled in (("with_ppr", True), ("no_ppr", False)):
        arm_config = dataclasses.replace(
            config, ppr=dataclasses.replace(config.ppr, enabled=enabled)
        )
        arm_path = derived_path(artifacts_path, tag)
        stage_generate(arm_config, gateway, artifacts_path=arm_path, persist_store=False)
        arms[tag] = load_artifacts(arm_path)

    queries = _load_queries(config)
    report = run_ablation(queries, arms["with_ppr"], arms["no_ppr"], gateway)
    out = _reports_dir(config) / "ablation.jsonl"
    save_ablation_report(out, report)
    return {
        "stage": "ablate",
        "with_ppr": round(report.with_ppr.binary_match_accuracy, 4),
        "no_ppr": round(report.without_ppr.binary_match_accuracy, 4),
        "delta": round(report.delta, 4),
        "won": len(report.queries_won),
        "lost": len(report.queries_lost),
        "out": str(out),
    }


# --- the chain ----------------------------------------------------------------


def run_pipeline(config: PipelineConfig, gateway: Gateway | None = None) -> list[Summary]:
    """All stages in dependency order over one shared gateway."""
    gateway = gateway or build_gateway(config)
    summaries = [
        stage_ingest_tools(config),
        stage_extract_deps(config, gateway),
        stage_build_graph(config),
        stage_ingest_docs(config),
        stage_fuse(config),
        stage_index(config, gateway),
        stage_generate(config, gateway),
        stage_evaluate(config, gateway),
        stage_ablate(config, gateway),
    ]
    summaries.append({"stage": "pipeline", "stages": len(summaries)})
    return summaries
