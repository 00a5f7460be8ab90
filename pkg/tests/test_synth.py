"""Synthetic corpus generation: determinism, planted-match exactness,
distractor typing, and the buried-tool retrieval split."""

import pytest

from toolweave.errors import InfeasibleSpec
from toolweave.extraction import (
    ExtractionConfig,
    heuristic_match_oracle,
    load_dependencies,
    run_extraction,
)
from toolweave.gateway import Gateway, Mode
from toolweave.graph import PprConfig, extract_subgraph, personalized_pagerank, tool_node_id, uniform_seeds
from toolweave.retrieval import EntryKind, build_store, embed, top_k
from toolweave.schemas import (
    compatible_types,
    load_documents,
    load_query_set,
    load_tools,
)
from toolweave.synth import (
    BuriedScenario,
    CorpusSpec,
    GeneratedCorpus,
    _assemble_fused_graph,
    corpus_spec_from_mapping,
    generate_corpus,
    write_corpus,
)

# Small but complete: one buried query, two plain ones.
SMALL = CorpusSpec(
    n_tools=20,
    n_planted_dependencies=18,
    n_docs=6,
    n_queries=3,
    n_buried_queries=1,
    retrieval_k=8,
    ppr_top_n=20,
    rng_seed=11,
)


@pytest.fixture(scope="module")
def small_corpus():
    return generate_corpus(SMALL)


@pytest.fixture(scope="module")
def default_corpus():
    return generate_corpus(CorpusSpec())


class TestSpecValidation:
    def test_negative_count_rejected(self):
        with pytest.raises(InfeasibleSpec):
            CorpusSpec(n_docs=-1)

    def test_plant_cap(self):
        with pytest.raises(InfeasibleSpec):
            CorpusSpec(n_tools=3, n_planted_dependencies=7)

    def test_rate_range(self):
        with pytest.raises(InfeasibleSpec):
            CorpusSpec(distractor_field_rate=1.5)

    def test_buried_required(self):
        with pytest.raises(InfeasibleSpec):
            CorpusSpec(n_buried_queries=0)

    def test_more_buried_than_queries(self):
        with pytest.raises(InfeasibleSpec):
            CorpusSpec(n_queries=2, n_buried_queries=3)

    def test_too_few_tools_for_scenario(self):
        with pytest.raises(InfeasibleSpec):
            generate_corpus(CorpusSpec(n_tools=5, n_planted_dependencies=18))

    def test_too_few_plants_for_scenario(self):
        with pytest.raises(InfeasibleSpec):
            generate_corpus(
                CorpusSpec(n_tools=30, n_planted_dependencies=5, retrieval_k=8)
            )

    def test_mapping_round_trip(self):
        spec = corpus_spec_from_mapping({"n_tools": 25, "rng_seed": 3})
        assert spec.n_tools == 25
        assert spec.rng_seed == 3

    def test_mapping_unknown_field(self):
        with pytest.raises(InfeasibleSpec):
            corpus_spec_from_mapping({"n_toolz": 25})


class TestDeterminism:
    def test_same_seed_same_corpus(self, small_corpus):
        again = generate_corpus(SMALL)
        assert again == small_corpus

    def test_different_seed_different_corpus(self, small_corpus):
        other = generate_corpus(
            CorpusSpec(**{**SMALL.__dict__, "rng_seed": SMALL.rng_seed + 1})
        )
        assert other != small_corpus


class TestCorpusShape:
    def test_counts(self, small_corpus):
        assert len(small_corpus.tools) == SMALL.n_tools
        assert len(small_corpus.dependencies) == SMALL.n_planted_dependencies
        assert len(small_corpus.documents) == SMALL.n_docs
        assert len(small_corpus.queries) == SMALL.n_queries
        assert len(small_corpus.buried) == SMALL.n_buried_queries

    def test_plants_are_exact_matches(self, small_corpus):
        index = {t.tool_id: t for t in small_corpus.tools}
        for dep in small_corpus.dependencies:
            out_field = index[dep.source_tool].payload_field(dep.output_field)
            in_arg = index[dep.target_tool].argument(dep.input_argument)
            assert out_field is not None and in_arg is not None
            assert out_field.name == in_arg.name
            assert compatible_types(out_field.type_tag, in_arg.type_tag)

    def test_distractors_clash_on_type(self, small_corpus):
        index = {t.tool_id: t for t in small_corpus.tools}
        clashes = 0
        for src in small_corpus.tools:
            for out_field in src.output_payload:
                if not out_field.name.startswith("clash_"):
                    continue
                for dst in small_corpus.tools:
                    in_arg = dst.argument(out_field.name)
                    if in_arg is None or dst.tool_id == src.tool_id:
                        continue
                    clashes += 1
                    assert not compatible_types(out_field.type_tag, in_arg.type_tag)
        assert clashes == round(
            SMALL.distractor_field_rate * SMALL.n_planted_dependencies
        )

    def test_doc_mention_rate(self, small_corpus):
        mentioning = [d for d in small_corpus.documents if d.referenced_tools]
        assert len(mentioning) == round(SMALL.doc_tool_mention_rate * SMALL.n_docs)
        index = {t.tool_id: t for t in small_corpus.tools}
        for doc in mentioning:
            for tool_id in doc.referenced_tools:
                name = index[tool_id].name
                assert name.title() in doc.body

    def test_gold_plans_resolve(self, small_corpus):
        known = {t.tool_id for t in small_corpus.tools}
        for query in small_corpus.queries:
            assert query.gold_plan is not None
            for step in query.gold_plan.steps:
                assert step.tool_id in known
            for src, dst in query.gold_plan.gold_dependencies:
                assert (src, dst) in small_corpus.gold_pairs()


class TestOracleEquality:
    def test_oracle_recovers_exactly_the_plants(self, small_corpus):
        planted = {
            (d.source_tool, d.target_tool, d.output_field, d.input_argument)
            for d in small_corpus.dependencies
        }
        found = set()
        for src in small_corpus.tools:
            for dst in small_corpus.tools:
                if src.tool_id == dst.tool_id:
                    continue
                for c in heuristic_match_oracle((src, dst)):
                    found.add((c.source_tool, c.target_tool, c.output_field, c.input_argument))
        assert found == planted

    def test_stub_extraction_perfect_scores(self, small_corpus):
        deps, stats = run_extraction(
            list(small_corpus.tools), ExtractionConfig(), Gateway(Mode.STUB)
        )
        extracted = {
            (d.source_tool, d.target_tool, d.output_field, d.input_argument)
            for d in deps
        }
        planted = {
            (d.source_tool, d.target_tool, d.output_field, d.input_argument)
            for d in small_corpus.dependencies
        }
        assert extracted == planted
        assert stats.rejects == 0


class TestBuriedScenario:
    def test_embedding_misses_ppr_recovers(self, small_corpus):
        graph = _assemble_fused_graph(small_corpus)
        gateway = Gateway(Mode.STUB)
        store = build_store(graph, gateway)
        queries = {q.query_id: q for q in small_corpus.queries}
        for scenario in small_corpus.buried:
            query_vector = embed(queries[scenario.query_id].text, gateway)
            hits = top_k(store, query_vector, SMALL.retrieval_k, kind_filter=EntryKind.TRIPLET)
            buried_node = tool_node_id(scenario.buried_tool_id)
            seeds = set()
            for entry_id, _ in hits:
                meta = store.entries[entry_id].meta
                seeds.update((meta["src"], meta["dst"]))
            assert buried_node not in seeds
            assert tool_node_id(scenario.anchor_tool_id) in seeds
            result = personalized_pagerank(graph, uniform_seeds(sorted(seeds)), PprConfig())
            subgraph = extract_subgraph(graph, result.scores, SMALL.ppr_top_n, sorted(seeds))
            assert buried_node in subgraph.nodes

    def test_buried_tool_absent_from_query_and_docs(self, small_corpus):
        for scenario in small_corpus.buried:
            queries = {q.query_id: q for q in small_corpus.queries}
            text = queries[scenario.query_id].text.lower()
            assert scenario.buried_tool_id.replace("_", " ") not in text
            for doc in small_corpus.documents:
                assert scenario.buried_tool_id not in doc.referenced_tools

    def test_buried_edge_is_planted(self, small_corpus):
        for scenario in small_corpus.buried:
            assert (scenario.anchor_tool_id, scenario.buried_tool_id) in small_corpus.gold_pairs()
            assert (scenario.feeder_tool_id, scenario.anchor_tool_id) in small_corpus.gold_pairs()

    def test_default_spec_scenario_holds(self, default_corpus):
        assert len(default_corpus.buried) == 1
        assert len(default_corpus.tools) == 50


class TestCorpusFiles:
    def test_round_trip_through_loaders(self, small_corpus, tmp_path):
        paths = write_corpus(small_corpus, tmp_path)
        assert load_tools(paths["tools"]) == list(small_corpus.tools)
        assert load_dependencies(paths["dependencies"]) == list(small_corpus.dependencies)
        assert load_documents(paths["documents"]) == list(small_corpus.documents)
        assert load_query_set(paths["queries"], level=None) == list(small_corpus.queries)

    def test_byte_stable(self, small_corpus, tmp_path):
        first = write_corpus(small_corpus, tmp_path / "a")
        second = write_corpus(generate_corpus(SMALL), tmp_path / "b")
        for key in first:
            assert first[key].read_bytes() == second[key].read_bytes()

    def test_level_filter_splits_plain_from_buried(self, small_corpus, tmp_path):
        paths = write_corpus(small_corpus, tmp_path)
        g3 = load_query_set(paths["queries"], level="G3")
        assert {q.query_id for q in g3} == {s.query_id for s in small_corpus.buried}
