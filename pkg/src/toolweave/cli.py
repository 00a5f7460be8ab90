"""Single executable: pipeline stages as subcommands over a shared config.

Every command prints one machine-readable summary line,
`status=<ok|fail> stage=<name> key=value ...`, and exits 0 on success,
1 on validation errors, 2 on gateway or IO failures. Flags compose over
the config file with flags winning.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

from .config import (
    PipelineConfig,
    load_pipeline_config,
    read_toml,
    with_overrides,
)
from .errors import (
    GatewayFailure,
    ToolweaveError,
    UnknownSubcommand,
    ValidationFailure,
)
from .pipeline import (
    build_gateway,
    parse_seed_spec,
    run_pipeline,
    stage_ablate,
    stage_build_graph,
    stage_evaluate,
    stage_extract_deps,
    stage_fuse,
    stage_generate,
    stage_index,
    stage_ingest_docs,
    stage_ingest_tools,
    stage_ppr,
)
from .synth import corpus_spec_from_mapping, generate_corpus, write_corpus

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_GATEWAY = 2

SUBCOMMANDS = (
    "ingest-tools",
    "extract-deps",
    "build-graph",
    "ingest-docs",
    "fuse",
    "index",
    "ppr",
    "generate",
    "evaluate",
    "ablate",
    "pipeline",
    "synth",
)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    text = str(value)
    if " " in text or not text:
        escaped = text.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    return text


def format_summary(status: str, summary: Mapping[str, Any]) -> str:
    parts = [f"status={status}", f"stage={summary.get('stage', '?')}"]
    for key, value in summary.items():
        if key != "stage":
            parts.append(f"{key}={_format_value(value)}")
    return " ".join(parts)


def _emit(summary: Mapping[str, Any], out=None) -> None:
    print(format_summary("ok", summary), file=out or sys.stdout)


def _fail(stage: str, exc: Exception, out=None) -> None:
    detail = {"stage": stage, "error": type(exc).__name__, "detail": str(exc)}
    print(format_summary("fail", detail), file=out or sys.stdout)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toolweave",
        description="Tool dependency graphs, PPR retrieval, and plan generation.",
    )
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--mode", choices=["stub", "replay", "live"], help="gateway mode")
        return p

    p = add("ingest-tools", "validate a tool corpus file")
    p.add_argument("--tools", help="tool corpus path")

    p = add("extract-deps", "propose and judge tool dependencies")
    p.add_argument("--tools", help="tool corpus path")
    p.add_argument("--out", help="dependency output path")
    p.add_argument(
        "--blocking", choices=["auto", "all_pairs", "field_overlap"], help="pair enumeration"
    )
    p.add_argument("--max-in-flight", type=int, help="concurrent gateway calls")

    p = add("build-graph", "tool nodes plus accepted dependency edges")
    p.add_argument("--tools", help="tool corpus path")
    p.add_argument("--dependencies", help="dependency file path")
    p.add_argument("--graph", help="graph path (stage writes <stem>.tools)")

    p = add("ingest-docs", "passage and entity nodes from a document corpus")
    p.add_argument("--docs", help="document corpus path")
    p.add_argument("--graph", help="graph path (stage writes <stem>.docs)")

    p = add("fuse", "merge tool and document graphs with lexical links")
    p.add_argument("--graph", help="fused graph output path")

    p = add("index", "embed triplets and passages into the vector store")
    p.add_argument("--graph", help="fused graph path")
    p.add_argument("--store", help="vector store output path")

    p = add("ppr", "personalized pagerank from explicit seeds")
    p.add_argument("--graph", help="fused graph path")
    p.add_argument("--seeds", required=True, help="node:mass[,node:mass...]")
    p.add_argument("--out", help="optional ranked-scores output path")

    p = add("generate", "retrieve context and generate plan artifacts")
    p.add_argument("--tools", help="tool corpus path")
    p.add_argument("--queries", help="query file path")
    p.add_argument("--level", help="query level filter (G1, G2, G3)")
    p.add_argument("--sample", type=int, help="sample size")
    p.add_argument("--seed", type=int, help="sample seed")
    p.add_argument("--artifacts", help="artifact output path")
    p.add_argument("--no-ppr", action="store_true", help="skip graph expansion")
    p.add_argument("--budget", type=int, help="prompt token budget")

    p = add("evaluate", "score artifacts against gold plans")
    p.add_argument("--queries", help="query file path")
    p.add_argument("--artifacts", help="artifact file path")
    p.add_argument("--reports", help="report output directory")

    p = add("ablate", "compare with-PPR and no-PPR retrieval arms")
    p.add_argument("--queries", help="query file path")
    p.add_argument("--reports", help="report output directory")

    p = add("pipeline", "run every stage in order")

    p = add("synth", "generate a synthetic corpus")
    p.add_argument("--spec", help="corpus spec TOML path")
    p.add_argument("--out", required=True, help="output directory")

    return parser


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    config = load_pipeline_config(args.config) if args.config else PipelineConfig()
    overrides: dict[str, Any] = {"mode": args.mode}
    for flag, dotted in (
        ("tools", "paths.tools"),
        ("docs", "paths.docs"),
        ("queries", "paths.queries"),
        ("dependencies", "paths.dependencies"),
        ("graph", "paths.graph"),
        ("store", "paths.store"),
        ("artifacts", "paths.artifacts"),
        ("reports", "paths.reports"),
        ("blocking", "extraction.pair_blocking"),
        ("max_in_flight", "extraction.max_in_flight"),
        ("level", "generation.query_level"),
        ("sample", "generation.sample_n"),
        ("seed", "generation.sample_seed"),
        ("budget", "generation.token_budget"),
    ):
        if hasattr(args, flag):
            overrides[dotted] = getattr(args, flag)
    if getattr(args, "out", None) and args.command == "extract-deps":
        overrides["paths.dependencies"] = args.out
    if getattr(args, "no_ppr", False):
        overrides["ppr.enabled"] = False
    return with_overrides(config, overrides)


def run_subcommand(name: str, args: argparse.Namespace) -> list[dict[str, Any]]:
    """Dispatch one subcommand; returns the summaries it printed."""
    if name == "synth":
        spec = corpus_spec_from_mapping(read_toml(args.spec)) if args.spec else corpus_spec_from_mapping({})
        corpus = generate_corpus(spec)
        paths = write_corpus(corpus, args.out)
        return [
            {
                "stage": "synth",
                "tools": len(corpus.tools),
                "dependencies": len(corpus.dependencies),
                "docs": len(corpus.documents),
                "queries": len(corpus.queries),
                "buried": len(corpus.buried),
                "out": str(Path(args.out)),
            }
        ]

    config = _load_config(args)
    if name == "ingest-tools":
        return [stage_ingest_tools(config)]
    if name == "extract-deps":
        return [stage_extract_deps(config, build_gateway(config))]
    if name == "build-graph":
        return [stage_build_graph(config)]
    if name == "ingest-docs":
        return [stage_ingest_docs(config)]
    if name == "fuse":
        return [stage_fuse(config)]
    if name == "index":
        return [stage_index(config, build_gateway(config))]
    if name == "ppr":
        seeds = parse_seed_spec(args.seeds)
        out = Path(args.out) if args.out else None
        return [stage_ppr(config, seeds, out)]
    if name == "generate":
        return [stage_generate(config, build_gateway(config))]
    if name == "evaluate":
        return [stage_evaluate(config, build_gateway(config))]
    if name == "ablate":
        return [stage_ablate(config, build_gateway(config))]
    if name == "pipeline":
        return run_pipeline(config)
    raise UnknownSubcommand(f"unknown subcommand {name!r}")


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    if argv and not argv[0].startswith("-") and argv[0] not in SUBCOMMANDS:
        _fail(argv[0], UnknownSubcommand(f"unknown subcommand {argv[0]!r}"))
        return EXIT_VALIDATION

    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_VALIDATION

    try:
        summaries = run_subcommand(args.command, args)
    except ValidationFailure as exc:
        _fail(args.command, exc)
        return EXIT_VALIDATION
    except GatewayFailure as exc:
        _fail(args.command, exc)
        return EXIT_GATEWAY
    except OSError as exc:
        _fail(args.command, exc)
        return EXIT_GATEWAY
    for summary in summaries:
        _emit(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
