"""Command line interface.

Exit codes:
    0  success (ask: Answered)
    2  load, validation or dataset error
    3  configuration error
    4  ask: session Cancelled
    5  ask: session Exhausted
    6  chat transport failure or unreachable endpoint
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path
from typing import Sequence

from kgsparql.agent import (
    CLI_SET_IDS,
    DEFAULT_MAX_TURNS,
    Answered,
    Cancelled,
    FunctionSet,
    SessionAborted,
    SessionConfig,
    run_session,
)
from kgsparql.benchmark import DatasetError, EndpointUnreachable, load_dataset, run_benchmark
from kgsparql.catalog import Catalog, CatalogError, DataFormatError, load_catalog, load_item_records
from kgsparql.chat import ChatModel, OpenAIChatModel, ScriptBook, TransportError
from kgsparql.evaluation import ResultCache
from kgsparql.keyword_index import KeywordIndex
from kgsparql.report import ReportError, write_report
from kgsparql.sparql import SparqlClient
from kgsparql.toolbox import Toolbox, ToolboxConfigError, load_resources
from kgsparql.vector_index import (
    EmbeddingError,
    EmbeddingProvider,
    HashingEmbedder,
    HttpEmbeddingProvider,
    build_vector_index,
)

EXIT_OK = 0
EXIT_LOAD = 2
EXIT_CONFIG = 3
EXIT_CANCELLED = 4
EXIT_EXHAUSTED = 5
EXIT_TRANSPORT = 6

log = logging.getLogger("kgsparql")


class ConfigError(RuntimeError):
    pass


def make_provider(catalog: Catalog) -> EmbeddingProvider | None:
    cfg = catalog.embedding
    if cfg is None or cfg.provider == "none":
        return None
    if cfg.provider == "hashing":
        return HashingEmbedder(cfg.dimension)
    if cfg.provider == "http":
        if not cfg.url or not cfg.model:
            raise ConfigError("embedding provider http needs url and model")
        key = os.environ.get(cfg.api_key_env) if cfg.api_key_env else None
        return HttpEmbeddingProvider(cfg.url, cfg.model, key, cfg.dimension)
    raise ConfigError(f"unknown embedding provider {cfg.provider!r}")


class ModelFactory:
    """Builds chat models from ``--model``: a model id, or ``scripted:<file>`` for replayed scripts."""

    def __init__(self, spec: str, chat_url: str | None = None):
        self.spec = spec
        self.book: ScriptBook | None = None
        self.shared: OpenAIChatModel | None = None
        if spec.startswith("scripted:"):
            path = spec.split(":", 1)[1]
            try:
                self.book = ScriptBook.load(path)
            except (OSError, ValueError) as e:
                raise ConfigError(f"cannot load model script {path}: {e}") from None
        else:
            self.shared = OpenAIChatModel(spec, url=chat_url)

    def pair(self, *keys: str) -> tuple[ChatModel, ChatModel]:
        if self.book is not None:
            return self.book.models(*keys)
        assert self.shared is not None
        return self.shared, self.shared


def _catalog(args) -> Catalog:
    try:
        return load_catalog(args.catalog)
    except FileNotFoundError as e:
        raise ConfigError(str(e)) from None
    except CatalogError as e:
        raise ConfigError(f"invalid catalog: {e}") from None


def _session_config(args) -> SessionConfig:
    return SessionConfig(
        function_set=FunctionSet.from_cli(args.fn_set, args.few_shot),
        max_llm_turns=args.max_turns,
        feedback_enabled=args.feedback,
        strict_iri_guard=args.strict_iri_guard,
        seed=args.seed,
        few_shot_kg=getattr(args, "kg", None),
    )


def _toolbox(args, catalog: Catalog) -> Toolbox:
    provider = make_provider(catalog)
    resources = load_resources(catalog, provider)
    return Toolbox(catalog, SparqlClient(timeout=args.timeout), resources, provider, shots=args.shots)


def _restrict(catalog: Catalog, kg: str | None) -> Catalog:
    if kg is None:
        return catalog
    if kg not in catalog:
        raise ConfigError(f"unknown knowledge graph {kg!r}, available: {', '.join(catalog.names())}")
    return Catalog({kg: catalog.lookup(kg)}, catalog.embedding, catalog.path)


def cmd_index_build(args) -> int:
    catalog = _catalog(args)
    if args.kg not in catalog:
        raise ConfigError(f"unknown knowledge graph {args.kg!r}")
    kg = catalog.lookup(args.kg)
    if args.kind == "entity":
        source, out = args.source or kg.entity_data_path, args.out or kg.entity_index_path
    else:
        source, out = args.source or kg.property_data_path, args.out or kg.property_index_path
    if source is None or out is None:
        raise ConfigError(f"graph {args.kg!r}: no {args.kind} source or output path given")
    provider = None
    if args.kind == "property":
        provider = make_provider(catalog)
        if provider is None:
            raise ConfigError("property index needs an embedding provider in the catalog")
    start = time.perf_counter()
    records = load_item_records(source, args.kind, kg.prefix_map)
    if args.kind == "entity":
        KeywordIndex.build(records).save(out)
    else:
        build_vector_index(records, provider).save(out)
    print(f"indexed {len(records)} {args.kind} items into {out} in {time.perf_counter() - start:.2f}s")
    return EXIT_OK


def cmd_ask(args) -> int:
    catalog = _restrict(_catalog(args), args.kg)
    config = _session_config(args)
    toolbox = _toolbox(args, catalog)
    main, feedback = ModelFactory(args.model, args.chat_url).pair(args.question)
    try:
        trace = run_session(args.question, config, catalog, toolbox, main, feedback)
    except SessionAborted as e:
        print(f"chat transport failed: {e}", file=sys.stderr)
        if args.out:
            _write_trace(args.out, e.trace)
        return EXIT_TRANSPORT
    if args.out:
        _write_trace(args.out, trace)
    calls = ", ".join(f"{k}={v}" for k, v in sorted(trace.calls_by_name().items())) or "none"
    print(f"turns: {trace.turns}  function calls: {trace.function_calls}  "
          f"feedback loops: {trace.feedback_loops}  outcome: {trace.outcome.type}")
    print(f"calls: {calls}")
    o = trace.outcome
    query = None
    if isinstance(o, Answered):
        query = (o.kg, o.sparql)
    elif o.best_attempt:
        query = (o.best_attempt["kg"], o.best_attempt["sparql"])
    if isinstance(o, Cancelled):
        print(f"\ncancelled: {o.expl}")
    if query is not None:
        label = "SPARQL" if isinstance(o, Answered) else "best attempt"
        print(f"\n{label} ({query[0]}):\n{query[1]}\n")
        print(toolbox.fn_execute(*query).rendered)
    if isinstance(o, Answered):
        print(f"\nanswer: {o.answer}")
        return EXIT_OK
    return EXIT_CANCELLED if isinstance(o, Cancelled) else EXIT_EXHAUSTED


def _write_trace(out: str, trace) -> None:
    Path(out).mkdir(parents=True, exist_ok=True)
    trace.write_jsonl(Path(out) / "trace.jsonl")


def cmd_bench(args) -> int:
    catalog = _catalog(args)
    samples = load_dataset(args.dataset, args.kg)
    config = _session_config(args)
    toolbox = _toolbox(args, catalog)
    factory = ModelFactory(args.model, args.chat_url)
    out = Path(args.out)
    cache = ResultCache(args.cache_dir) if args.cache_dir else None
    report = run_benchmark(
        samples, config, catalog, toolbox,
        models=lambda s: factory.pair(s.id, s.question),
        out_dir=out, n=args.n, seed=args.seed, parallelism=args.parallelism,
        cache=cache, benchmark=args.benchmark or Path(args.dataset).stem,
        run_config={"dataset": str(args.dataset), "model": args.model},
    )
    d = report.to_dict()
    mean = "n/a" if d["mean_f1"] is None else f"{d['mean_f1']:.4f}"
    counts = "  ".join(f"{k}={v}" for k, v in d["counts"].items())
    print(f"{report.benchmark}: {d['samples']} samples, {d['scored']} scored, mean F1 {mean}")
    print(counts)
    print(f"results written to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    tables = write_report(args.dir, args.out, args.compare)
    for name, text in tables.items():
        print(f"# {name}")
        print(text)
    if args.out:
        print(f"tables and figures written to {args.out}")
    return EXIT_OK


def _session_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--fn-set", default="se", choices=sorted(CLI_SET_IDS), help="function set (default: se)")
    p.add_argument("--feedback", action="store_true", help="enable feedback loops")
    p.add_argument("--few-shot", choices=["similar", "random"], help="inject example pairs")
    p.add_argument("--shots", type=int, default=3, help="number of example pairs (default: 3)")
    p.add_argument("--strict-iri-guard", action="store_true", help="reject unseen IRIs in execute")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-turns", type=int, default=DEFAULT_MAX_TURNS)
    p.add_argument("--model", default=os.environ.get("KGSPARQL_MODEL", "gpt-4.1"),
                   help="chat model id, or scripted:<file> to replay a script")
    p.add_argument("--chat-url", default=None, help="chat-completions base URL (env KGSPARQL_CHAT_URL)")
    p.add_argument("--timeout", type=float, default=None, help="SPARQL timeout in seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kgsparql", description="Question answering over SPARQL endpoints.")
    parser.add_argument("--catalog", default=os.environ.get("KGSPARQL_CATALOG", "catalog.yaml"),
                        help="catalog YAML (env KGSPARQL_CATALOG)")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index-build", help="build an entity or property index")
    p.add_argument("--kg", required=True)
    p.add_argument("--kind", choices=["entity", "property"], required=True)
    p.add_argument("--source", type=Path, help="TSV dump (default: from catalog)")
    p.add_argument("--out", type=Path, help="index file (default: from catalog)")
    p.set_defaults(func=cmd_index_build)

    p = sub.add_parser("ask", help="answer one question")
    p.add_argument("question")
    p.add_argument("--kg", help="restrict the session to one graph")
    p.add_argument("--out", help="directory for the session trace")
    _session_flags(p)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("bench", help="run a benchmark")
    p.add_argument("dataset")
    p.add_argument("--kg", help="graph for records without a kg field")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--benchmark", help="benchmark name (default: dataset file stem)")
    p.add_argument("--cache-dir", help="cache for ground-truth results")
    _session_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("report", help="summarize benchmark runs")
    p.add_argument("dir")
    p.add_argument("--compare", help="second run directory for a delta table")
    p.add_argument("--out", help="directory for TSV tables and PNG figures")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (DataFormatError, DatasetError, ReportError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_LOAD
    except (ConfigError, ToolboxConfigError, EmbeddingError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, EndpointUnreachable) as e:
        print(f"transport error: {e}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
