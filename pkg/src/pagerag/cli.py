"""Command-line interface: one binary, one subcommand per pipeline stage.

Settings resolve with CLI flags > config file (INI) > environment endpoint
variables > defaults. Exit codes: 0 for a fully clean run, 3 for a run that
completed with degraded questions, 1 for failures.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .answer import answer_question, load_predictions, save_predictions
from .backends import BackendConfig, RetryPolicy, make_letter_chooser, make_reranker
from .chunking import build_chunk_store, build_chunks, save_chunks
from .corpus import load_corpus, load_questions
from .errors import PageRagError
from .evaluation import (
    REPORT_KS,
    RunSummary,
    format_report,
    recall_curve,
    report_csv,
    score,
)
from .mining import category_counts, export_pairs, mine_pairs
from .pipeline import PipelineConfig, RagPipeline, run
from .rerank import rerank_candidates, select_evidence
from .retrieval import load_candidates, save_candidates

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_DEGRADED = 3

_ENDPOINT_ENV = {
    "embed": "PAGERAG_EMBED_ENDPOINT",
    "rerank": "PAGERAG_RERANK_ENDPOINT",
    "generate": "PAGERAG_GENERATE_ENDPOINT",
}


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI config file; CLI flags override it")
    chunk = parser.add_argument_group("chunking")
    chunk.add_argument("--max-tokens", type=int)
    chunk.add_argument("--overlap-tokens", type=int)
    chunk.add_argument("--prefix-tokens", type=int)
    retrieval = parser.add_argument_group("retrieval")
    retrieval.add_argument("--top-k", type=int)
    retrieval.add_argument("--fusion", choices=["dense_only", "rrf"])
    retrieval.add_argument("--rrf-k", type=float)
    retrieval.add_argument("--bm25-k1", type=float)
    retrieval.add_argument("--bm25-b", type=float)
    retrieval.add_argument("--domain-mask", action="store_true", default=None)
    rerank = parser.add_argument_group("reranking")
    rerank.add_argument("--keep-m", type=int)
    rerank.add_argument("--adaptive", action="store_true", default=None)
    rerank.add_argument("--t-hi", type=float)
    rerank.add_argument("--t-lo", type=float)
    rerank.add_argument("--no-rerank", action="store_true", default=None,
                        help="pass retrieval order straight to the answerer")
    backend = parser.add_argument_group("backends")
    for stage in ("embed", "rerank", "generate"):
        backend.add_argument(f"--{stage}-endpoint")
        backend.add_argument(f"--{stage}-model")
    parser.add_argument("--concurrency", type=int)
    parser.add_argument("--cache-dir")
    parser.add_argument("--seed", type=int)


def _ini_section(parser: configparser.ConfigParser, name: str) -> dict:
    return dict(parser[name]) if parser.has_section(name) else {}


def _coerce(raw: dict, spec: dict[str, type]) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in spec:
            raise PageRagError(f"unknown config key {key!r}")
        kind = spec[key]
        if kind is bool:
            out[key] = value.strip().lower() in ("1", "true", "yes", "on")
        else:
            out[key] = kind(value)
    return out


def _backend_from_ini(raw: dict, fallback: BackendConfig) -> BackendConfig:
    fields = _coerce(
        raw,
        {
            "endpoint_url": str,
            "model_name": str,
            "timeout": float,
            "max_in_flight": int,
            "max_batch": int,
            "retry_attempts": int,
            "retry_backoff": float,
        },
    )
    retry = RetryPolicy(
        attempts=fields.pop("retry_attempts", fallback.retry.attempts),
        backoff=fields.pop("retry_backoff", fallback.retry.backoff),
    )
    return replace(fallback, retry=retry, **fields)


def load_config_file(path: str | Path) -> PipelineConfig:
    """Read an INI config file into a PipelineConfig."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise PageRagError(f"config file {path} not found")
    base = PipelineConfig()
    chunk = replace(
        base.chunk,
        **_coerce(
            _ini_section(parser, "chunk"),
            {"max_tokens": int, "overlap_tokens": int, "prefix_tokens": int},
        ),
    )
    retrieval = replace(
        base.retrieval,
        **_coerce(
            _ini_section(parser, "retrieval"),
            {
                "top_k": int,
                "fusion": str,
                "rrf_k": float,
                "bm25_k1": float,
                "bm25_b": float,
                "domain_mask": bool,
            },
        ),
    )
    rerank = replace(
        base.rerank,
        **_coerce(
            _ini_section(parser, "rerank"),
            {"keep_m": int, "adaptive": bool, "t_hi": float, "t_lo": float, "enabled": bool},
        ),
    )
    pipeline_fields = _coerce(
        _ini_section(parser, "pipeline"),
        {"concurrency_limit": int, "cache_dir": str, "seed": int},
    )
    return replace(
        PipelineConfig(chunk=chunk, retrieval=retrieval, rerank=rerank, **pipeline_fields),
        embed_backend=_backend_from_ini(_ini_section(parser, "backend.embed"), base.embed_backend),
        rerank_backend=_backend_from_ini(_ini_section(parser, "backend.rerank"), base.rerank_backend),
        generate_backend=_backend_from_ini(
            _ini_section(parser, "backend.generate"), base.generate_backend
        ),
    )


def build_config(args: argparse.Namespace) -> PipelineConfig:
    """Resolve the effective PipelineConfig from flags, file, and environment."""
    cfg = load_config_file(args.config) if args.config else PipelineConfig()

    def override(obj, **updates):
        actual = {k: v for k, v in updates.items() if v is not None}
        return replace(obj, **actual) if actual else obj

    chunk = override(
        cfg.chunk,
        max_tokens=args.max_tokens,
        overlap_tokens=args.overlap_tokens,
        prefix_tokens=args.prefix_tokens,
    )
    retrieval = override(
        cfg.retrieval,
        top_k=args.top_k,
        fusion=args.fusion,
        rrf_k=args.rrf_k,
        bm25_k1=args.bm25_k1,
        bm25_b=args.bm25_b,
        domain_mask=args.domain_mask,
    )
    rerank = override(
        cfg.rerank,
        keep_m=args.keep_m,
        adaptive=args.adaptive,
        t_hi=args.t_hi,
        t_lo=args.t_lo,
        enabled=False if args.no_rerank else None,
    )

    backends = {}
    for stage, current in (
        ("embed", cfg.embed_backend),
        ("rerank", cfg.rerank_backend),
        ("generate", cfg.generate_backend),
    ):
        endpoint = getattr(args, f"{stage}_endpoint") or os.environ.get(_ENDPOINT_ENV[stage])
        backends[stage] = override(
            current,
            endpoint_url=endpoint,
            model_name=getattr(args, f"{stage}_model"),
        )

    return replace(
        override(
            cfg,
            concurrency_limit=args.concurrency,
            cache_dir=args.cache_dir,
            seed=args.seed,
        ),
        chunk=chunk,
        retrieval=retrieval,
        rerank=rerank,
        embed_backend=backends["embed"],
        rerank_backend=backends["rerank"],
        generate_backend=backends["generate"],
    )


# --------------------------------------------------------------------------
# Subcommands


def _cmd_chunk(args) -> int:
    cfg = build_config(args)
    documents = load_corpus(args.corpus)
    chunks = []
    for doc in documents:
        chunks.extend(build_chunks(doc, cfg.chunk))
    save_chunks(chunks, args.out)
    print(f"wrote {len(chunks)} chunks from {len(documents)} documents to {args.out}")
    return EXIT_OK


def _cmd_index(args) -> int:
    cfg = build_config(args)
    documents = load_corpus(args.corpus)
    pipeline = RagPipeline(config=cfg).fit(documents)
    pipeline.index_.save(args.out, extra_header=pipeline._cache_meta(cfg))
    print(f"indexed {len(pipeline.index_)} chunks at dimension "
          f"{pipeline.index_.dimension} to {args.out}")
    return EXIT_OK


def _fit_pipeline(args, cfg: PipelineConfig) -> RagPipeline:
    documents = load_corpus(args.corpus)
    return RagPipeline(config=cfg).fit(documents)


def _cmd_retrieve(args) -> int:
    cfg = build_config(args)
    pipeline = _fit_pipeline(args, cfg)
    questions = load_questions(args.questions)
    results = {q.qid: pipeline.retrieve(q) for q in questions}
    save_candidates(results, args.out)
    print(f"retrieved top-{cfg.retrieval.top_k} candidates for {len(questions)} questions")
    return EXIT_OK


def _cmd_rerank(args) -> int:
    cfg = build_config(args)
    documents = load_corpus(args.corpus)
    questions = load_questions(args.questions)
    chunks = []
    for doc in documents:
        chunks.extend(build_chunks(doc, cfg.chunk))
    store = build_chunk_store(chunks)
    scorer = make_reranker(cfg.rerank_backend)
    candidates = load_candidates(args.candidates)
    results = {}
    for q in questions:
        results[q.qid] = rerank_candidates(q, candidates[q.qid], store, scorer)
    save_candidates(results, args.out)
    print(f"reranked candidates for {len(questions)} questions")
    return EXIT_OK


def _cmd_answer(args) -> int:
    cfg = build_config(args)
    documents = load_corpus(args.corpus)
    questions = load_questions(args.questions)
    chunks = []
    for doc in documents:
        chunks.extend(build_chunks(doc, cfg.chunk))
    store = build_chunk_store(chunks)
    chooser = make_letter_chooser(cfg.generate_backend)
    candidates = load_candidates(args.candidates)
    predictions = []
    degraded = 0
    for q in questions:
        evidence = select_evidence(candidates[q.qid], cfg.rerank)
        prediction, was_degraded = answer_question(q, evidence, store, chooser)
        degraded += was_degraded
        predictions.append(prediction)
    save_predictions(predictions, args.out)
    print(f"answered {len(predictions)} questions ({degraded} degraded)")
    return EXIT_DEGRADED if degraded else EXIT_OK


def _cmd_run(args) -> int:
    cfg = build_config(args)
    documents = load_corpus(args.corpus)
    questions = load_questions(args.questions)
    predictions, manifest = run(documents, questions, cfg)
    save_predictions(predictions, args.out)
    if args.manifest:
        Path(args.manifest).write_text(manifest.to_json() + "\n", encoding="utf-8")
    print(f"answered {manifest.question_count} questions over {manifest.chunk_count} chunks "
          f"({manifest.degraded_count} degraded)")
    return EXIT_DEGRADED if manifest.degraded_count else EXIT_OK


def _cmd_score(args) -> int:
    cfg = build_config(args)
    documents = load_corpus(args.corpus)
    gold = load_questions(args.gold, documents)
    predictions = load_predictions(args.predictions)
    breakdown = score(predictions, gold, documents)
    recall = None
    if args.candidates:
        chunks = []
        for doc in documents:
            chunks.extend(build_chunks(doc, cfg.chunk))
        store = build_chunk_store(chunks)
        recall = recall_curve(load_candidates(args.candidates), gold, store, REPORT_KS)
    summary = RunSummary(name=args.name, breakdown=breakdown, recall=recall)
    print(format_report([summary]))
    if args.json_out:
        Path(args.json_out).write_text(summary.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def _cmd_mine(args) -> int:
    cfg = build_config(args)
    pipeline = _fit_pipeline(args, cfg)
    questions = load_questions(args.questions)
    reranked = {}
    for q in questions:
        candidates = pipeline.retrieve(q)
        reranked[q.qid] = pipeline.rerank(q, candidates)
    pairs, skipped = mine_pairs(questions, reranked, pipeline.store_, args.per_category_cap)
    written = export_pairs(pairs, pipeline.store_, args.out)
    counts = category_counts(pairs)
    print(f"wrote {written} training pairs ({skipped} skipped)")
    for category, count in sorted(counts.items()):
        print(f"  negatives[{category}] = {count}")
    return EXIT_OK


def _cmd_report(args) -> int:
    runs = [RunSummary.from_json(Path(p).read_text(encoding="utf-8")) for p in args.run]
    if args.format == "csv":
        print(report_csv(runs), end="")
    else:
        print(format_report(runs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pagerag",
        description="Grounded multiple-choice QA over paginated document collections.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        _add_common_flags(p)
        return p

    p = add("chunk", _cmd_chunk, "chunk a corpus into contextual windows")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = add("index", _cmd_index, "embed chunks and write the index cache file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)

    p = add("retrieve", _cmd_retrieve, "first-stage candidates per question")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)

    p = add("rerank", _cmd_rerank, "rescore retrieved candidates")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)

    p = add("answer", _cmd_answer, "select letters and localize evidence")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--out", required=True)

    p = add("run", _cmd_run, "full pipeline: corpus + questions -> predictions")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")

    p = add("score", _cmd_score, "score predictions against gold labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--candidates", help="ranked lists for recall diagnostics")
    p.add_argument("--name", default="run")
    p.add_argument("--json-out")

    p = add("mine", _cmd_mine, "mine hard-negative training pairs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-category-cap", type=int, default=3)

    p = add("report", _cmd_report, "tabulate one or more scored runs")
    p.add_argument("--run", nargs="+", required=True)
    p.add_argument("--format", choices=["text", "csv"], default="text")

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PageRagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
