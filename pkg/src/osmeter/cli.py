"""Command line entry point: ``osmeter <subcommand>``."""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from pathlib import Path

import pandas as pd
import yaml

from osmeter import pipeline
from osmeter.choice import EstimationError, SpecError
from osmeter.choice.design import DesignError
from osmeter.extract import ExtractionSettings, read_features
from osmeter.ingest import read_corpus
from osmeter.links import LinkPolicy, read_links_csv

log = logging.getLogger("osmeter")


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _labels(path: str | None) -> dict[int, str]:
    if not path:
        return {}
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return {int(k): str(v) for k, v in data.items()}


def cmd_ingest(args) -> int:
    pipeline.run_ingest(args.inputs, args.out, args.exclusions, not args.keep_all_types)
    return pipeline.EXIT_OK


def cmd_topics(args) -> int:
    stop = frozenset(Path(args.stopwords).read_text(encoding="utf-8").split()) if args.stopwords else frozenset()
    pipeline.run_topics(read_corpus(args.corpus), args.out, k=args.k, seed=args.seed, iterations=args.iters,
                        alpha=args.alpha, beta=args.beta, state_path=args.state, stopwords=stop)
    return pipeline.EXIT_OK


def cmd_extract(args) -> int:
    cfg = {"provider": args.provider, "stub_responses": args.stub_responses, "model": args.model}
    if args.model is None:
        cfg.pop("model")
    provider = pipeline.make_provider(cfg)
    settings = ExtractionSettings(temperature=args.temperature, retries=args.retries)
    pipeline.run_extract(read_corpus(args.corpus), provider, args.out, args.cache, settings,
                         workers=args.workers, requests_per_minute=args.rpm,
                         baseline_out=args.baseline_out, allow_incomplete=args.allow_incomplete)
    return pipeline.EXIT_OK


def cmd_audit(args) -> int:
    features = read_features(args.features) if args.features else []
    policy = LinkPolicy(timeout=args.timeout)
    pipeline.run_audit(read_corpus(args.corpus), features, args.out, args.validate == "on", policy)
    return pipeline.EXIT_OK


def cmd_build(args) -> int:
    src = Path(args.inputs)
    topics_path = src / "topics.csv"
    topics = pipeline.read_topics(topics_path) if topics_path.exists() else None
    pipeline.run_build(read_corpus(src / "corpus.jsonl"), read_features(src / "features.jsonl"),
                       read_links_csv(src / "links.csv"), topics, args.out,
                       args.reference_date, _labels(args.topic_labels))
    return pipeline.EXIT_OK


def cmd_agree(args) -> int:
    features = read_features(args.llm) if args.llm else None
    frame = pipeline.run_agree(args.labels, features, args.out)
    print(frame.to_string(index=False))
    return pipeline.EXIT_OK


def cmd_model(args) -> int:
    table = pipeline.read_paper_table(args.table)
    spec = pipeline.resolve_spec(args.spec)
    result = pipeline.run_model(table, spec, args.out)
    print(pd.DataFrame(result.table()).to_string(index=False))
    return pipeline.EXIT_OK


def cmd_report(args) -> int:
    models = {}
    # estimates are refit from the specs so the report has full result objects
    if args.models:
        table = pipeline.read_paper_table(Path(args.tables) / "paper_table.csv")
        for ref in args.models:
            spec = pipeline.resolve_spec(ref)
            models[spec.name or Path(ref).stem] = pipeline.fit(pipeline.build_design(table, spec))
    agreement = pd.read_csv(args.agreement) if args.agreement else None
    citations = None
    if args.citations:
        table = pipeline.read_paper_table(Path(args.tables) / "paper_table.csv")
        citations = pipeline.collect_citations(list(table["doi"]),
                                               {"fixture": args.citations, "cache": args.citation_cache})
    pipeline.run_report(args.tables, args.out, models, agreement, citations, args.reference_date)
    return pipeline.EXIT_OK


def cmd_run(args) -> int:
    cfg = pipeline.load_config(args.config)
    out = pipeline.run_all(cfg)
    print(out)
    return pipeline.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="osmeter", description="Code and data availability analysis")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse article files into a corpus")
    p.add_argument("--in", dest="inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--exclusions")
    p.add_argument("--keep-all-types", action="store_true", help="keep non full-length articles")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("topics", help="fit the topic model and assign topics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--stopwords")
    p.add_argument("--state", help="where to save the fitted model state")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_topics)

    p = sub.add_parser("extract", help="extract availability features")
    p.add_argument("--corpus", required=True)
    p.add_argument("--provider", choices=("stub", "live"), default="stub")
    p.add_argument("--stub-responses")
    p.add_argument("--model")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--rpm", type=float, help="requests per minute")
    p.add_argument("--cache")
    p.add_argument("--baseline-out", help="also write keyword baseline features here")
    p.add_argument("--allow-incomplete", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("audit-links", help="canonize, classify and optionally validate links")
    p.add_argument("--corpus", required=True)
    p.add_argument("--features")
    p.add_argument("--validate", choices=("on", "off"), default="off")
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("build", help="build the analysis tables")
    p.add_argument("--in", dest="inputs", required=True,
                   help="directory with corpus.jsonl, features.jsonl, links.csv and topics.csv")
    p.add_argument("--reference-date", type=_date)
    p.add_argument("--topic-labels", help="YAML mapping of topic id to label")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("agree", help="inter-rater agreement")
    p.add_argument("--labels", required=True)
    p.add_argument("--llm", help="features file to add as an extra rater")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_agree)

    p = sub.add_parser("model", help="estimate a choice model")
    p.add_argument("--table", required=True)
    p.add_argument("--spec", required=True, help="YAML path or bundled:<name>")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("report", help="write the report")
    p.add_argument("--tables", required=True)
    p.add_argument("--models", nargs="*", default=[])
    p.add_argument("--agreement")
    p.add_argument("--citations", help="CSV of doi,citations")
    p.add_argument("--citation-cache")
    p.add_argument("--reference-date", type=_date)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="run every stage from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (pipeline.ConfigError, SpecError, DesignError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return pipeline.EXIT_CONFIG
    except pipeline.IntegrityFailure as exc:
        log.error("%s", exc)
        return pipeline.EXIT_INTEGRITY
    except pipeline.ProviderFailure as exc:
        log.error("%s", exc)
        return pipeline.EXIT_PROVIDER
    except EstimationError as exc:
        log.error("estimation failed: %s", exc)
        return pipeline.EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
