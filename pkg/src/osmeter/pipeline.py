"""Pipeline stages shared by the individual subcommands and ``osmeter run``."""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import pandas as pd
import yaml

from osmeter import agreement as agreement_mod
from osmeter import topics as topics_mod
from osmeter.availability import AnalysisTables, build_tables, integrity_check, write_csv
from osmeter.choice import bundled_spec, build_design, fit, load_spec, write_estimates
from osmeter.choice.spec import ModelSpec
from osmeter.extract import (
    ExtractionSettings,
    FeatureExtraction,
    LiveProvider,
    ResponseCache,
    StubProvider,
    baseline_text_search,
    extract_corpus,
    read_features,
    write_features,
)
from osmeter.ingest import (
    ArticleRecord,
    IngestResult,
    filter_full_length,
    ingest_paths,
    read_corpus,
    write_corpus,
    write_exclusions,
)
from osmeter.links import (
    LinkPolicy,
    LinkRecord,
    audit_paper_links,
    read_links_csv,
    validate_links,
    write_links_csv,
)
from osmeter.reporting import (
    CitationCache,
    FixtureCitationClient,
    ReportInputs,
    ScopusClient,
    bivariate_tests,
    citation_series,
    descriptive_table,
    emit_report,
    fetch_citations,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INTEGRITY = 2
EXIT_PROVIDER = 3


class ConfigError(ValueError):
    pass


class IntegrityFailure(RuntimeError):
    pass


class ProviderFailure(RuntimeError):
    pass


def _target(path: str | Path) -> Path:
    """Output path with its parent directory created."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# -- ingest ---------------------------------------------------------------------------


def run_ingest(inputs: Sequence[str | Path], out: str | Path, exclusions: str | Path | None = None,
               full_length_only: bool = True) -> IngestResult:
    result = ingest_paths(inputs)
    records = filter_full_length(result.records) if full_length_only else result.records
    write_corpus(records, _target(out))
    if exclusions:
        write_exclusions(result.exclusions, _target(exclusions))
    log.info("ingest: %d records, %d exclusions, %d non full-length dropped",
             len(result.records), len(result.exclusions), len(result.records) - len(records))
    return IngestResult(records, result.exclusions)


# -- topics ---------------------------------------------------------------------------


def run_topics(records: Sequence[ArticleRecord], out: str | Path, k: int = 15, seed: int = 0,
               iterations: int = 1000, alpha: float | None = None, beta: float = 0.01,
               state_path: str | Path | None = None, stopwords: frozenset[str] = frozenset(),
               top_n: int = 5) -> dict[str, int]:
    corpus = [topics_mod.preprocess(topics_mod.document_text(r), stopwords) for r in records]
    state = topics_mod.fit_lda(corpus, K=k, alpha=alpha, beta=beta, seed=seed, iterations=iterations)
    assigned: dict[str, int] = {}
    with _target(out).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["doi", "topic_id", "top5_words"])
        for d, rec in enumerate(records):
            topic = topics_mod.assign_topic(state, d)
            assigned[rec.doi] = topic
            writer.writerow([rec.doi, topic, " ".join(topics_mod.top_words(state, topic, top_n))])
    if state_path:
        state.save(_target(state_path))
    return assigned


def read_topics(path: str | Path) -> dict[str, int]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return {row["doi"]: int(row["topic_id"]) for row in csv.DictReader(fh)}


# -- extract --------------------------------------------------------------------------


def make_provider(cfg: Mapping[str, Any], base: Path = Path(".")):
    kind = cfg.get("provider", "stub")
    if kind == "stub":
        path = cfg.get("stub_responses")
        if not path:
            raise ConfigError("extract.stub_responses is required for the stub provider")
        return StubProvider.from_file(base / path, model=str(cfg.get("model", "stub")))
    if kind == "live":
        kwargs = {k: cfg[k] for k in ("model", "base_url", "api_key_env", "timeout") if k in cfg}
        return LiveProvider(**kwargs)
    raise ConfigError(f"unknown provider {kind!r}")


def run_extract(records: Sequence[ArticleRecord], provider, out: str | Path,
                cache_dir: str | Path | None = None, settings: ExtractionSettings | None = None,
                workers: int = 4, requests_per_minute: float | None = None,
                baseline_out: str | Path | None = None, allow_incomplete: bool = False,
                sleep=time.sleep) -> list[FeatureExtraction]:
    cache = ResponseCache(cache_dir) if cache_dir else None
    features = extract_corpus(records, provider, cache, settings, workers, requests_per_minute, sleep)
    write_features(features, _target(out))
    if baseline_out:
        write_features([baseline_text_search(r) for r in records], _target(baseline_out))
    transport = [f.doi for f in features if any(i.endswith((":transport", ":rate_limit")) for i in f.incomplete)]
    if transport and not allow_incomplete:
        raise ProviderFailure(f"provider failed for {len(transport)} article(s), first {transport[0]}")
    return features


# -- links ----------------------------------------------------------------------------


def run_audit(records: Sequence[ArticleRecord], features: Sequence[FeatureExtraction], out: str | Path,
              validate: bool = False, policy: LinkPolicy | None = None) -> list[LinkRecord]:
    by_doi = {f.doi: f for f in features}
    checks = None
    if validate:
        urls = []
        for rec in records:
            audit = audit_paper_links(rec, by_doi.get(rec.doi))
            urls += [r.canonical_url for r in audit.records]
        checks = validate_links(urls, policy)
    links: list[LinkRecord] = []
    for rec in records:
        links += audit_paper_links(rec, by_doi.get(rec.doi), checks).records
    write_links_csv(links, _target(out))
    return links


# -- build ----------------------------------------------------------------------------


def run_build(records, features, links, topics, out_dir: str | Path,
              reference_date: dt.date | None = None,
              topic_labels: Mapping[int, str] | None = None) -> AnalysisTables:
    tables = build_tables(records, features, links, topics, reference_date, topic_labels)
    tables.write(out_dir)
    report = integrity_check(tables)
    write_csv(report.to_frame(), Path(out_dir) / "integrity_report.csv")
    if not report.ok:
        raise IntegrityFailure(f"{len(report.errors)} integrity violation(s): {report.by_rule()}")
    return tables


# -- agree ----------------------------------------------------------------------------

AGREEMENT_FEATURES = ("is_quantitative_study", "is_code_publicly_available",
                      "is_data_repository_available", "is_data_cited")


def run_agree(labels_path: str | Path, features: Sequence[FeatureExtraction] | None, out: str | Path,
              llm_rater: str = "LLM") -> pd.DataFrame:
    with Path(labels_path).open(newline="", encoding="utf-8") as fh:
        rows = [dict(r) for r in csv.DictReader(fh)]
    dois = {r["doi"] for r in rows}
    for f in features or ():
        if f.doi not in dois:
            continue
        for name in AGREEMENT_FEATURES:
            value = getattr(f, name)
            if value is not None:
                rows.append({"doi": f.doi, "rater_id": llm_rater, "feature": name, "value": str(value)})
    matrices = agreement_mod.matrices_from_labels(rows)
    frame = pd.DataFrame(agreement_mod.agreement_rows(matrices))
    write_csv(frame, _target(out))
    return frame


# -- model ----------------------------------------------------------------------------


def resolve_spec(ref: str | Path, base: Path = Path(".")) -> ModelSpec:
    text = str(ref)
    if text.startswith("bundled:"):
        return bundled_spec(text.split(":", 1)[1])
    return load_spec(base / text)


def run_model(table: pd.DataFrame, spec: ModelSpec, out: str | Path):
    design = build_design(table, spec)
    result = fit(design)
    write_estimates(result, _target(out))
    return result


def read_paper_table(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path, keep_default_na=True, dtype={"doi": str, "lda_topic": "Int64"})


# -- citations and report -----------------------------------------------------------


def collect_citations(dois: Sequence[str], cfg: Mapping[str, Any], base: Path = Path(".")) -> dict[str, int]:
    if cfg.get("fixture"):
        client = FixtureCitationClient(base / cfg["fixture"])
    elif cfg.get("client") == "scopus":
        client = ScopusClient(**{k: cfg[k] for k in ("base_url", "api_key_env") if k in cfg})
    else:
        raise ConfigError("citations needs a fixture path or client: scopus")
    cache = CitationCache(base / cfg["cache"]) if cfg.get("cache") else None
    counts = {}
    for doi in dois:
        lookup = fetch_citations(doi, client, cache)
        if not lookup.missing:
            counts[doi] = lookup.count
    if cache is not None:
        cache.save()
    return counts


def run_report(tables_dir: str | Path, out_dir: str | Path, models: Mapping[str, Any] | None = None,
               agreement: pd.DataFrame | None = None, citations: Mapping[str, int] | None = None,
               reference_date: dt.date | None = None, battery: Mapping | None = None,
               notes: Sequence[str] = ()) -> list[Path]:
    tables_dir = Path(tables_dir)
    table = read_paper_table(tables_dir / "paper_table.csv")
    if citations is not None:
        table["times_cited"] = table["doi"].map(citations).astype("Float64")
    descriptive = {}
    for col, groups in (("code_availability", ["CA", "CU"]),
                        ("data_availability", ["C_NR", "C_R", "NC_NR", "NC_R"])):
        if col in table.columns:
            descriptive[col] = descriptive_table(table, col, groups=groups)
    integrity = None
    if (tables_dir / "integrity_report.csv").exists():
        integrity = pd.read_csv(tables_dir / "integrity_report.csv", dtype=str, keep_default_na=False)
    series = citation_series(table, citations, "code_availability", reference_date) if citations else None
    inputs = ReportInputs(
        paper_table=table,
        descriptive=descriptive,
        tests=bivariate_tests(table, battery),
        models=models or {},
        agreement=agreement,
        citations=series,
        integrity=integrity,
        notes=notes,
    )
    return emit_report(inputs, out_dir)


# -- full run -------------------------------------------------------------------------


@dataclass
class RunConfig:
    base: Path
    corpus: list[str]
    output: Path
    reference_date: dt.date | None = None
    seed: int = 0
    topics: dict = field(default_factory=dict)
    extract: dict = field(default_factory=dict)
    links: dict = field(default_factory=dict)
    labels: str | None = None
    models: list[str] = field(default_factory=list)
    citations: dict | None = None
    report: dict = field(default_factory=dict)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(data) - {"corpus", "output", "reference_date", "seed", "topics", "extract", "links",
                           "labels", "models", "citations", "report"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "corpus" not in data or "output" not in data:
        raise ConfigError("config needs 'corpus' and 'output'")
    base = path.parent
    corpus = data["corpus"] if isinstance(data["corpus"], list) else [data["corpus"]]
    ref = data.get("reference_date")
    if isinstance(ref, str):
        try:
            ref = dt.date.fromisoformat(ref)
        except ValueError as exc:
            raise ConfigError(f"reference_date: {exc}") from exc
    return RunConfig(
        base=base,
        corpus=[str(c) for c in corpus],
        output=base / str(data["output"]),
        reference_date=ref,
        seed=int(data.get("seed", 0)),
        topics=dict(data.get("topics") or {}),
        extract=dict(data.get("extract") or {}),
        links=dict(data.get("links") or {}),
        labels=data.get("labels"),
        models=list(data.get("models") or []),
        citations=data.get("citations"),
        report=dict(data.get("report") or {}),
    )


def run_all(cfg: RunConfig, sleep=time.sleep) -> Path:
    """ingest, topics, extract, audit-links, build, agree, model, report."""
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    ingested = run_ingest([cfg.base / c for c in cfg.corpus], out / "corpus.jsonl", out / "exclusions.csv")
    records = ingested.records

    tcfg = cfg.topics
    stop = frozenset()
    if tcfg.get("stopwords"):
        stop = frozenset((cfg.base / tcfg["stopwords"]).read_text(encoding="utf-8").split())
    labels = {int(k): str(v) for k, v in (tcfg.get("labels") or {}).items()}
    topics = run_topics(records, out / "topics.csv", k=int(tcfg.get("k", 15)),
                        seed=int(tcfg.get("seed", cfg.seed)), iterations=int(tcfg.get("iterations", 1000)),
                        alpha=tcfg.get("alpha"), beta=float(tcfg.get("beta", 0.01)),
                        state_path=out / "topic_model.json", stopwords=stop)

    ecfg = cfg.extract
    provider = make_provider(ecfg, cfg.base)
    settings = ExtractionSettings(
        temperature=float(ecfg.get("temperature", 0.0)),
        retries=int(ecfg.get("retries", 2)),
        backoff=tuple(float(b) for b in ecfg.get("backoff", (1.0, 4.0))),
    )
    cache_dir = cfg.base / ecfg["cache"] if ecfg.get("cache") else out / "cache"
    features = run_extract(records, provider, out / "features.jsonl", cache_dir, settings,
                           workers=int(ecfg.get("workers", 4)),
                           requests_per_minute=ecfg.get("requests_per_minute"),
                           baseline_out=out / "baseline_features.jsonl",
                           allow_incomplete=bool(ecfg.get("allow_incomplete", False)), sleep=sleep)

    lcfg = cfg.links
    policy = LinkPolicy(**{k: lcfg[k] for k in ("timeout", "retries", "per_host_concurrency",
                                                 "global_concurrency") if k in lcfg})
    links = run_audit(records, features, out / "links.csv", bool(lcfg.get("validate", False)), policy)

    run_build(records, features, links, topics, out / "tables", cfg.reference_date, labels)

    agreement = None
    if cfg.labels:
        agreement = run_agree(cfg.base / cfg.labels, features, out / "agreement.csv")

    table = read_paper_table(out / "tables" / "paper_table.csv")
    models, notes = {}, []
    (out / "models").mkdir(exist_ok=True)
    for ref in cfg.models:
        spec = resolve_spec(ref, cfg.base)
        name = spec.name or Path(str(ref)).stem
        try:
            models[name] = run_model(table, spec, out / "models" / f"{name}.csv")
        except Exception as exc:  # estimation problems are reported, not fatal
            log.error("model %s failed: %s", name, exc)
            notes.append(f"Model {name} was not estimated: {exc}")

    citations = None
    if cfg.citations:
        citations = collect_citations(list(table["doi"]), cfg.citations, cfg.base)
    run_report(out / "tables", out / "report", models, agreement, citations, cfg.reference_date,
               cfg.report.get("battery"), notes)
    return out


def write_json(data: Any, path: str | Path) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_features(path: str | Path | None) -> list[FeatureExtraction]:
    return read_features(path) if path else []
