"""Code and data availability classes and the DOI-keyed analysis tables."""

from __future__ import annotations

import datetime as dt
import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import urlsplit

import pandas as pd

from osmeter.extract.features import FeatureExtraction
from osmeter.ingest import ArticleRecord, compute_review_time, reference_publication_date
from osmeter.links import (
    HostCategory,
    LinkRecord,
    Liveness,
    RuleTable,
    canonize_url,
    classify_host,
    count_links,
)
from osmeter.regions import KNOWN_REGIONS, Region

DAYS_PER_YEAR = 365.25


class CodeAvailability(str, enum.Enum):
    CA = "CA"
    CU = "CU"
    NOT_APPLICABLE = "NotApplicable"


class DataAvailability(str, enum.Enum):
    NC_NR = "NC_NR"
    NC_R = "NC_R"
    C_NR = "C_NR"
    C_R = "C_R"


@dataclass(frozen=True)
class Classified:
    value: CodeAvailability | DataAvailability
    complete: bool = True
    missing: tuple[str, ...] = ()


def classify_code(features: FeatureExtraction, links: Sequence[LinkRecord] = ()) -> Classified:
    """CA when the paper claims to share its code, whatever the link's liveness.

    ``links`` is accepted for symmetry with the table builder; liveness never
    changes the class.
    """
    missing = []
    if features.is_quantitative_study is False:
        return Classified(CodeAvailability.NOT_APPLICABLE)
    if features.is_quantitative_study is None:
        missing.append("is_quantitative_study")
    if features.is_code_publicly_available is True:
        return Classified(CodeAvailability.CA, not missing, tuple(missing))
    if features.is_code_publicly_available is None:
        missing.append("is_code_publicly_available")
    return Classified(CodeAvailability.CU, not missing, tuple(missing))


def classify_data(features: FeatureExtraction) -> Classified:
    missing = tuple(k for k in ("is_data_cited", "is_data_repository_available")
                    if getattr(features, k) is None)
    cited = features.is_data_cited is True
    repo = features.is_data_repository_available is True
    value = DataAvailability(f"{'C' if cited else 'NC'}_{'R' if repo else 'NR'}")
    return Classified(value, not missing, missing)


# -- tables ------------------------------------------------------------------------

ARTIFACT_COLUMNS = ("doi", "artifact_kind", "raw_url", "canonical_url", "host_category", "liveness")


@dataclass
class TableExclusion:
    doi: str
    rule: str
    detail: str


@dataclass
class AnalysisTables:
    paper_table: pd.DataFrame
    artifact_table: pd.DataFrame
    link_table: pd.DataFrame
    exclusions: list[TableExclusion] = field(default_factory=list)

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(self.paper_table, out / "paper_table.csv")
        write_csv(self.artifact_table, out / "artifact_table.csv")
        write_csv(self.link_table, out / "link_table.csv")
        write_csv(pd.DataFrame([e.__dict__ for e in self.exclusions],
                               columns=["doi", "rule", "detail"]), out / "table_exclusions.csv")


def write_csv(frame: pd.DataFrame, path: str | Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")


def _age_years(record: ArticleRecord, reference_date: dt.date) -> float:
    days = (reference_date - reference_publication_date(record)).days
    return round(days / DAYS_PER_YEAR, 6)


def _code_host_flags(urls: Iterable[str]) -> dict[str, bool]:
    hosts = {(urlsplit(u).hostname or "").removeprefix("www.") for u in urls}
    return {
        "has_code_link_github": "github.com" in hosts,
        "has_code_link_gitlab": "gitlab.com" in hosts,
        "has_code_link_bitbucket": "bitbucket.org" in hosts,
    }


def _code_link_kind(flags: Mapping[str, bool], n_code_links: int) -> str:
    if flags["has_code_link_github"]:
        return "github"
    return "other" if n_code_links else "none"


def _repo_liveness(links: Sequence[LinkRecord]) -> str:
    repo = [l for l in links if l.host_category is HostCategory.OPEN_REPO_DOI]
    if not repo:
        return ""
    states = {l.liveness for l in repo}
    if Liveness.LIVE in states:
        return Liveness.LIVE.value
    if states == {Liveness.DEAD}:
        return Liveness.DEAD.value
    if Liveness.UNCHECKED in states and len(states) == 1:
        return Liveness.UNCHECKED.value
    return Liveness.UNKNOWN.value


def _bool_cell(value: bool | None):
    return pd.NA if value is None else bool(value)


def build_tables(
    records: Sequence[ArticleRecord],
    features: Sequence[FeatureExtraction],
    links: Sequence[LinkRecord],
    topics: Mapping[str, int] | None = None,
    reference_date: dt.date | None = None,
    topic_labels: Mapping[int, str] | None = None,
    rules: RuleTable | None = None,
) -> AnalysisTables:
    """Join records, features, links and topics on DOI.

    Every copy of a duplicated DOI is dropped, as are papers without features.
    Link rows of dropped papers are dropped too. All drops are reported in
    ``exclusions``. Papers classified CA with neither a code link nor an
    availability quote stay in the table with ``coherence_warning`` set.
    """
    reference_date = reference_date or dt.date.today()
    topics = topics or {}
    topic_labels = topic_labels or {}
    exclusions: list[TableExclusion] = []

    doi_counts = Counter(r.doi for r in records)
    feat_counts = Counter(f.doi for f in features)
    for doi, n in sorted(doi_counts.items()):
        if n > 1:
            exclusions.append(TableExclusion(doi, "duplicate_doi", f"{n} article records"))
    for doi, n in sorted(feat_counts.items()):
        if n > 1 and doi_counts.get(doi) == 1:
            exclusions.append(TableExclusion(doi, "duplicate_doi", f"{n} feature records"))
    feature_by_doi = {f.doi: f for f in features if feat_counts[f.doi] == 1}

    kept: list[ArticleRecord] = []
    for rec in records:
        if doi_counts[rec.doi] > 1 or feat_counts.get(rec.doi, 0) > 1:
            continue
        if rec.doi not in feature_by_doi:
            exclusions.append(TableExclusion(rec.doi, "missing_features", "no feature record"))
            continue
        kept.append(rec)
    kept_dois = {r.doi for r in kept}

    links_by_doi: dict[str, list[LinkRecord]] = {}
    dropped_links = Counter()
    for link in links:
        if link.doi in kept_dois:
            links_by_doi.setdefault(link.doi, []).append(link)
        else:
            dropped_links[link.doi] += 1
    for doi, n in sorted(dropped_links.items()):
        exclusions.append(TableExclusion(doi, "orphan_links", f"{n} link rows without a retained paper"))

    paper_rows, artifact_rows = [], []
    for rec in sorted(kept, key=lambda r: r.doi):
        feat = feature_by_doi[rec.doi]
        plinks = sorted(links_by_doi.get(rec.doi, []), key=lambda l: l.canonical_url)
        counts = count_links(plinks, feat.code_links, rules)
        code = classify_code(feat, plinks)
        data = classify_data(feat)
        review = compute_review_time(rec)
        region = rec.region
        code_urls = {canonize_url(u, rules) for u in feat.code_links}
        code_urls |= {l.canonical_url for l in plinks if l.host_category is HostCategory.CODE_HOST}
        host_flags = _code_host_flags(code_urls)
        has_quote = bool(feat.justification_quotes.get("reason_code_available")
                         or feat.justification_quotes.get("availability_statement"))
        topic = topics.get(rec.doi)
        row = {
            "doi": rec.doi,
            "title": rec.title,
            "journal": rec.journal,
            "year": rec.year,
            "open_access": _bool_cell(rec.open_access),
            "n_figures": rec.n_figures,
            "n_tables": rec.n_tables,
            "n_references": rec.n_references,
            "n_pages": rec.n_pages,
            "n_authors": rec.n_authors,
            "accepted_date": rec.accepted_date.isoformat() if rec.accepted_date else "",
            "review_time_days": review.days,
            "review_time_missing": review.missing,
            "paper_age_years": _age_years(rec, reference_date),
            "corresponding_country": rec.corresponding_country or "",
            "region_normalized": region.value,
        }
        for r in KNOWN_REGIONS:
            row[r.column] = region is r
        row["n_regions_listed"] = len(rec.regions_listed)
        row["lda_topic"] = topic if topic is not None else pd.NA
        row["topic_label"] = topic_labels.get(topic, f"topic_{topic}") if topic is not None else ""
        for name in ("is_quantitative_study", "is_code_used", "is_code_publicly_available",
                     "is_data_used", "is_simulation_study", "is_data_cited",
                     "is_data_repository_available", "availability_statement_present"):
            row[name] = _bool_cell(getattr(feat, name))
        row["code_availability"] = code.value.value
        row["data_availability"] = data.value.value
        row["features_complete"] = code.complete and data.complete and not feat.incomplete
        row["completeness_flags"] = ";".join(sorted(set(code.missing + data.missing)
                                                    | set(feat.incomplete)))
        row.update(counts)
        row.update(host_flags)
        row["code_link_kind"] = _code_link_kind(host_flags, counts["n_code_links"])
        row["data_repository_liveness"] = _repo_liveness(plinks)
        row["coherence_warning"] = (code.value is CodeAvailability.CA
                                    and counts["n_code_links"] == 0 and not has_quote)
        paper_rows.append(row)

        by_url = {l.canonical_url: l for l in plinks}
        seen = set()
        for kind, urls in (("code", feat.code_links), ("data", feat.data_links)):
            for raw in urls:
                canonical = canonize_url(raw, rules)
                if (kind, canonical) in seen:
                    continue
                seen.add((kind, canonical))
                link = by_url.get(canonical)
                artifact_rows.append({
                    "doi": rec.doi,
                    "artifact_kind": kind,
                    "raw_url": raw,
                    "canonical_url": canonical,
                    "host_category": classify_host(canonical, rules).value,
                    "liveness": (link.liveness if link else Liveness.UNCHECKED).value,
                })

    paper_table = pd.DataFrame(paper_rows, columns=PAPER_COLUMNS)
    artifact_table = pd.DataFrame(artifact_rows, columns=ARTIFACT_COLUMNS)
    artifact_table = artifact_table.sort_values(["doi", "artifact_kind", "canonical_url"],
                                                kind="mergesort").reset_index(drop=True)
    kept_links = [l for doi in sorted(links_by_doi) for l in links_by_doi[doi]]
    link_table = pd.DataFrame([l.row() for l in kept_links],
                              columns=["doi", "raw_url", "canonical_url", "host_category",
                                       "liveness", "content_kind_hint", "checked_at"])
    link_table = link_table.sort_values(["doi", "canonical_url"], kind="mergesort").reset_index(drop=True)
    return AnalysisTables(paper_table, artifact_table, link_table, exclusions)


PAPER_COLUMNS = (
    ["doi", "title", "journal", "year", "open_access", "n_figures", "n_tables", "n_references",
     "n_pages", "n_authors", "accepted_date", "review_time_days", "review_time_missing", "paper_age_years",
     "corresponding_country", "region_normalized"]
    + [r.column for r in KNOWN_REGIONS]
    + ["n_regions_listed", "lda_topic", "topic_label",
       "is_quantitative_study", "is_code_used", "is_code_publicly_available", "is_data_used",
       "is_simulation_study", "is_data_cited", "is_data_repository_available",
       "availability_statement_present", "code_availability", "data_availability",
       "features_complete", "completeness_flags"]
    + [c.count_column for c in HostCategory]
    + ["n_code_links", "n_open_repo", "has_code_link_github", "has_code_link_gitlab",
       "has_code_link_bitbucket", "code_link_kind", "data_repository_liveness", "coherence_warning"]
)


# -- integrity ---------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    rule: str
    doi: str
    detail: str
    severity: str = "error"


@dataclass
class IntegrityReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def errors(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "error"]

    @property
    def warnings(self) -> list[Violation]:
        return [v for v in self.violations if v.severity == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def by_rule(self) -> dict[str, int]:
        return dict(sorted(Counter(v.rule for v in self.violations).items()))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([v.__dict__ for v in self.violations],
                            columns=["rule", "doi", "detail", "severity"])


def _is_false(value) -> bool:
    # tolerate values read back from CSV
    if value is None or value is pd.NA:
        return False
    if isinstance(value, str):
        return value.strip().lower() == "false"
    return not bool(value)


# rule ids
DOI_UNIQUE = "doi_unique"
LINK_REFERENCE = "link_reference"
ARTIFACT_REFERENCE = "artifact_reference"
LINK_UNIQUE = "link_unique"
CODE_CLASS = "code_class_consistency"
DATA_CLASS = "data_class_consistency"
CA_COHERENCE = "ca_link_coherence"


def integrity_check(tables: AnalysisTables) -> IntegrityReport:
    """Enumerate violations by rule id. CA coherence problems are warnings."""
    report = IntegrityReport()
    papers = tables.paper_table
    dup = papers["doi"][papers["doi"].duplicated(keep=False)]
    for doi in sorted(set(dup)):
        report.violations.append(Violation(DOI_UNIQUE, doi, "doi appears more than once"))
    known = set(papers["doi"])
    for name, frame, rule in (("link", tables.link_table, LINK_REFERENCE),
                              ("artifact", tables.artifact_table, ARTIFACT_REFERENCE)):
        for doi in sorted(set(frame["doi"]) - known):
            report.violations.append(Violation(rule, doi, f"{name} row without a paper row"))
    pairs = tables.link_table[["doi", "canonical_url"]]
    for doi, url in pairs[pairs.duplicated(keep=False)].drop_duplicates().itertuples(index=False):
        report.violations.append(Violation(LINK_UNIQUE, doi, f"duplicate link {url}"))
    for row in papers.itertuples(index=False):
        quant = row.is_quantitative_study
        na = row.code_availability == CodeAvailability.NOT_APPLICABLE.value
        if na != _is_false(quant):
            report.violations.append(Violation(CODE_CLASS, row.doi,
                                               "NotApplicable must match is_quantitative_study = false"))
        if row.data_availability not in {d.value for d in DataAvailability}:
            report.violations.append(Violation(DATA_CLASS, row.doi,
                                               f"unknown data class {row.data_availability!r}"))
        if bool(row.coherence_warning):
            report.violations.append(Violation(CA_COHERENCE, row.doi,
                                               "CA without code link or availability quote", "warning"))
    return report
