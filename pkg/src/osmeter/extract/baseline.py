"""Keyword and URL heuristics used as a comparison point for the prompt pipeline.

The search deliberately ignores where a match occurs, so a repository link that
only appears in a cited reference still counts. That is the weakness the
comparison is meant to expose.
"""

from __future__ import annotations

import re

from osmeter.extract.features import FeatureExtraction
from osmeter.ingest import ArticleRecord
from osmeter.links import HostCategory, RuleTable, canonize_url, classify_host, extract_urls

DATASET_KEYWORDS = (
    r"data\s*sets?",
    r"open\s+data",
    r"data\s+portal",
    r"publicly\s+available\s+data",
    r"ngsim",
    r"nhts",
    r"highd",
    r"openstreetmap",
    r"census\s+data",
    r"household\s+travel\s+survey",
    r"smart\s*card\s+data",
    r"gtfs",
)
METHOD_KEYWORDS = (
    r"regression",
    r"estimat\w*",
    r"simulat\w*",
    r"algorithm\w*",
    r"optimi[sz]\w*",
    r"statistic\w*",
    r"equation\w*",
    r"logit",
    r"neural\s+network\w*",
    r"calibrat\w*",
)

_DATASET_RE = re.compile(r"\b(?:" + "|".join(DATASET_KEYWORDS) + r")\b", re.IGNORECASE)
_METHOD_RE = re.compile(r"\b(?:" + "|".join(METHOD_KEYWORDS) + r")\b", re.IGNORECASE)

_DATA_HOSTS = {
    HostCategory.OPEN_REPO_DOI,
    HostCategory.GOV_OPEN_DATA,
    HostCategory.BENCHMARK_HUB,
    HostCategory.UNIVERSITY_REPO,
}
# text search cannot tell a data repository from a code repository
_REPO_HOSTS = {HostCategory.OPEN_REPO_DOI, HostCategory.CODE_HOST}


def _full_text(record: ArticleRecord) -> str:
    return "\n\n".join(p for p in (record.title, record.abstract, record.body_text,
                                   record.references_text) if p)


def baseline_text_search(record: ArticleRecord, rules: RuleTable | None = None) -> FeatureExtraction:
    text = _full_text(record)
    urls = [canonize_url(u, rules) for u in extract_urls(text)]
    categories = {classify_host(u, rules) for u in urls}

    code = HostCategory.CODE_HOST in categories
    cited = bool(categories & _DATA_HOSTS) or bool(_DATASET_RE.search(text))
    return FeatureExtraction(
        doi=record.doi,
        source="baseline",
        is_quantitative_study=bool(_METHOD_RE.search(text)),
        is_code_used=code,
        is_code_publicly_available=code,
        is_data_cited=cited,
        is_data_repository_available=bool(categories & _REPO_HOSTS),
        code_links=tuple(u for u in urls if classify_host(u, rules) is HostCategory.CODE_HOST),
        data_links=tuple(u for u in urls if classify_host(u, rules) in _DATA_HOSTS),
    )
