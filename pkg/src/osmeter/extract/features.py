"""Per-paper availability features assembled from several small prompts."""

from __future__ import annotations

import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from osmeter.extract.cache import ResponseCache
from osmeter.extract.providers import (
    Provider,
    ProviderError,
    ProviderRequest,
    RateLimiter,
    RateLimitError,
)
from osmeter.extract.templates import ECHO_KEYS, TEMPLATE_IDS, build_prompt, load_template
from osmeter.extract.validate import SchemaError, validate_response
from osmeter.ingest import ArticleRecord

log = logging.getLogger(__name__)

BOOLEAN_FEATURES = (
    "is_quantitative_study",
    "is_code_used",
    "is_code_publicly_available",
    "is_data_used",
    "is_simulation_study",
    "is_data_cited",
    "is_data_repository_available",
    "availability_statement_present",
)
LINK_FIELDS = ("code_links", "data_links")
SOURCES = ("llm", "baseline", "human")

DEFAULT_RETRIES = 2
DEFAULT_BACKOFF = (1.0, 4.0)

FLAG_IMPLICATION = "code_available_implies_used"
FLAG_QUOTE = "quote_not_verbatim:"


@dataclass(frozen=True)
class FeatureExtraction:
    """Availability features of one paper.

    Booleans are ``None`` when the answer is missing. ``justification_quotes``
    is keyed by the quote field of the template (``reason_*`` or
    ``availability_statement``) and every nonempty value is an exact substring
    of the article body. ``incomplete`` lists templates whose answer could not
    be obtained, with the failure kind after a colon.
    """

    doi: str
    source: str
    is_quantitative_study: bool | None = None
    is_code_used: bool | None = None
    is_code_publicly_available: bool | None = None
    is_data_used: bool | None = None
    is_simulation_study: bool | None = None
    is_data_cited: bool | None = None
    is_data_repository_available: bool | None = None
    availability_statement_present: bool | None = None
    code_links: tuple[str, ...] = ()
    data_links: tuple[str, ...] = ()
    justification_quotes: dict[str, str] = field(default_factory=dict)
    incomplete: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()
    # diagnostics only; kept out of the serialized form so reruns are byte-identical
    retries: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown feature source {self.source!r}")

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            if f.name == "retries":
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, dict):
                value = dict(sorted(value.items()))
            out[f.name] = value
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "FeatureExtraction":
        kwargs: dict[str, Any] = {"doi": data["doi"], "source": data.get("source", "llm")}
        for name in BOOLEAN_FEATURES:
            kwargs[name] = data.get(name)
        for name in LINK_FIELDS + ("incomplete", "flags"):
            kwargs[name] = tuple(data.get(name) or ())
        kwargs["justification_quotes"] = dict(data.get("justification_quotes") or {})
        return cls(**kwargs)


# -- quote verification ---------------------------------------------------------


def locate_quote(body: str, quote: str) -> str | None:
    """Exact span of ``body`` matching ``quote`` up to whitespace runs, or None."""
    quote = quote.strip()
    if not quote:
        return None
    if quote in body:
        return quote
    words = quote.split()
    pattern = r"\s+".join(re.escape(w) for w in words)
    m = re.search(pattern, body)
    return m.group(0) if m else None


def verify_quotes(body: str, quotes: dict[str, str]) -> tuple[dict[str, str], list[str]]:
    """Replace quotes by their body span; blank and flag the ones not found."""
    verified, flags = {}, []
    for key, quote in sorted(quotes.items()):
        if not quote.strip():
            verified[key] = ""
            continue
        span = locate_quote(body, quote)
        if span is None:
            verified[key] = ""
            flags.append(FLAG_QUOTE + key)
        else:
            verified[key] = span
    return verified, flags


# -- merging ---------------------------------------------------------------------


def _union(*lists: Iterable[str]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for lst in lists:
        for item in lst:
            item = item.strip()
            if item:
                seen.setdefault(item, None)
    return tuple(seen)


def merge_fragments(
    doi: str,
    fragments: dict[str, dict[str, Any]],
    body: str,
    incomplete: Sequence[str] = (),
    source: str = "llm",
) -> FeatureExtraction:
    """Combine validated per-template answers into one record.

    Template key sets are disjoint apart from echo keys, which are dropped.
    Link arrays are unioned in template order.
    """
    values: dict[str, Any] = {}
    quotes: dict[str, str] = {}
    links: dict[str, list[str]] = {name: [] for name in LINK_FIELDS}
    for template_id in TEMPLATE_IDS:
        fragment = fragments.get(template_id)
        if fragment is None:
            continue
        for key, value in fragment.items():
            if key in ECHO_KEYS:
                continue
            if key in LINK_FIELDS:
                links[key].extend(value)
            elif key in BOOLEAN_FEATURES:
                values[key] = value
            elif isinstance(value, str):
                quotes[key] = value
    verified, flags = verify_quotes(body, quotes)
    if values.get("is_code_publicly_available") is True and values.get("is_code_used") is False:
        values["is_code_used"] = True
        flags.append(FLAG_IMPLICATION)
    return FeatureExtraction(
        doi=doi,
        source=source,
        code_links=_union(links["code_links"]),
        data_links=_union(links["data_links"]),
        justification_quotes=verified,
        incomplete=tuple(incomplete),
        flags=tuple(sorted(flags)),
        **values,
    )


# -- provider loop -----------------------------------------------------------------


@dataclass
class ExtractionSettings:
    temperature: float = 0.0
    max_tokens: int = 2048
    retries: int = DEFAULT_RETRIES
    backoff: tuple[float, ...] = DEFAULT_BACKOFF
    templates: tuple[str, ...] = TEMPLATE_IDS


def _delay(backoff: Sequence[float], attempt: int) -> float:
    if not backoff:
        return 0.0
    return backoff[min(attempt, len(backoff) - 1)]


def _ask(
    record: ArticleRecord,
    template_id: str,
    provider: Provider,
    settings: ExtractionSettings,
    cache: ResponseCache | None,
    limiter: RateLimiter | None,
    sleep: Callable[[float], None],
) -> tuple[dict[str, Any] | None, int, str | None]:
    """One template for one article: (fragment or None, retries used, failure kind)."""
    template = load_template(template_id)
    if cache is not None:
        cached = cache.get(record.doi, template_id, template.version_tag, provider.model,
                           settings.temperature)
        if cached is not None:
            try:
                return validate_response(cached, template_id), 0, None
            except SchemaError:
                log.warning("%s/%s: cached answer no longer validates", record.doi, template_id)
    request = ProviderRequest(
        prompt=build_prompt(record, template_id),
        model=provider.model,
        temperature=settings.temperature,
        max_tokens=settings.max_tokens,
        doi=record.doi,
        template_id=template_id,
    )
    failure = None
    for attempt in range(settings.retries + 1):
        if attempt:
            log.info("%s/%s: retry %d after %s failure", record.doi, template_id, attempt, failure)
        if limiter is not None:
            limiter.wait()
        try:
            response = provider.complete(request)
            fragment = validate_response(response.text, template_id)
        except RateLimitError as exc:
            failure = "rate_limit"
            if attempt < settings.retries:
                sleep(exc.retry_after if exc.retry_after is not None else _delay(settings.backoff, attempt))
            continue
        except ProviderError as exc:
            failure = "transport"
            log.warning("%s/%s: provider error: %s", record.doi, template_id, exc)
        except SchemaError as exc:
            failure = "schema"
            log.warning("%s/%s: invalid answer: %s", record.doi, template_id, exc)
        else:
            if cache is not None:
                cache.put(record.doi, template_id, template.version_tag, provider.model,
                          settings.temperature, response.text)
            return fragment, attempt, None
        if attempt < settings.retries:
            sleep(_delay(settings.backoff, attempt))
    return None, settings.retries, failure


def extract_features(
    record: ArticleRecord,
    provider: Provider,
    cache: ResponseCache | None = None,
    settings: ExtractionSettings | None = None,
    limiter: RateLimiter | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> FeatureExtraction:
    """Run every template against one article and merge the answers.

    Templates that still fail after the retry budget leave their fields
    missing and are listed in ``incomplete``; nothing is guessed.
    """
    settings = settings or ExtractionSettings()
    fragments: dict[str, dict[str, Any]] = {}
    incomplete, retries = [], {}
    for template_id in settings.templates:
        fragment, used, failure = _ask(record, template_id, provider, settings, cache, limiter, sleep)
        retries[template_id] = used
        if fragment is None:
            incomplete.append(f"{template_id}:{failure}")
        else:
            fragments[template_id] = fragment
    result = merge_fragments(record.doi, fragments, record.body_text, incomplete)
    return replace(result, retries=retries)


def extract_corpus(
    records: Sequence[ArticleRecord],
    provider: Provider,
    cache: ResponseCache | None = None,
    settings: ExtractionSettings | None = None,
    workers: int = 4,
    requests_per_minute: float | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[FeatureExtraction]:
    """Extract features for many articles on a bounded pool; output keeps input order."""
    limiter = RateLimiter(requests_per_minute, sleep=sleep)

    def one(record: ArticleRecord) -> FeatureExtraction:
        return extract_features(record, provider, cache, settings, limiter, sleep)

    if workers <= 1:
        return [one(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, records))


# -- storage ------------------------------------------------------------------------


def write_features(features: Iterable[FeatureExtraction], path: str | Path) -> None:
    rows = sorted(features, key=lambda f: f.doi)
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for f in rows:
            fh.write(json.dumps(f.to_json(), sort_keys=True, ensure_ascii=False) + "\n")


def read_features(path: str | Path) -> list[FeatureExtraction]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(FeatureExtraction.from_json(json.loads(line)))
    return out
